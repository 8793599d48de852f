#include "mdmo/data.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mdmo/error.hpp"
#include "mdmo/rng.hpp"

namespace mdmo {

namespace {

constexpr const char* kHeaderPrefix = "#mdmo-data v1 ";

[[noreturn]] void parse_error(int line, const std::string& msg) {
  fail(ErrorCode::kParse, "line " + std::to_string(line) + ": " + msg);
}

int parse_int(std::string_view s, int line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) parse_error(line, "malformed integer '" + std::string(s) + "'");
  return v;
}

int parse_field(std::string_view token, std::string_view name, int line) {
  if (token.substr(0, name.size()) != name || token.size() <= name.size() || token[name.size()] != '=') {
    parse_error(line, "expected field " + std::string(name));
  }
  return parse_int(token.substr(name.size() + 1), line);
}

std::vector<std::string_view> split_spaces(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == ' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kPairCopy:
      return "pair-copy";
    case TaskKind::kTemplatedArithmetic:
      return "templated-arithmetic";
    case TaskKind::kUniformRandom:
      return "uniform-random";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  for (TaskKind k : {TaskKind::kPairCopy, TaskKind::kTemplatedArithmetic, TaskKind::kUniformRandom}) {
    if (name == task_kind_name(k)) return k;
  }
  fail(ErrorCode::kInvalidArgument,
       "unknown task kind '" + name + "'; valid kinds: pair-copy, templated-arithmetic, uniform-random");
}

void validate_task_spec(const TaskSpec& spec) {
  require(spec.N >= 1, "task N must be >= 1");
  require(spec.prompt_len >= 0 && spec.prompt_len < spec.N, "task prompt_len must lie in [0, N)");
  require(spec.vocab_size >= 1, "task vocabulary must be non-empty");
  switch (spec.kind) {
    case TaskKind::kPairCopy:
      require((spec.N - spec.prompt_len) % 2 == 0, "pair-copy needs an even completion length");
      require(spec.vocab_size >= 2, "pair-copy needs at least two tokens");
      break;
    case TaskKind::kTemplatedArithmetic:
      require(spec.N == 6 && spec.prompt_len == 4, "templated-arithmetic uses N = 6 and prompt_len = 4");
      require(spec.vocab_size > kPadToken, "templated-arithmetic needs at least 13 tokens (digits, '+', '=', pad)");
      break;
    case TaskKind::kUniformRandom:
      break;
  }
}

Dataset generate(const TaskSpec& spec, int count, Split split) {
  validate_task_spec(spec);
  require(count >= 1, "dataset count must be >= 1");
  Rng rng(derive_seed(spec.seed, split == Split::kTrain ? 1 : 2));
  Dataset data;
  data.spec = spec;
  data.split = split;
  data.sequences.reserve(static_cast<std::size_t>(count));
  const int L = spec.N - spec.prompt_len;
  for (int c = 0; c < count; ++c) {
    Sequence x;
    x.mask_id = spec.mask_id();
    x.prompt_len = spec.prompt_len;
    x.tokens.assign(static_cast<std::size_t>(spec.N), 0);
    auto& tok = x.tokens;
    switch (spec.kind) {
      case TaskKind::kPairCopy:
        for (int n = 0; n < spec.prompt_len; ++n) tok[static_cast<std::size_t>(n)] = rng.uniform_int(spec.vocab_size);
        for (int j = 0; j < L / 2; ++j) {
          const int v = rng.uniform_int(spec.vocab_size);
          tok[static_cast<std::size_t>(spec.prompt_len + j)] = v;
          tok[static_cast<std::size_t>(spec.prompt_len + j + L / 2)] = v;
        }
        break;
      case TaskKind::kTemplatedArithmetic: {
        const int a = rng.uniform_int(10);
        const int b = rng.uniform_int(10);
        const int c_val = a + b;
        tok = {a, kPlusToken, b, kEqualsToken, c_val >= 10 ? c_val / 10 : c_val, c_val >= 10 ? c_val % 10 : kPadToken};
        break;
      }
      case TaskKind::kUniformRandom:
        for (int& v : tok) v = rng.uniform_int(spec.vocab_size);
        break;
    }
    data.sequences.push_back(std::move(x));
  }
  return data;
}

std::string format_dataset(const Dataset& data) {
  std::ostringstream os;
  os << kHeaderPrefix << "N=" << data.spec.N << " prompt_len=" << data.spec.prompt_len << " vocab=" << data.spec.vocab_size
     << "\n";
  for (const Sequence& x : data.sequences) {
    for (std::size_t i = 0; i < x.tokens.size(); ++i) os << (i ? " " : "") << x.tokens[i];
    os << "\n";
  }
  return os.str();
}

Dataset parse_dataset(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 1;
  if (!std::getline(is, line)) parse_error(1, "missing header");
  if (line.rfind(kHeaderPrefix, 0) != 0) parse_error(1, "header must start with '#mdmo-data v1'");
  const auto fields = split_spaces(std::string_view(line).substr(std::string_view(kHeaderPrefix).size()));
  if (fields.size() != 3) parse_error(1, "header needs N, prompt_len and vocab");
  Dataset data;
  data.spec.N = parse_field(fields[0], "N", 1);
  data.spec.prompt_len = parse_field(fields[1], "prompt_len", 1);
  data.spec.vocab_size = parse_field(fields[2], "vocab", 1);
  if (data.spec.N < 1 || data.spec.prompt_len < 0 || data.spec.prompt_len >= data.spec.N || data.spec.vocab_size < 1) {
    parse_error(1, "header values out of range");
  }
  const bool ends_with_newline = !text.empty() && text.back() == '\n';
  while (std::getline(is, line)) {
    ++line_no;
    if (is.eof() && !ends_with_newline && line.empty()) break;
    const auto toks = split_spaces(line);
    if (static_cast<int>(toks.size()) != data.spec.N) {
      parse_error(line_no, "expected " + std::to_string(data.spec.N) + " tokens, found " + std::to_string(toks.size()));
    }
    Sequence x;
    x.mask_id = data.spec.vocab_size;
    x.prompt_len = data.spec.prompt_len;
    for (auto tk : toks) {
      const int v = parse_int(tk, line_no);
      if (v == x.mask_id) {
        fail(ErrorCode::kValidation, "line " + std::to_string(line_no) + ": mask id " + std::to_string(v) + " in data");
      }
      if (v < 0 || v > x.mask_id) {
        fail(ErrorCode::kValidation, "line " + std::to_string(line_no) + ": token id " + std::to_string(v) + " out of range");
      }
      x.tokens.push_back(v);
    }
    data.sequences.push_back(std::move(x));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << format_dataset(data);
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str());
}

}  // namespace mdmo
