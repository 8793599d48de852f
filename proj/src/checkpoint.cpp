#include "mdmo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mdmo/error.hpp"

namespace mdmo {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'D', 'M', 'O', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
 public:
  Cursor(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n, const char* what) {
    if (end_ - pos_ < n) fail(ErrorCode::kParse, std::string("checkpoint truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = format_config(ckpt.config);
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  std::uint32_t count = 0;
  for (NetRole role : {NetRole::kDenoiser, NetRole::kSelector, NetRole::kScore}) {
    count += static_cast<std::uint32_t>(ckpt.model.get(role).params.segments().size());
  }
  put<std::uint32_t>(out, count);
  for (NetRole role : {NetRole::kDenoiser, NetRole::kSelector, NetRole::kScore}) {
    const ParamVector& p = ckpt.model.get(role).params;
    for (const Segment& seg : p.segments()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(seg.name.size()));
      out += seg.name;
      put<std::uint32_t>(out, static_cast<std::uint32_t>(seg.rows));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(seg.cols));
      for (double v : p.view(seg)) put<double>(out, v);
    }
  }
  put<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kParse, "not a checkpoint file (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(bytes.data(), body)) fail(ErrorCode::kChecksum, "checkpoint checksum mismatch");

  Cursor cur(bytes, body);
  cur.get_string(sizeof(kMagic), "magic");
  const auto version = cur.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) fail(ErrorCode::kParse, "unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = cur.get<std::uint64_t>("config length");
  Checkpoint ckpt;
  ckpt.config = parse_config(cur.get_string(static_cast<std::size_t>(cfg_len), "config"));
  ckpt.model = build_model(ckpt.config);

  std::size_t expected = 0;
  for (NetRole role : {NetRole::kDenoiser, NetRole::kSelector, NetRole::kScore}) {
    expected += ckpt.model.get(role).params.segments().size();
  }
  const auto count = cur.get<std::uint32_t>("segment count");
  if (count != expected) {
    fail(ErrorCode::kValidation, "checkpoint has " + std::to_string(count) + " segments, config implies " +
                                     std::to_string(expected));
  }
  for (NetRole role : {NetRole::kDenoiser, NetRole::kSelector, NetRole::kScore}) {
    ParamVector& p = ckpt.model.get(role).params;
    for (const Segment& seg : p.segments()) {
      const auto name_len = cur.get<std::uint32_t>("segment name length");
      const std::string name = cur.get_string(name_len, "segment name");
      const auto rows = cur.get<std::uint32_t>("segment rows");
      const auto cols = cur.get<std::uint32_t>("segment cols");
      if (name != seg.name || static_cast<int>(rows) != seg.rows || static_cast<int>(cols) != seg.cols) {
        fail(ErrorCode::kValidation, "checkpoint segment '" + name + "' (" + std::to_string(rows) + "x" +
                                         std::to_string(cols) + ") does not match expected '" + seg.name + "' (" +
                                         std::to_string(seg.rows) + "x" + std::to_string(seg.cols) + ")");
      }
      for (double& v : p.view(seg)) v = cur.get<double>("segment values");
    }
  }
  if (!cur.done()) fail(ErrorCode::kParse, "trailing bytes after checkpoint segments");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mdmo
