#include "mdmo/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mdmo/error.hpp"

namespace mdmo {

namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  /// Rejects keys that were never looked up.
  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& need(const std::string& key) {
    const json* v = find(key);
    if (!v) throw ConfigError(field(key), "required field is missing");
    return *v;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  int get_int(const std::string& key, int fallback, bool required = false) {
    const json* v = required ? &need(key) : find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
    const auto x = v->get<long long>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(field(key), "integer out of range");
    return static_cast<int>(x);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer()) throw ConfigError(field(key), "expected a non-negative integer");
    throw ConfigError(field(key), "expected an integer");
  }

  double get_double(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(field(key), "expected a number");
    return v->get<double>();
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(field(key), "expected a string");
    return v->get<std::string>();
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

NetDims read_dims(const json& j, const std::string& path, const NetDims& fallback) {
  Reader r(j, path);
  NetDims d;
  d.hidden_dim = r.get_int("hidden_dim", fallback.hidden_dim);
  d.num_layers = r.get_int("num_layers", fallback.num_layers);
  d.num_heads = r.get_int("num_heads", fallback.num_heads);
  d.mlp_dim = r.get_int("mlp_dim", fallback.mlp_dim);
  r.finish();
  return d;
}

json dims_json(const NetDims& d) {
  return json{{"hidden_dim", d.hidden_dim}, {"num_layers", d.num_layers}, {"num_heads", d.num_heads}, {"mlp_dim", d.mlp_dim}};
}

template <typename E>
E pick_enum(const std::string& field, const std::string& value, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(field, "unknown value '" + value + "'; valid values: " + names);
}

void check(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError(field, msg);
}

void check_dims(const NetDims& d, const std::string& field) {
  check(d.hidden_dim >= 1, field + ".hidden_dim", "must be >= 1");
  check(d.num_layers >= 0, field + ".num_layers", "must be >= 0");
  check(d.num_heads >= 1, field + ".num_heads", "must be >= 1");
  check(d.hidden_dim % d.num_heads == 0, field + ".num_heads", "must divide hidden_dim");
  check(d.mlp_dim >= 1, field + ".mlp_dim", "must be >= 1");
}

}  // namespace

const char* scale_mode_name(ScaleMode m) { return m == ScaleMode::kUnbiasedT ? "unbiased-T" : "paper-literal"; }
const char* value_decoding_name(ValueDecoding v) { return v == ValueDecoding::kSample ? "sample" : "greedy"; }

void validate_config(const RunConfig& c) {
  try {
    validate_task_spec(c.task);
  } catch (const Error& e) {
    throw ConfigError("task", e.what());
  }
  check(c.train_count >= 1, "task.train_count", "must be >= 1");
  check(c.test_count >= 1, "task.test_count", "must be >= 1");
  check(c.T >= 1, "T", "must be >= 1");
  check(c.tau > 0.0, "tau", "must be > 0");
  check(c.k_rloo >= 1, "k_rloo", "must be >= 1");
  check(c.batch_size >= 1, "batch_size", "must be >= 1");
  check(c.lr >= 0.0, "lr", "must be >= 0");
  check(c.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  check(c.train_steps >= 0, "train_steps", "must be >= 0");
  check(c.checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  check(c.threads >= 0, "threads", "must be >= 0");
  const bool needs_rloo = c.train_phi && c.posterior == PosteriorKind::kLearned;
  check(!needs_rloo || c.k_rloo >= 2, "k_rloo", "must be >= 2 when phi is trained with the learned posterior");
  check_dims(c.denoiser, "nets.denoiser");
  check_dims(c.selector_net, "nets.selector");
  check_dims(c.score_net, "nets.score");
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  RunConfig c;
  {
    Reader r(j, "");
    const int version = r.get_int("version", 0, true);
    check(version == kConfigVersion, "version", "unsupported config version " + std::to_string(version));
    if (const json* t = r.find("task")) {
      Reader tr(*t, "task");
      const std::string kind = tr.get_string("kind", task_kind_name(c.task.kind));
      c.task.kind = pick_enum<TaskKind>("task.kind", kind,
                                        {{"pair-copy", TaskKind::kPairCopy},
                                         {"templated-arithmetic", TaskKind::kTemplatedArithmetic},
                                         {"uniform-random", TaskKind::kUniformRandom}});
      c.task.N = tr.get_int("N", c.task.N);
      c.task.prompt_len = tr.get_int("prompt_len", c.task.prompt_len);
      c.task.vocab_size = tr.get_int("vocab_size", c.task.vocab_size);
      c.task.seed = tr.get_u64("seed", c.task.seed);
      c.train_count = tr.get_int("train_count", c.train_count);
      c.test_count = tr.get_int("test_count", c.test_count);
      tr.finish();
    }
    c.T = r.get_int("T", c.T, true);
    c.tau = r.get_double("tau", c.tau);
    c.k_rloo = r.get_int("k_rloo", c.k_rloo);
    c.batch_size = r.get_int("batch_size", c.batch_size);
    c.lr = r.get_double("lr", c.lr);
    c.weight_decay = r.get_double("weight_decay", c.weight_decay);
    c.train_steps = r.get_int("train_steps", c.train_steps);
    c.seed = r.get_u64("seed", c.seed);
    c.scale_mode = pick_enum<ScaleMode>("scale_factor_mode", r.get_string("scale_factor_mode", "unbiased-T"),
                                        {{"unbiased-T", ScaleMode::kUnbiasedT}, {"paper-literal", ScaleMode::kPaperLiteral}});
    c.value_decoding = pick_enum<ValueDecoding>("value_decoding", r.get_string("value_decoding", "greedy"),
                                                {{"sample", ValueDecoding::kSample}, {"greedy", ValueDecoding::kGreedy}});
    c.posterior = pick_enum<PosteriorKind>("posterior", r.get_string("posterior", "learned"),
                                           {{"learned", PosteriorKind::kLearned}, {"forward", PosteriorKind::kForward}});
    c.selector = pick_enum<SelectorKind>("selector", r.get_string("selector", "learned"),
                                         {{"learned", SelectorKind::kLearned}, {"forward", SelectorKind::kForward}});
    if (const json* tl = r.find("train")) {
      if (!tl->is_array()) throw ConfigError("train", "expected a list of network names");
      c.train_theta = c.train_psi = c.train_phi = false;
      for (const json& name : *tl) {
        if (!name.is_string()) throw ConfigError("train", "expected network names");
        bool* flag = pick_enum<bool*>("train", name.get<std::string>(),
                                      {{"theta", &c.train_theta}, {"psi", &c.train_psi}, {"phi", &c.train_phi}});
        *flag = true;
      }
    }
    if (const json* nets = r.find("nets")) {
      Reader nr(*nets, "nets");
      if (const json* d = nr.find("denoiser")) c.denoiser = read_dims(*d, "nets.denoiser", c.denoiser);
      if (const json* d = nr.find("selector")) c.selector_net = read_dims(*d, "nets.selector", c.selector_net);
      if (const json* d = nr.find("score")) c.score_net = read_dims(*d, "nets.score", c.score_net);
      nr.finish();
    }
    c.init_ckpt = r.get_string("init_ckpt", c.init_ckpt);
    c.checkpoint_every = r.get_int("checkpoint_every", c.checkpoint_every);
    c.threads = r.get_int("threads", c.threads);
    r.finish();
  }
  validate_config(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig c = parse_config(ss.str());
  if (!c.init_ckpt.empty()) {
    std::filesystem::path p(c.init_ckpt);
    if (p.is_relative()) c.init_ckpt = (std::filesystem::path(path).parent_path() / p).lexically_normal().string();
  }
  return c;
}

std::string format_config(const RunConfig& c) {
  json train = json::array();
  if (c.train_theta) train.push_back("theta");
  if (c.train_psi) train.push_back("psi");
  if (c.train_phi) train.push_back("phi");
  json j{
      {"version", kConfigVersion},
      {"task",
       {{"kind", task_kind_name(c.task.kind)},
        {"N", c.task.N},
        {"prompt_len", c.task.prompt_len},
        {"vocab_size", c.task.vocab_size},
        {"seed", c.task.seed},
        {"train_count", c.train_count},
        {"test_count", c.test_count}}},
      {"T", c.T},
      {"tau", c.tau},
      {"k_rloo", c.k_rloo},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"train_steps", c.train_steps},
      {"seed", c.seed},
      {"scale_factor_mode", scale_mode_name(c.scale_mode)},
      {"value_decoding", value_decoding_name(c.value_decoding)},
      {"posterior", c.posterior == PosteriorKind::kLearned ? "learned" : "forward"},
      {"selector", c.selector == SelectorKind::kLearned ? "learned" : "forward"},
      {"train", train},
      {"nets", {{"denoiser", dims_json(c.denoiser)}, {"selector", dims_json(c.selector_net)}, {"score", dims_json(c.score_net)}}},
      {"init_ckpt", c.init_ckpt},
      {"checkpoint_every", c.checkpoint_every},
      {"threads", c.threads},
  };
  return j.dump(2) + "\n";
}

NetConfig net_config(const RunConfig& cfg, NetRole role) {
  const NetDims& d = role == NetRole::kDenoiser ? cfg.denoiser : role == NetRole::kSelector ? cfg.selector_net : cfg.score_net;
  NetConfig n;
  n.vocab_size = cfg.task.vocab_size + 1;
  n.seq_len = cfg.task.N;
  n.hidden_dim = d.hidden_dim;
  n.num_layers = d.num_layers;
  n.num_heads = d.num_heads;
  n.mlp_dim = d.mlp_dim;
  n.num_timesteps = cfg.T;
  n.time_conditioning = role != NetRole::kScore;
  return n;
}

Model build_model(const RunConfig& cfg) {
  return make_model(net_config(cfg, NetRole::kDenoiser), net_config(cfg, NetRole::kSelector),
                    net_config(cfg, NetRole::kScore), cfg.seed);
}

DiffusionConfig diffusion_config(const RunConfig& cfg) {
  DiffusionConfig d;
  d.schedule = make_linear_schedule(cfg.T);
  d.posterior.tau = cfg.tau;
  d.scale_mode = cfg.scale_mode;
  d.posterior_kind = cfg.posterior;
  d.selector_kind = cfg.selector;
  return d;
}

}  // namespace mdmo
