#pragma once

// Run configuration: JSON file plus command-line overrides. Every key is
// optional; unknown keys and out-of-range values are collected and reported
// together.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>

#include "attack.hpp"
#include "train.hpp"

namespace rx {

inline constexpr const char* kOutDirEnv = "ROBUSTXFER_OUT";
inline constexpr const char* kDefaultOutDir = "robustxfer-out";

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | cifar10
  std::string path;                // cifar10 directory
  int classes = 10;
  int train_per_class = 300;
  int test_per_class = 100;
  int side = 32;
  std::uint64_t seed = 0;
  std::int64_t train_subset = 0;  // cifar10: keep this many training images (0 = all)
  std::string style = "bold";     // synthetic: bold | faint

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetSpec, kind, path, classes, train_per_class, test_per_class, side, seed,
                                   train_subset, style)

struct EvalSpec {
  int n = 10;        // images per eval-set draw
  int draws = 3;     // independent eval-set draws, pooled
  int rep_targets = 10;
  int rep_initials = 90;

  friend bool operator==(const EvalSpec&, const EvalSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalSpec, n, draws, rep_targets, rep_initials)

struct RunConfig {
  std::string name = "robustxfer";
  DatasetSpec dataset;
  std::string source_arch = "A";
  std::vector<std::string> dest_archs{"B", "C"};
  std::vector<double> eps_grid{0, 0.05, 0.1, 0.25, 0.5, 1};
  std::vector<double> dest_eps{0};
  int replicates = 1;  // model seeds seed, seed+1, ...
  RobustTrainConfig train;  // epsilon_l2 and seed are set per model
  AttackConfig attack;
  std::vector<LossKind> losses{LossKind::logit, LossKind::xent};
  std::vector<AttackMode> modes{AttackMode::targeted, AttackMode::untargeted, AttackMode::representation};
  EvalSpec eval;
  std::string out_dir;
  int threads = 1;
  std::uint64_t seed = 0;

  std::vector<std::uint64_t> model_seeds() const {
    std::vector<std::uint64_t> s;
    for (int r = 0; r < replicates; ++r) s.push_back(seed + static_cast<std::uint64_t>(r));
    return s;
  }
  std::vector<std::uint64_t> eval_seeds() const {
    std::vector<std::uint64_t> s;
    for (int k = 0; k < eval.draws; ++k) s.push_back(derive_seed(seed, {0x6576616cULL, static_cast<std::uint64_t>(k)}));
    return s;
  }
  std::uint64_t representation_seed() const { return derive_seed(seed, 0x726570ULL); }
  bool wants(AttackMode m) const { return std::find(modes.begin(), modes.end(), m) != modes.end(); }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json train = c.train;
  train.erase("epsilon_l2");
  train.erase("seed");
  nlohmann::json attack = c.attack;
  attack.erase("loss");
  j = {{"name", c.name},         {"dataset", c.dataset},    {"source_arch", c.source_arch},
       {"dest_archs", c.dest_archs}, {"eps_grid", c.eps_grid}, {"dest_eps", c.dest_eps},
       {"replicates", c.replicates}, {"train", train},        {"attack", attack},
       {"losses", c.losses},     {"modes", c.modes},        {"eval", c.eval},
       {"out_dir", c.out_dir},   {"threads", c.threads},    {"seed", c.seed}};
}

namespace detail {

class ConfigReader {
 public:
  std::vector<std::string> errors;

  // Flags keys of `obj` not in `known`.
  void keys(const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> known) {
    if (!obj.is_object()) {
      errors.push_back(where.empty() ? "config root must be a JSON object" : where + " must be an object");
      return;
    }
    std::set<std::string> k(known.begin(), known.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!k.count(it.key())) errors.push_back("unknown key '" + join(where, it.key()) + "'");
  }

  template <typename T>
  void get(const nlohmann::json& obj, const char* key, const std::string& where, T& out) {
    if (!obj.is_object() || !obj.contains(key)) return;
    try {
      out = obj.at(key).get<T>();
    } catch (const std::exception& e) {
      errors.push_back("'" + join(where, key) + "' has the wrong type");
    }
  }

  void check(bool ok, std::string msg) {
    if (!ok) errors.push_back(std::move(msg));
  }

  static std::string join(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
  }
};

template <typename E>
void get_enum_list(ConfigReader& r, const nlohmann::json& obj, const char* key, std::vector<E>& out,
                   E (*parse)(std::string_view)) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_array()) {
    r.errors.push_back(std::string("'") + key + "' must be an array of strings");
    return;
  }
  out.clear();
  for (const auto& s : v) {
    try {
      out.push_back(parse(s.get<std::string>()));
    } catch (const std::exception& e) {
      r.errors.push_back(std::string("'") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

inline std::vector<std::string> config_violations(const RunConfig& c) {
  std::vector<std::string> bad;
  auto need = [&](bool ok, std::string m) {
    if (!ok) bad.push_back(std::move(m));
  };
  need(!c.name.empty(), "name must be non-empty");
  need(c.dataset.kind == "synthetic" || c.dataset.kind == "cifar10", "dataset.kind must be synthetic or cifar10");
  if (c.dataset.kind == "cifar10") need(!c.dataset.path.empty(), "dataset.path is required for cifar10");
  need(c.dataset.classes >= 2, "dataset.classes must be >= 2");
  need(c.dataset.train_per_class >= 1, "dataset.train_per_class must be >= 1");
  need(c.dataset.test_per_class >= 1, "dataset.test_per_class must be >= 1");
  need(c.dataset.side >= 8, "dataset.side must be >= 8");
  need(c.dataset.train_subset >= 0, "dataset.train_subset must be >= 0");
  need(c.dataset.style == "bold" || c.dataset.style == "faint", "dataset.style must be bold or faint");
  const int classes = c.dataset.kind == "cifar10" ? 10 : c.dataset.classes;
  for (const auto& name : std::vector<std::string>{c.source_arch}) {
    try {
      arch::by_name(name, 3, 32, 32, classes);
    } catch (const std::exception&) {
      bad.push_back("source_arch '" + name + "' is not a shipped architecture (A, B, C, T)");
    }
  }
  need(!c.dest_archs.empty(), "dest_archs must be non-empty");
  for (const auto& name : c.dest_archs) {
    try {
      arch::by_name(name, 3, 32, 32, classes);
    } catch (const std::exception&) {
      bad.push_back("dest_archs entry '" + name + "' is not a shipped architecture (A, B, C, T)");
    }
  }
  need(!c.eps_grid.empty(), "eps_grid must be non-empty");
  for (double e : c.eps_grid) need(std::isfinite(e) && e >= 0, detail::cat("eps_grid entry ", e, " must be >= 0"));
  need(!c.dest_eps.empty(), "dest_eps must be non-empty");
  for (double e : c.dest_eps) need(std::isfinite(e) && e >= 0, detail::cat("dest_eps entry ", e, " must be >= 0"));
  need(c.replicates >= 1, "replicates must be >= 1");
  need(!c.losses.empty(), "losses must be non-empty");
  need(!c.modes.empty(), "modes must be non-empty");
  need(c.eval.n >= 2 && c.eval.n <= classes, detail::cat("eval.n must be in [2, ", classes, "]"));
  need(c.eval.draws >= 1, "eval.draws must be >= 1");
  need(c.eval.rep_targets >= 1 && c.eval.rep_targets <= classes,
       detail::cat("eval.rep_targets must be in [1, ", classes, "]"));
  need(c.eval.rep_initials >= 1, "eval.rep_initials must be >= 1");
  need(c.threads >= 1, "threads must be >= 1");
  RobustTrainConfig t = c.train;
  try {
    t.validate();
  } catch (const ValidationError& e) {
    bad.push_back(e.what());
  }
  for (auto& v : c.attack.violations()) bad.push_back("attack " + v);
  return bad;
}

inline void validate_config(const RunConfig& c) {
  const auto bad = config_violations(c);
  if (bad.empty()) return;
  std::string msg = detail::cat("invalid configuration (", bad.size(), " problem", bad.size() == 1 ? "" : "s", "):");
  for (const auto& b : bad) msg += "\n  - " + b;
  throw ValidationError(msg);
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::ConfigReader r;
  r.keys(j, "", {"name", "dataset", "source_arch", "dest_archs", "eps_grid", "dest_eps", "replicates", "train", "attack",
                 "losses", "modes", "eval", "out_dir", "threads", "seed"});
  if (!j.is_object()) throw ValidationError("invalid configuration: " + r.errors.front());
  r.get(j, "name", "", c.name);
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    r.keys(d, "dataset", {"kind", "path", "classes", "train_per_class", "test_per_class", "side", "seed", "train_subset", "style"});
    r.get(d, "kind", "dataset", c.dataset.kind);
    r.get(d, "path", "dataset", c.dataset.path);
    r.get(d, "classes", "dataset", c.dataset.classes);
    r.get(d, "train_per_class", "dataset", c.dataset.train_per_class);
    r.get(d, "test_per_class", "dataset", c.dataset.test_per_class);
    r.get(d, "side", "dataset", c.dataset.side);
    r.get(d, "seed", "dataset", c.dataset.seed);
    r.get(d, "train_subset", "dataset", c.dataset.train_subset);
    r.get(d, "style", "dataset", c.dataset.style);
  }
  r.get(j, "source_arch", "", c.source_arch);
  r.get(j, "dest_archs", "", c.dest_archs);
  r.get(j, "eps_grid", "", c.eps_grid);
  r.get(j, "dest_eps", "", c.dest_eps);
  r.get(j, "replicates", "", c.replicates);
  if (j.contains("train")) {
    const auto& t = j["train"];
    r.keys(t, "train", {"pgd_steps", "pgd_step_scale", "pgd_random_start", "epochs", "batch_size", "learning_rate",
                        "momentum", "weight_decay", "augment", "epsilon_warmup_epochs"});
    r.get(t, "pgd_steps", "train", c.train.pgd_steps);
    r.get(t, "pgd_step_scale", "train", c.train.pgd_step_scale);
    r.get(t, "pgd_random_start", "train", c.train.pgd_random_start);
    r.get(t, "epochs", "train", c.train.epochs);
    r.get(t, "batch_size", "train", c.train.batch_size);
    r.get(t, "learning_rate", "train", c.train.learning_rate);
    r.get(t, "momentum", "train", c.train.momentum);
    r.get(t, "weight_decay", "train", c.train.weight_decay);
    r.get(t, "augment", "train", c.train.augment);
    r.get(t, "epsilon_warmup_epochs", "train", c.train.epsilon_warmup_epochs);
  }
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    r.keys(a, "attack", {"epsilon_inf", "step_size", "iterations", "momentum", "di_enabled", "di", "ti_enabled",
                         "ti_kernel_size", "ti_sigma", "mi_enabled", "strict_momentum", "seed"});
    r.get(a, "epsilon_inf", "attack", c.attack.epsilon_inf);
    r.get(a, "step_size", "attack", c.attack.step_size);
    r.get(a, "iterations", "attack", c.attack.iterations);
    r.get(a, "momentum", "attack", c.attack.momentum);
    r.get(a, "di_enabled", "attack", c.attack.di_enabled);
    if (a.is_object() && a.contains("di")) {
      const auto& di = a["di"];
      r.keys(di, "attack.di", {"scale_min", "scale_max", "flip_prob"});
      r.get(di, "scale_min", "attack.di", c.attack.di.scale_min);
      r.get(di, "scale_max", "attack.di", c.attack.di.scale_max);
      r.get(di, "flip_prob", "attack.di", c.attack.di.flip_prob);
    }
    r.get(a, "ti_enabled", "attack", c.attack.ti_enabled);
    r.get(a, "ti_kernel_size", "attack", c.attack.ti_kernel_size);
    r.get(a, "ti_sigma", "attack", c.attack.ti_sigma);
    r.get(a, "mi_enabled", "attack", c.attack.mi_enabled);
    r.get(a, "strict_momentum", "attack", c.attack.strict_momentum);
    r.get(a, "seed", "attack", c.attack.seed);
  }
  detail::get_enum_list(r, j, "losses", c.losses, &parse_loss_kind);
  detail::get_enum_list(r, j, "modes", c.modes, &parse_attack_mode);
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    r.keys(e, "eval", {"n", "draws", "rep_targets", "rep_initials"});
    r.get(e, "n", "eval", c.eval.n);
    r.get(e, "draws", "eval", c.eval.draws);
    r.get(e, "rep_targets", "eval", c.eval.rep_targets);
    r.get(e, "rep_initials", "eval", c.eval.rep_initials);
  }
  r.get(j, "out_dir", "", c.out_dir);
  r.get(j, "threads", "", c.threads);
  r.get(j, "seed", "", c.seed);
  for (auto& v : config_violations(c)) r.errors.push_back(v);
  if (!r.errors.empty()) {
    std::string msg = detail::cat("invalid configuration (", r.errors.size(), " problem", r.errors.size() == 1 ? "" : "s",
                                  "):");
    for (const auto& e : r.errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  return c;
}

// Missing path means defaults. An empty or whitespace-only file is treated
// as an empty object.
inline RunConfig load_config(const std::optional<std::filesystem::path>& path) {
  if (!path) return config_from_json(nlohmann::json::object());
  if (!std::filesystem::exists(*path)) throw MissingArtifactError("config file not found: " + path->string());
  const auto bytes = read_file(*path);
  const bool blank = std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t b) { return std::isspace(b); });
  if (blank) return config_from_json(nlohmann::json::object());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config file is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

// Command-line values win over the file.
struct ConfigOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> eps_grid;
  std::optional<std::vector<std::string>> archs;  // source first, then destinations
  std::optional<LossKind> loss;
  std::optional<AttackMode> mode;
  std::optional<int> threads;
  std::optional<double> epsilon_inf;
  std::optional<int> iterations;
  std::optional<int> epochs;
};

inline RunConfig apply_overrides(RunConfig c, const ConfigOverrides& o) {
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.seed) c.seed = *o.seed;
  if (o.eps_grid) c.eps_grid = *o.eps_grid;
  if (o.archs) {
    if (o.archs->empty()) throw ValidationError("invalid configuration:\n  - --arch needs at least one name");
    c.source_arch = o.archs->front();
    if (o.archs->size() > 1) c.dest_archs.assign(o.archs->begin() + 1, o.archs->end());
  }
  if (o.loss) c.losses = {*o.loss};
  if (o.mode) c.modes = {*o.mode};
  if (o.threads) c.threads = *o.threads;
  if (o.epsilon_inf) c.attack.epsilon_inf = *o.epsilon_inf;
  if (o.iterations) c.attack.iterations = *o.iterations;
  if (o.epochs) c.train.epochs = *o.epochs;
  validate_config(c);
  return c;
}

// --out, then the config file, then the environment, then the default.
inline std::filesystem::path resolve_out_dir(const RunConfig& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return kDefaultOutDir;
}

}  // namespace rx
