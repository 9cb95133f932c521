#pragma once

// train -> attack -> eval -> report orchestration over an output directory:
//
//   config.json                         resolved configuration
//   data/{train,test}.bin               synthetic data in CIFAR-10 binary layout (3x32x32 only)
//   models/<arch>_eps<e>_seed<s>.ckpt   checkpoint, plus .json sidecar and .history.csv
//   examples/<model>/<loss>_<mode>/     transfer example sets
//   examples/<model>/representation/    representation example set
//   results/                            bundle.json, transfer.csv, representation.csv,
//                                       representation_vectors.csv
//   charts/*.svg
//
// Existing artifacts whose recorded inputs still match are reused unless
// `force` is set.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <ctime>

#include "checkpoint.hpp"
#include "report.hpp"

namespace rx {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitMissing = 2, kExitRuntime = 3 };

// Exclusive advisory lock on <out>/.lock for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto p = dir / ".lock";
    fd_ = ::open(p.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error("io", "cannot open lock file " + p.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw Error("locked", "output directory " + dir.string() + " is in use by another run");
    }
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

struct ModelId {
  std::string arch;
  double epsilon_l2 = 0;
  std::uint64_t seed = 0;

  std::string name() const { return detail::cat(arch, "_eps", fmt_g6(epsilon_l2), "_seed", seed); }
};

struct Datasets {
  Dataset train, test;
};

class Pipeline {
 public:
  Pipeline(RunConfig cfg, bool force) : cfg_(std::move(cfg)), out_(resolve_out_dir(cfg_)), force_(force) {
    validate_config(cfg_);
  }

  const std::filesystem::path& out_dir() const { return out_; }
  std::filesystem::path bundle_path() const { return out_ / "results" / "bundle.json"; }

  std::vector<ModelId> source_models() const {
    std::vector<ModelId> m;
    for (double e : cfg_.eps_grid)
      for (auto s : cfg_.model_seeds()) m.push_back({cfg_.source_arch, e, s});
    return m;
  }
  std::vector<ModelId> destination_models() const {
    std::vector<ModelId> m;
    for (const auto& a : cfg_.dest_archs)
      for (double e : cfg_.dest_eps)
        for (auto s : cfg_.model_seeds()) m.push_back({a, e, s});
    return m;
  }

  void train() {
    DirLock lock(out_);
    train_unlocked();
  }
  void attack() {
    DirLock lock(out_);
    attack_unlocked();
  }
  ResultsBundle eval() {
    DirLock lock(out_);
    return eval_unlocked();
  }
  ResultsBundle sweep() {
    DirLock lock(out_);
    const auto t0 = std::chrono::steady_clock::now();
    train_unlocked();
    attack_unlocked();
    auto b = eval_unlocked();
    write_report(b, out_ / "results", out_ / "charts");
    log(LogLevel::info, detail::cat("sweep finished in ", seconds_since(t0), " s; bundle ", bundle_path().string()));
    return b;
  }

  const Datasets& datasets() {
    if (!data_) data_ = load_datasets();
    return *data_;
  }

 private:
  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  Datasets load_datasets() const {
    const auto& d = cfg_.dataset;
    Datasets out;
    if (d.kind == "cifar10") {
      if (!cifar10_dir_present(d.path))
        throw MissingArtifactError("CIFAR-10 binary files (data_batch_1..5.bin, test_batch.bin) not found in '" + d.path +
                                   "'; download the binary distribution or use dataset.kind = synthetic");
      auto s = load_cifar10_dir(d.path);
      if (d.train_subset > 0 && d.train_subset < s.train.size()) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(d.train_subset));
        std::iota(idx.begin(), idx.end(), 0);
        s.train = s.train.subset(idx);
      }
      out.train = std::move(s.train);
      out.test = std::move(s.test);
    } else {
      out.train = generate_synthetic_dataset(d.classes, d.train_per_class, d.side, d.seed, "train",
                                           parse_synthetic_style(d.style));
      out.test = generate_synthetic_dataset(d.classes, d.test_per_class, d.side, d.seed, "test",
                                           parse_synthetic_style(d.style));
    }
    return out;
  }

  ArchSpec arch_for(const std::string& name) {
    const auto& t = datasets().train;
    return arch::by_name(name, t.channels(), t.height(), t.width(), t.classes);
  }

  std::filesystem::path ckpt_path(const ModelId& m) const { return out_ / "models" / (m.name() + ".ckpt"); }
  std::filesystem::path sidecar_path(const ModelId& m) const { return out_ / "models" / (m.name() + ".json"); }

  RobustTrainConfig train_config(const ModelId& m) const {
    RobustTrainConfig t = cfg_.train;
    t.epsilon_l2 = m.epsilon_l2;
    t.seed = m.seed;
    return t;
  }

  nlohmann::json model_request(const ModelId& m) {
    return {{"arch", arch_for(m.arch)}, {"train", train_config(m)}, {"dataset_digest", digest_of("train")}};
  }

  std::string digest_of(const std::string& split) {
    auto it = digests_.find(split);
    if (it != digests_.end()) return it->second;
    const auto& d = split == "train" ? datasets().train : datasets().test;
    return digests_[split] = dataset_digest(d);
  }

  bool model_current(const ModelId& m) {
    if (!std::filesystem::exists(ckpt_path(m)) || !std::filesystem::exists(sidecar_path(m))) return false;
    try {
      const auto side = nlohmann::json::parse(read_file_text(sidecar_path(m)));
      return side.at("request") == model_request(m) && side.at("checkpoint_sha256") == file_digest(ckpt_path(m));
    } catch (const std::exception&) {
      return false;
    }
  }

  static std::string read_file_text(const std::filesystem::path& p) {
    const auto b = read_file(p);
    return std::string(b.begin(), b.end());
  }

  void export_synthetic() {
    const auto& d = datasets();
    if (cfg_.dataset.kind != "synthetic" || d.train.channels() != 3 || d.train.height() != 32 || d.train.width() != 32 ||
        d.train.classes > 10)
      return;
    const auto dir = out_ / "data";
    std::filesystem::create_directories(dir);
    for (const auto* split : {&d.train, &d.test}) {
      const auto p = dir / (split->split + ".bin");
      if (force_ || !std::filesystem::exists(p)) write_cifar10_binary(*split, p);
    }
  }

  void train_unlocked() {
    std::filesystem::create_directories(out_ / "models");
    write_file(out_ / "config.json", nlohmann::json(cfg_).dump(2) + "\n");
    export_synthetic();
    std::vector<ModelId> all = source_models();
    for (const auto& m : destination_models())
      if (std::none_of(all.begin(), all.end(), [&](const ModelId& x) { return x.name() == m.name(); })) all.push_back(m);
    const auto& data = datasets();
    for (const auto& m : all) {
      if (!force_ && model_current(m)) {
        log(LogLevel::info, "reusing " + ckpt_path(m).string());
        continue;
      }
      log(LogLevel::info, detail::cat("training ", m.name(), " (", cfg_.train.epochs, " epochs, ", data.train.size(),
                                      " images)"));
      const auto t0 = std::chrono::steady_clock::now();
      auto res = adversarial_train(arch_for(m.arch), data.train, train_config(m), &data.test);
      save_checkpoint(res.classifier, ckpt_path(m));
      std::string hist = "epoch,loss,train_accuracy,adversarial_train_accuracy,test_accuracy\r\n";
      for (const auto& e : res.history.epochs)
        hist += detail::cat(e.epoch, ",", fmt_g6(e.loss), ",", fmt_g6(e.train_accuracy), ",",
                            fmt_g6(e.adversarial_train_accuracy), ",", fmt_g6(e.test_accuracy), "\r\n");
      write_file(out_ / "models" / (m.name() + ".history.csv"), hist);
      const nlohmann::json side = {{"request", model_request(m)},
                                   {"checkpoint_sha256", file_digest(ckpt_path(m))},
                                   {"final_test_accuracy", res.history.epochs.empty() ? 0.0 : res.history.epochs.back().test_accuracy}};
      write_file(sidecar_path(m), side.dump(2) + "\n");
      log(LogLevel::info, detail::cat("trained ", m.name(), " in ", fmt_g6(seconds_since(t0)), " s, test accuracy ",
                                      res.history.epochs.empty() ? 0.0 : res.history.epochs.back().test_accuracy));
    }
  }

  std::string require_checkpoint(const ModelId& m) const {
    if (!std::filesystem::exists(ckpt_path(m)))
      throw MissingArtifactError("missing checkpoint " + ckpt_path(m).string() + "; run `robustxfer train` first");
    return file_digest(ckpt_path(m));
  }

  Classifier require_model(const ModelId& m) const {
    require_checkpoint(m);
    return load_checkpoint(ckpt_path(m));
  }

  std::filesystem::path example_dir(const ModelId& m, const std::string& leaf) const {
    return out_ / "examples" / m.name() / leaf;
  }

  std::vector<std::pair<LossKind, AttackMode>> transfer_jobs() const {
    std::vector<std::pair<LossKind, AttackMode>> jobs;
    for (auto l : cfg_.losses)
      for (auto mo : {AttackMode::targeted, AttackMode::untargeted})
        if (cfg_.wants(mo)) jobs.emplace_back(l, mo);
    return jobs;
  }

  static std::string leaf_of(LossKind l, AttackMode m) { return detail::cat(to_string(l), "_", to_string(m)); }

  std::vector<EvalSet> eval_draws() {
    std::vector<EvalSet> d;
    for (auto s : cfg_.eval_seeds()) d.push_back(sample_eval_set(datasets().test, cfg_.eval.n, s));
    return d;
  }

  bool example_set_current(const std::filesystem::path& dir, const std::string& ckpt_digest, const AttackConfig& ac,
                           AttackMode mode, std::size_t expected_items) {
    if (!example_set_present(dir)) return false;
    try {
      const auto s = load_example_set(dir);
      return s.source_checkpoint_digest == ckpt_digest && nlohmann::json(s.config) == nlohmann::json(ac) &&
             s.mode == mode && s.dataset_digest == digest_of("test") && s.items.size() == expected_items;
    } catch (const std::exception&) {
      return false;
    }
  }

  void attack_unlocked() {
    const auto& test = datasets().test;
    const auto draws = eval_draws();
    std::size_t draw_items = 0;
    for (const auto& d : draws) draw_items += d.items.size();
    for (const auto& m : source_models()) {
      const Classifier src = require_model(m);
      const std::string ck = file_digest(ckpt_path(m));
      for (auto [loss, mode] : transfer_jobs()) {
        AttackConfig ac = cfg_.attack;
        ac.loss = loss;
        const auto dir = example_dir(m, leaf_of(loss, mode));
        if (!force_ && example_set_current(dir, ck, ac, mode, draw_items)) {
          log(LogLevel::info, "reusing " + dir.string());
          continue;
        }
        log(LogLevel::info, detail::cat("attacking with ", m.name(), " ", leaf_of(loss, mode), ": ", draw_items, " images x ",
                                        ac.iterations, " iterations"));
        auto set = generate_transfer_examples(src, test, draws, ac, mode, cfg_.threads);
        set.source_checkpoint_digest = ck;
        save_example_set(set, dir);
      }
      if (cfg_.wants(AttackMode::representation)) {
        AttackConfig ac = cfg_.attack;
        ac.ti_enabled = false;
        const auto rs = sample_representation_eval(test, cfg_.eval.rep_targets, cfg_.eval.rep_initials,
                                                   cfg_.representation_seed());
        const auto dir = example_dir(m, "representation");
        if (!force_ && example_set_current(dir, ck, ac, AttackMode::representation, static_cast<std::size_t>(rs.task_count()))) {
          log(LogLevel::info, "reusing " + dir.string());
          continue;
        }
        log(LogLevel::info, detail::cat("representation attacks with ", m.name(), ": ", rs.task_count(), " tasks"));
        auto set = generate_representation_examples(src, test, rs, ac, cfg_.threads);
        set.source_checkpoint_digest = ck;
        save_example_set(set, dir);
      }
    }
  }

  nlohmann::json config_echo() const {
    nlohmann::json j = cfg_;
    j.erase("out_dir");
    j.erase("threads");
    return j;
  }

  ResultsBundle eval_unlocked() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& test = datasets().test;
    ResultsBundle b;
    b.config = config_echo();
    b.inputs["dataset/train"] = digest_of("train");
    b.inputs["dataset/test"] = digest_of("test");
    std::vector<std::pair<ModelId, Classifier>> dests;
    for (const auto& m : destination_models()) {
      dests.emplace_back(m, require_model(m));
      b.inputs["models/" + m.name()] = file_digest(ckpt_path(m));
    }
    std::vector<std::tuple<ModelInfo, ModelInfo, std::int64_t, std::int64_t, Tensor<float>>> vectors;
    for (const auto& m : source_models()) {
      b.inputs["models/" + m.name()] = require_checkpoint(m);
      auto need_set = [&](const std::string& leaf) {
        const auto dir = example_dir(m, leaf);
        if (!example_set_present(dir))
          throw MissingArtifactError("missing example set " + dir.string() + "; run `robustxfer attack` first");
        b.inputs["examples/" + m.name() + "/" + leaf] = file_digest(dir / kExampleManifest);
        return load_example_set(dir);
      };
      for (auto [loss, mode] : transfer_jobs()) {
        const auto set = need_set(leaf_of(loss, mode));
        for (const auto& [dm, dc] : dests) b.transfer.push_back(evaluate_transfer(dc, set, test));
      }
      if (cfg_.wants(AttackMode::representation)) {
        const auto set = need_set("representation");
        for (const auto& [dm, dc] : dests) {
          std::vector<Tensor<float>> reps;
          b.representation.push_back(evaluate_representation(dc, set, test, &reps));
          for (std::size_t i = 0; i < reps.size(); ++i)
            vectors.emplace_back(set.source, SourceInfo::of(dc), set.items[i].target_index, set.items[i].index,
                                 std::move(reps[i]));
        }
      }
    }
    const auto results = out_ / "results";
    std::filesystem::create_directories(results);
    write_csv(b.transfer, results / "transfer.csv");
    write_csv(b.representation, results / "representation.csv");
    write_file(results / "representation_vectors.csv", representation_vectors_csv(vectors));
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    b.metadata = {{"created_utc", stamp},
                  {"eval_seconds", seconds_since(t0)},
                  {"out_dir", out_.string()},
                  {"threads", cfg_.threads}};
    write_bundle(b, bundle_path());
    log(LogLevel::info, detail::cat("wrote ", b.transfer.size(), " transfer and ", b.representation.size(),
                                    " representation records to ", bundle_path().string()));
    return b;
  }

  RunConfig cfg_;
  std::filesystem::path out_;
  bool force_;
  std::optional<Datasets> data_;
  std::map<std::string, std::string> digests_;
};

// Regenerates CSVs and charts next to the bundle, without model access.
inline std::vector<std::filesystem::path> report_from_bundle(const std::filesystem::path& bundle_path,
                                                             std::optional<std::filesystem::path> charts_dir = {}) {
  const auto b = read_bundle(bundle_path);
  const auto results = bundle_path.parent_path().empty() ? std::filesystem::path(".") : bundle_path.parent_path();
  return write_report(b, results, charts_dir ? *charts_dir : results.parent_path() / "charts");
}

// Maps library errors to process exit codes.
template <typename F>
int run_guarded(F&& f) {
  try {
    f();
    return kExitOk;
  } catch (const ValidationError& e) {
    log(LogLevel::error, e.what());
    return kExitValidation;
  } catch (const MissingArtifactError& e) {
    log(LogLevel::error, e.what());
    return kExitMissing;
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return kExitRuntime;
  }
}

}  // namespace rx
