#include <CLI11.hpp>

#include "robustxfer/robustxfer.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool force = false;
  std::vector<double> eps_grid;
  std::vector<std::string> archs;
  std::string loss;
  std::string mode;
  int threads = 0;
  double epsilon_inf = 0;
  int iterations = -1;
  int epochs = -1;
  std::string log_level = "info";
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--out", f.out, std::string("output directory (default: $") + rx::kOutDirEnv + " or ./" +
                                      rx::kDefaultOutDir + ")");
  app->add_option("--seed", f.seed, "base seed");
  app->add_flag("--force", f.force, "recompute artifacts that already exist");
  app->add_option("--eps-grid", f.eps_grid, "source robustness parameters, comma separated")->delimiter(',');
  app->add_option("--arch", f.archs, "source architecture followed by destination architectures")->delimiter(',');
  app->add_option("--loss", f.loss, "adversarial loss")->check(CLI::IsMember({"xent", "logit"}));
  app->add_option("--mode", f.mode, "attack objective")->check(CLI::IsMember({"targeted", "untargeted", "representation"}));
  app->add_option("--threads", f.threads, "attack worker threads")->check(CLI::PositiveNumber);
  app->add_option("--epsilon-inf", f.epsilon_inf, "l-infinity attack budget");
  app->add_option("--iterations", f.iterations, "attack iterations");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--log-level", f.log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
}

rx::RunConfig resolve(const CommonFlags& f, const CLI::App* app) {
  rx::RunConfig c = rx::load_config(f.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(f.config));
  rx::ConfigOverrides o;
  if (app->count("--out")) o.out_dir = f.out;
  if (app->count("--seed")) o.seed = f.seed;
  if (app->count("--eps-grid")) o.eps_grid = f.eps_grid;
  if (app->count("--arch")) o.archs = f.archs;
  if (app->count("--loss")) o.loss = rx::parse_loss_kind(f.loss);
  if (app->count("--mode")) o.mode = rx::parse_attack_mode(f.mode);
  if (app->count("--threads")) o.threads = f.threads;
  if (app->count("--epsilon-inf")) o.epsilon_inf = f.epsilon_inf;
  if (app->count("--iterations")) o.iterations = f.iterations;
  if (app->count("--epochs")) o.epochs = f.epochs;
  return rx::apply_overrides(std::move(c), o);
}

void set_level(const std::string& s) {
  using rx::LogLevel;
  rx::set_log_level(s == "debug" ? LogLevel::debug : s == "warn" ? LogLevel::warn : s == "error" ? LogLevel::error : LogLevel::info);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transferability of adversarial examples from slightly robust source classifiers"};
  app.require_subcommand(1);
  CommonFlags f;
  std::string bundle;

  auto* train = app.add_subcommand("train", "train every source and destination classifier");
  auto* attack = app.add_subcommand("attack", "generate adversarial example sets with every source");
  auto* eval = app.add_subcommand("eval", "score example sets on every destination and write the results bundle");
  auto* sweep = app.add_subcommand("sweep", "train, attack, eval and report in one run");
  auto* report = app.add_subcommand("report", "regenerate CSV tables and SVG charts from a results bundle");
  for (auto* s : {train, attack, eval, sweep, report}) add_common(s, f);
  report->add_option("bundle", bundle, "results bundle (default: <out>/results/bundle.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? rx::kExitOk : rx::kExitValidation;
  }
  set_level(f.log_level);

  CLI::App* cmd = app.get_subcommands().front();
  return rx::run_guarded([&] {
    if (cmd == report) {
      std::filesystem::path p = bundle;
      if (p.empty()) p = rx::Pipeline(resolve(f, cmd), false).bundle_path();
      for (const auto& out : rx::report_from_bundle(p)) rx::log(rx::LogLevel::info, "wrote " + out.string());
      return;
    }
    rx::Pipeline pipe(resolve(f, cmd), f.force);
    if (cmd == train) pipe.train();
    if (cmd == attack) pipe.attack();
    if (cmd == eval) pipe.eval();
    if (cmd == sweep) pipe.sweep();
  });
}
