// somnus: fixture -> preprocess -> train -> augment -> evaluate -> serve.

#include <csignal>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>

#include "somnus/somnus.hpp"

namespace fs = std::filesystem;
using namespace somnus;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 7;
  bool seed_given = false;
  std::string out = "out";
  std::string input;
  std::size_t k = 20;
  bool k_given = false;
  bool no_augment = false;
  int port = -1;
  bool quiet = false;
  std::string model_path;
  std::string samples;
  std::string model_kind = "gbdt-b";
  std::string format = "md";
};

Options opt;

void log(const std::string& msg) {
  if (opt.quiet) return;
  std::time_t now = std::time(nullptr);
  char ts[32];
  std::strftime(ts, sizeof ts, "%H:%M:%S", std::localtime(&now));
  std::fprintf(stderr, "[%s] %s\n", ts, msg.c_str());
}

json load_root() {
  if (opt.config.empty()) return json::object();
  return load_config_file(opt.config);
}

ExperimentConfig experiment_config(const json& root) {
  auto cfg = ExperimentConfig::from_json(root);
  if (opt.seed_given) cfg.seed = opt.seed;
  if (opt.k_given) cfg.top_k = opt.k;
  if (opt.no_augment) cfg.augment = false;
  if (cfg.top_k < 1) throw Error(Errc::kInvalidConfig, "--k must be >= 1");
  return cfg;
}

fs::path out_dir() {
  fs::path p(opt.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(Errc::kIo, "cannot create output directory", p.string());
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIo, "cannot write file", path.string());
  out << text;
}

BehaviorTable read_input(const char* what) {
  if (opt.input.empty()) throw Error(Errc::kInvalidConfig, std::string("--input is required for ") + what);
  return load_csv(opt.input, {}, kTargetColumn);
}

// Raw data for evaluate: --input if given, else the seeded fixture.
BehaviorTable raw_table(const ExperimentConfig& cfg) {
  if (!opt.input.empty()) return load_csv(opt.input, {}, kTargetColumn);
  return generate_fixture(cfg.seed, cfg.participants, cfg.days, cfg.planted);
}

std::unique_ptr<GeneratorClient> make_generator(const json& root, const ExperimentConfig& cfg) {
  const auto& au = config_section(root, "augment");
  const auto kind = config_value<std::string>(au, "generator", "mock");
  if (kind == "mock") {
    return std::make_unique<MockGenerator>(derive_seed(cfg.seed, "experiment.mock"), cfg.mock_malformed_rate);
  }
  if (kind == "live") return LiveGenerator::from_env(LiveClientConfig::from_json(config_section(au, "live")));
  throw Error(Errc::kInvalidConfig, "augment.generator must be mock or live", kind);
}

std::vector<std::string> rank_features(const BehaviorTable& train, const ExperimentConfig& cfg) {
  const auto m = to_matrix(train, train.feature_columns());
  auto ranker = fit_gbdt(m, cfg.gbdt_b, derive_seed(cfg.seed, "experiment.ranker"));
  return select_top_k(ranker.importances, cfg.top_k);
}

int cmd_fixture() {
  const auto root = load_root();
  const auto cfg = experiment_config(root);
  auto table = generate_fixture(cfg.seed, cfg.participants, cfg.days, cfg.planted);
  const auto path = out_dir() / "fixture.csv";
  write_csv(table, path);
  log("wrote " + path.string() + " (" + std::to_string(table.size()) + " rows)");
  return 0;
}

int cmd_preprocess() {
  const auto root = load_root();
  const auto cfg = experiment_config(root);
  auto res = run_pipeline(read_input("preprocess"), cfg.pipeline);
  const auto dir = out_dir();
  write_csv(res.table, dir / "preprocessed.csv");
  write_text(dir / "preprocess_report.json", res.report.to_json().dump(2) + "\n");
  log("kept " + std::to_string(res.table.size()) + " of " + std::to_string(res.report.input_rows) +
      " rows, " + std::to_string(res.table.feature_columns().size()) + " features");
  return 0;
}

int cmd_train() {
  const auto root = load_root();
  const auto cfg = experiment_config(root);
  const auto table = read_input("train");
  const auto split = chronological_split(table, cfg.split);
  const auto features = rank_features(split.train, cfg);
  const auto m = to_matrix(split.train, features);
  ModelArtifact artifact;
  if (opt.model_kind == "mean") artifact = fit_mean(m);
  else if (opt.model_kind == "forest") artifact = fit_forest(m, cfg.forest, derive_seed(cfg.seed, "experiment.model", 1));
  else if (opt.model_kind == "gbdt-a") artifact = fit_gbdt(m, cfg.gbdt_a, derive_seed(cfg.seed, "experiment.model", 2));
  else if (opt.model_kind == "gbdt-b") artifact = fit_gbdt(m, cfg.gbdt_b, derive_seed(cfg.seed, "experiment.model", 3));
  else throw Error(Errc::kInvalidConfig, "--model-kind must be mean, forest, gbdt-a or gbdt-b", opt.model_kind);
  const auto path = out_dir() / "model.json";
  save_artifact(artifact, path);
  log("trained " + opt.model_kind + " on " + std::to_string(m.n()) + " rows x " + std::to_string(m.d()) +
      " features -> " + path.string());
  return 0;
}

int cmd_augment() {
  const auto root = load_root();
  const auto cfg = experiment_config(root);
  const auto table = read_input("augment");
  const auto split = chronological_split(table, cfg.split);
  auto client = make_generator(root, cfg);
  AugmentConfig ac;
  ac.window = cfg.augment_window;
  ac.per_pid = cfg.augment_per_pid;
  ac.columns = rank_features(split.train, cfg);
  ac.reserved_until = split.holdout_end;
  auto res = augment_training_set(split.train, *client, ac);
  const auto dir = out_dir();
  write_csv(res.table, dir / "augmented.csv");
  write_text(dir / "batch_log.json", res.log.to_json().dump(2) + "\n");
  log("appended " + std::to_string(res.log.appended()) + " rows, rejected " +
      std::to_string(res.log.rejected()));
  return 0;
}

int cmd_evaluate() {
  const auto root = load_root();
  const auto cfg = experiment_config(root);
  const auto raw = raw_table(cfg);
  std::unique_ptr<GeneratorClient> client;
  if (cfg.augment) client = make_generator(root, cfg);
  auto report = run_experiment(raw, cfg, client.get());
  const auto dir = out_dir();
  write_text(dir / "report.md", render_report(report, ReportFormat::kMarkdown));
  write_text(dir / "report.csv", render_report(report, ReportFormat::kCsv));
  write_text(dir / "report.json", render_report(report, ReportFormat::kJson));
  if (!opt.quiet) std::cout << render_report(report, ReportFormat::kMarkdown);
  return 0;
}

int cmd_report() {
  if (opt.input.empty()) throw Error(Errc::kInvalidConfig, "--input is required for report");
  std::ifstream in(opt.input);
  if (!in) throw Error(Errc::kIo, "cannot open report", opt.input);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::kBadRequest, "report is not valid JSON", e.what());
  }
  const auto report = EvalReport::from_json(j);
  ReportFormat f;
  std::string ext;
  if (opt.format == "md") f = ReportFormat::kMarkdown, ext = "md";
  else if (opt.format == "csv") f = ReportFormat::kCsv, ext = "csv";
  else if (opt.format == "json") f = ReportFormat::kJson, ext = "json";
  else throw Error(Errc::kInvalidConfig, "--format must be md, csv or json", opt.format);
  const auto text = render_report(report, f);
  std::cout << text;
  if (!opt.out.empty() && opt.out != "-") write_text(out_dir() / ("report." + ext), text);
  return 0;
}

int cmd_serve() {
  const auto root = load_root();
  auto scfg = ServiceConfig::from_json(config_section(root, "service"));
  if (opt.port >= 0) scfg.port = opt.port;
  if (opt.model_path.empty()) throw Error(Errc::kInvalidConfig, "--model is required for serve");
  auto artifact = load_artifact(opt.model_path);
  std::optional<BehaviorTable> samples;
  if (!opt.samples.empty()) samples = load_csv(opt.samples, {}, kTargetColumn);
  InsightService service(std::move(artifact), scfg, std::move(samples));
  HttpApi api(service);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  int port = scfg.port;
  if (port == 0) {
    port = api.bind_to_any_port(scfg.host);
  } else if (!api.server().bind_to_port(scfg.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error(Errc::kIo, "cannot bind", scfg.host + ":" + std::to_string(scfg.port));
  std::thread worker([&] { api.listen_after_bind(); });
  api.wait_until_ready();
  std::printf("listening on http://%s:%d\n", scfg.host.c_str(), port);
  std::fflush(stdout);
  int sig = 0;
  sigwait(&set, &sig);
  log("shutting down");
  api.stop();
  worker.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"somnus: sleep-efficiency modeling pipeline and insight service"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto common = [](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Config file (TOML or JSON)");
    sub->add_option("--seed", opt.seed, "Root seed (default 7)")->each([](const std::string&) { opt.seed_given = true; });
    sub->add_option("--out", opt.out, "Output directory (default ./out)");
    sub->add_flag("--quiet", opt.quiet, "Suppress progress output");
  };

  auto* fixture = app.add_subcommand("fixture", "Write the seeded synthetic dataset");
  common(fixture);
  auto* preprocess = app.add_subcommand("preprocess", "Clean a raw CSV");
  common(preprocess);
  preprocess->add_option("--input", opt.input, "Raw CSV")->required();
  auto* train = app.add_subcommand("train", "Train a top-k model artifact");
  common(train);
  train->add_option("--input", opt.input, "Preprocessed CSV")->required();
  train->add_option("--k", opt.k, "Top-K features (default 20)")->each([](const std::string&) { opt.k_given = true; });
  train->add_option("--model-kind", opt.model_kind, "mean | forest | gbdt-a | gbdt-b");
  auto* augment = app.add_subcommand("augment", "Append generated rows to the training split");
  common(augment);
  augment->add_option("--input", opt.input, "Preprocessed CSV")->required();
  augment->add_option("--k", opt.k, "Top-K features (default 20)")->each([](const std::string&) { opt.k_given = true; });
  auto* evaluate = app.add_subcommand("evaluate", "Run the full comparison and write the report");
  common(evaluate);
  evaluate->add_option("--input", opt.input, "Raw CSV (default: seeded fixture)");
  evaluate->add_option("--k", opt.k, "Top-K features (default 20)")->each([](const std::string&) { opt.k_given = true; });
  evaluate->add_flag("--no-augment", opt.no_augment, "Skip augmentation and the Top-k+G group");
  auto* serve = app.add_subcommand("serve", "Serve the insight API until interrupted");
  common(serve);
  serve->add_option("--model", opt.model_path, "Model artifact JSON")->required();
  serve->add_option("--samples", opt.samples, "Preprocessed CSV used for participant snapshots");
  serve->add_option("--port", opt.port, "Port (0 picks a free one)");
  auto* report = app.add_subcommand("report", "Re-render a stored report.json");
  common(report);
  report->add_option("--input", opt.input, "report.json")->required();
  report->add_option("--format", opt.format, "md | csv | json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*fixture) return cmd_fixture();
    if (*preprocess) return cmd_preprocess();
    if (*train) return cmd_train();
    if (*augment) return cmd_augment();
    if (*evaluate) return cmd_evaluate();
    if (*serve) return cmd_serve();
    if (*report) return cmd_report();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_validation_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
