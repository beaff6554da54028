#include "fisherjscc/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "fisherjscc/config.hpp"
#include "fisherjscc/error.hpp"
#include "fisherjscc/experiments.hpp"
#include "fisherjscc/format.hpp"
#include "fisherjscc/rng.hpp"
#include "fisherjscc/train.hpp"

namespace fisherjscc::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr int kManifestVersion = 1;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool force = false;
  std::vector<std::string> checkpoints;
  bool verify = false;
  bool timing = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "INI run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "root seed (overrides [run] seed)");
  cmd->add_option("--out", c.out, "output directory (overrides [output] dir)");
  cmd->add_option("--threads", c.threads, "worker threads for evaluation; 0 = all cores");
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? parse_config("", "<defaults>") : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.out = *c.out;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Creates the output directory; refuses to clobber any of `files` unless forced.
void prepare_outputs(const fs::path& dir, const std::vector<std::string>& files, bool force) {
  fs::create_directories(dir);
  if (force) return;
  for (const std::string& f : files) {
    if (fs::exists(dir / f)) {
      throw ConfigError("output " + (dir / f).string() + " already exists (use --force to overwrite)");
    }
  }
}

struct Manifest {
  Json doc;

  Manifest(std::string_view command, const RunConfig& cfg) {
    doc["format"] = "fisherjscc-manifest";
    doc["version"] = kManifestVersion;
    doc["command"] = command;
    doc["config"] = to_json(cfg);
    doc["seeds"] = Json::object();
    doc["inputs"] = Json::object();
    doc["outputs"] = Json::object();
  }
  void seed(const std::string& name, std::uint64_t v) { doc["seeds"][name] = v; }
  void input(const fs::path& p) { doc["inputs"][p.string()] = sha256_file(p); }
  void output(const fs::path& dir, const std::string& name) { doc["outputs"][name] = sha256_file(dir / name); }
  void write(const fs::path& dir, std::string_view command) const {
    write_text(dir / (std::string(command) + ".manifest.json"), doc.dump(1) + "\n");
  }
};

struct Datasets {
  Dataset train;
  std::optional<Dataset> test;
};

Datasets load_datasets(const RunConfig& cfg, Manifest& manifest, bool need_test) {
  const std::uint64_t data_seed = derive_seed(cfg.seed, "data");
  if (!cfg.data.train_path.empty()) {
    Datasets d{load_table(cfg.data.train_path, cfg.data.table, Split::train), std::nullopt};
    manifest.input(cfg.data.train_path);
    if (!cfg.data.test_path.empty()) {
      d.test = load_table(cfg.data.test_path, cfg.data.table, Split::test, &d.train);
      manifest.input(cfg.data.test_path);
    } else if (need_test) {
      throw ConfigError("[data] test_path is required for this command");
    }
    return d;
  }
  if (cfg.data.kind == DataKind::table) throw ConfigError("[data] kind = table needs train_path");
  manifest.seed("data", data_seed);
  if (cfg.data.kind == DataKind::blobs) {
    return {make_blobs(cfg.blobs(), data_seed, Split::train), make_blobs(cfg.blobs(), data_seed, Split::test)};
  }
  return {make_rings(cfg.rings(), data_seed, Split::train), make_rings(cfg.rings(), data_seed, Split::test)};
}

ModelPair load_matching(const RunConfig& cfg, const fs::path& path, const Dataset& data, Manifest& manifest) {
  ModelPair m = load_checkpoint(path);
  manifest.input(path);
  std::vector<FieldDiff> diff = architecture_diff(cfg, m);
  if (m.encoder.config().input_dim != data.dim()) {
    diff.push_back({"data.features", std::to_string(data.dim()), std::to_string(m.encoder.config().input_dim)});
  }
  if (m.decoder.classes() < data.classes) {
    diff.push_back({"data.classes", std::to_string(data.classes), std::to_string(m.decoder.classes())});
  }
  if (!diff.empty()) {
    std::string msg = "checkpoint " + path.string() + " does not match the declared architecture:";
    for (const FieldDiff& f : diff) msg += "\n  " + f.field + ": config " + f.expected + ", checkpoint " + f.actual;
    throw ConfigError(msg);
  }
  return m;
}

// ---------------------------------------------------------------- gen-data

void verify_manifests(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("nothing to verify: " + dir.string() + " is not a directory");
  std::size_t checked = 0;
  std::vector<std::string> bad;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!name.ends_with(".manifest.json")) continue;
    const Json doc = Json::parse(read_text(entry.path()));
    for (const auto& [file, digest] : doc.at("outputs").items()) {
      ++checked;
      const fs::path p = dir / file;
      if (!fs::exists(p)) bad.push_back(file + " (missing)");
      else if (sha256_file(p) != digest.get<std::string>()) bad.push_back(file + " (digest mismatch)");
    }
  }
  if (checked == 0) throw DataError("no manifest outputs found in " + dir.string());
  if (!bad.empty()) {
    std::string msg = "verification failed in " + dir.string() + ":";
    for (const std::string& b : bad) msg += "\n  " + b;
    throw DataError(msg);
  }
  std::cout << "verified " << checked << " file(s) in " << dir.string() << "\n";
}

void cmd_gen_data(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = cfg.out;
  if (c.verify) return verify_manifests(dir);
  if (cfg.data.kind == DataKind::table) throw ConfigError("gen-data needs a synthetic [data] kind (blobs or rings)");

  const std::vector<std::string> files = {"train.csv", "test.csv", "gen-data.manifest.json", "gen-data.config.ini"};
  prepare_outputs(dir, files, c.force);
  Manifest manifest("gen-data", cfg);
  RunConfig plain = cfg;
  plain.data.train_path.clear();
  plain.data.test_path.clear();
  Datasets d = load_datasets(plain, manifest, true);
  write_table(d.train, dir / "train.csv", cfg.data.table);
  write_table(*d.test, dir / "test.csv", cfg.data.table);
  write_text(dir / "gen-data.config.ini", to_ini(cfg));
  for (const char* f : {"train.csv", "test.csv", "gen-data.config.ini"}) manifest.output(dir, f);
  manifest.write(dir, "gen-data");
  std::cout << "wrote " << d.train.size() << " train and " << d.test->size() << " test rows to " << dir.string() << "\n";
}

// ------------------------------------------------------------------- train

void cmd_train(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = cfg.out;
  std::vector<std::string> files = {"checkpoint.json", "train_log.csv", "train.manifest.json", "train.config.ini"};
  if (c.timing) files.push_back("train_timing.csv");
  prepare_outputs(dir, files, c.force);

  Manifest manifest("train", cfg);
  const Datasets d = load_datasets(cfg, manifest, false);
  const std::uint64_t model_seed = derive_seed(cfg.seed, "model");
  const std::uint64_t train_seed = derive_seed(cfg.seed, "train");
  manifest.seed("root", cfg.seed);
  manifest.seed("model", model_seed);
  manifest.seed("train", train_seed);

  ModelPair models = ModelPair::create(encoder_config(cfg, d.train.dim()), decoder_config(cfg, d.train.classes),
                                       Normalizer::fit(d.train.features), model_seed);
  const TrainConfig tc = train_config(cfg, train_seed);
  models.metadata = {{"regime", tc.regime.describe()},
                     {"family", std::string(channel_family_name(tc.family))},
                     {"lambda", format_double(tc.lambda)},
                     {"omit_variance", tc.omit_variance ? "true" : "false"}};

  std::vector<std::string> periodic;
  EpochHook hook = [&](const TrainLogRow& row, const ModelPair& m) {
    spdlog::info("epoch {} ce {:.6f} reg {:.6g} acc {:.4f}", row.epoch, row.mean_cross_entropy,
                 row.mean_regularizer, row.train_accuracy);
    if (cfg.train.checkpoint_every > 0 && row.epoch % cfg.train.checkpoint_every == 0) {
      fs::create_directories(dir / "checkpoints");
      const std::string name = "checkpoints/epoch_" + std::to_string(row.epoch) + ".json";
      ModelPair snap = m;
      snap.metadata = models.metadata;
      save_checkpoint(snap, dir / name);
      periodic.push_back(name);
    }
  };

  TrainLog log;
  try {
    log = train(tc, d.train, models, hook);
  } catch (const TrainingAborted& abort) {
    Json diag;
    diag["error"] = abort.what();
    diag["epoch"] = abort.epoch();
    diag["batch"] = abort.batch();
    diag["snapshot"] = "abort_checkpoint.json";
    write_text(dir / "abort_checkpoint.json", abort.snapshot());
    write_text(dir / "diagnostic.json", diag.dump(1) + "\n");
    throw;
  }

  save_checkpoint(models, dir / "checkpoint.json");
  log.write_csv(dir / "train_log.csv");
  if (c.timing) log.write_timing_csv(dir / "train_timing.csv");
  write_text(dir / "train.config.ini", to_ini(cfg));
  for (const char* f : {"checkpoint.json", "train_log.csv", "train.config.ini"}) manifest.output(dir, f);
  for (const std::string& f : periodic) manifest.output(dir, f);
  manifest.write(dir, "train");
  if (!log.rows.empty()) {
    std::cout << "trained " << log.rows.size() << " epochs, final train accuracy "
              << format_double(log.rows.back().train_accuracy) << "\n";
  }
  std::cout << "checkpoint: " << (dir / "checkpoint.json").string() << "\n";
}

// -------------------------------------------------------------------- eval

std::string output_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::sweep: return "sweep.csv";
    case ExperimentKind::taylor: return "taylor.csv";
    case ExperimentKind::track: return "track.csv";
    case ExperimentKind::posterior: return "posterior.csv";
  }
  return "out.csv";
}

void cmd_eval(const Common& c, std::string_view command, std::optional<ExperimentKind> forced) {
  RunConfig cfg = resolve(c);
  if (forced) cfg.experiment.kind = *forced;
  const auto& e = cfg.experiment;
  if (c.checkpoints.empty()) throw ConfigError("--checkpoint is required");
  if (e.kind != ExperimentKind::track && c.checkpoints.size() != 1) {
    throw ConfigError(std::string(experiment_kind_name(e.kind)) + " takes exactly one --checkpoint");
  }
  const fs::path dir = cfg.out;
  const std::string csv = output_name(e.kind);
  const std::string stem(command);
  prepare_outputs(dir, {csv, stem + ".manifest.json", stem + ".config.ini"}, c.force);

  Manifest manifest(command, cfg);
  const Datasets d = load_datasets(cfg, manifest, true);
  const Dataset& test = *d.test;
  const std::uint64_t eval_seed = derive_seed(cfg.seed, "eval");
  manifest.seed("root", cfg.seed);
  manifest.seed("eval", eval_seed);

  std::vector<ModelPair> models;
  for (const std::string& p : c.checkpoints) models.push_back(load_matching(cfg, p, test, manifest));

  switch (e.kind) {
    case ExperimentKind::sweep: {
      SweepOptions opts{e.trials, e.kl_samples, eval_seed, cfg.threads, "unknown"};
      if (auto it = models[0].metadata.find("regime"); it != models[0].metadata.end()) opts.regime = it->second;
      error_sweep(models[0], test, e.psnr_grid, e.family, opts).write_csv(dir / csv);
      break;
    }
    case ExperimentKind::taylor: {
      std::vector<double> sigma2;
      for (double p : e.taylor_psnr) sigma2.push_back(psnr_to_sigma2(p, cfg.channel.power));
      const auto rows = taylor_validation(models[0], test, sigma2, e.taylor_samples, eval_seed, cfg.threads);
      write_taylor_csv(rows, dir / csv);
      break;
    }
    case ExperimentKind::track: {
      std::vector<NamedModel> named;
      for (std::size_t i = 0; i < models.size(); ++i) named.push_back({c.checkpoints[i], &models[i]});
      write_track_csv(regularizer_track(named, e.psnr_grid, test, cfg.threads), dir / csv);
      break;
    }
    case ExperimentKind::posterior: {
      const double sigma2 = psnr_to_sigma2(e.posterior_psnr, cfg.channel.power);
      posterior_grid(models[0], test, e.posterior_sample, e.posterior_resolution, e.posterior_extent, sigma2)
          .write_csv(dir / csv);
      break;
    }
  }
  write_text(dir / (stem + ".config.ini"), to_ini(cfg));
  manifest.output(dir, csv);
  manifest.output(dir, stem + ".config.ini");
  manifest.write(dir, stem);
  std::cout << "wrote " << (dir / csv).string() << "\n";
}

// ----------------------------------------------------------------- compare

void cmd_compare(const Common& c) {
  const RunConfig cfg = resolve(c);
  if (c.checkpoints.size() != 2) throw ConfigError("compare takes exactly two --checkpoint options (A then B)");
  const fs::path dir = cfg.out;
  prepare_outputs(dir, {"compare.csv", "compare.manifest.json", "compare.config.ini"}, c.force);

  Manifest manifest("compare", cfg);
  const Datasets d = load_datasets(cfg, manifest, true);
  const std::uint64_t eval_seed = derive_seed(cfg.seed, "eval");
  manifest.seed("root", cfg.seed);
  manifest.seed("eval", eval_seed);
  const ModelPair a = load_matching(cfg, c.checkpoints[0], *d.test, manifest);
  const ModelPair b = load_matching(cfg, c.checkpoints[1], *d.test, manifest);

  const auto& e = cfg.experiment;
  const SweepOptions opts{e.trials, 0, eval_seed, cfg.threads, "compare"};
  const CompareReport report = compare_models(a, b, *d.test, e.psnr_grid, e.family, opts);
  report.write_csv(dir / "compare.csv");
  write_text(dir / "compare.config.ini", to_ini(cfg));
  manifest.output(dir, "compare.csv");
  manifest.output(dir, "compare.config.ini");
  manifest.doc["summary"] = {{"negative", report.negative}, {"zero", report.zero}, {"positive", report.positive}};
  manifest.write(dir, "compare");

  std::cout << "psnr_db  error_a  error_b  delta (A - B)\n";
  for (const CompareRow& r : report.rows) {
    std::cout << format_double(r.psnr_db) << "  " << format_double(r.error_a) << "  " << format_double(r.error_b)
              << "  " << format_double(r.delta) << "\n";
  }
  std::cout << "A better at " << report.negative << ", tied at " << report.zero << ", worse at " << report.positive
            << " of " << report.rows.size() << " PSNR points\n";
}

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("FISHERJSCC_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string_view(env) != "off") {
      spdlog::warn("FISHERJSCC_LOG='{}' is not a log level; keeping 'warn'", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

}  // namespace

int run(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Fisher-information-regularized task-oriented JSCC: data, training and evaluation"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen-data", "generate train/test tables and a manifest");
  add_common(gen, common);
  gen->add_flag("--verify", common.verify, "check the digests recorded in the output directory's manifests");

  auto* tr = app.add_subcommand("train", "train an encoder/decoder pair");
  add_common(tr, common);
  tr->add_flag("--timing", common.timing, "also write per-epoch wall times to train_timing.csv");

  auto* ev = app.add_subcommand("eval", "run the [experiment] kind on a checkpoint");
  auto* cmp = app.add_subcommand("compare", "paired error sweep of checkpoint A against B");
  auto* val = app.add_subcommand("validate-approx", "compare Monte Carlo expected KL with the Fisher regularizer");
  auto* post = app.add_subcommand("posterior-map", "negative log posterior on a principal-axis grid");
  for (CLI::App* cmd : {ev, cmp, val, post}) {
    add_common(cmd, common);
    cmd->add_option("--checkpoint", common.checkpoints, "checkpoint file (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (common.threads && *common.threads < 0) throw ConfigError("--threads must be >= 0");
    if (gen->parsed()) cmd_gen_data(common);
    else if (tr->parsed()) cmd_train(common);
    else if (ev->parsed()) cmd_eval(common, "eval", std::nullopt);
    else if (val->parsed()) cmd_eval(common, "validate-approx", ExperimentKind::taylor);
    else if (post->parsed()) cmd_eval(common, "posterior-map", ExperimentKind::posterior);
    else if (cmp->parsed()) cmd_compare(common);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace fisherjscc::cli
