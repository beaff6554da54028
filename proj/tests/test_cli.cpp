#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "fisherjscc/cli.hpp"
#include "fisherjscc/format.hpp"
#include "fisherjscc/models.hpp"

using namespace fisherjscc;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "fisherjscc");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  // Keep the test log readable.
  std::ostringstream sink;
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  const int code = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return code;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("fisherjscc_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& p) const { return (path / p).string(); }
};

void write_file(const std::string& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read_file(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t data_rows(const std::string& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n - 1;  // header
}

// Digests recorded in a manifest; the config part names the output directory.
// Output digests minus the resolved config, which records the output directory.
nlohmann::json outputs_of(const std::string& manifest) {
  nlohmann::json out = nlohmann::json::parse(read_file(manifest))["outputs"];
  for (auto it = out.begin(); it != out.end();) {
    if (it.key().ends_with(".config.ini"))
      it = out.erase(it);
    else
      ++it;
  }
  return out;
}

// Rows after the schema and header lines.
std::size_t csv_rows(const std::string& p) { return data_rows(p) - 1; }

const char* kSmallRun = R"([data]
kind = rings
per_class = 40
[model]
encoder_hidden = 16
decoder_hidden = 16
latent_dim = 4
[train]
epochs = 3
[experiment]
psnr_grid = 5, 10
trials = 4
kl_samples = 20
)";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-data writes counted tables, refuses to overwrite and verifies digests") {
  TempDir dir("gen");
  write_file(dir / "blobs.ini", "[data]\nkind = blobs\nclasses = 4\nper_class = 200\n");
  CHECK(run({"gen-data", "--config", dir / "blobs.ini", "--out", dir / "a"}) == cli::kOk);
  CHECK(data_rows(dir / "a/train.csv") == 800);
  CHECK(data_rows(dir / "a/test.csv") == 800);
  CHECK(run({"gen-data", "--config", dir / "blobs.ini", "--out", dir / "a"}) == cli::kConfigError);
  CHECK(run({"gen-data", "--config", dir / "blobs.ini", "--out", dir / "b"}) == cli::kOk);
  CHECK(outputs_of(dir / "a/gen-data.manifest.json") == outputs_of(dir / "b/gen-data.manifest.json"));

  CHECK(run({"gen-data", "--verify", "--out", dir / "a"}) == cli::kOk);
  write_file(dir / "a/test.csv", read_file(dir / "a/test.csv") + "0,0,1\n");
  CHECK(run({"gen-data", "--verify", "--out", dir / "a"}) == cli::kDataError);
  CHECK(run({"gen-data", "--config", dir / "blobs.ini", "--out", dir / "a", "--force"}) == cli::kOk);
  CHECK(run({"gen-data", "--verify", "--out", dir / "a"}) == cli::kOk);
}

TEST_CASE("config errors exit before any work") {
  TempDir dir("cfg");
  write_file(dir / "bad.ini", "[train]\nlearning_rat = 0.1\n");
  CHECK(run({"train", "--config", dir / "bad.ini", "--out", dir / "o"}) == cli::kConfigError);
  CHECK_FALSE(fs::exists(dir / "o"));
  CHECK(run({"train", "--no-such-flag"}) == cli::kConfigError);
  CHECK(run({}) == cli::kConfigError);
  CHECK(run({"eval", "--out", dir / "o"}) == cli::kConfigError);  // no checkpoint
}

TEST_CASE("train is reproducible, zero epochs keeps the initialization, lambda changes the result") {
  TempDir dir("train");
  write_file(dir / "run.ini", kSmallRun);
  CHECK(run({"train", "--config", dir / "run.ini", "--out", dir / "a"}) == cli::kOk);
  CHECK(run({"train", "--config", dir / "run.ini", "--out", dir / "b"}) == cli::kOk);
  CHECK(read_file(dir / "a/checkpoint.json") == read_file(dir / "b/checkpoint.json"));
  CHECK(read_file(dir / "a/train_log.csv") == read_file(dir / "b/train_log.csv"));
  CHECK(outputs_of(dir / "a/train.manifest.json") == outputs_of(dir / "b/train.manifest.json"));

  CHECK(run({"train", "--config", dir / "run.ini", "--out", dir / "lam", "--seed", "0"}) == cli::kOk);
  write_file(dir / "lam1.ini", std::string(kSmallRun).replace(std::string(kSmallRun).find("epochs = 3"), 10,
                                                              "epochs = 3\nlambda = 1"));
  CHECK(run({"train", "--config", dir / "lam1.ini", "--out", dir / "lam1"}) == cli::kOk);
  CHECK(sha256_file(dir / "lam/checkpoint.json") != sha256_file(dir / "lam1/checkpoint.json"));

  write_file(dir / "zero.ini", std::string(kSmallRun).replace(std::string(kSmallRun).find("epochs = 3"), 10,
                                                              "epochs = 0"));
  CHECK(run({"train", "--config", dir / "zero.ini", "--out", dir / "zero"}) == cli::kOk);
  const ModelPair trained = load_checkpoint(dir / "zero/checkpoint.json");
  ModelPair fresh = ModelPair::create(trained.encoder.config(), trained.decoder.config(), trained.normalizer,
                                      trained.seed);
  fresh.metadata = trained.metadata;
  CHECK(checkpoint_to_string(fresh) == read_file(dir / "zero/checkpoint.json"));
}

TEST_CASE("eval outputs are byte-identical across runs; grids of one PSNR give one row") {
  TempDir dir("eval");
  write_file(dir / "run.ini", kSmallRun);
  REQUIRE(run({"train", "--config", dir / "run.ini", "--out", dir / "t"}) == cli::kOk);
  const std::string ckpt = dir / "t/checkpoint.json";
  CHECK(run({"eval", "--config", dir / "run.ini", "--out", dir / "e1", "--checkpoint", ckpt}) == cli::kOk);
  CHECK(run({"eval", "--config", dir / "run.ini", "--out", dir / "e2", "--checkpoint", ckpt}) == cli::kOk);
  CHECK(read_file(dir / "e1/sweep.csv") == read_file(dir / "e2/sweep.csv"));
  CHECK(csv_rows(dir / "e1/sweep.csv") == 2);

  write_file(dir / "one.ini", std::string(kSmallRun).replace(std::string(kSmallRun).find("psnr_grid = 5, 10"), 17,
                                                             "psnr_grid = 7"));
  CHECK(run({"eval", "--config", dir / "one.ini", "--out", dir / "e3", "--checkpoint", ckpt}) == cli::kOk);
  CHECK(csv_rows(dir / "e3/sweep.csv") == 1);

  CHECK(run({"validate-approx", "--config", dir / "run.ini", "--out", dir / "v", "--checkpoint", ckpt}) == cli::kOk);
  CHECK(csv_rows(dir / "v/taylor.csv") == 4);
  CHECK(run({"posterior-map", "--config", dir / "run.ini", "--out", dir / "p", "--checkpoint", ckpt}) == cli::kOk);
  CHECK(csv_rows(dir / "p/posterior.csv") == 41 * 41);
  write_file(dir / "track.ini", std::string(kSmallRun) + "kind = track\n");
  CHECK(run({"eval", "--config", dir / "track.ini", "--out", dir / "tr", "--checkpoint", ckpt, "--checkpoint", ckpt}) ==
        cli::kOk);
  CHECK(csv_rows(dir / "tr/track.csv") == 4);

  CHECK(run({"compare", "--config", dir / "run.ini", "--out", dir / "c", "--checkpoint", ckpt, "--checkpoint", ckpt}) ==
        cli::kOk);
  CHECK(csv_rows(dir / "c/compare.csv") == 2);
  const auto manifest = nlohmann::json::parse(read_file(dir / "c/compare.manifest.json"));
  CHECK(manifest["summary"]["zero"] == 2);
}

TEST_CASE("architecture mismatch is a config error listing the fields") {
  TempDir dir("arch");
  write_file(dir / "run.ini", kSmallRun);
  REQUIRE(run({"train", "--config", dir / "run.ini", "--out", dir / "t"}) == cli::kOk);
  write_file(dir / "other.ini", std::string(kSmallRun).replace(std::string(kSmallRun).find("latent_dim = 4"), 14,
                                                               "latent_dim = 5"));
  CHECK(run({"eval", "--config", dir / "other.ini", "--out", dir / "e", "--checkpoint", dir / "t/checkpoint.json"}) ==
        cli::kConfigError);
  CHECK(run({"eval", "--config", dir / "run.ini", "--out", dir / "e", "--checkpoint", dir / "missing.json"}) ==
        cli::kDataError);
}

TEST_CASE("chance-level checkpoint errs at 1 - 1/C") {
  TempDir dir("chance");
  write_file(dir / "run.ini", kSmallRun);
  REQUIRE(run({"train", "--config", dir / "run.ini", "--out", dir / "t"}) == cli::kOk);
  ModelPair m = load_checkpoint(dir / "t/checkpoint.json");
  for (const auto& [name, v] : m.decoder.params()) {
    ad::Var w = v;
    for (double& x : w.mutable_value().data()) x = 0.0;
  }
  save_checkpoint(m, dir / "chance.json");
  write_file(dir / "many.ini", std::string(kSmallRun).replace(std::string(kSmallRun).find("trials = 4"), 10,
                                                              "trials = 100"));
  REQUIRE(run({"eval", "--config", dir / "many.ini", "--out", dir / "e", "--checkpoint", dir / "chance.json"}) ==
          cli::kOk);
  std::ifstream in(dir / "e/sweep.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::getline(in, line);
  // regime,psnr_db,family,sigma2,errors,trials,error_rate,...
  std::stringstream row(line);
  std::string cell;
  for (int i = 0; i < 7; ++i) std::getline(row, cell, ',');
  CHECK(std::stod(cell) == doctest::Approx(2.0 / 3.0).epsilon(0.03));
}

TEST_CASE("numerical divergence exits with its own code and leaves a diagnostic") {
  TempDir dir("nan");
  write_file(dir / "nan.ini", std::string(kSmallRun).replace(std::string(kSmallRun).find("epochs = 3"), 10,
                                                             "epochs = 3\nlearning_rate = 1e300\nbatch_size = 8"));
  CHECK(run({"train", "--config", dir / "nan.ini", "--out", dir / "o"}) == cli::kNumericalAbort);
  CHECK(fs::exists(dir / "o/diagnostic.json"));
  CHECK(fs::exists(dir / "o/abort_checkpoint.json"));
  CHECK_FALSE(fs::exists(dir / "o/checkpoint.json"));
}

}
