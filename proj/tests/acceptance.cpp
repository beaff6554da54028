// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "fisherjscc/autodiff.hpp"
#include "fisherjscc/channel.hpp"
#include "fisherjscc/data.hpp"
#include "fisherjscc/experiments.hpp"
#include "fisherjscc/models.hpp"
#include "fisherjscc/rng.hpp"
#include "fisherjscc/robustness.hpp"
#include "fisherjscc/train.hpp"

using namespace fisherjscc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

// `limit` is the runtime budget in seconds; 0 means none.
void report(int id, double limit, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string budget;
  if (limit > 0) {
    budget = fmt::format(", limit {:.0f}s", limit);
    if (secs > limit) o.pass = false;
  }
  if (!o.pass) ++g_failures;
  fmt::print("criterion {}: {}  {} ({:.1f}s{})\n", id, o.pass ? "PASS" : "FAIL", o.detail, secs, budget);
  std::fflush(stdout);
}

void info(const std::string& line) {
  fmt::print("  info: {}\n", line);
  std::fflush(stdout);
}

// ---- 1: parameter gradients of the regularized loss ----

Outcome gradient_check() {
  const Dataset d = make_rings(RingsParams{3, 4, 0.05}, 21, Split::train);
  ModelPair m = ModelPair::create(EncoderConfig{2, {8}, 2, 1.0}, DecoderConfig{2, {8}, 3},
                                  Normalizer::fit(d.features), 22);
  const Tensor x = m.normalizer.apply(d.features);
  LossOptions opt;
  opt.lambda = 1.0;
  opt.noise_samples = 2;
  const double sigma2 = psnr_to_sigma2(10.0, 1.0);
  auto loss = [&]() {
    CounterRng rng(23);
    return regularized_loss(x, d.labels, m.encoder, m.decoder, sigma2, opt, rng);
  };
  const std::vector<ad::Var> params = m.all_params();
  const std::vector<Tensor> analytic = ad::backward(loss().total, params);

  const double h = 1e-6;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    ad::Var leaf = params[p];
    for (std::size_t i = 0; i < leaf.value().size(); ++i) {
      double& w = leaf.mutable_value().data()[i];
      const double keep = w;
      w = keep + h;
      const double up = loss().total.value().item();
      w = keep - h;
      const double down = loss().total.value().item();
      w = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[p].data()[i];
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / scale);
      ++checked;
    }
  }
  return {worst <= 1e-4, fmt::format("{} parameters, max relative error {:.2e} (limit 1e-4)", checked, worst)};
}

// ---- 2: KL gradient vanishes at z_hat = z, Hessian equals the Fisher matrix ----

Outcome kl_identities() {
  const double gh = 1e-5;
  const double hh = 1e-4;
  double worst_grad = 0.0;
  double worst_hess = 0.0;
  for (std::uint64_t point = 0; point < 50; ++point) {
    CounterRng rng(derive_seed(31, "kl.point", {point}));
    const std::size_t k = 2 + rng.below(4);
    const std::size_t classes = 2 + rng.below(4);
    const DecoderModel dec(DecoderConfig{k, {8}, classes}, derive_seed(31, "kl.model", {point}));
    Tensor z(1, k);
    for (double& v : z.data()) v = 0.9 * (2.0 * rng.uniform() - 1.0);

    auto kl_at = [&](const std::vector<double>& delta) {
      Tensor zh = z;
      for (std::size_t a = 0; a < k; ++a) zh(0, a) += delta[a];
      return kl_posteriors(dec, z, zh);
    };
    std::vector<double> delta(k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
      delta[a] = gh;
      const double up = kl_at(delta);
      delta[a] = -gh;
      const double down = kl_at(delta);
      delta[a] = 0.0;
      worst_grad = std::max(worst_grad, std::abs(up - down) / (2.0 * gh));
    }

    const Tensor fisher = fisher_matrix(dec, z);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        auto f = [&](double sa, double sb) {
          std::vector<double> dl(k, 0.0);
          dl[a] += sa * hh;
          dl[b] += sb * hh;
          return kl_at(dl);
        };
        const double second = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4.0 * hh * hh);
        worst_hess = std::max(worst_hess, std::abs(second - fisher(a, b)));
      }
    }
  }
  const bool pass = worst_grad <= 1e-6 && worst_hess <= 1e-3;
  return {pass, fmt::format("50 points, max |grad KL| {:.2e} (limit 1e-6), max |FD Hessian - Fisher| {:.2e} (limit 1e-3)",
                            worst_grad, worst_hess)};
}

// ---- 3: Monte Carlo expected KL against the trace regularizer ----

std::vector<TaylorRow> taylor_table(double ring_noise, std::size_t samples, std::uint64_t s) {
  const RingsParams rp{3, 200, ring_noise};
  const std::uint64_t data_seed = derive_seed(41, "taylor.data", {s});
  const Dataset train_set = make_rings(rp, data_seed, Split::train);
  const Dataset test_set = make_rings(rp, data_seed, Split::test);
  ModelPair m = ModelPair::create(EncoderConfig{2}, DecoderConfig{8, {64}, 3}, Normalizer::fit(train_set.features),
                                  derive_seed(41, "taylor.model", {s}));
  TrainConfig tc;
  tc.regime = PsnrRegime::fixed(15.0);
  tc.seed = derive_seed(41, "taylor.train", {s});
  train(tc, train_set, m);
  std::vector<double> grid;
  for (double p : {25.0, 20.0, 15.0, 10.0}) grid.push_back(psnr_to_sigma2(p, 1.0));
  return taylor_validation(m, test_set, grid, samples, derive_seed(41, "taylor.noise", {s}));
}

std::string taylor_text(const std::vector<TaylorRow>& rows) {
  std::string s;
  for (const TaylorRow& r : rows) s += fmt::format(" {:.0f}dB:{:.4f}", r.psnr_db, r.ratio);
  return s;
}

// Every seed must hold the band; the 25 dB row must be closest to 1 in a
// majority. The 25 and 20 dB ratios often sit within a few tenths of a
// percent of each other, which is the Monte Carlo resolution at S = 10^4.
Outcome taylor_check() {
  bool band = true;
  std::size_t closest_25 = 0;
  std::string detail;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::vector<TaylorRow> rows = taylor_table(0.3, 10000, s);
    std::size_t closest = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].psnr_db >= 15.0) band = band && rows[i].ratio >= 0.8 && rows[i].ratio <= 1.2;
      if (std::abs(rows[i].ratio - 1.0) < std::abs(rows[closest].ratio - 1.0)) closest = i;
    }
    closest_25 += rows[closest].psnr_db == 25.0;
    detail += " [" + taylor_text(rows).substr(1) + "]";
  }
  // Well-separated rings train an overconfident decoder; shown for reference only.
  info("rings noise 0.05, S=10^3, seed 0, ratios" + taylor_text(taylor_table(0.05, 1000, 0)));
  return {band && closest_25 >= 3,
          fmt::format("rings noise 0.3, S=10^4, ratios per seed{}; band [0.8,1.2] at >=15 dB {}, 25 dB closest to 1 in {} "
                      "of 5 seeds (need 3)",
                      detail, band ? "held" : "broken", closest_25)};
}

// ---- 4, 5, 6: regularized models against shared-seed lambda = 0 twins ----

struct Twin {
  ModelPair plain;
  ModelPair regularized;
  Dataset test_set;
};

std::vector<Twin> g_twins;

ModelPair train_rings_model(const Dataset& train_set, std::uint64_t s, double lambda) {
  ModelPair m = ModelPair::create(EncoderConfig{2}, DecoderConfig{8, {64}, 3}, Normalizer::fit(train_set.features),
                                  derive_seed(51, "trend.model", {s}));
  TrainConfig tc;
  tc.lambda = lambda;
  tc.omit_variance = true;
  tc.regime = PsnrRegime::fixed(20.0);
  tc.seed = derive_seed(51, "trend.train", {s});
  train(tc, train_set, m);
  return m;
}

void train_twins() {
  if (!g_twins.empty()) return;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const RingsParams rp{3, 200, 0.05};
    const std::uint64_t data_seed = derive_seed(51, "trend.data", {s});
    const Dataset train_set = make_rings(rp, data_seed, Split::train);
    g_twins.push_back({train_rings_model(train_set, s, 0.0), train_rings_model(train_set, s, 1.0),
                       make_rings(rp, data_seed, Split::test)});
  }
}

std::vector<double> errors(const ModelPair& m, const Dataset& d, std::span<const double> psnr, ChannelFamily family) {
  SweepOptions opt;
  opt.trials = 20;
  opt.kl_samples = 0;
  opt.seed = 52;
  std::vector<double> out;
  for (const SweepRow& r : error_sweep(m, d, psnr, family, opt).rows) out.push_back(r.error_rate);
  return out;
}

Outcome awgn_trend() {
  train_twins();
  const double psnr[] = {5.0};
  std::size_t wins = 0;
  std::string detail;
  for (const Twin& t : g_twins) {
    const double e0 = errors(t.plain, t.test_set, psnr, ChannelFamily::awgn)[0];
    const double e1 = errors(t.regularized, t.test_set, psnr, ChannelFamily::awgn)[0];
    wins += e1 < e0;
    detail += fmt::format(" {:.4f}/{:.4f}", e1, e0);
  }
  return {wins >= 4, fmt::format("AWGN 5 dB test error, lambda=1 vs lambda=0:{}; {} of 5 seeds won (need 4)", detail, wins)};
}

Outcome rayleigh_trend() {
  train_twins();
  const std::vector<double> psnr = {5.0, 10.0, 15.0};
  std::size_t seeds_won = 0;
  std::string detail;
  for (const Twin& t : g_twins) {
    const std::vector<double> e0 = errors(t.plain, t.test_set, psnr, ChannelFamily::rayleigh);
    const std::vector<double> e1 = errors(t.regularized, t.test_set, psnr, ChannelFamily::rayleigh);
    bool all = true;
    detail += " [";
    for (std::size_t i = 0; i < psnr.size(); ++i) {
      all = all && e1[i] < e0[i];
      detail += fmt::format("{}{:.4f}/{:.4f}", i ? " " : "", e1[i], e0[i]);
    }
    detail += "]";
    seeds_won += all;
  }
  return {seeds_won >= 3,
          fmt::format("Rayleigh test error at 5/10/15 dB, lambda=1 vs lambda=0:{}; {} of 5 seeds won at every PSNR (need 3)",
                      detail, seeds_won)};
}

Outcome trace_tracking() {
  train_twins();
  std::size_t wins = 0;
  std::string detail;
  for (const Twin& t : g_twins) {
    const double tr0 = mean_fisher_trace(t.plain, t.test_set);
    const double tr1 = mean_fisher_trace(t.regularized, t.test_set);
    wins += tr1 <= tr0;
    detail += fmt::format(" {:.2e}/{:.2e}", tr1, tr0);
  }
  return {wins >= 4, fmt::format("test mean Tr(I), lambda=1 vs lambda=0:{}; {} of 5 seeds at most the twin (need 4)", detail, wins)};
}

// ---- 7: channel statistics ----

Outcome channel_statistics() {
  const std::size_t n = 100000;
  CounterRng rng(71);
  const ChannelDraw draw = transmit_awgn(Tensor(1, n), 0.1, rng);
  double mean = 0.0;
  for (double v : draw.received.data()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : draw.received.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);

  CounterRng frng(72);
  double power = 0.0;
  for (std::size_t i = 0; i < n; ++i) power += std::norm(draw_fading(frng));
  power /= static_cast<double>(n);

  const bool pass = var >= 0.095 && var <= 0.105 && power >= 0.98 && power <= 1.02;
  return {pass, fmt::format("AWGN sample variance {:.5f} (band [0.095,0.105]), Rayleigh mean |h|^2 {:.5f} (band [0.98,1.02])",
                            var, power)};
}

// ---- 8: two CLI runs give byte-identical outputs ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / fmt::format("fisherjscc_acceptance_{}", std::random_device{}());
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "run.ini");
    cfg << "[run]\nthreads = 1\n[data]\nkind = rings\nper_class = 60\n"
           "[model]\nencoder_hidden = 16\ndecoder_hidden = 16\nlatent_dim = 4\n"
           "[train]\nlambda = 0.5\nepochs = 5\n"
           "[experiment]\npsnr_grid = 0,10,20\ntrials = 5\nkl_samples = 5\n";
  }
  const std::vector<std::string> files = {"checkpoint.json", "train_log.csv", "sweep.csv"};
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run;
    const std::string base = fmt::format("\"{}\" {{}} --config \"{}\" --seed 9 --threads 1 --out \"{}\"", cli,
                                         (root / "run.ini").string(), out.string());
    const std::string train_cmd = fmt::format(fmt::runtime(base), "train");
    const std::string eval_cmd = fmt::format(fmt::runtime(base), "eval") +
                                 fmt::format(" --checkpoint \"{}\"", (out / "checkpoint.json").string());
    if (std::system(train_cmd.c_str()) != 0 || std::system(eval_cmd.c_str()) != 0) {
      return {false, "CLI run failed: " + train_cmd};
    }
  }
  std::size_t bytes = 0;
  for (const std::string& f : files) {
    const std::string a = slurp(root / "a" / f);
    if (a != slurp(root / "b" / f)) return {false, f + " differs between runs"};
    bytes += a.size();
  }
  fs::remove_all(root);
  return {true, fmt::format("train + eval twice with seed 9, {} files ({} bytes) identical", files.size(), bytes)};
}

// ---- 9: power constraint ----

Outcome power() {
  const PowerAudit a = power_audit();
  return {a.violations == 0 && a.rows_checked > 0,
          fmt::format("{} encoded rows audited in this process, {} violations", a.rows_checked, a.violations)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: fisherjscc_acceptance <path to fisherjscc cli>\n");
    return 2;
  }
  const std::string cli = argv[1];
  report(1, 10, gradient_check);
  report(2, 30, kl_identities);
  report(3, 300, taylor_check);
  report(4, 600, awgn_trend);  // includes training the shared twins
  report(5, 600, rayleigh_trend);
  report(6, 0, trace_tracking);
  report(7, 0, channel_statistics);
  report(8, 0, [&] { return determinism(cli); });
  report(9, 0, power);
  fmt::print("{} of 9 criteria passed\n", 9 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
