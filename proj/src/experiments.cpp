#include "fisherjscc/experiments.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fisherjscc/error.hpp"
#include "fisherjscc/format.hpp"
#include "fisherjscc/kernels.hpp"
#include "fisherjscc/rng.hpp"

namespace fisherjscc {

namespace {

Tensor encode_dataset(const ModelPair& models, const Dataset& data) {
  if (data.dim() != models.encoder.config().input_dim) {
    throw DataError("dataset has " + std::to_string(data.dim()) + " features, model expects " +
                    std::to_string(models.encoder.config().input_dim));
  }
  if (data.classes > models.decoder.classes()) {
    throw DataError("dataset has " + std::to_string(data.classes) + " classes, model decodes " +
                    std::to_string(models.decoder.classes()));
  }
  return models.encoder.encode(models.normalizer.apply(data.features));
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::uint64_t value_key(double v) { return std::bit_cast<std::uint64_t>(v); }

std::uint64_t family_key(ChannelFamily f) { return f == ChannelFamily::awgn ? 0 : 1; }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0.0)
    for (double& x : v) x /= n;
}

void fix_sign(std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  if (v[best] < 0.0)
    for (double& x : v) x = -x;
}

}  // namespace

void SweepResult::write_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, "error_sweep", 1,
                {"regime", "psnr_db", "family", "sigma2", "errors", "trials", "error_rate",
                 "mean_regularizer", "mean_expected_kl", "kl_std_error"});
  for (const SweepRow& r : rows) {
    csv.cell(r.regime).cell(r.psnr_db).cell(channel_family_name(r.family)).cell(r.sigma2);
    csv.cell(r.errors).cell(r.trials).cell(r.error_rate).cell(r.mean_regularizer);
    csv.cell(r.mean_expected_kl).cell(r.kl_std_error);
    csv.end_row();
  }
}

double clean_error(const ModelPair& models, const Dataset& data) {
  const Tensor q = models.decoder.decode(encode_dataset(models, data));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < data.size(); ++i) wrong += argmax(q.row(i)) != data.labels[i];
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

SweepResult error_sweep(const ModelPair& models, const Dataset& data, std::span<const double> psnr_db,
                        ChannelFamily family, const SweepOptions& options) {
  if (options.trials == 0) throw std::invalid_argument("error_sweep: trials must be >= 1");
  data.validate();
  const Tensor z = encode_dataset(models, data);
  const double power = models.encoder.config().power;
  const double mean_trace = mean_of(kernels::fisher_traces(models.decoder, z, options.threads));

  SweepResult result;
  for (double psnr : psnr_db) {
    const ChannelSpec spec = ChannelSpec::from_psnr(family, psnr, power);
    SweepRow row;
    row.regime = options.regime;
    row.psnr_db = psnr;
    row.family = family;
    row.sigma2 = spec.sigma2;

    const std::uint64_t cell = derive_seed(options.seed, "sweep.channel", {family_key(family), value_key(psnr)});
    const std::vector<std::size_t> errs =
        kernels::channel_errors(models.decoder, z, data.labels, spec, options.trials, cell, options.threads);
    row.errors = std::accumulate(errs.begin(), errs.end(), std::size_t{0});
    row.trials = options.trials * data.size();
    row.error_rate = static_cast<double>(row.errors) / static_cast<double>(row.trials);
    row.mean_regularizer = spec.sigma2 / 2.0 * mean_trace;

    if (options.kl_samples == 0) {
      row.mean_expected_kl = std::numeric_limits<double>::quiet_NaN();
      row.kl_std_error = std::numeric_limits<double>::quiet_NaN();
    } else {
      const std::uint64_t kl_seed = derive_seed(options.seed, "sweep.kl", {family_key(family), value_key(psnr)});
      const std::vector<McEstimate> kl =
          kernels::expected_kl(models.decoder, z, spec, options.kl_samples, kl_seed, options.threads);
      double sum = 0.0, var = 0.0;
      for (const McEstimate& e : kl) {
        sum += e.mean;
        var += e.std_error * e.std_error;
      }
      const double n = static_cast<double>(kl.size());
      row.mean_expected_kl = sum / n;
      row.kl_std_error = std::sqrt(var) / n;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::vector<TaylorRow> taylor_validation(const ModelPair& models, const Dataset& data,
                                         std::span<const double> sigma2_grid, std::size_t samples,
                                         std::uint64_t seed, int threads) {
  if (samples < 20) throw std::invalid_argument("taylor_validation: need at least 20 noise samples");
  data.validate();
  const Tensor z = encode_dataset(models, data);
  const double power = models.encoder.config().power;
  const double mean_trace = mean_of(kernels::fisher_traces(models.decoder, z, threads));

  std::vector<TaylorRow> rows;
  for (double sigma2 : sigma2_grid) {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("taylor_validation: sigma2 must be >= 0");
    TaylorRow row;
    row.sigma2 = sigma2;
    row.psnr_db = sigma2 == 0.0 ? std::numeric_limits<double>::infinity() : sigma2_to_psnr(sigma2, power);
    if (sigma2 > 0.0) {
      const ChannelSpec spec{ChannelFamily::awgn, power, row.psnr_db, sigma2};
      const std::vector<McEstimate> kl = kernels::expected_kl(
          models.decoder, z, spec, samples, derive_seed(seed, "taylor.noise", {value_key(sigma2)}), threads);
      double sum = 0.0, var = 0.0;
      for (const McEstimate& e : kl) {
        sum += e.mean;
        var += e.std_error * e.std_error;
      }
      const double n = static_cast<double>(kl.size());
      row.mean_mc_kl = sum / n;
      row.mc_std_error = std::sqrt(var) / n;
      row.mean_regularizer = sigma2 / 2.0 * mean_trace;
    }
    if (row.mean_regularizer > 0.0) {
      row.ratio = row.mean_mc_kl / row.mean_regularizer;
    } else {
      row.ratio = row.mean_mc_kl == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    row.abs_gap = std::abs(row.mean_mc_kl - row.mean_regularizer);
    rows.push_back(row);
  }
  return rows;
}

void write_taylor_csv(std::span<const TaylorRow> rows, const std::filesystem::path& path) {
  CsvWriter csv(path, "taylor_validation", 1,
                {"sigma2", "psnr_db", "mean_mc_kl", "mc_std_error", "mean_regularizer", "ratio", "abs_gap"});
  for (const TaylorRow& r : rows) {
    csv.cell(r.sigma2).cell(r.psnr_db).cell(r.mean_mc_kl).cell(r.mc_std_error);
    csv.cell(r.mean_regularizer).cell(r.ratio).cell(r.abs_gap);
    csv.end_row();
  }
}

double mean_fisher_trace(const ModelPair& models, const Dataset& data, int threads) {
  return mean_of(kernels::fisher_traces(models.decoder, encode_dataset(models, data), threads));
}

std::vector<TrackRow> regularizer_track(std::span<const NamedModel> models,
                                        std::span<const double> psnr_db, const Dataset& data,
                                        int threads) {
  std::vector<TrackRow> rows;
  for (const NamedModel& m : models) {
    if (!m.models) throw std::invalid_argument("regularizer_track: null model");
    const double trace = mean_fisher_trace(*m.models, data, threads);
    for (double psnr : psnr_db) {
      const double sigma2 = psnr_to_sigma2(psnr, m.models->encoder.config().power);
      rows.push_back({m.name, psnr, sigma2, trace, sigma2 / 2.0 * trace});
    }
  }
  return rows;
}

void write_track_csv(std::span<const TrackRow> rows, const std::filesystem::path& path) {
  CsvWriter csv(path, "regularizer_track", 1, {"model", "psnr_db", "sigma2", "mean_trace", "mean_regularizer"});
  for (const TrackRow& r : rows) {
    csv.cell(r.model).cell(r.psnr_db).cell(r.sigma2).cell(r.mean_trace).cell(r.mean_regularizer);
    csv.end_row();
  }
}

Tensor covariance(const Tensor& x) {
  if (x.rows() == 0) throw std::invalid_argument("covariance: empty input");
  const std::size_t n = x.rows(), k = x.cols();
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) mean[j] += x(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  Tensor cov(k, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) cov(a, b) += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
  for (double& v : cov.data()) v /= static_cast<double>(n);
  return cov;
}

std::vector<EigenPair> top_eigenpairs(const Tensor& symmetric, std::size_t count,
                                      std::size_t iterations, double tolerance) {
  const std::size_t k = symmetric.rows();
  if (symmetric.cols() != k) throw std::invalid_argument("top_eigenpairs: matrix must be square");
  if (count > k) throw std::invalid_argument("top_eigenpairs: more eigenpairs requested than the dimension");

  Tensor m = symmetric;
  CounterRng rng(0x5eed, 0);
  std::vector<EigenPair> out;
  for (std::size_t e = 0; e < count; ++e) {
    std::vector<double> v(k);
    for (double& x : v) x = rng.normal();
    // Start orthogonal to what has already been found.
    for (const EigenPair& p : out) {
      const double c = dot(v, p.vector);
      for (std::size_t i = 0; i < k; ++i) v[i] -= c * p.vector[i];
    }
    normalize(v);

    EigenPair pair;
    std::vector<double> w(k);
    for (std::size_t it = 0; it < iterations; ++it) {
      for (std::size_t a = 0; a < k; ++a) w[a] = dot(m.row(a), v);
      for (const EigenPair& p : out) {
        const double c = dot(w, p.vector);
        for (std::size_t i = 0; i < k; ++i) w[i] -= c * p.vector[i];
      }
      normalize(w);
      if (dot(w, w) == 0.0) {
        pair.iterations = it + 1;
        v.assign(k, 0.0);
        break;
      }
      double change = 0.0;
      const double sign = dot(w, v) < 0.0 ? -1.0 : 1.0;
      for (std::size_t i = 0; i < k; ++i) change = std::max(change, std::abs(sign * w[i] - v[i]));
      v = w;
      pair.iterations = it + 1;
      if (change < tolerance) break;
    }
    if (dot(v, v) > 0.0) fix_sign(v);
    for (std::size_t a = 0; a < k; ++a) w[a] = dot(symmetric.row(a), v);
    pair.value = dot(v, w);
    pair.vector = v;

    // Deflate: m ← m − λ v vᵀ.
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) m(a, b) -= pair.value * v[a] * v[b];
    out.push_back(std::move(pair));
  }
  return out;
}

void PosteriorGrid::write_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, "posterior_grid", 1, {"a", "b", "value"});
  for (std::size_t i = 0; i < offsets.size(); ++i)
    for (std::size_t j = 0; j < offsets.size(); ++j) {
      csv.cell(offsets[i]).cell(offsets[j]).cell(values(i, j));
      csv.end_row();
    }
}

PosteriorGrid posterior_grid(const ModelPair& models, const Dataset& data, std::size_t sample,
                             std::size_t resolution, double extent, double sigma2) {
  if (resolution < 8) throw std::invalid_argument("posterior_grid: resolution must be >= 8");
  if (sample >= data.size()) throw std::out_of_range("posterior_grid: sample index out of range");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("posterior_grid: sigma2 must be > 0");
  if (!(extent > 0.0)) throw std::invalid_argument("posterior_grid: extent must be > 0");

  const Tensor z = encode_dataset(models, data);
  const Tensor cov = covariance(z);
  const std::size_t k = z.cols();
  if (k < 2) throw DataError("posterior_grid: representation has fewer than 2 dimensions");
  const std::vector<EigenPair> top = top_eigenpairs(cov, 2);
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a) total += cov(a, a);
  const double floor = 1e-12 * std::max(total, std::numeric_limits<double>::min());
  if (!(top[1].value > floor)) {
    throw DataError("posterior_grid: covariance of encoded representations has rank < 2 (eigenvalues " +
                    format_double(top[0].value) + ", " + format_double(top[1].value) + ", trace " +
                    format_double(total) + ")");
  }

  PosteriorGrid grid;
  grid.axes = Tensor(2, k);
  for (std::size_t a = 0; a < 2; ++a) {
    std::copy(top[a].vector.begin(), top[a].vector.end(), grid.axes.row(a).begin());
    grid.eigenvalues[a] = top[a].value;
  }
  grid.center = z.slice_rows(sample, sample + 1);
  grid.label = data.labels[sample];
  grid.noise_std = std::sqrt(sigma2);

  const std::size_t n = resolution % 2 == 1 ? resolution : resolution + 1;
  const std::size_t half = (n - 1) / 2;
  grid.offsets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid.offsets[i] = extent * (static_cast<double>(i) - static_cast<double>(half)) / static_cast<double>(half);
  }
  grid.offsets[half] = 0.0;

  Tensor points(n * n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = grid.noise_std * grid.offsets[i];
      const double b = grid.noise_std * grid.offsets[j];
      auto row = points.row(i * n + j);
      for (std::size_t c = 0; c < k; ++c) {
        row[c] = grid.center(0, c);
        if (i != half || j != half) row[c] += a * grid.axes(0, c) + b * grid.axes(1, c);
      }
    }
  const ad::NoGradGuard guard;
  const Tensor logq = models.decoder.log_probs(ad::constant(points)).value();
  grid.values = Tensor(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) grid.values(i, j) = -logq(i * n + j, grid.label);
  return grid;
}

void CompareReport::write_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, "compare", 1, {"psnr_db", "family", "error_a", "error_b", "delta"});
  for (const CompareRow& r : rows) {
    csv.cell(r.psnr_db).cell(channel_family_name(r.family)).cell(r.error_a).cell(r.error_b).cell(r.delta);
    csv.end_row();
  }
}

CompareReport compare_models(const ModelPair& a, const ModelPair& b, const Dataset& data,
                             std::span<const double> psnr_db, ChannelFamily family,
                             const SweepOptions& options) {
  SweepOptions opts = options;
  opts.kl_samples = 0;
  const SweepResult ra = error_sweep(a, data, psnr_db, family, opts);
  const SweepResult rb = error_sweep(b, data, psnr_db, family, opts);
  CompareReport report;
  for (std::size_t i = 0; i < ra.rows.size(); ++i) {
    CompareRow row{ra.rows[i].psnr_db, family, ra.rows[i].error_rate, rb.rows[i].error_rate, 0.0};
    row.delta = row.error_a - row.error_b;
    if (row.delta < 0.0) ++report.negative;
    else if (row.delta > 0.0) ++report.positive;
    else ++report.zero;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace fisherjscc
