#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fisherjscc/channel.hpp"
#include "fisherjscc/data.hpp"
#include "fisherjscc/models.hpp"
#include "fisherjscc/robustness.hpp"

namespace fisherjscc {

struct SweepOptions {
  std::size_t trials = 20;      // channel draws per test sample
  std::size_t kl_samples = 20;  // MC draws per sample for the expected KL; 0 skips it
  std::uint64_t seed = 0;
  int threads = 1;
  std::string regime = "unspecified";  // label copied into every row
};

struct SweepRow {
  std::string regime;
  double psnr_db = 0.0;
  ChannelFamily family = ChannelFamily::awgn;
  double sigma2 = 0.0;
  std::size_t errors = 0;
  std::size_t trials = 0;
  double error_rate = 0.0;
  // σ²/2 · mean Tr(I(z)). Under fading this is the |h| = 1 value, since
  // E[1/|h|²] is unbounded for Rayleigh h.
  double mean_regularizer = 0.0;
  double mean_expected_kl = 0.0;  // NaN when kl_samples == 0
  double kl_std_error = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  void write_csv(const std::filesystem::path& path) const;
};

/// Error rate over `trials` independent channel draws per test sample at each
/// PSNR (+inf means a noiseless channel). The noise for a PSNR value depends
/// only on (seed, family, psnr), so two models swept with the same options see
/// identical channel realizations.
SweepResult error_sweep(const ModelPair& models, const Dataset& data, std::span<const double> psnr_db,
                        ChannelFamily family, const SweepOptions& options);

// Deterministic (noise-free) test error.
double clean_error(const ModelPair& models, const Dataset& data);

struct TaylorRow {
  double sigma2 = 0.0;
  double psnr_db = 0.0;
  double mean_mc_kl = 0.0;
  double mc_std_error = 0.0;  // of the dataset mean
  double mean_regularizer = 0.0;
  double ratio = 1.0;         // mc / regularizer, 1 when both are 0
  double abs_gap = 0.0;
};

std::vector<TaylorRow> taylor_validation(const ModelPair& models, const Dataset& data,
                                         std::span<const double> sigma2_grid, std::size_t samples,
                                         std::uint64_t seed, int threads = 1);
void write_taylor_csv(std::span<const TaylorRow> rows, const std::filesystem::path& path);

struct NamedModel {
  std::string name;
  const ModelPair* models = nullptr;
};

struct TrackRow {
  std::string model;
  double psnr_db = 0.0;
  double sigma2 = 0.0;
  double mean_trace = 0.0;
  double mean_regularizer = 0.0;
};

/// Mean σ²/2·Tr(I(z)) over the dataset for each model and PSNR.
std::vector<TrackRow> regularizer_track(std::span<const NamedModel> models,
                                        std::span<const double> psnr_db, const Dataset& data,
                                        int threads = 1);
void write_track_csv(std::span<const TrackRow> rows, const std::filesystem::path& path);

double mean_fisher_trace(const ModelPair& models, const Dataset& data, int threads = 1);

struct EigenPair {
  double value = 0.0;
  std::vector<double> vector;
  std::size_t iterations = 0;
};

inline constexpr std::size_t kPowerIterations = 200;
inline constexpr double kPowerTolerance = 1e-10;

/// Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation.
/// Vectors are unit length with their largest-magnitude entry positive.
std::vector<EigenPair> top_eigenpairs(const Tensor& symmetric, std::size_t count,
                                      std::size_t iterations = kPowerIterations,
                                      double tolerance = kPowerTolerance);

// Sample covariance (divisor N) of the rows of x.
Tensor covariance(const Tensor& x);

struct PosteriorGrid {
  Tensor axes;                 // 2 × k, orthonormal rows
  std::array<double, 2> eigenvalues{};
  Tensor center;               // 1 × k encoded input
  std::size_t label = 0;
  double noise_std = 0.0;
  std::vector<double> offsets;  // grid coordinates in noise-std units, symmetric, contains 0
  Tensor values;               // values(i, j) = −log q(label | z + σ(a_i v1 + b_j v2))

  void write_csv(const std::filesystem::path& path) const;
};

/// Grid points per axis: `resolution` if odd, else resolution + 1, so the
/// center z is always a grid point.
PosteriorGrid posterior_grid(const ModelPair& models, const Dataset& data, std::size_t sample,
                             std::size_t resolution, double extent, double sigma2);

struct CompareRow {
  double psnr_db = 0.0;
  ChannelFamily family = ChannelFamily::awgn;
  double error_a = 0.0;
  double error_b = 0.0;
  double delta = 0.0;  // error_a − error_b
};

struct CompareReport {
  std::vector<CompareRow> rows;
  std::size_t negative = 0;
  std::size_t zero = 0;
  std::size_t positive = 0;

  void write_csv(const std::filesystem::path& path) const;
};

/// Paired sweep of A and B under identical channel realizations.
CompareReport compare_models(const ModelPair& a, const ModelPair& b, const Dataset& data,
                             std::span<const double> psnr_db, ChannelFamily family,
                             const SweepOptions& options);

}  // namespace fisherjscc
