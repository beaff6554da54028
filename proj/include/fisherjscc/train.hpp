#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fisherjscc/autodiff.hpp"
#include "fisherjscc/channel.hpp"
#include "fisherjscc/data.hpp"
#include "fisherjscc/error.hpp"
#include "fisherjscc/models.hpp"
#include "fisherjscc/rng.hpp"
#include "fisherjscc/robustness.hpp"

namespace fisherjscc {

struct PsnrRegime {
  enum class Kind { fixed, uniform };
  Kind kind = Kind::fixed;
  double fixed_db = 20.0;
  double lo_db = 10.0;
  double hi_db = 25.0;

  static PsnrRegime fixed(double db) { return {Kind::fixed, db, db, db}; }
  static PsnrRegime uniform(double lo, double hi) { return {Kind::uniform, lo, lo, hi}; }
  void validate() const;
  std::string describe() const;
};

struct TrainConfig {
  double lambda = 0.0;
  std::size_t noise_samples = 4;  // L draws per datum per step
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  PsnrRegime regime = PsnrRegime::fixed(20.0);
  ChannelFamily family = ChannelFamily::awgn;
  // Use λ·Tr(I) instead of λ·σ²/2·Tr(I) in the loss.
  bool omit_variance = false;
  FisherOptions fisher;

  void validate() const;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  double mean_cross_entropy = 0.0;
  double mean_regularizer = 0.0;  // mean σ²/2·Tr(I(z)) over the epoch
  double mean_trace = 0.0;
  double train_accuracy = 0.0;    // noiseless, measured after the epoch
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  // Deterministic columns only; wall time goes to write_timing_csv.
  void write_csv(const std::filesystem::path& path) const;
  void write_timing_csv(const std::filesystem::path& path) const;
};

struct LossOptions {
  double lambda = 0.0;
  std::size_t noise_samples = 4;
  ChannelFamily family = ChannelFamily::awgn;
  bool omit_variance = false;
  FisherOptions fisher;
};

struct LossTerms {
  ad::Var total;
  double cross_entropy = 0.0;  // noise-averaged, per datum
  double regularizer = 0.0;    // mean σ²/2·Tr(I(z)) over the batch
  double mean_trace = 0.0;
};

/// (1/b) Σ_i { −(1/L) Σ_l log q(y_i | f(x_i) + n_il) + λ·c·Tr(I(f(x_i))) } with
/// c = σ²/2, or c = 1 when omit_variance. The trace term uses the noise-free z.
/// `x` must already be normalized.
LossTerms regularized_loss(const Tensor& x, std::span<const std::size_t> labels,
                           const EncoderModel& encoder, const DecoderModel& decoder, double sigma2,
                           const LossOptions& options, CounterRng& rng);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState for_params(std::span<const ad::Var> params);
};

void adam_step(std::span<const ad::Var> params, std::span<const Tensor> grads, AdamState& state,
               double learning_rate);

/// λ candidates: fixed-PSNR λ ∈ [0.1, 1]; for varying PSNR the grid is over the
/// effective weight λσ²/2 ∈ [0.5, 1.5] with σ² taken at PSNR 10 dB.
std::vector<double> lambda_grid(PsnrRegime::Kind kind, double power, std::size_t points);

/// Thrown when the loss goes non-finite; carries the model state at that point.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(std::string what, std::size_t epoch, std::size_t batch, std::string snapshot)
      : NumericalError(std::move(what)), epoch_(epoch), batch_(batch), snapshot_(std::move(snapshot)) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }
  // Checkpoint text of the models when training stopped.
  const std::string& snapshot() const { return snapshot_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
  std::string snapshot_;
};

using EpochHook = std::function<void(const TrainLogRow&, const ModelPair&)>;

/// Shuffled mini-batch Adam on the regularized loss. `models.normalizer` is
/// applied to the features. Single-threaded; bitwise reproducible from config.seed.
TrainLog train(const TrainConfig& config, const Dataset& data, ModelPair& models,
               const EpochHook& on_epoch = {});

// Seeded Fisher–Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng& rng);

}  // namespace fisherjscc
