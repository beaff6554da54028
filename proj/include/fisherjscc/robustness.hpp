#pragma once

// Posterior robustness quantities for a decoder q(y|z):
//
//   KL(q(·|z) ‖ q(·|ẑ))                    exact divergence, noise-free posterior first
//   I(z) = Σ_y q(y|z) ∇_z log q(y|z) ∇_z log q(y|z)ᵀ
//   KL ≈ ½ (ẑ−z)ᵀ I(z) (ẑ−z)                second-order expansion around ẑ = z
//   E[KL] ≈ ½ Tr(I(z) Σₙ)                   for noise with covariance Σₙ
//   R(z) = σ²/2 · Tr(I(z))                  AWGN; σ²/(2|h|²)·Tr(I(z)) for slow fading

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fisherjscc/autodiff.hpp"
#include "fisherjscc/channel.hpp"
#include "fisherjscc/models.hpp"
#include "fisherjscc/rng.hpp"
#include "fisherjscc/tensor.hpp"

namespace fisherjscc {

inline constexpr double kKlClampEpsilon = 1e-12;

/// Σ_y p_y log(p_y/q_y) with 0·log 0 := 0. Inside the log both arguments are
/// floored at kKlClampEpsilon, so kl_categorical(p, p) is exactly 0.
/// Throws std::invalid_argument if either input is off-normalized by > 1e-9.
double kl_categorical(std::span<const double> p, std::span<const double> q);

// Times the clamp changed a q entry paired with positive p mass (process-wide).
std::uint64_t kl_clamp_count();

/// KL(q(·|z) ‖ q(·|ẑ)) for 1×k representations.
double kl_posteriors(const DecoderModel& decoder, const Tensor& z, const Tensor& z_hat);

struct FisherResult {
  std::optional<Tensor> matrix;
  double trace = 0.0;
  std::vector<double> posterior;        // q(y|z)
  std::vector<double> class_grad_norms;  // ‖∇_z log q(y|z)‖ per class
};

/// Exact Fisher information at a single 1×k point from C backward passes.
FisherResult fisher_information(const DecoderModel& decoder, const Tensor& z,
                                bool with_matrix = false);
FisherResult fisher_trace(const DecoderModel& decoder, const Tensor& z);
Tensor fisher_matrix(const DecoderModel& decoder, const Tensor& z);

/// Per-row exact traces for a b×k batch. Rows are independent, so row i
/// equals fisher_trace(decoder, z.row(i)).trace bit for bit.
std::vector<double> fisher_traces(const DecoderModel& decoder, const Tensor& z);

enum class FisherMode { exact, sampled };

struct FisherOptions {
  FisherMode mode = FisherMode::exact;
  // Classes drawn per row in sampled mode.
  std::size_t class_samples = 1;
};

/// Differentiable per-row Fisher trace (b×1) for a recorded batch z. Gradients
/// flow into the decoder parameters and, through z, into whatever produced z.
/// Sampled mode replaces the class expectation by draws y ~ q(·|z) and is an
/// approximation: the draw itself carries no gradient.
ad::Var fisher_trace_node(const DecoderModel& decoder, const ad::Var& z,
                          const FisherOptions& options = {}, CounterRng* rng = nullptr);

/// ½ (ẑ−z)ᵀ I(z) (ẑ−z).
double kl_quadratic(const DecoderModel& decoder, const Tensor& z, const Tensor& z_hat);
double quadratic_form(const Tensor& matrix, std::span<const double> delta);

/// ½ Tr(I Σ) for an arbitrary (symmetric) noise covariance.
double expected_kl_quadratic(const Tensor& fisher, const Tensor& covariance);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean of KL(q(·|z) ‖ q(·|ẑ_s)) over `samples` channel draws and its standard error.
McEstimate expected_kl_mc(const DecoderModel& decoder, const Tensor& z, const ChannelSpec& spec,
                          std::size_t samples, CounterRng& rng);

/// σ²/2·Tr(I(z)); with a fading coefficient, σ²/(2|h|²)·Tr(I(z)).
double regularizer(const DecoderModel& decoder, const Tensor& z, double sigma2,
                   ChannelFamily family = ChannelFamily::awgn,
                   std::optional<std::complex<double>> h = std::nullopt);
double regularizer_from_trace(double trace, double sigma2, ChannelFamily family,
                              std::optional<std::complex<double>> h);

}  // namespace fisherjscc
