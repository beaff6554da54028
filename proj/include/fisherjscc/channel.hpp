#pragma once

#include <atomic>
#include <complex>
#include <optional>
#include <string_view>

#include "fisherjscc/rng.hpp"
#include "fisherjscc/tensor.hpp"

namespace fisherjscc {

enum class ChannelFamily { awgn, rayleigh };

ChannelFamily parse_channel_family(std::string_view name);
std::string_view channel_family_name(ChannelFamily f);

// σ² = P · 10^(−PSNR/10)
double psnr_to_sigma2(double psnr_db, double power);
double sigma2_to_psnr(double sigma2, double power);

struct ChannelSpec {
  ChannelFamily family = ChannelFamily::awgn;
  double power = 1.0;
  double psnr_db = 20.0;
  double sigma2 = 0.01;

  static ChannelSpec from_psnr(ChannelFamily family, double psnr_db, double power);
  // Noiseless channel (σ² = 0); psnr_db is +inf.
  static ChannelSpec noiseless(ChannelFamily family, double power);
};

struct ChannelDraw {
  Tensor received;  // ẑ
  Tensor noise;     // n, before any fading division
  std::optional<std::complex<double>> fading;
};

// Floor applied to |h| before dividing the noise by it.
inline constexpr double kFadingFloor = 1e-6;

// Number of fading draws whose |h| hit kFadingFloor (process-wide).
std::uint64_t fading_floor_hits();

/// ẑ = z + n, n ~ N(0, σ²I).
ChannelDraw transmit_awgn(const Tensor& z, double sigma2, CounterRng& rng);

/// h ~ CN(0, 1), drawn once for the whole call.
std::complex<double> draw_fading(CounterRng& rng);

/// ẑ = z + n/|h| with a fresh h per call and perfect equalization.
ChannelDraw transmit_rayleigh(const Tensor& z, double sigma2, CounterRng& rng);
/// Same as transmit_rayleigh with a caller-supplied h; the noise stream is
/// consumed identically to transmit_awgn.
ChannelDraw transmit_rayleigh_given(const Tensor& z, double sigma2, std::complex<double> h,
                                    CounterRng& rng);

ChannelDraw transmit(const Tensor& z, const ChannelSpec& spec, CounterRng& rng);

// Perturbation actually added to z: n, or n/|h| (with the floor) under fading.
Tensor effective_noise(const ChannelDraw& draw);

/// AWGN: σ²·I. Rayleigh: (σ²/|h|²)·I, requires h.
Tensor noise_covariance(const ChannelSpec& spec, std::size_t dim,
                        std::optional<std::complex<double>> h = std::nullopt);

}  // namespace fisherjscc
