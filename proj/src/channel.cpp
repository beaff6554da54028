#include "fisherjscc/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fisherjscc {

namespace {

std::atomic<std::uint64_t> g_floor_hits{0};

void require_sigma2(double sigma2) {
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) {
    throw std::invalid_argument("channel: noise variance must be finite and >= 0, got " +
                                std::to_string(sigma2));
  }
}

Tensor gaussian_noise(std::size_t rows, std::size_t cols, double sigma2, CounterRng& rng) {
  Tensor n(rows, cols);
  const double sd = std::sqrt(sigma2);
  for (double& v : n.data()) v = sd * rng.normal();
  return n;
}

double floored_magnitude(std::complex<double> h) {
  const double mag = std::abs(h);
  if (mag < kFadingFloor) {
    g_floor_hits.fetch_add(1, std::memory_order_relaxed);
    return kFadingFloor;
  }
  return mag;
}

}  // namespace

ChannelFamily parse_channel_family(std::string_view name) {
  if (name == "awgn") return ChannelFamily::awgn;
  if (name == "rayleigh") return ChannelFamily::rayleigh;
  throw std::invalid_argument("unknown channel family '" + std::string(name) + "'");
}

std::string_view channel_family_name(ChannelFamily f) {
  return f == ChannelFamily::awgn ? "awgn" : "rayleigh";
}

double psnr_to_sigma2(double psnr_db, double power) {
  if (!(power > 0.0)) throw std::invalid_argument("psnr_to_sigma2: power must be > 0");
  return power * std::pow(10.0, -psnr_db / 10.0);
}

double sigma2_to_psnr(double sigma2, double power) {
  if (!(power > 0.0)) throw std::invalid_argument("sigma2_to_psnr: power must be > 0");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2_to_psnr: sigma2 must be > 0");
  return 10.0 * std::log10(power / sigma2);
}

ChannelSpec ChannelSpec::from_psnr(ChannelFamily family, double psnr_db, double power) {
  return ChannelSpec{family, power, psnr_db, psnr_to_sigma2(psnr_db, power)};
}

ChannelSpec ChannelSpec::noiseless(ChannelFamily family, double power) {
  if (!(power > 0.0)) throw std::invalid_argument("ChannelSpec: power must be > 0");
  return ChannelSpec{family, power, std::numeric_limits<double>::infinity(), 0.0};
}

std::uint64_t fading_floor_hits() { return g_floor_hits.load(std::memory_order_relaxed); }

ChannelDraw transmit_awgn(const Tensor& z, double sigma2, CounterRng& rng) {
  require_sigma2(sigma2);
  if (sigma2 == 0.0) return ChannelDraw{z, Tensor(z.rows(), z.cols()), std::nullopt};
  Tensor n = gaussian_noise(z.rows(), z.cols(), sigma2, rng);
  Tensor received = z;
  for (std::size_t i = 0; i < received.size(); ++i) received.data()[i] += n.data()[i];
  return ChannelDraw{std::move(received), std::move(n), std::nullopt};
}

std::complex<double> draw_fading(CounterRng& rng) {
  const double sd = std::sqrt(0.5);
  const double re = sd * rng.normal();
  const double im = sd * rng.normal();
  return {re, im};
}

ChannelDraw transmit_rayleigh_given(const Tensor& z, double sigma2, std::complex<double> h,
                                    CounterRng& rng) {
  require_sigma2(sigma2);
  if (sigma2 == 0.0) return ChannelDraw{z, Tensor(z.rows(), z.cols()), h};
  Tensor n = gaussian_noise(z.rows(), z.cols(), sigma2, rng);
  const double mag = floored_magnitude(h);
  Tensor received = z;
  for (std::size_t i = 0; i < received.size(); ++i) received.data()[i] += n.data()[i] / mag;
  return ChannelDraw{std::move(received), std::move(n), h};
}

ChannelDraw transmit_rayleigh(const Tensor& z, double sigma2, CounterRng& rng) {
  require_sigma2(sigma2);
  const std::complex<double> h = draw_fading(rng);
  return transmit_rayleigh_given(z, sigma2, h, rng);
}

ChannelDraw transmit(const Tensor& z, const ChannelSpec& spec, CounterRng& rng) {
  return spec.family == ChannelFamily::awgn ? transmit_awgn(z, spec.sigma2, rng)
                                            : transmit_rayleigh(z, spec.sigma2, rng);
}

Tensor effective_noise(const ChannelDraw& draw) {
  if (!draw.fading) return draw.noise;
  const double mag = std::max(std::abs(*draw.fading), kFadingFloor);
  Tensor n = draw.noise;
  for (double& v : n.data()) v /= mag;
  return n;
}

Tensor noise_covariance(const ChannelSpec& spec, std::size_t dim,
                        std::optional<std::complex<double>> h) {
  require_sigma2(spec.sigma2);
  double var = spec.sigma2;
  if (spec.family == ChannelFamily::rayleigh) {
    if (!h) throw std::invalid_argument("noise_covariance: Rayleigh channel requires a fading coefficient");
    const double mag = floored_magnitude(*h);
    var = spec.sigma2 / (mag * mag);
  }
  Tensor cov(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) cov(i, i) = var;
  return cov;
}

}  // namespace fisherjscc
