#pragma once

// Per-sample evaluation loops over a whole dataset. Each has a plain serial
// reference and an OpenMP version; both draw sample i's randomness from
// CounterRng(seed, i), so results are bitwise identical for any thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "fisherjscc/channel.hpp"
#include "fisherjscc/models.hpp"
#include "fisherjscc/robustness.hpp"

namespace fisherjscc::kernels {

// Rows per task in the parallel loops.
inline constexpr std::size_t kBlockRows = 32;

/// Exact Tr(I(z_i)) for each row of z.
std::vector<double> fisher_traces_serial(const DecoderModel& decoder, const Tensor& z);
std::vector<double> fisher_traces(const DecoderModel& decoder, const Tensor& z, int threads);

/// Misclassified channel draws per sample, out of `trials` draws each.
std::vector<std::size_t> channel_errors_serial(const DecoderModel& decoder, const Tensor& z,
                                               std::span<const std::size_t> labels,
                                               const ChannelSpec& spec, std::size_t trials,
                                               std::uint64_t seed);
std::vector<std::size_t> channel_errors(const DecoderModel& decoder, const Tensor& z,
                                        std::span<const std::size_t> labels,
                                        const ChannelSpec& spec, std::size_t trials,
                                        std::uint64_t seed, int threads);

/// Monte Carlo E[KL(q(·|z_i) ‖ q(·|ẑ_i))] per sample.
std::vector<McEstimate> expected_kl_serial(const DecoderModel& decoder, const Tensor& z,
                                           const ChannelSpec& spec, std::size_t samples,
                                           std::uint64_t seed);
std::vector<McEstimate> expected_kl(const DecoderModel& decoder, const Tensor& z,
                                    const ChannelSpec& spec, std::size_t samples,
                                    std::uint64_t seed, int threads);

// Number of threads the parallel kernels would use for a request (0 = all available).
int resolve_threads(int requested);

}  // namespace fisherjscc::kernels
