#include "fisherjscc/kernels.hpp"

#include <algorithm>
#include <exception>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fisherjscc::kernels {

namespace {

void require_labels(const Tensor& z, std::span<const std::size_t> labels) {
  if (labels.size() != z.rows()) throw std::invalid_argument("kernels: one label per row required");
}

// Runs body(begin, end) over row blocks; rethrows the first exception on the caller.
template <class Body>
void parallel_blocks(std::size_t rows, int threads, Body body) {
  const std::size_t blocks = (rows + kBlockRows - 1) / kBlockRows;
  std::exception_ptr failure;
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
  for (std::size_t b = 0; b < blocks; ++b) {
    try {
      body(b * kBlockRows, std::min(rows, (b + 1) * kBlockRows));
    } catch (...) {
#pragma omp critical(fisherjscc_kernel_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

// Sample i's T received copies as one T×k batch. Noise is consumed trial by trial,
// exactly as T separate 1×k transmissions from the same generator would.
Tensor received_batch(const Tensor& z, std::size_t i, const ChannelSpec& spec, std::size_t trials,
                      CounterRng& rng) {
  const std::size_t k = z.cols();
  Tensor out(trials, k);
  if (spec.family == ChannelFamily::awgn) {
    for (std::size_t t = 0; t < trials; ++t) std::copy_n(z.row(i).begin(), k, out.row(t).begin());
    return transmit_awgn(out, spec.sigma2, rng).received;
  }
  const Tensor zi = z.slice_rows(i, i + 1);
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor r = transmit_rayleigh(zi, spec.sigma2, rng).received;
    std::copy_n(r.data().begin(), k, out.row(t).begin());
  }
  return out;
}

}  // namespace

int resolve_threads(int requested) {
  if (requested < 0) throw std::invalid_argument("threads must be >= 0");
#ifdef _OPENMP
  return requested == 0 ? omp_get_max_threads() : requested;
#else
  return 1;
#endif
}

std::vector<double> fisher_traces_serial(const DecoderModel& decoder, const Tensor& z) {
  std::vector<double> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) out[i] = fisher_trace(decoder, z.slice_rows(i, i + 1)).trace;
  return out;
}

std::vector<double> fisher_traces(const DecoderModel& decoder, const Tensor& z, int threads) {
  threads = resolve_threads(threads);
  std::vector<double> out(z.rows());
  parallel_blocks(z.rows(), threads, [&](std::size_t begin, std::size_t end) {
    const std::vector<double> part = fisherjscc::fisher_traces(decoder, z.slice_rows(begin, end));
    std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  });
  return out;
}

std::vector<std::size_t> channel_errors_serial(const DecoderModel& decoder, const Tensor& z,
                                               std::span<const std::size_t> labels,
                                               const ChannelSpec& spec, std::size_t trials,
                                               std::uint64_t seed) {
  require_labels(z, labels);
  std::vector<std::size_t> out(z.rows(), 0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    CounterRng rng(seed, i);
    const Tensor zi = z.slice_rows(i, i + 1);
    for (std::size_t t = 0; t < trials; ++t) {
      const Tensor q = decoder.decode(transmit(zi, spec, rng).received);
      if (argmax(q.row(0)) != labels[i]) ++out[i];
    }
  }
  return out;
}

std::vector<std::size_t> channel_errors(const DecoderModel& decoder, const Tensor& z,
                                        std::span<const std::size_t> labels,
                                        const ChannelSpec& spec, std::size_t trials,
                                        std::uint64_t seed, int threads) {
  require_labels(z, labels);
  threads = resolve_threads(threads);
  std::vector<std::size_t> out(z.rows(), 0);
  if (trials == 0) return out;
  parallel_blocks(z.rows(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      CounterRng rng(seed, i);
      const Tensor q = decoder.decode(received_batch(z, i, spec, trials, rng));
      std::size_t wrong = 0;
      for (std::size_t t = 0; t < trials; ++t) wrong += argmax(q.row(t)) != labels[i];
      out[i] = wrong;
    }
  });
  return out;
}

std::vector<McEstimate> expected_kl_serial(const DecoderModel& decoder, const Tensor& z,
                                           const ChannelSpec& spec, std::size_t samples,
                                           std::uint64_t seed) {
  std::vector<McEstimate> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    CounterRng rng(seed, i);
    out[i] = expected_kl_mc(decoder, z.slice_rows(i, i + 1), spec, samples, rng);
  }
  return out;
}

std::vector<McEstimate> expected_kl(const DecoderModel& decoder, const Tensor& z,
                                    const ChannelSpec& spec, std::size_t samples,
                                    std::uint64_t seed, int threads) {
  threads = resolve_threads(threads);
  std::vector<McEstimate> out(z.rows());
  parallel_blocks(z.rows(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      CounterRng rng(seed, i);
      out[i] = expected_kl_mc(decoder, z.slice_rows(i, i + 1), spec, samples, rng);
    }
  });
  return out;
}

}  // namespace fisherjscc::kernels
