#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace fisherjscc {

/// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Derives an independent 64-bit seed from a root seed, a label and a list of
/// indices, e.g. derive_seed(root, "noise", {epoch, batch}). Adding a new label
/// never perturbs streams derived from other labels.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                          std::initializer_list<std::uint64_t> indices = {});

/// Counter-based generator: output block n is philox(counter = {n, stream}, key = seed).
/// Streams are a pure function of (seed, stream, position), so results do not
/// depend on platform or thread scheduling.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1]; safe as a log argument.
  double uniform_open0();
  // Standard normal via Box–Muller; both outputs of a pair are used.
  double normal();
  // Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fisherjscc
