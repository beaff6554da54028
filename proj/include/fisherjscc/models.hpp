#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fisherjscc/autodiff.hpp"
#include "fisherjscc/tensor.hpp"

namespace fisherjscc {

/// Named parameter leaves in insertion order. Copies are deep: a copied
/// ParamSet owns fresh leaves, so training one copy never touches another.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  const ad::Var& add(std::string name, Tensor value);
  const ad::Var& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::vector<ad::Var> vars() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> entries_;
};

/// z-score feature transform fitted on the training split.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 / stddev, 1 for constant features

  static Normalizer fit(const Tensor& features);
  static Normalizer identity(std::size_t dim);
  Tensor apply(const Tensor& features) const;
  bool operator==(const Normalizer&) const = default;
};

struct EncoderConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t latent_dim = 8;
  double power = 1.0;
  ad::Activation activation = ad::Activation::relu;
};

struct DecoderConfig {
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden = {64};
  std::size_t classes = 2;
  ad::Activation activation = ad::Activation::relu;
};

/// Number of encoded batches checked against max_i z_i² ≤ P, and how many
/// rows violated it. Process-wide, monotone.
struct PowerAudit {
  std::uint64_t rows_checked = 0;
  std::uint64_t violations = 0;
};
PowerAudit power_audit();

/// Deterministic encoder z = √P·tanh(MLP(x)); every output satisfies z_i² ≤ P.
class EncoderModel {
 public:
  EncoderModel(EncoderConfig config, std::uint64_t seed);

  ad::Var forward(const ad::Var& x) const;
  Tensor encode(const Tensor& x) const;

  const EncoderConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  // Largest amplitude a with a·a ≤ P in floating point.
  double amplitude() const { return amplitude_; }
  std::size_t layer_count() const { return config_.hidden.size() + 1; }

 private:
  EncoderConfig config_;
  ParamSet params_;
  double amplitude_;
};

/// Categorical decoder q(y|ẑ) = softmax(MLP(ẑ)).
class DecoderModel {
 public:
  DecoderModel(DecoderConfig config, std::uint64_t seed);

  ad::Var logits(const ad::Var& z) const;
  ad::Var log_probs(const ad::Var& z) const;
  // Posterior rows for a batch of received representations.
  Tensor decode(const Tensor& z) const;
  // log q(y|ẑ) for a single 1×k representation, as a scalar node.
  ad::Var log_posterior(const ad::Var& z, std::size_t label) const;

  std::size_t classes() const { return config_.classes; }
  std::size_t latent_dim() const { return config_.latent_dim; }
  const DecoderConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  std::size_t layer_count() const { return config_.hidden.size() + 1; }

 private:
  DecoderConfig config_;
  ParamSet params_;
};

// Lowest index wins ties.
std::size_t argmax(std::span<const double> row);

/// Encoder, decoder and the input normalization they were trained with.
struct ModelPair {
  EncoderModel encoder;
  DecoderModel decoder;
  Normalizer normalizer;
  std::uint64_t seed = 0;
  // Free-form provenance stored with the checkpoint (e.g. training regime).
  std::map<std::string, std::string> metadata;

  static ModelPair create(const EncoderConfig& enc, const DecoderConfig& dec, Normalizer norm,
                          std::uint64_t seed);
  std::vector<ad::Var> all_params() const;
};

/// Checkpoint: JSON document, format "fisherjscc-checkpoint" version 1.
/// Parameters are stored as shortest round-trip decimals, so save → load is
/// bitwise exact.
std::string checkpoint_to_string(const ModelPair& models);
ModelPair checkpoint_from_string(const std::string& text);
void save_checkpoint(const ModelPair& models, const std::filesystem::path& path);
ModelPair load_checkpoint(const std::filesystem::path& path);

}  // namespace fisherjscc
