#include "fisherjscc/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "fisherjscc/error.hpp"
#include "fisherjscc/rng.hpp"

namespace fisherjscc {

namespace {

std::atomic<std::uint64_t> g_power_rows{0};
std::atomic<std::uint64_t> g_power_violations{0};

constexpr int kCheckpointVersion = 1;

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(fan_in, fan_out);
  for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

void build_mlp(ParamSet& params, const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    CounterRng rng(seed, l);
    params.add("W" + std::to_string(l), glorot_uniform(sizes[l], sizes[l + 1], rng));
    params.add("b" + std::to_string(l), Tensor(1, sizes[l + 1]));
  }
}

ad::Var run_mlp(const ParamSet& params, std::size_t layers, ad::Activation act, ad::Var h) {
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::affine(h, params.at("W" + std::to_string(l)), params.at("b" + std::to_string(l)));
    if (l + 1 < layers) h = ad::activation(h, act);
  }
  return h;
}

double safe_amplitude(double power) {
  double a = std::sqrt(power);
  while (a * a > power) a = std::nextafter(a, 0.0);
  return a;
}

void audit_power(const Tensor& z, double power) {
  std::uint64_t bad = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (double v : z.row(i)) {
      if (v * v > power) {
        ++bad;
        break;
      }
    }
  }
  g_power_rows.fetch_add(z.rows(), std::memory_order_relaxed);
  if (bad) {
    g_power_violations.fetch_add(bad, std::memory_order_relaxed);
    spdlog::error("power constraint violated by {} encoded rows (P = {})", bad, power);
  }
}

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden,
                                     std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

ParamSet::ParamSet(const ParamSet& other) {
  entries_.reserve(other.entries_.size());
  for (const auto& [name, var] : other.entries_) entries_.emplace_back(name, ad::variable(var.value()));
}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    ParamSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

const ad::Var& ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), ad::variable(std::move(value)));
  return entries_.back().second;
}

const ad::Var& ParamSet::at(std::string_view name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw std::out_of_range("ParamSet: no parameter '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.value().size();
  return n;
}

std::vector<ad::Var> ParamSet::vars() const {
  std::vector<ad::Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

Normalizer Normalizer::fit(const Tensor& features) {
  const std::size_t n = features.rows(), m = features.cols();
  if (n == 0) throw DataError("Normalizer::fit: empty feature table");
  Normalizer norm;
  norm.mean.assign(m, 0.0);
  norm.scale.assign(m, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) norm.mean[j] += features(i, j);
  for (double& v : norm.mean) v /= static_cast<double>(n);
  for (std::size_t j = 0; j < m; ++j) {
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = features(i, j) - norm.mean[j];
      var += d * d;
    }
    var /= static_cast<double>(n);
    norm.scale[j] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return norm;
}

Normalizer Normalizer::identity(std::size_t dim) {
  return Normalizer{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

Tensor Normalizer::apply(const Tensor& features) const {
  if (features.cols() != mean.size()) {
    throw DataError("Normalizer: feature dimension " + std::to_string(features.cols()) +
                    " does not match fitted dimension " + std::to_string(mean.size()));
  }
  Tensor out(features.rows(), features.cols());
  for (std::size_t i = 0; i < features.rows(); ++i)
    for (std::size_t j = 0; j < features.cols(); ++j)
      out(i, j) = (features(i, j) - mean[j]) * scale[j];
  return out;
}

PowerAudit power_audit() {
  return {g_power_rows.load(std::memory_order_relaxed), g_power_violations.load(std::memory_order_relaxed)};
}

EncoderModel::EncoderModel(EncoderConfig config, std::uint64_t seed)
    : config_(std::move(config)), amplitude_(0.0) {
  if (config_.latent_dim < 1) throw std::invalid_argument("EncoderModel: latent dimension must be >= 1");
  if (!(config_.power > 0.0)) throw std::invalid_argument("EncoderModel: power budget must be > 0");
  amplitude_ = safe_amplitude(config_.power);
  build_mlp(params_, layer_sizes(config_.input_dim, config_.hidden, config_.latent_dim), seed);
}

ad::Var EncoderModel::forward(const ad::Var& x) const {
  if (x.cols() != config_.input_dim) {
    throw std::invalid_argument("encode: input has " + std::to_string(x.cols()) +
                                " features, encoder expects " + std::to_string(config_.input_dim));
  }
  ad::Var z = ad::scale(ad::tanh(run_mlp(params_, layer_count(), config_.activation, x)), amplitude_);
  audit_power(z.value(), config_.power);
  return z;
}

Tensor EncoderModel::encode(const Tensor& x) const {
  ad::NoGradGuard no_grad;
  return forward(ad::constant(x)).value();
}

DecoderModel::DecoderModel(DecoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.classes < 2) throw std::invalid_argument("DecoderModel: need at least two classes");
  build_mlp(params_, layer_sizes(config_.latent_dim, config_.hidden, config_.classes), seed);
}

ad::Var DecoderModel::logits(const ad::Var& z) const {
  if (z.cols() != config_.latent_dim) {
    throw std::invalid_argument("decode: representation has " + std::to_string(z.cols()) +
                                " entries, decoder expects " + std::to_string(config_.latent_dim));
  }
  return run_mlp(params_, layer_count(), config_.activation, z);
}

ad::Var DecoderModel::log_probs(const ad::Var& z) const { return ad::log_softmax(logits(z)); }

Tensor DecoderModel::decode(const Tensor& z) const {
  ad::NoGradGuard no_grad;
  Tensor p = log_probs(ad::constant(z)).value();
  for (double& v : p.data()) v = std::exp(v);
  return p;
}

ad::Var DecoderModel::log_posterior(const ad::Var& z, std::size_t label) const {
  if (label >= config_.classes) {
    throw std::out_of_range("log_posterior: class " + std::to_string(label) + " out of range [0, " +
                            std::to_string(config_.classes) + ")");
  }
  if (z.rows() != 1) throw std::invalid_argument("log_posterior: expects a single 1xk representation");
  Tensor pick(config_.classes, 1);
  pick(label, 0) = 1.0;
  return ad::matmul(log_probs(z), ad::constant(std::move(pick)));
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

ModelPair ModelPair::create(const EncoderConfig& enc, const DecoderConfig& dec, Normalizer norm,
                            std::uint64_t seed) {
  if (enc.latent_dim != dec.latent_dim) {
    throw std::invalid_argument("ModelPair: encoder latent dimension differs from decoder's");
  }
  return ModelPair{EncoderModel(enc, derive_seed(seed, "init.encoder")),
                   DecoderModel(dec, derive_seed(seed, "init.decoder")), std::move(norm), seed, {}};
}

std::vector<ad::Var> ModelPair::all_params() const {
  std::vector<ad::Var> out = encoder.params().vars();
  for (const ad::Var& v : decoder.params().vars()) out.push_back(v);
  return out;
}

namespace {

nlohmann::ordered_json tensor_json(const Tensor& t) {
  nlohmann::ordered_json j;
  j["shape"] = {t.rows(), t.cols()};
  j["data"] = std::vector<double>(t.data().begin(), t.data().end());
  return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw DataError("checkpoint: tensor shape must have two entries");
  return Tensor(shape[0], shape[1], j.at("data").get<std::vector<double>>());
}

nlohmann::ordered_json params_json(const ParamSet& ps) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, v] : ps) j[name] = tensor_json(v.value());
  return j;
}

void load_params(ParamSet& ps, const nlohmann::json& j, const std::string& which) {
  if (j.size() != ps.size()) throw DataError("checkpoint: " + which + " parameter count mismatch");
  for (const auto& [name, v] : ps) {
    if (!j.contains(name)) throw DataError("checkpoint: " + which + " missing parameter " + name);
    Tensor t = tensor_from_json(j.at(name));
    if (!t.same_shape(v.value())) throw DataError("checkpoint: " + which + " parameter " + name + " has wrong shape");
    ad::Var handle = v;
    handle.mutable_value() = std::move(t);
  }
}

}  // namespace

std::string checkpoint_to_string(const ModelPair& m) {
  nlohmann::ordered_json j;
  j["format"] = "fisherjscc-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = m.seed;
  const auto& e = m.encoder.config();
  const auto& d = m.decoder.config();
  j["architecture"] = {
      {"input_dim", e.input_dim},
      {"encoder_hidden", e.hidden},
      {"latent_dim", e.latent_dim},
      {"decoder_hidden", d.hidden},
      {"classes", d.classes},
      {"encoder_activation", ad::activation_name(e.activation)},
      {"decoder_activation", ad::activation_name(d.activation)},
  };
  j["power"] = e.power;
  j["normalizer"] = {{"mean", m.normalizer.mean}, {"scale", m.normalizer.scale}};
  j["encoder"] = params_json(m.encoder.params());
  j["decoder"] = params_json(m.decoder.params());
  j["metadata"] = m.metadata;
  return j.dump(1) + "\n";
}

ModelPair checkpoint_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("checkpoint: malformed JSON: ") + ex.what());
  }
  try {
    if (j.at("format") != "fisherjscc-checkpoint") throw DataError("checkpoint: unrecognized format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported version " + j.at("version").dump());
    }
    const auto& a = j.at("architecture");
    EncoderConfig enc;
    enc.input_dim = a.at("input_dim");
    enc.hidden = a.at("encoder_hidden").get<std::vector<std::size_t>>();
    enc.latent_dim = a.at("latent_dim");
    enc.power = j.at("power");
    enc.activation = ad::parse_activation(a.at("encoder_activation").get<std::string>());
    DecoderConfig dec;
    dec.latent_dim = enc.latent_dim;
    dec.hidden = a.at("decoder_hidden").get<std::vector<std::size_t>>();
    dec.classes = a.at("classes");
    dec.activation = ad::parse_activation(a.at("decoder_activation").get<std::string>());
    Normalizer norm{j.at("normalizer").at("mean").get<std::vector<double>>(),
                    j.at("normalizer").at("scale").get<std::vector<double>>()};
    const auto seed = j.at("seed").get<std::uint64_t>();
    ModelPair m = ModelPair::create(enc, dec, std::move(norm), seed);
    load_params(m.encoder.params(), j.at("encoder"), "encoder");
    load_params(m.decoder.params(), j.at("decoder"), "decoder");
    if (j.contains("metadata")) m.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("checkpoint: ") + ex.what());
  }
}

void save_checkpoint(const ModelPair& models, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_string(models);
}

ModelPair load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace fisherjscc
