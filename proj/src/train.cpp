#include "fisherjscc/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "fisherjscc/format.hpp"

namespace fisherjscc {

void PsnrRegime::validate() const {
  if (kind == Kind::uniform && !(lo_db < hi_db)) {
    throw ConfigError("uniform PSNR regime needs lo < hi (got " + format_double(lo_db) + ", " +
                      format_double(hi_db) + ")");
  }
  if (!std::isfinite(fixed_db) || !std::isfinite(lo_db) || !std::isfinite(hi_db)) {
    throw ConfigError("PSNR values must be finite");
  }
}

std::string PsnrRegime::describe() const {
  if (kind == Kind::fixed) return "fixed:" + format_double(fixed_db);
  return "uniform:" + format_double(lo_db) + ":" + format_double(hi_db);
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
  if (noise_samples < 1) throw ConfigError("train: noise samples L must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (fisher.mode == FisherMode::sampled && fisher.class_samples < 1) {
    throw ConfigError("train: sampled Fisher mode needs class_samples >= 1");
  }
  regime.validate();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, "train_log", 1,
                {"epoch", "mean_cross_entropy", "mean_regularizer", "mean_trace", "train_accuracy"});
  for (const auto& r : rows) {
    csv.cell(r.epoch).cell(r.mean_cross_entropy).cell(r.mean_regularizer).cell(r.mean_trace)
        .cell(r.train_accuracy);
    csv.end_row();
  }
}

void TrainLog::write_timing_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, "train_timing", 1, {"epoch", "wall_seconds"});
  for (const auto& r : rows) {
    csv.cell(r.epoch).cell(r.wall_seconds);
    csv.end_row();
  }
}

LossTerms regularized_loss(const Tensor& x, std::span<const std::size_t> labels,
                           const EncoderModel& encoder, const DecoderModel& decoder, double sigma2,
                           const LossOptions& options, CounterRng& rng) {
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("regularized_loss: sigma2 must be >= 0");
  if (options.noise_samples < 1) throw std::invalid_argument("regularized_loss: L must be >= 1");
  const std::size_t b = x.rows();
  if (labels.size() != b || b == 0) throw std::invalid_argument("regularized_loss: batch/label mismatch");
  const std::size_t classes = decoder.classes();

  Tensor one_hot(b, classes);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= classes) throw std::out_of_range("regularized_loss: label out of range");
    one_hot(i, labels[i]) = 1.0;
  }
  const ad::Var targets = ad::constant(std::move(one_hot));

  const ad::Var z = encoder.forward(ad::constant(x));
  ad::Var log_lik;
  for (std::size_t l = 0; l < options.noise_samples; ++l) {
    Tensor noise;
    if (options.family == ChannelFamily::awgn) {
      noise = transmit_awgn(z.value(), sigma2, rng).noise;
    } else {
      noise = Tensor(b, z.cols());
      for (std::size_t i = 0; i < b; ++i) {
        const ChannelDraw d = transmit_rayleigh(z.value().slice_rows(i, i + 1), sigma2, rng);
        const Tensor eff = effective_noise(d);
        std::copy(eff.data().begin(), eff.data().end(), noise.row(i).begin());
      }
    }
    const ad::Var logp = decoder.log_probs(ad::add(z, ad::constant(std::move(noise))));
    const ad::Var picked = ad::sum(ad::mul(logp, targets));
    log_lik = log_lik.defined() ? ad::add(log_lik, picked) : picked;
  }
  const double denom = static_cast<double>(b * options.noise_samples);
  const ad::Var ce = ad::scale(log_lik, -1.0 / denom);

  LossTerms terms;
  terms.cross_entropy = ce.value().item();
  const double coef = options.omit_variance ? 1.0 : sigma2 / 2.0;
  const bool need_trace = options.lambda > 0.0 && coef > 0.0;
  if (need_trace) {
    const ad::Var traces = fisher_trace_node(decoder, z, options.fisher, &rng);
    const ad::Var trace_sum = ad::sum(traces);
    terms.mean_trace = trace_sum.value().item() / static_cast<double>(b);
    terms.regularizer = sigma2 / 2.0 * terms.mean_trace;
    terms.total = ad::add(ce, ad::scale(trace_sum, options.lambda * coef / static_cast<double>(b)));
  } else {
    terms.total = ce;
    if (sigma2 > 0.0) {
      const std::vector<double> traces = fisher_traces(decoder, z.value());
      terms.mean_trace = std::accumulate(traces.begin(), traces.end(), 0.0) / static_cast<double>(b);
      terms.regularizer = sigma2 / 2.0 * terms.mean_trace;
    }
  }
  return terms;
}

AdamState AdamState::for_params(std::span<const ad::Var> params) {
  AdamState s;
  for (const ad::Var& p : params) {
    s.first_moment.emplace_back(p.rows(), p.cols());
    s.second_moment.emplace_back(p.rows(), p.cols());
  }
  return s;
}

void adam_step(std::span<const ad::Var> params, std::span<const Tensor> grads, AdamState& state,
               double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Var p = params[i];
    Tensor& w = p.mutable_value();
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!w.same_shape(grads[i]) || !w.same_shape(m)) throw std::invalid_argument("adam_step: shape mismatch");
    auto wd = w.data();
    auto gd = grads[i].data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t j = 0; j < wd.size(); ++j) {
      md[j] = state.beta1 * md[j] + (1.0 - state.beta1) * gd[j];
      vd[j] = state.beta2 * vd[j] + (1.0 - state.beta2) * gd[j] * gd[j];
      const double m_hat = md[j] / correction1;
      const double v_hat = vd[j] / correction2;
      wd[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

std::vector<double> lambda_grid(PsnrRegime::Kind kind, double power, std::size_t points) {
  if (points < 2) throw std::invalid_argument("lambda_grid: need at least two points");
  const bool fixed = kind == PsnrRegime::Kind::fixed;
  const double lo = fixed ? 0.1 : 0.5;
  const double hi = fixed ? 1.0 : 1.5;
  const double sigma2 = psnr_to_sigma2(10.0, power);
  std::vector<double> grid;
  for (std::size_t i = 0; i < points; ++i) {
    const double w = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    grid.push_back(fixed ? w : 2.0 * w / sigma2);
  }
  return grid;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

namespace {

double clean_accuracy(const ModelPair& models, const Tensor& x, std::span<const std::size_t> labels) {
  const Tensor post = models.decoder.decode(models.encoder.encode(x));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += argmax(post.row(i)) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

TrainLog train(const TrainConfig& config, const Dataset& data, ModelPair& models, const EpochHook& on_epoch) {
  config.validate();
  data.validate();
  if (data.classes != models.decoder.classes()) {
    throw ConfigError("train: dataset has " + std::to_string(data.classes) + " classes, decoder has " +
                      std::to_string(models.decoder.classes()));
  }
  const Tensor x = models.normalizer.apply(data.features);
  const std::vector<ad::Var> params = models.all_params();
  AdamState adam = AdamState::for_params(params);
  LossOptions loss_opts{config.lambda, config.noise_samples, config.family, config.omit_variance, config.fisher};
  const double power = models.encoder.config().power;

  TrainLog log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    CounterRng shuffle_rng(derive_seed(config.seed, "train.shuffle", {epoch}));
    const std::vector<std::size_t> order = shuffled_indices(data.size(), shuffle_rng);

    double ce_sum = 0.0, reg_sum = 0.0, trace_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> ids(order.data() + begin, end - begin);
      const Tensor xb = x.gather_rows(ids);
      std::vector<std::size_t> yb;
      yb.reserve(ids.size());
      for (std::size_t id : ids) yb.push_back(data.labels[id]);

      double psnr = config.regime.fixed_db;
      if (config.regime.kind == PsnrRegime::Kind::uniform) {
        CounterRng psnr_rng(derive_seed(config.seed, "train.psnr", {epoch, batch_index}));
        psnr = config.regime.lo_db + (config.regime.hi_db - config.regime.lo_db) * psnr_rng.uniform();
      }
      const double sigma2 = psnr_to_sigma2(psnr, power);
      CounterRng noise_rng(derive_seed(config.seed, "train.noise", {epoch, batch_index}));

      try {
        LossTerms terms = regularized_loss(xb, yb, models.encoder, models.decoder, sigma2, loss_opts, noise_rng);
        if (!std::isfinite(terms.total.value().item())) throw NumericalError("loss is not finite");
        const std::vector<Tensor> grads = ad::backward(terms.total, params);
        for (const Tensor& g : grads)
          if (!g.all_finite()) throw NumericalError("gradient is not finite");
        adam_step(params, grads, adam, config.learning_rate);
        const double nb = static_cast<double>(ids.size());
        ce_sum += terms.cross_entropy * nb;
        reg_sum += terms.regularizer * nb;
        trace_sum += terms.mean_trace * nb;
      } catch (const NumericalError& ex) {
        throw TrainingAborted("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index) + ": " + ex.what(),
                              epoch, batch_index, checkpoint_to_string(models));
      }
    }

    const double n = static_cast<double>(data.size());
    TrainLogRow row;
    row.epoch = epoch;
    row.mean_cross_entropy = ce_sum / n;
    row.mean_regularizer = reg_sum / n;
    row.mean_trace = trace_sum / n;
    try {
      row.train_accuracy = clean_accuracy(models, x, data.labels);
    } catch (const NumericalError& ex) {
      throw TrainingAborted("model output is not finite after epoch " + std::to_string(epoch) + ": " + ex.what(),
                            epoch, batch_index, checkpoint_to_string(models));
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.rows.push_back(row);
    spdlog::debug("epoch {} ce={:.5f} reg={:.6f} trace={:.4f} acc={:.4f} ({:.2f}s)", epoch,
                  row.mean_cross_entropy, row.mean_regularizer, row.mean_trace, row.train_accuracy,
                  row.wall_seconds);
    if (on_epoch) on_epoch(row, models);
  }
  return log;
}

}  // namespace fisherjscc
