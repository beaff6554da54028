#include "fisherjscc/robustness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fisherjscc {

namespace {

std::atomic<std::uint64_t> g_clamp_hits{0};

void require_normalized(std::span<const double> p, const char* which) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string("kl_categorical: negative mass in ") + which);
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string("kl_categorical: ") + which + " sums to " +
                                std::to_string(s) + ", not 1");
  }
}

Tensor one_hot_column(std::size_t classes, std::size_t label) {
  Tensor t(classes, 1);
  t(label, 0) = 1.0;
  return t;
}

void require_single_row(const Tensor& z, const char* fn) {
  if (z.rows() != 1) throw std::invalid_argument(std::string(fn) + ": expects a 1xk representation");
}

}  // namespace

double kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_categorical: size mismatch");
  require_normalized(p, "p");
  require_normalized(q, "q");
  double kl = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y) {
    if (p[y] == 0.0) continue;
    if (q[y] < kKlClampEpsilon) g_clamp_hits.fetch_add(1, std::memory_order_relaxed);
    kl += p[y] * std::log(std::max(p[y], kKlClampEpsilon) / std::max(q[y], kKlClampEpsilon));
  }
  return kl;
}

std::uint64_t kl_clamp_count() { return g_clamp_hits.load(std::memory_order_relaxed); }

double kl_posteriors(const DecoderModel& decoder, const Tensor& z, const Tensor& z_hat) {
  require_single_row(z, "kl_posteriors");
  require_single_row(z_hat, "kl_posteriors");
  const Tensor p = decoder.decode(z);
  const Tensor q = decoder.decode(z_hat);
  return kl_categorical(p.row(0), q.row(0));
}

FisherResult fisher_information(const DecoderModel& decoder, const Tensor& z, bool with_matrix) {
  require_single_row(z, "fisher_information");
  const std::size_t k = z.cols();
  const std::size_t classes = decoder.classes();
  const ad::Var zv = ad::variable(z);
  const ad::Var logp = decoder.log_probs(zv);

  FisherResult r;
  r.posterior.resize(classes);
  r.class_grad_norms.resize(classes);
  if (with_matrix) r.matrix = Tensor(k, k);
  const ad::Var wrt[] = {zv};
  for (std::size_t y = 0; y < classes; ++y) {
    const double q = std::exp(logp.value()(0, y));
    const ad::Var root = ad::matmul(logp, ad::constant(one_hot_column(classes, y)));
    const Tensor g = ad::backward(root, wrt)[0];
    double sq = 0.0;
    for (double v : g.data()) sq += v * v;
    r.posterior[y] = q;
    r.class_grad_norms[y] = std::sqrt(sq);
    r.trace += q * sq;
    if (with_matrix) {
      Tensor& m = *r.matrix;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) m(a, b) += q * g(0, a) * g(0, b);
    }
  }
  return r;
}

FisherResult fisher_trace(const DecoderModel& decoder, const Tensor& z) {
  return fisher_information(decoder, z, false);
}

Tensor fisher_matrix(const DecoderModel& decoder, const Tensor& z) {
  return *fisher_information(decoder, z, true).matrix;
}

std::vector<double> fisher_traces(const DecoderModel& decoder, const Tensor& z) {
  const std::size_t b = z.rows();
  const std::size_t classes = decoder.classes();
  const ad::Var zv = ad::variable(z);
  const ad::Var logp = decoder.log_probs(zv);
  std::vector<double> traces(b, 0.0);
  const ad::Var wrt[] = {zv};
  for (std::size_t y = 0; y < classes; ++y) {
    const ad::Var root = ad::sum(ad::matmul(logp, ad::constant(one_hot_column(classes, y))));
    const Tensor g = ad::backward(root, wrt)[0];
    for (std::size_t i = 0; i < b; ++i) {
      double sq = 0.0;
      for (double v : g.row(i)) sq += v * v;
      traces[i] += std::exp(logp.value()(i, y)) * sq;
    }
  }
  return traces;
}

ad::Var fisher_trace_node(const DecoderModel& decoder, const ad::Var& z,
                          const FisherOptions& options, CounterRng* rng) {
  const std::size_t classes = decoder.classes();
  // A constant z still needs a leaf to take input gradients against.
  const ad::Var zin = z.requires_grad() ? z : ad::variable(z.value());
  const ad::Var logp = decoder.log_probs(zin);
  const ad::Var wrt[] = {zin};

  if (options.mode == FisherMode::exact) {
    ad::Var trace;
    for (std::size_t y = 0; y < classes; ++y) {
      const ad::Var log_q = ad::matmul(logp, ad::constant(one_hot_column(classes, y)));
      const ad::Var g = ad::grad(ad::sum(log_q), wrt, true)[0];
      const ad::Var term = ad::mul(ad::exp(log_q), ad::row_sums(ad::square(g)));
      trace = trace.defined() ? ad::add(trace, term) : term;
    }
    return trace;
  }

  if (rng == nullptr) throw std::invalid_argument("fisher_trace_node: sampled mode needs a generator");
  if (options.class_samples == 0) throw std::invalid_argument("fisher_trace_node: class_samples must be >= 1");
  const std::size_t b = z.rows();
  ad::Var total;
  for (std::size_t s = 0; s < options.class_samples; ++s) {
    Tensor mask(b, classes);
    for (std::size_t i = 0; i < b; ++i) {
      double u = rng->uniform();
      std::size_t pick = classes - 1;
      for (std::size_t y = 0; y < classes; ++y) {
        u -= std::exp(logp.value()(i, y));
        if (u < 0.0) {
          pick = y;
          break;
        }
      }
      mask(i, pick) = 1.0;
    }
    const ad::Var picked = ad::sum(ad::mul(logp, ad::constant(std::move(mask))));
    const ad::Var g = ad::grad(picked, wrt, true)[0];
    const ad::Var term = ad::row_sums(ad::square(g));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(options.class_samples));
}

double quadratic_form(const Tensor& matrix, std::span<const double> delta) {
  const std::size_t k = delta.size();
  if (matrix.rows() != k || matrix.cols() != k) throw std::invalid_argument("quadratic_form: shape mismatch");
  double s = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < k; ++b) row += matrix(a, b) * delta[b];
    s += delta[a] * row;
  }
  return s;
}

double kl_quadratic(const DecoderModel& decoder, const Tensor& z, const Tensor& z_hat) {
  require_single_row(z, "kl_quadratic");
  if (!z.same_shape(z_hat)) throw std::invalid_argument("kl_quadratic: z and z_hat differ in shape");
  std::vector<double> delta(z.cols());
  bool zero = true;
  for (std::size_t j = 0; j < z.cols(); ++j) {
    delta[j] = z_hat(0, j) - z(0, j);
    zero = zero && delta[j] == 0.0;
  }
  if (zero) return 0.0;
  return 0.5 * quadratic_form(fisher_matrix(decoder, z), delta);
}

double expected_kl_quadratic(const Tensor& fisher, const Tensor& covariance) {
  if (!fisher.same_shape(covariance) || fisher.rows() != fisher.cols()) {
    throw std::invalid_argument("expected_kl_quadratic: matrices must be square and equal in shape");
  }
  double tr = 0.0;
  for (std::size_t a = 0; a < fisher.rows(); ++a)
    for (std::size_t b = 0; b < fisher.cols(); ++b) tr += fisher(a, b) * covariance(b, a);
  return 0.5 * tr;
}

McEstimate expected_kl_mc(const DecoderModel& decoder, const Tensor& z, const ChannelSpec& spec,
                          std::size_t samples, CounterRng& rng) {
  require_single_row(z, "expected_kl_mc");
  if (samples == 0) throw std::invalid_argument("expected_kl_mc: need at least one sample");
  if (spec.sigma2 == 0.0) return {0.0, 0.0};

  const std::size_t k = z.cols();
  Tensor received(samples, k);
  if (spec.family == ChannelFamily::awgn) {
    Tensor repeated(samples, k);
    for (std::size_t s = 0; s < samples; ++s) std::copy_n(z.data().begin(), k, repeated.row(s).begin());
    received = transmit_awgn(repeated, spec.sigma2, rng).received;
  } else {
    for (std::size_t s = 0; s < samples; ++s) {
      const Tensor r = transmit_rayleigh(z, spec.sigma2, rng).received;
      std::copy_n(r.data().begin(), k, received.row(s).begin());
    }
  }

  const Tensor p = decoder.decode(z);
  const Tensor q = decoder.decode(received);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const double kl = kl_categorical(p.row(0), q.row(s));
    sum += kl;
    sum_sq += kl * kl;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  double se = 0.0;
  if (samples > 1) {
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    se = std::sqrt(var / n);
  }
  return {mean, se};
}

double regularizer_from_trace(double trace, double sigma2, ChannelFamily family,
                              std::optional<std::complex<double>> h) {
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("regularizer: sigma2 must be >= 0");
  if (family == ChannelFamily::rayleigh) {
    if (!h) throw std::invalid_argument("regularizer: Rayleigh channel requires a fading coefficient");
    const double mag = std::max(std::abs(*h), kFadingFloor);
    return sigma2 / (2.0 * mag * mag) * trace;
  }
  return sigma2 / 2.0 * trace;
}

double regularizer(const DecoderModel& decoder, const Tensor& z, double sigma2,
                   ChannelFamily family, std::optional<std::complex<double>> h) {
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("regularizer: sigma2 must be >= 0");
  if (family == ChannelFamily::rayleigh && !h) {
    throw std::invalid_argument("regularizer: Rayleigh channel requires a fading coefficient");
  }
  if (sigma2 == 0.0) return 0.0;
  return regularizer_from_trace(fisher_trace(decoder, z).trace, sigma2, family, h);
}

}  // namespace fisherjscc
