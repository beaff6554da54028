#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fisherjscc/error.hpp"
#include "fisherjscc/models.hpp"
#include "testing.hpp"

using namespace fisherjscc;
using fisherjscc::testing::random_tensor;

namespace {

ModelPair small_pair(std::uint64_t seed, std::size_t classes = 3) {
  EncoderConfig enc{2, {16}, 4, 1.0, ad::Activation::relu};
  DecoderConfig dec{4, {8}, classes, ad::Activation::relu};
  return ModelPair::create(enc, dec, Normalizer::identity(2), seed);
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("encoded representations respect the power budget even for extreme inputs") {
  for (double power : {1.0, 0.3, 2.0, 1e-3}) {
    EncoderConfig cfg{2, {8}, 6, power, ad::Activation::tanh};
    EncoderModel enc(cfg, 11);
    // Huge inputs saturate tanh to exactly ±1.
    Tensor x = random_tensor(64, 2, 3, 1e6);
    const Tensor z = enc.encode(x);
    for (double v : z.data()) CHECK(v * v <= power);
    CHECK(enc.amplitude() * enc.amplitude() <= power);
    CHECK(std::nextafter(enc.amplitude(), 1e300) * std::nextafter(enc.amplitude(), 1e300) > power);
  }
}

TEST_CASE("power audit counts rows without violations") {
  const PowerAudit before = power_audit();
  EncoderModel enc(EncoderConfig{}, 3);
  enc.encode(random_tensor(10, 2, 4));
  const PowerAudit after = power_audit();
  CHECK(after.rows_checked == before.rows_checked + 10);
  CHECK(after.violations == 0);
}

TEST_CASE("initialization is seeded and biases start at zero") {
  const ModelPair a = small_pair(5), b = small_pair(5), c = small_pair(6);
  CHECK(checkpoint_to_string(a) == checkpoint_to_string(b));
  CHECK(checkpoint_to_string(a) != checkpoint_to_string(c));
  for (const auto& [name, v] : a.decoder.params())
    if (name[0] == 'b')
      for (double x : v.value().data()) CHECK(x == 0.0);
  // Glorot uniform bound for the first encoder layer (2 → 16).
  const double limit = std::sqrt(6.0 / 18.0);
  for (double x : a.encoder.params().at("W0").value().data()) CHECK(std::abs(x) <= limit);
}

TEST_CASE("copies of a model pair are independent") {
  ModelPair a = small_pair(1);
  ModelPair b = a;
  ad::Var w = b.decoder.params().at("W0");
  w.mutable_value()(0, 0) += 1.0;
  CHECK(a.decoder.params().at("W0").value()(0, 0) != b.decoder.params().at("W0").value()(0, 0));
}

TEST_CASE("decoder posteriors are normalized and log_posterior picks the label") {
  const ModelPair m = small_pair(2);
  const Tensor z = random_tensor(5, 4, 9, 0.5);
  const Tensor q = m.decoder.decode(z);
  for (std::size_t r = 0; r < q.rows(); ++r) {
    double s = 0.0;
    for (double v : q.row(r)) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  const Tensor z0 = z.slice_rows(0, 1);
  for (std::size_t y = 0; y < 3; ++y) {
    CHECK(m.decoder.log_posterior(ad::constant(z0), y).value().item() == doctest::Approx(std::log(q(0, y))));
  }
  CHECK_THROWS_AS(m.decoder.log_posterior(ad::constant(z0), 3), std::out_of_range);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  const std::vector<double> row{0.25, 0.5, 0.5, 0.1};
  CHECK(argmax(row) == 1);
  const std::vector<double> flat{1.0, 1.0, 1.0};
  CHECK(argmax(flat) == 0);
}

TEST_CASE("normalizer is fitted on the given features and leaves constant columns alone") {
  const Tensor x = Tensor::from_rows({{1, 5}, {3, 5}, {5, 5}});
  const Normalizer n = Normalizer::fit(x);
  const Tensor y = n.apply(x);
  CHECK(y(0, 0) == doctest::Approx(-std::sqrt(1.5)));
  CHECK(y(1, 0) == 0.0);
  CHECK(y(2, 1) == 0.0);
  CHECK(n.scale[1] == 1.0);
}

TEST_CASE("checkpoint round trip is bitwise exact") {
  ModelPair m = small_pair(8);
  ad::Var w = m.encoder.params().at("W0");
  w.mutable_value()(0, 0) = 0.1 + 0.2;  // not a short decimal
  m.normalizer = Normalizer{{0.1, -3.7}, {1.0 / 3.0, 7.0}};
  m.metadata = {{"regime", "fixed:20"}};
  const std::string text = checkpoint_to_string(m);
  const ModelPair back = checkpoint_from_string(text);
  CHECK(checkpoint_to_string(back) == text);
  CHECK(back.encoder.params().at("W0").value() == m.encoder.params().at("W0").value());
  CHECK(back.normalizer == m.normalizer);
  CHECK(back.metadata == m.metadata);

  const auto path = std::filesystem::temp_directory_path() / "fisherjscc_ckpt_test.json";
  save_checkpoint(m, path);
  CHECK(checkpoint_to_string(load_checkpoint(path)) == text);
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints are data errors") {
  CHECK_THROWS_AS(checkpoint_from_string("{"), DataError);
  CHECK_THROWS_AS(checkpoint_from_string("{\"format\": \"other\"}"), DataError);
  std::string text = checkpoint_to_string(small_pair(1));
  text.replace(text.find("\"version\": 1"), 12, "\"version\": 9");
  CHECK_THROWS_AS(checkpoint_from_string(text), DataError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), DataError);
}

TEST_CASE("mismatched latent dimensions are rejected") {
  CHECK_THROWS_AS(ModelPair::create(EncoderConfig{2, {4}, 3}, DecoderConfig{4, {4}, 2}, Normalizer::identity(2), 0),
                  std::invalid_argument);
}

}
