#include <doctest.h>

#include <cmath>

#include "fisherjscc/channel.hpp"
#include "testing.hpp"

using namespace fisherjscc;

TEST_SUITE("channel") {

TEST_CASE("psnr and noise variance convert both ways") {
  CHECK(psnr_to_sigma2(20.0, 1.0) == doctest::Approx(0.01));
  CHECK(psnr_to_sigma2(10.0, 2.0) == doctest::Approx(0.2));
  CHECK(psnr_to_sigma2(0.0, 1.0) == 1.0);
  CHECK(sigma2_to_psnr(psnr_to_sigma2(13.7, 0.5), 0.5) == doctest::Approx(13.7));
  CHECK_THROWS_AS(psnr_to_sigma2(10.0, 0.0), std::invalid_argument);
  CHECK(ChannelSpec::from_psnr(ChannelFamily::awgn, std::numeric_limits<double>::infinity(), 1.0).sigma2 == 0.0);
}

TEST_CASE("family names round trip") {
  CHECK(parse_channel_family("awgn") == ChannelFamily::awgn);
  CHECK(parse_channel_family(channel_family_name(ChannelFamily::rayleigh)) == ChannelFamily::rayleigh);
  CHECK_THROWS_AS(parse_channel_family("rician"), std::invalid_argument);
}

TEST_CASE("noiseless transmission is an exact copy") {
  const Tensor z = testing::random_tensor(3, 5, 1);
  CounterRng rng(1);
  CHECK(transmit_awgn(z, 0.0, rng).received == z);
  CHECK(transmit_rayleigh(z, 0.0, rng).received == z);
  CHECK_THROWS_AS(transmit_awgn(z, -0.1, rng), std::invalid_argument);
}

TEST_CASE("awgn sample variance matches sigma2") {
  CounterRng rng(2024);
  const Tensor z(1000, 100);
  const ChannelDraw d = transmit_awgn(z, 0.1, rng);
  double s1 = 0.0, s2 = 0.0;
  for (double v : d.received.data()) {
    s1 += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(d.received.size());
  const double var = s2 / n - (s1 / n) * (s1 / n);
  CHECK(var >= 0.095);
  CHECK(var <= 0.105);
  CHECK(effective_noise(d) == d.received);
}

TEST_CASE("rayleigh gains have unit mean power and one draw per call") {
  CounterRng rng(99);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += std::norm(draw_fading(rng));
  CHECK(sum / n >= 0.98);
  CHECK(sum / n <= 1.02);

  const Tensor z(4, 3, 0.5);
  const ChannelDraw d = transmit_rayleigh(z, 0.2, rng);
  REQUIRE(d.fading.has_value());
  const double mag = std::abs(*d.fading);
  for (std::size_t i = 0; i < z.size(); ++i) {
    CHECK(d.received.data()[i] == doctest::Approx(0.5 + d.noise.data()[i] / mag));
  }
}

TEST_CASE("given-h transmission consumes the noise stream like awgn") {
  const Tensor z = testing::random_tensor(2, 4, 3);
  CounterRng a(5), b(5);
  const ChannelDraw awgn = transmit_awgn(z, 0.3, a);
  const ChannelDraw ray = transmit_rayleigh_given(z, 0.3, {1.0, 0.0}, b);
  CHECK(awgn.noise == ray.noise);
  CHECK(awgn.received == ray.received);
}

TEST_CASE("tiny fading magnitudes are floored and counted") {
  const std::uint64_t before = fading_floor_hits();
  CounterRng rng(1);
  const Tensor z(1, 2);
  const ChannelDraw d = transmit_rayleigh_given(z, 1.0, {1e-9, 0.0}, rng);
  CHECK(fading_floor_hits() == before + 1);
  for (std::size_t i = 0; i < 2; ++i) CHECK(d.received.data()[i] == doctest::Approx(d.noise.data()[i] / kFadingFloor));
}

TEST_CASE("noise covariance is diagonal") {
  const ChannelSpec awgn = ChannelSpec::from_psnr(ChannelFamily::awgn, 10.0, 1.0);
  const Tensor c = noise_covariance(awgn, 3);
  CHECK(c(0, 0) == doctest::Approx(0.1));
  CHECK(c(0, 1) == 0.0);
  const ChannelSpec ray = ChannelSpec::from_psnr(ChannelFamily::rayleigh, 10.0, 1.0);
  CHECK_THROWS_AS(noise_covariance(ray, 3), std::invalid_argument);
  CHECK(noise_covariance(ray, 3, std::complex<double>(0.0, 0.5))(2, 2) == doctest::Approx(0.4));
}

}
