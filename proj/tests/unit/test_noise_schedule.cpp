#include <cmath>
#include <vector>

#include "doctest.h"
#include "lgd/errors.hpp"
#include "lgd/schedule.hpp"
#include "oracles.hpp"

using namespace lgd;

TEST_SUITE("noise_schedule") {
  TEST_CASE("table invariants for both kinds") {
    for (auto kind : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
      const NoiseSchedule s = build_schedule(250, kind);
      INFO(to_string(kind));
      CHECK(s.steps() == 250);
      CHECK(s.alpha(0) == 1.0f);
      CHECK(s.mu(0) == 0.0f);
      CHECK(s.alpha_bar(0) == 1.0f);
      for (int t = 0; t <= 250; ++t) {
        const double a = s.alpha(t), m = s.mu(t);
        CHECK(std::abs(a * a + m * m - 1.0) < 1e-6);
        if (t > 0) {
          CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
          CHECK(s.mu(t) > s.mu(t - 1));
          CHECK(s.beta(t) > 0.0f);
          CHECK(s.beta(t) < 1.0f);
        }
      }
    }
  }

  TEST_CASE("linear T=1000 ends below 1e-4") {
    const NoiseSchedule s = build_schedule(1000, ScheduleKind::kLinear);
    double prod = 1.0;
    for (int i = 0; i < 1000; ++i) prod *= 1.0 - (1e-4 + (2e-2 - 1e-4) * i / 999.0);
    CHECK(prod < 1e-4);
    CHECK(s.alpha_bar(1000) == doctest::Approx(prod).epsilon(1e-3));
    CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-6));
    CHECK(s.beta(1000) == doctest::Approx(2e-2).epsilon(1e-6));
  }

  TEST_CASE("cosine matches the squared-cosine profile") {
    const NoiseSchedule s = build_schedule(250, ScheduleKind::kCosine);
    auto f = [](double t) {
      const double c = std::cos((t / 250.0 + 0.008) / 1.008 * M_PI / 2.0);
      return c * c;
    };
    for (int t : {1, 50, 125, 200}) CHECK(s.alpha_bar(t) == doctest::Approx(f(t) / f(0)).epsilon(1e-5));
  }

  TEST_CASE("T < 2 is a config error; out-of-range t is a range error") {
    CHECK_THROWS_AS(build_schedule(1, ScheduleKind::kLinear), ConfigError);
    const NoiseSchedule s = build_schedule(10, ScheduleKind::kLinear);
    CHECK_THROWS_AS(s.alpha(11), RangeError);
    CHECK_THROWS_AS(s.beta(0), RangeError);
    CHECK_THROWS_AS(noise_image(Tensor({4}), -1, Tensor({4}), s), RangeError);
  }

  TEST_CASE("noise_image: t=0, zero image, Monte-Carlo second moment") {
    const NoiseSchedule s = build_schedule(250, ScheduleKind::kCosine);
    Tensor z0 = oracle::randn({16}, 1), xi = oracle::randn({16}, 2);
    CHECK(oracle::bit_equal(noise_image(z0, 0, xi, s), z0));
    Tensor zt = noise_image(Tensor::zeros({16}), 100, xi, s);
    for (int i = 0; i < 16; ++i) CHECK(zt.data()[i] == s.mu(100) * xi.data()[i]);

    const int t = 120;
    double z0sq = 0.0;
    for (float v : z0.data()) z0sq += static_cast<double>(v) * v;
    const double expected = s.alpha(t) * s.alpha(t) * z0sq + s.mu(t) * s.mu(t) * 16.0;
    Rng rng(3);
    double acc = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const Tensor z = noise_image(z0, t, rng.normal_tensor({16}), s);
      for (float v : z.data()) acc += static_cast<double>(v) * v;
    }
    CHECK(std::abs(acc / 1000.0 - expected) / expected < 0.05);
  }

  TEST_CASE("sample_time: range, uniformity, reproducibility") {
    const NoiseSchedule s = build_schedule(250, ScheduleKind::kCosine);
    Rng rng(4);
    const int n = 100000;
    std::vector<int> decile(10, 0);
    int lo = 1000, hi = -1;
    for (int i = 0; i < n; ++i) {
      const int t = sample_time(rng, s);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
      ++decile[static_cast<size_t>((t - 1) / 25)];
    }
    CHECK(lo >= 1);
    CHECK(hi <= 250);
    const double p = 0.1, sigma = std::sqrt(n * p * (1 - p));
    for (int c : decile) CHECK(std::abs(c - n * p) < 3 * sigma);

    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_time(a, s) == sample_time(b, s));
  }

  TEST_CASE("step_for rounds to the nearest index") {
    const NoiseSchedule s = build_schedule(250, ScheduleKind::kCosine);
    CHECK(step_for(0.5f, s) == 125);
    CHECK(step_for(0.1f, s) == 25);
    CHECK(step_for(1.0f, s) == 250);
    CHECK_THROWS_AS(step_for(1.5f, s), RangeError);
  }
}
