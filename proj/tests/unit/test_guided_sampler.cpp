#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "lgd/errors.hpp"
#include "lgd/sampler.hpp"
#include "oracles.hpp"

using namespace lgd;

namespace {

// Small frozen models with non-trivial outputs; no training needed for the
// properties checked here.
struct Fixture {
  static constexpr int kSize = 8;
  static constexpr int kSteps = 20;
  UNet ddpm;
  LatentGuidancePredictor lgp;
  NoiseSchedule sched;

  explicit Fixture(LossKind loss = LossKind::kSqErr, uint64_t seed = 1)
      : ddpm(config(), seed), lgp(lgp_config(ddpm, loss), seed + 1), sched(build_schedule(kSteps, ScheduleKind::kCosine)) {
    uint64_t s = seed * 100;
    for (const auto& [name, handle] : ddpm.registry().parameters())
      if (name.find("conv2") != std::string::npos || name.find("conv_out") != std::string::npos) {
        Tensor p = handle;
        const Tensor r = oracle::randn(p.shape(), ++s, 0.05f);
        std::copy_n(r.data().begin(), p.numel(), p.mutable_data().begin());
      }
  }

  static UNetConfig config() {
    UNetConfig c;
    c.image_size = kSize;
    c.base_width = 16;
    c.emb_dim = 32;
    c.num_classes = 2;
    return c;
  }

  static LGPConfig lgp_config(const UNet& net, LossKind loss) {
    LGPConfig c;
    c.feature_channels = static_cast<int>(net.feature_channels());
    c.hidden = {32, 16};
    c.loss = loss;
    return c;
  }

  SampleRunConfig run(uint64_t seed) const {
    SampleRunConfig r;
    r.steps = kSteps;
    r.seed = seed;
    r.class_id = 1;
    return r;
  }

  GuidanceTarget target(uint64_t seed, float beta = 1.6f) const {
    GuidanceTarget t;
    t.map = oracle::uniform({1, kSize, kSize}, seed, 0.0f, 1.0f);
    t.beta = beta;
    return t;
  }
};

}  // namespace

TEST_SUITE("guided_sampler") {
  TEST_CASE("reverse step: no noise at t=1") {
    const NoiseSchedule s = build_schedule(20, ScheduleKind::kLinear);
    Tensor z = oracle::randn({1, 1, 2, 2}, 1), e = oracle::randn({1, 1, 2, 2}, 2), n = oracle::randn({1, 1, 2, 2}, 3);
    CHECK(oracle::bit_equal(ddpm_reverse_step(z, e, 1, s, n), ddpm_reverse_step(z, e, 1, s, Tensor())));
    CHECK_FALSE(oracle::bit_equal(ddpm_reverse_step(z, e, 2, s, n), ddpm_reverse_step(z, e, 2, s, Tensor())));
  }

  TEST_CASE("reverse step with the exact noise moves toward the clean sample") {
    const NoiseSchedule s = build_schedule(250, ScheduleKind::kCosine);
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      const float x0 = rng.uniform(-0.9f, 0.9f);
      // Noise of opposite sign to x0: z_t - x0 = (a_t - 1) x0 + mu_t xi has no
      // cancelling terms, so shrinking both coefficients shrinks the distance.
      const float xi = -std::copysign(std::abs(rng.normal()), x0);
      const int t = static_cast<int>(rng.uniform_int(2, 250));
      Tensor z0 = Tensor({1, 1, 1, 1}, std::vector<float>{x0}), noise = Tensor({1, 1, 1, 1}, std::vector<float>{xi});
      Tensor zt = noise_image(z0, t, noise, s);
      Tensor next = ddpm_reverse_step(zt, noise, t, s, Tensor());
      // Closed form: with x0 recovered exactly the posterior mean is
      // a_{t-1} x0 + c_t mu_t xi.
      const double expect = static_cast<double>(s.alpha(t - 1)) * x0 + static_cast<double>(s.posterior_coef_zt(t)) * s.mu(t) * xi;
      CHECK(next.item() == doctest::Approx(expect).epsilon(1e-4));
      CHECK(std::abs(next.item() - x0) < std::abs(zt.item() - x0));
    }
  }

  TEST_CASE("apply_guidance: beta=0 and zero grad are no-ops") {
    Tensor zt = oracle::randn({1, 1, 4, 4}, 5), zn = oracle::randn({1, 1, 4, 4}, 6), g = oracle::randn({1, 1, 4, 4}, 7);
    CHECK(oracle::bit_equal(apply_guidance(zt, zn, g, 0.0f).z, zn));
    CHECK(oracle::bit_equal(apply_guidance(zt, zn, Tensor::zeros({1, 1, 4, 4}), 1.6f).z, zn));
    CHECK_THROWS_AS(apply_guidance(zt, zn, Tensor::zeros({1, 1, 4, 3}), 1.6f), ShapeError);
  }

  TEST_CASE("apply_guidance: normalization identity") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor zt = oracle::randn({1, 4, 8, 8}, 10 + trial), zn = oracle::randn({1, 4, 8, 8}, 40 + trial);
      Tensor g = oracle::randn({1, 4, 8, 8}, 70 + trial, 1e-3f);
      const GuidanceStep s = apply_guidance(zt, zn, g, 1.6f);
      const double ratio = oracle::l2_diff(s.z.data(), zn.data()) / oracle::l2_diff(zt.data(), zn.data());
      CHECK(std::abs(ratio - 1.6) < 1.6e-4);
      CHECK(s.alpha > 0.0f);
    }
  }

  TEST_CASE("guidance_gradient: zero at the predictor's own output") {
    Fixture f;
    Tensor z = oracle::randn({1, 1, 8, 8}, 11);
    const int t = 12;
    Tensor feats;
    {
      NoGradGuard ng;
      const float tn = t_normalized(t, f.sched);
      feats = f.lgp.predict(collect_features(f.ddpm.forward(z, t, 1, true).taps, 8, 8, tn).data, tn);
    }
    GuidanceTarget tgt = f.target(12);
    tgt.map = reshape(feats, {1, 8, 8});
    const GuidanceGradient g = guidance_gradient(z, t, 1, tgt, f.ddpm, f.lgp, f.sched);
    CHECK(g.loss == 0.0f);
    CHECK(oracle::l2(g.grad.data()) == 0.0);
  }

  TEST_CASE("guidance_gradient matches finite differences on 8x8") {
    for (LossKind kind : {LossKind::kSqErr, LossKind::kBce}) {
      Fixture f(kind, 3);
      const GuidanceTarget tgt = f.target(13);
      Tensor z = oracle::randn({1, 1, 8, 8}, 14);
      const int t = 15;
      const GuidanceGradient g = guidance_gradient(z, t, 1, tgt, f.ddpm, f.lgp, f.sched);
      CHECK(g.loss >= 0.0f);
      CHECK(g.loss == doctest::Approx(guidance_loss_at(z, t, 1, tgt, f.ddpm, f.lgp, f.sched)).epsilon(1e-6));
      std::vector<double> analytic, numeric;
      const double h = 1e-3;
      for (int i = 0; i < 64; ++i) {
        Tensor zp = z.clone(), zm = z.clone();
        zp.mutable_data()[i] += static_cast<float>(h);
        zm.mutable_data()[i] -= static_cast<float>(h);
        const double step = static_cast<double>(zp.data()[i]) - zm.data()[i];
        numeric.push_back((static_cast<double>(guidance_loss_at(zp, t, 1, tgt, f.ddpm, f.lgp, f.sched)) -
                           guidance_loss_at(zm, t, 1, tgt, f.ddpm, f.lgp, f.sched)) /
                          step);
        analytic.push_back(g.grad.data()[i]);
      }
      CHECK(oracle::rel_error(analytic, numeric) < 1e-2);
      CHECK_FALSE(f.ddpm.registry().any_requires_grad());
      for (const auto& [name, p] : f.lgp.registry().parameters()) CHECK_FALSE(p.has_grad());
    }
  }

  TEST_CASE("guidance_gradient: shape mismatch and unfrozen models") {
    Fixture f;
    GuidanceTarget tgt = f.target(15);
    tgt.map = Tensor({1, 4, 4}, 0.5f);
    CHECK_THROWS_AS(guidance_gradient(oracle::randn({1, 1, 8, 8}, 16), 5, 1, tgt, f.ddpm, f.lgp, f.sched), ShapeError);
    f.lgp.registry().set_requires_grad(true);
    CHECK_THROWS_AS(guidance_gradient(oracle::randn({1, 1, 8, 8}, 16), 5, 1, f.target(15), f.ddpm, f.lgp, f.sched),
                    UsageError);
  }

  TEST_CASE("small-beta guidance does not increase the re-evaluated loss") {
    Fixture f(LossKind::kSqErr, 5);
    const GuidanceTarget tgt = f.target(17, 0.05f);
    int failures = 0;
    for (int trial = 0; trial < 10; ++trial) {
      Tensor z = oracle::randn({1, 1, 8, 8}, 300 + trial);
      const int t = 10;
      const GuidanceGradient g = guidance_gradient(z, t, 1, tgt, f.ddpm, f.lgp, f.sched);
      Tensor z_next = ddpm_reverse_step(z, g.eps_cond, t, f.sched, Tensor());
      const GuidanceStep gs = apply_guidance(z, z_next, g.grad, tgt.beta);
      const float before = guidance_loss_at(z_next, t - 1, 1, tgt, f.ddpm, f.lgp, f.sched);
      const float after = guidance_loss_at(gs.z, t - 1, 1, tgt, f.ddpm, f.lgp, f.sched);
      if (after > before) ++failures;
    }
    CHECK(failures <= 1);
  }

  TEST_CASE("window: default stop 0.5, saliency window (1, 0.8), validation") {
    Fixture f;
    GuidanceTarget tgt = f.target(19);
    CHECK(tgt.stop_frac == 0.5f);
    CHECK(tgt.start_frac == 1.0f);
    CHECK(tgt.beta == 1.6f);
    const SampleResult r = sample(f.ddpm, &f.lgp, &tgt, f.run(20), f.sched);
    REQUIRE(r.log.size() == Fixture::kSteps);
    int guided = 0;
    for (const auto& e : r.log) {
      const bool g = !std::isnan(e.guidance_loss);
      CHECK(g == (e.t_norm >= 0.5f));
      guided += g;
    }
    CHECK(guided == 11);  // t = 20..10

    tgt.stop_frac = 0.8f;
    const SampleResult s = sample(f.ddpm, &f.lgp, &tgt, f.run(20), f.sched);
    guided = 0;
    for (const auto& e : s.log) guided += !std::isnan(e.guidance_loss);
    CHECK(guided == 5);  // t = 20..16: the first 20% of steps plus the boundary step

    tgt.stop_frac = 1.0f;
    CHECK_THROWS_AS(tgt.validate(), ConfigError);
    tgt.stop_frac = 0.5f;
    tgt.beta = -1.0f;
    CHECK_THROWS_AS(tgt.validate(), ConfigError);
  }

  TEST_CASE("null target and beta=0 give identical samples; seeds reproduce") {
    Fixture f;
    const GuidanceTarget zero = f.target(21, 0.0f);
    const SampleResult a = sample(f.ddpm, &f.lgp, nullptr, f.run(22), f.sched);
    const SampleResult b = sample(f.ddpm, &f.lgp, &zero, f.run(22), f.sched);
    const SampleResult c = sample(f.ddpm, nullptr, nullptr, f.run(22), f.sched);
    CHECK(oracle::bit_equal(a.z0, b.z0));
    CHECK(oracle::bit_equal(a.z0, c.z0));
    const GuidanceTarget tgt = f.target(21);
    CHECK(oracle::bit_equal(sample(f.ddpm, &f.lgp, &tgt, f.run(23), f.sched).z0,
                            sample(f.ddpm, &f.lgp, &tgt, f.run(23), f.sched).z0));
    CHECK_FALSE(oracle::bit_equal(a.z0, sample(f.ddpm, &f.lgp, &tgt, f.run(22), f.sched).z0));
    for (float v : a.image.data()) CHECK((v >= 0.0f && v <= 1.0f));
  }

  TEST_CASE("after the window the trajectory equals the unguided continuation") {
    Fixture f;
    const GuidanceTarget tgt = f.target(24);
    GuidedSampler s(f.ddpm, &f.lgp, f.sched, f.run(25));
    Tensor z = s.initial_noise();
    int t = Fixture::kSteps;
    for (; tgt.active(t, Fixture::kSteps); --t) z = s.step(z, t, &tgt);
    GuidedSampler unguided = s;
    const SampleResult guided_tail = s.run_from(z, t, &tgt);
    const SampleResult plain_tail = unguided.run_from(z, t, nullptr);
    CHECK(oracle::bit_equal(guided_tail.z0, plain_tail.z0));
  }

  TEST_CASE("config checks") {
    Fixture f;
    SampleRunConfig r = f.run(1);
    r.steps = 30;
    CHECK_THROWS_AS(GuidedSampler(f.ddpm, &f.lgp, f.sched, r), ConfigError);
    r = f.run(1);
    r.class_id = 2;
    CHECK_THROWS_AS(GuidedSampler(f.ddpm, &f.lgp, f.sched, r), InputError);
    SampleRunConfig d;
    CHECK(d.steps == 250);
    CHECK(d.cfg_scale == 8.0f);
    CHECK(d.stochastic);
    const SampleRunConfig rt = SampleRunConfig::from_json(f.run(9).to_json());
    CHECK(rt.seed == 9);
    CHECK(rt.class_id == 1);
  }

  TEST_CASE("overhead ratio and trajectory CSV") {
    Fixture f;
    const GuidanceTarget tgt = f.target(26);
    const Overhead o = measure_overhead(f.ddpm, f.lgp, tgt, f.run(27), f.sched);
    CHECK(o.ratio >= 1.0);
    CHECK(o.ratio == doctest::Approx(o.guided_ms / o.unguided_ms));

    const SampleResult r = sample(f.ddpm, &f.lgp, &tgt, f.run(28), f.sched);
    const std::string path = "test_trajectory.csv";
    write_trajectory_csv(path, r.log);
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "step,t_norm,guidance_loss,step_norm,grad_norm,alpha");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == Fixture::kSteps);
    std::remove(path.c_str());
  }
}
