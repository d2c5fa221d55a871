#include <numeric>

#include "doctest.h"
#include "lgd/errors.hpp"
#include "lgd/unet.hpp"
#include "oracles.hpp"

using namespace lgd;

namespace {

UNetConfig small_config(int size = 8) {
  UNetConfig c;
  c.image_size = size;
  c.base_width = 16;
  c.emb_dim = 32;
  c.num_classes = 3;
  return c;
}

// Zero-initialized output convolutions make a fresh network's eps identically
// zero; give them small random weights so every path carries signal.
void randomize_zero_init(UNet& net, uint64_t seed) {
  for (const auto& [name, handle] : net.registry().parameters())
    if (name.find("conv2") != std::string::npos || name.find("conv_out") != std::string::npos) {
      Tensor p = handle;
      const Tensor r = oracle::randn(p.shape(), ++seed, 0.05f);
      std::copy_n(r.data().begin(), p.numel(), p.mutable_data().begin());
    }
}

}  // namespace

TEST_SUITE("denoiser") {
  TEST_CASE("default layout: 9 taps, eps shape equals input shape") {
    UNet net(UNetConfig{}, 1);
    CHECK(net.tap_spec().size() == 9);
    Tensor z = oracle::randn({2, 1, 32, 32}, 2);
    UNetOutput out = net.forward(z, 100, 1, true);
    CHECK(out.eps.shape() == z.shape());
    REQUIRE(out.taps.size() == 9);
    const auto ch = net.tap_channels();
    for (size_t i = 0; i < 9; ++i) CHECK(out.taps[i].dim(1) == ch[i]);
    CHECK(net.feature_channels() == std::accumulate(ch.begin(), ch.end(), int64_t{0}));
  }

  TEST_CASE("determinism and tap collection do not perturb eps") {
    UNet net(small_config(), 3);
    Tensor z = oracle::randn({1, 1, 8, 8}, 4);
    randomize_zero_init(net, 5);
    UNetOutput a = net.forward(z, 7, 2, true), b = net.forward(z, 7, 2, true), c = net.forward(z, 7, 2, false);
    CHECK(oracle::bit_equal(a.eps, b.eps));
    CHECK(oracle::bit_equal(a.eps, c.eps));
    CHECK(oracle::l2(a.eps.data()) > 0.0);
    for (size_t i = 0; i < a.taps.size(); ++i) CHECK(oracle::bit_equal(a.taps[i], b.taps[i]));
    CHECK(c.taps.empty());
  }

  TEST_CASE("unknown class id is an input error; unconditional is allowed") {
    UNet net(small_config(), 6);
    Tensor z = oracle::randn({1, 1, 8, 8}, 7);
    CHECK_THROWS_AS(net.forward(z, 5, 3, false), InputError);
    CHECK_NOTHROW(net.forward(z, 5, std::nullopt, false));
    CHECK_THROWS_AS(net.forward(z, 0, 1, false), RangeError);
    CHECK_THROWS_AS(net.forward(oracle::randn({1, 2, 8, 8}, 8), 5, 1, false), ShapeError);
  }

  TEST_CASE("unknown tap names are rejected") {
    UNetConfig c = small_config();
    c.taps = {"down0", "nope"};
    CHECK_THROWS_AS(UNet(c, 1), ConfigError);
  }

  TEST_CASE("collect_features: single tap, additivity, order") {
    Tensor a = oracle::randn({1, 32, 8, 8}, 9), b = oracle::randn({1, 64, 4, 4}, 10), c = oracle::randn({1, 32, 2, 2}, 11);
    CHECK(oracle::bit_equal(collect_features({a}, 8, 8, 0.5f).data, a));
    FeatureStack fs = collect_features({a, b, c}, 8, 8, 0.5f);
    CHECK(fs.channels() == 128);
    CHECK(fs.data.dim(2) == 8);
    CHECK(fs.t_norm == 0.5f);

    // Permuted tap spec permutes the channel blocks.
    UNetConfig c1 = small_config(), c2 = small_config();
    c1.taps = {"down0", "mid1", "up0"};
    c2.taps = {"up0", "down0", "mid1"};
    UNet n1(c1, 12), n2(c2, 12);
    Tensor z = oracle::randn({1, 1, 8, 8}, 13);
    FeatureStack f1 = collect_features(n1.forward(z, 9, 0, true).taps, 8, 8, 0.1f);
    FeatureStack f2 = collect_features(n2.forward(z, 9, 0, true).taps, 8, 8, 0.1f);
    const auto w1 = n1.tap_channels();
    // Block offsets in f1: down0 @0, mid1 @w0, up0 @w0+w1. In f2: up0 @0, down0 @w2, mid1 @w2+w0.
    const int64_t d0 = w1[0], m1 = w1[1], u0 = w1[2];
    auto block_equal = [&](int64_t off1, int64_t off2, int64_t width) {
      for (int64_t ch = 0; ch < width; ++ch)
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j)
            if (f1.data.at({0, off1 + ch, i, j}) != f2.data.at({0, off2 + ch, i, j})) return false;
      return true;
    };
    CHECK(block_equal(0, u0, d0));
    CHECK(block_equal(d0, u0 + d0, m1));
    CHECK(block_equal(d0 + m1, 0, u0));
  }

  TEST_CASE("cfg_combine identities") {
    Tensor e = oracle::randn({1, 1, 4, 4}, 14), u = oracle::randn({1, 1, 4, 4}, 15);
    CHECK(oracle::bit_equal(cfg_combine(e, u, 1.0f), e));
    CHECK(oracle::bit_equal(cfg_combine(e, u, 0.0f), u));
    for (float s : {0.0f, 2.5f, 8.0f}) CHECK(oracle::bit_equal(cfg_combine(e, e, s), e));
    Tensor y = cfg_combine(e, u, 8.0f);
    for (int i = 0; i < 16; ++i)
      CHECK(y.data()[i] == doctest::Approx(u.data()[i] + 8.0 * (e.data()[i] - u.data()[i])).epsilon(1e-6));
  }

  TEST_CASE("end-to-end FD through the network on an 8x8 input") {
    UNet net(small_config(), 16);
    randomize_zero_init(net, 100);
    Tensor z = oracle::randn({1, 1, 8, 8}, 17);
    std::vector<Tensor> wrt{z};
    for (const auto& [name, p] : net.registry().parameters())
      if (name == "conv_in.weight" || name == "mid0.conv1.weight" || name == "up0.conv2.weight") wrt.push_back(p);
    auto probes = oracle::random_probes(wrt, 24, 18);
    const double err = oracle::fd_gradient_error(
        [&] {
          UNetOutput o = net.forward(z, 40, 1, true);
          return concat_channels({o.eps, resize_nearest(o.taps[4], 8, 8)});
        },
        wrt, 19, 1e-3, probes);
    CHECK(err < 1e-2);
  }

  TEST_CASE("train_ddpm: initial loss near 1, decreasing, reproducible") {
    Rng data_rng(20);
    std::vector<LabeledImage> corpus;
    for (int i = 0; i < 12; ++i) {
      Tensor img({1, 8, 8}, 0.0f);
      const int x0 = static_cast<int>(data_rng.uniform_int(0, 3)), y0 = static_cast<int>(data_rng.uniform_int(0, 3));
      for (int y = y0; y < y0 + 4; ++y)
        for (int x = x0; x < x0 + 4; ++x) img.mutable_data()[y * 8 + x] = 1.0f;
      corpus.push_back({img, i % 3});
    }
    const NoiseSchedule sched = build_schedule(50, ScheduleKind::kCosine);
    DdpmTrainConfig cfg;
    cfg.steps = 300;
    cfg.batch = 8;
    cfg.lr = 2e-3f;
    auto train = [&] {
      UNet net(small_config(), 21);
      Rng rng(22);
      TrainLog log = train_ddpm(net, corpus, sched, cfg, rng);
      return std::make_pair(std::move(net), log);
    };
    auto [net, log] = train();
    REQUIRE(log.losses.size() == 300);
    CHECK(log.losses.front() == doctest::Approx(1.0).epsilon(0.3));
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 20; ++i) head += log.losses[i], tail += log.losses[280 + i];
    CHECK(tail < 0.5 * head);
    CHECK_FALSE(net.registry().any_requires_grad());

    auto [net2, log2] = train();
    CHECK(log.losses == log2.losses);
    const auto s1 = net.registry().state(), s2 = net2.registry().state();
    for (const auto& [name, t] : s1) CHECK(oracle::bit_equal(t, s2.at(name)));

    std::vector<LabeledImage> empty;
    Rng r(1);
    UNet n3(small_config(), 1);
    CHECK_THROWS_AS(train_ddpm(n3, empty, sched, cfg, r), ConfigError);
  }
}
