#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "lgd/dataset.hpp"
#include "lgd/errors.hpp"
#include "lgd/spatial_maps.hpp"
#include "oracles.hpp"

using namespace lgd;

TEST_SUITE("spatial_maps") {
  TEST_CASE("constant image has no edges") {
    for (float v : {0.0f, 0.3f, 1.0f}) {
      const SpatialMap e = extract_edges(Tensor({1, 12, 12}, v));
      for (float x : e.data.data()) CHECK(x == 0.0f);
    }
  }

  TEST_CASE("filled rectangle: edges on a thin boundary band, interior empty") {
    const int x0 = 5, y0 = 4, x1 = 15, y1 = 12;
    Tensor img({1, 20, 20}, 0.0f);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) img.mutable_data()[y * 20 + x] = 1.0f;
    const SpatialMap e = extract_edges(img);
    CHECK(e.kind == MapKind::kEdges);
    int on = 0;
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        const float v = e.data.at({0, y, x});
        if (v != 0.0f) {
          ++on;
          CHECK(oracle::near_rect_boundary(x, y, x0, y0, x1, y1));
        }
      }
    // Every boundary pixel of the rectangle itself lies on the band.
    for (int x = x0 + 1; x < x1 - 1; ++x) CHECK(e.data.at({0, y0, x}) == 1.0f);
    CHECK(on > 0);
  }

  TEST_CASE("threshold default and binariness") {
    Tensor img = oracle::uniform({1, 16, 16}, 1, 0.0f, 1.0f);
    const SpatialMap a = extract_edges(img), b = extract_edges(img, 0.5f);
    CHECK(oracle::bit_equal(a.data, b.data));
    for (float v : a.data.data()) CHECK((v == 0.0f || v == 1.0f));
    // Normalized magnitude >= threshold exactly where the map is 1.
    const Tensor mag = sobel_magnitude(img);
    float mx = 0.0f;
    for (float v : mag.data()) mx = std::max(mx, v);
    for (size_t i = 0; i < mag.data().size(); ++i) CHECK((mag.data()[i] / mx >= 0.5f) == (a.data.data()[i] == 1.0f));
  }

  TEST_CASE("edges of an edge map cover the original transitions") {
    Tensor img({1, 16, 16}, 0.0f);
    for (int y = 4; y < 12; ++y)
      for (int x = 4; x < 12; ++x) img.mutable_data()[y * 16 + x] = 1.0f;
    const SpatialMap e1 = extract_edges(img);
    const SpatialMap e2 = extract_edges(e1.data);
    // Each original edge pixel that borders a non-edge pixel stays within one pixel of a second-pass edge.
    for (int y = 1; y < 15; ++y)
      for (int x = 1; x < 15; ++x) {
        if (e1.data.at({0, y, x}) != 1.0f) continue;
        bool near = false;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) near = near || e2.data.at({0, y + dy, x + dx}) == 1.0f;
        CHECK(near);
      }
  }

  TEST_CASE("every constructor validates the [0,1] range") {
    CHECK_THROWS_AS(make_spatial_map(Tensor({1, 2, 2}, 1.5f), MapKind::kSaliency), DomainError);
    CHECK_THROWS_AS(make_spatial_map(Tensor({1, 2, 2}, 0.5f), MapKind::kEdges), DomainError);
    CHECK_THROWS_AS(make_spatial_map(Tensor({2, 2, 2}, 0.5f), MapKind::kSaliency), ShapeError);
    const SpatialMap s = make_saliency(10, 12, 4.0f, 5.0f, 2.0f);
    float peak = 0.0f;
    for (float v : s.data.data()) {
      CHECK((v >= 0.0f && v <= 1.0f));
      peak = std::max(peak, v);
    }
    CHECK(peak == 1.0f);
    CHECK(s.data.at({0, 5, 4}) == 1.0f);
    CHECK(s.data.at({0, 5, 6}) == doctest::Approx(std::exp(-4.0 / 8.0)).epsilon(1e-6));
  }

  TEST_CASE("label maps: constant, ramp, overlap, clipping") {
    const std::vector<LabelRegion> full{{{0, 0, 8, 6}, 1.0f}};
    const SpatialMap constant = make_label_map(6, 8, full);
    for (float v : constant.data.data()) CHECK(v == 1.0f);

    const std::vector<LabelRegion> halves{{{0, 0, 8, 4}, 0.0f}, {{8, 0, 16, 4}, 1.0f}};
    const int blend = 2;
    const SpatialMap ramp = make_label_map(4, 16, halves, blend);
    for (int y = 0; y < 4; ++y) {
      for (int x = 1; x < 16; ++x) CHECK(ramp.data.at({0, y, x}) >= ramp.data.at({0, y, x - 1}));
      // Box-blur oracle: value at x is the fraction of the (2b+1) window at or right of column 8.
      for (int x = 8 - blend - 1; x <= 8 + blend; ++x) {
        const double frac = std::clamp((x + blend - 8 + 1) / double(2 * blend + 1), 0.0, 1.0);
        CHECK(ramp.data.at({0, y, x}) == doctest::Approx(frac).epsilon(1e-6));
      }
    }

    const std::vector<LabelRegion> overlap{{{0, 0, 4, 4}, 0.2f}, {{2, 2, 4, 4}, 0.9f}};
    const SpatialMap o = make_label_map(4, 4, overlap);
    CHECK(o.data.at({0, 3, 3}) == 0.9f);
    CHECK(o.data.at({0, 0, 0}) == 0.2f);
    for (float v : o.data.data()) CHECK((v >= 0.0f && v <= 1.0f));
    const std::vector<LabelRegion> bad{{{0, 0, 2, 2}, 1.2f}};
    CHECK_THROWS_AS(make_label_map(4, 4, bad), DomainError);
  }

  TEST_CASE("identity encoder is exact") {
    const Encoder id = Encoder::identity();
    CHECK(id.latent_channels() == 1);
    CHECK(id.downsample() == 1);
    const SpatialMap m = make_saliency(8, 8, 3.0f, 3.0f, 2.0f);
    CHECK(oracle::bit_equal(encode_map(m, id), m.data));
    Tensor x = oracle::uniform({2, 1, 8, 8}, 2, 0.0f, 1.0f);
    CHECK(oracle::bit_equal(id.decode(id.encode(x)), x));
  }

  TEST_CASE("tiny_ae: shapes and replication") {
    const Encoder ae = Encoder::tiny_ae(3);
    CHECK(ae.latent_channels() == 4);
    CHECK(ae.downsample() == 4);
    const SpatialMap m = make_saliency(16, 16, 8.0f, 8.0f, 3.0f);
    CHECK(encode_map(m, ae).shape() == Shape{4, 4, 4});
    Tensor x = oracle::uniform({2, 1, 8, 8}, 4, 0.0f, 1.0f);
    const Tensor r = Encoder::replicate_channels(x);
    CHECK(r.shape() == Shape{2, 3, 8, 8});
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 64; ++i) CHECK(r.data()[(n * 3 + c) * 64 + i] == x.data()[n * 64 + i]);
    CHECK(ae.decode(ae.encode(x)).shape() == x.shape());
    CHECK_THROWS_AS(ae.encode(oracle::uniform({1, 1, 6, 6}, 5, 0.0f, 1.0f)), ShapeError);
  }

  TEST_CASE("tiny_ae training reconstructs held-out shapes") {
    // Working resolution of the experiments; at 16x16 the 4x4 latent is too
    // coarse to reach the reconstruction bound.
    const int size = 32;
    GenConfig g;
    g.n = 240;
    g.size = size;
    g.seed = 6;
    const ShapesCorpus train = gen_dataset(g);
    g.n = 40;
    g.seed = 7;
    const ShapesCorpus held = gen_dataset(g);
    std::vector<Tensor> imgs;
    for (const auto& it : train.items) imgs.push_back(it.image);
    Encoder ae = Encoder::tiny_ae(8);
    Rng rng(9);
    AeTrainConfig cfg;
    train_tiny_ae(ae, imgs, cfg, rng);

    NoGradGuard ng;
    double err = 0.0;
    for (const auto& it : held.items) {
      const Tensor x = reshape(it.image, {1, 1, size, size});
      const Tensor y = ae.decode(ae.encode(x));
      for (int i = 0; i < size * size; ++i) err += std::pow(y.data()[i] - x.data()[i], 2);
    }
    err /= 40.0 * size * size;
    CHECK(err < 0.01);

    const Tensor blank({1, 1, size, size}, 0.0f);
    const Tensor rec = ae.decode(ae.encode(blank));
    double mad = 0.0;
    for (float v : rec.data()) mad += std::abs(v);
    CHECK(mad / (size * size) < 0.02);
  }

  TEST_CASE("PGM round trip and malformed input") {
    const std::string path = "test_map.pgm";
    Tensor img({1, 5, 7}, 0.0f);
    for (int i = 0; i < 35; ++i) img.mutable_data()[i] = static_cast<float>(i % 256) / 255.0f;
    write_pgm(path, img);
    CHECK(oracle::bit_equal(read_pgm(path), img));
    {
      std::ofstream f(path, std::ios::binary);
      f << "P5\n# comment\n4 2\n255\n" << std::string(3, '\x10');
    }
    CHECK_THROWS_AS(read_pgm(path), InputError);
    {
      std::ofstream f(path, std::ios::binary);
      f << "P2\n1 1\n255\n0\n";
    }
    CHECK_THROWS_AS(read_pgm(path), InputError);
    CHECK_THROWS_AS(read_pgm("does_not_exist.pgm"), InputError);
    std::remove(path.c_str());
  }
}
