#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "eli/layers.hpp"
#include "test_support.hpp"

namespace eli {
namespace {

using testing::check_jacobian;
using testing::random_tensor;

TEST(ParameterStoreTest, NamesAreUniqueAndOrdered) {
  ParameterStore s;
  s.add("a", Tensor::zeros({2}));
  s.add("b", Tensor::zeros({3, 2}));
  EXPECT_THROW(s.add("a", Tensor::zeros({1})), std::invalid_argument);
  EXPECT_EQ(s.index("b"), 1u);
  EXPECT_EQ(s.parameter_count(), 8u);
  EXPECT_THROW(s.get("c"), std::out_of_range);
  EXPECT_THROW(s.set(0, Tensor::zeros({3})), std::invalid_argument);
}

TEST(Dense, IdentityWeightsPassInputThrough) {
  Graph g;
  const DenseParams p{g.constant(Tensor::eye(4)), g.constant(Tensor::zeros({4}))};
  const Tensor x = Tensor::vector({1, -2, 3, 0.5});
  EXPECT_EQ(max_abs_diff(dense(p, g.constant(x)).value(), x), 0.0);
}

TEST(Dense, MlpHeadShapesChain) {
  Rng rng(1);
  ParameterStore s;
  init_dense(s, "fc0", 4096, 1024, rng);
  init_dense(s, "fc1", 1024, 32, rng);
  Graph g;
  BoundParameters p(g, s, false);
  const Var h = dense(bind_dense(p, "fc0"), g.constant(Tensor::zeros({4096})));
  EXPECT_EQ(h.shape(), (Shape{1024}));
  EXPECT_EQ(dense(bind_dense(p, "fc1"), h).shape(), (Shape{32}));
  EXPECT_THROW(dense(bind_dense(p, "fc1"), g.constant(Tensor::zeros({4096}))),
               std::invalid_argument);
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  const Tensor w = random_tensor({3, 8}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor x = random_tensor({8}, rng);
  const auto wrt_x = check_jacobian(
      [&](Graph& g, Var v) { return dense({g.constant(w), g.constant(b)}, v); }, x);
  const auto wrt_w = check_jacobian(
      [&](Graph& g, Var v) { return dense({v, g.constant(b)}, g.constant(x)); }, w);
  const auto wrt_b = check_jacobian(
      [&](Graph& g, Var v) { return dense({g.constant(w), v}, g.constant(x)); }, b);
  EXPECT_LT(wrt_x.max_mixed, 1e-6);
  EXPECT_LT(wrt_w.max_mixed, 1e-6);
  EXPECT_LT(wrt_b.max_mixed, 1e-6);
  const Tensor batch = random_tensor({5, 8}, rng);
  EXPECT_LT(check_jacobian([&](Graph& g, Var v) { return dense({g.constant(w), v}, g.constant(batch)); }, b)
                .max_mixed,
            1e-6);
}

LstmCellParams constant_cell(Graph& g, const Tensor& wx, const Tensor& wh, const Tensor& b) {
  return {g.constant(wx), g.constant(wh), g.constant(b)};
}

TEST(LstmCell, ZeroParametersGiveZeroState) {
  std::mt19937_64 rng(3);
  Graph g;
  const auto p = constant_cell(g, Tensor::zeros({20, 7}), Tensor::zeros({20, 5}), Tensor::zeros({20}));
  const auto out = lstm_cell_step(p, g.constant(random_tensor({7}, rng)),
                                  g.constant(random_tensor({5}, rng)), g.constant(Tensor::zeros({5})));
  EXPECT_EQ(max_abs(out.c.value()), 0.0);
  EXPECT_EQ(max_abs(out.h.value()), 0.0);
}

TEST(LstmCell, SaturatedForgetGateCarriesMemory) {
  std::mt19937_64 rng(4);
  std::vector<double> b(20, 0.0);
  for (std::size_t i = 5; i < 10; ++i) b[i] = 20.0;
  Graph g;
  const auto p = constant_cell(g, Tensor::zeros({20, 7}), Tensor::zeros({20, 5}),
                               Tensor(Shape{20}, b));
  const Tensor c = random_tensor({5}, rng);
  const auto out = lstm_cell_step(p, g.constant(random_tensor({7}, rng)),
                                  g.constant(random_tensor({5}, rng)), g.constant(c));
  EXPECT_LT(max_abs_diff(out.c.value(), c), 1e-8);
}

TEST(LstmCell, JacobianMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(10 + seed);
    const Tensor wx = random_tensor({16, 6}, rng);
    const Tensor wh = random_tensor({16, 4}, rng);
    const Tensor b = random_tensor({16}, rng);
    // Input vector packs (x, h, c).
    const Tensor xhc = random_tensor({14}, rng, -2.0, 2.0);
    const auto c = check_jacobian(
        [&](Graph& g, Var v) {
          const auto out = lstm_cell_step(constant_cell(g, wx, wh, b), slice(v, 0, 0, 6),
                                          slice(v, 0, 6, 4), slice(v, 0, 10, 4));
          return concat({out.h, out.c}, 0);
        },
        xhc);
    EXPECT_LT(c.max_abs, 1e-5);
    for (int which = 0; which < 3; ++which) {
      const Tensor& param = which == 0 ? wx : which == 1 ? wh : b;
      const auto cp = check_jacobian(
          [&](Graph& g, Var v) {
            LstmCellParams q = constant_cell(g, wx, wh, b);
            if (which == 0) q.input_weights = v;
            if (which == 1) q.recurrent_weights = v;
            if (which == 2) q.biases = v;
            const Var in = g.constant(xhc);
            const auto out = lstm_cell_step(q, slice(in, 0, 0, 6), slice(in, 0, 6, 4), slice(in, 0, 10, 4));
            return concat({out.h, out.c}, 0);
          },
          param);
      EXPECT_LT(cp.max_abs, 1e-5) << "param " << which;
    }
  }
}

TEST(LstmCell, BatchedRowsMatchSingleSteps) {
  std::mt19937_64 rng(5);
  Graph g;
  const auto p = constant_cell(g, random_tensor({12, 4}, rng), random_tensor({12, 3}, rng),
                               random_tensor({12}, rng));
  const Tensor x = random_tensor({2, 4}, rng), h = random_tensor({2, 3}, rng),
               c = random_tensor({2, 3}, rng);
  const auto batched = lstm_cell_step(p, g.constant(x), g.constant(h), g.constant(c));
  for (std::size_t r = 0; r < 2; ++r) {
    auto row = [&](const Tensor& t) { return reshape(slice(g.constant(t), 0, r, 1), {t.dim(1)}); };
    const auto single = lstm_cell_step(p, row(x), row(h), row(c));
    EXPECT_LT(max_abs_diff(single.h.value(), reshape(slice(batched.h, 0, r, 1), {3}).value()), 1e-15);
    EXPECT_LT(max_abs_diff(single.c.value(), reshape(slice(batched.c, 0, r, 1), {3}).value()), 1e-15);
  }
  EXPECT_THROW(lstm_cell_step(p, g.constant(Tensor::zeros({5})), g.constant(Tensor::zeros({3})),
                              g.constant(Tensor::zeros({3}))),
               std::invalid_argument);
}

std::vector<LstmCellParams> init_stack(const StackConfig& cfg, ParameterStore& store, Graph& g,
                                       Rng& rng) {
  const auto dims = lstm_input_dims(cfg);
  for (std::size_t n = 0; n < cfg.layers; ++n) {
    init_lstm_cell(store, "lstm" + std::to_string(n), dims[n], cfg.units, rng);
  }
  BoundParameters p(g, store, false);
  std::vector<LstmCellParams> cells;
  for (std::size_t n = 0; n < cfg.layers; ++n) cells.push_back(bind_lstm_cell(p, "lstm" + std::to_string(n)));
  return cells;
}

TEST(LstmStack, LayerWidthsAtPaperSize) {
  StackConfig with;
  EXPECT_EQ(lstm_input_dims(with), (std::vector<std::size_t>{56, 432, 432, 432, 432, 432}));
  EXPECT_EQ(head_input_dim(with), 432u);
  StackConfig without;
  without.each_layer_input = false;
  EXPECT_EQ(lstm_input_dims(without), (std::vector<std::size_t>{56, 400, 400, 400, 400, 400}));
  EXPECT_EQ(head_input_dim(without), 400u);

  Rng rng(6);
  ParameterStore store;
  Graph g;
  const auto cells = init_stack(with, store, g, rng);
  const auto out = lstm_stack_step(with, cells, g.constant(Tensor::zeros({24})),
                                   g.constant(Tensor::zeros({32})), constant_state(g, zero_state(with)));
  EXPECT_EQ(out.features.shape(), (Shape{432}));
  EXPECT_EQ(out.state.h.size(), 6u);
}

TEST(LstmStack, ZeroEverythingGivesZeroOutput) {
  StackConfig cfg;
  cfg.layers = 3;
  cfg.units = 8;
  Graph g;
  std::vector<LstmCellParams> cells;
  for (std::size_t in : lstm_input_dims(cfg)) {
    cells.push_back(constant_cell(g, Tensor::zeros({32, in}), Tensor::zeros({32, 8}), Tensor::zeros({32})));
  }
  const auto out = lstm_stack_step(cfg, cells, g.constant(Tensor::zeros({24})),
                                   g.constant(Tensor::zeros({32})), constant_state(g, zero_state(cfg)));
  EXPECT_EQ(max_abs(out.features.value()), 0.0);
}

TEST(LstmStack, RejectsWrongInputWidths) {
  StackConfig cfg;
  cfg.layers = 2;
  cfg.units = 4;
  Rng rng(7);
  ParameterStore store;
  Graph g;
  const auto cells = init_stack(cfg, store, g, rng);
  const auto state = constant_state(g, zero_state(cfg));
  EXPECT_THROW(lstm_stack_step(cfg, cells, g.constant(Tensor::zeros({24})),
                               g.constant(Tensor::zeros({31})), state),
               std::invalid_argument);
  EXPECT_THROW(lstm_stack_step(cfg, cells, g.constant(Tensor::zeros({23})),
                               g.constant(Tensor::zeros({32})), state),
               std::invalid_argument);
}

// With the z columns of every upper layer zeroed and the remaining weights
// shared, both stacks compute the same hidden states.
TEST(LstmStack, BaselineMatchesInjectionWithSilencedUpperPaths) {
  StackConfig with;
  with.layers = 3;
  with.units = 5;
  StackConfig without = with;
  without.each_layer_input = false;
  Rng rng(8);
  ParameterStore base_store;
  Graph g;
  const auto base_cells = init_stack(without, base_store, g, rng);
  std::vector<LstmCellParams> inj_cells = base_cells;
  for (std::size_t n = 1; n < with.layers; ++n) {
    const Tensor& w = base_cells[n].input_weights.value();
    std::vector<double> wide(w.dim(0) * (with.units + 32), 0.0);
    for (std::size_t r = 0; r < w.dim(0); ++r) {
      for (std::size_t k = 0; k < with.units; ++k) wide[r * (with.units + 32) + k] = w.at(r, k);
    }
    inj_cells[n].input_weights = g.constant(Tensor(Shape{w.dim(0), with.units + 32}, wide));
  }
  std::mt19937_64 data(9);
  LstmVarState s_base = constant_state(g, zero_state(without));
  LstmVarState s_inj = constant_state(g, zero_state(with));
  for (int t = 0; t < 4; ++t) {
    const Var j = g.constant(random_tensor({24}, data));
    const Var z = g.constant(random_tensor({32}, data));
    const auto a = lstm_stack_step(without, base_cells, j, z, s_base);
    const auto b = lstm_stack_step(with, inj_cells, j, z, s_inj);
    for (std::size_t n = 0; n < with.layers; ++n) {
      EXPECT_LT(max_abs_diff(a.state.h[n].value(), b.state.h[n].value()), 1e-15);
    }
    s_base = a.state;
    s_inj = b.state;
  }
}

// Head features as a function of z; each-layer input must let every layer
// carry signal from z.
TEST(LstmStack, JacobianThroughStackMatchesFiniteDifferences) {
  for (bool inject : {true, false}) {
    StackConfig cfg;
    cfg.layers = 3;
    cfg.units = 4;
    cfg.each_layer_input = inject;
    Rng rng(11);
    ParameterStore store;
    Graph scratch;
    init_stack(cfg, store, scratch, rng);
    std::mt19937_64 data(12);
    const Tensor j0 = random_tensor({24}, data), j1 = random_tensor({24}, data);
    const Tensor z = random_tensor({32}, data);
    const auto c = check_jacobian(
        [&](Graph& g, Var v) {
          BoundParameters p(g, store, false);
          std::vector<LstmCellParams> cells;
          for (std::size_t n = 0; n < cfg.layers; ++n) cells.push_back(bind_lstm_cell(p, "lstm" + std::to_string(n)));
          auto s = constant_state(g, zero_state(cfg));
          s = lstm_stack_step(cfg, cells, g.constant(j0), v, s).state;
          return lstm_stack_step(cfg, cells, g.constant(j1), v, s).features;
        },
        z);
    EXPECT_LT(c.max_abs, 1e-5) << "inject=" << inject;
  }
}

TEST(SpatialSoftmax, UniformMapIsCentered) {
  Graph g;
  const Var out = spatial_softmax(g.constant(Tensor::full({3, 7, 5}, 0.3)));
  EXPECT_LT(max_abs(out.value()), 1e-15);
}

TEST(SpatialSoftmax, PeakAtCornerGivesCornerCoordinates) {
  std::vector<double> m(64, 0.0);
  m[0] = 40.0;
  Graph g;
  const Tensor out = spatial_softmax(g.constant(Tensor(Shape{1, 8, 8}, m))).value();
  EXPECT_NEAR(out[0], -1.0, 1e-10);
  EXPECT_NEAR(out[1], -1.0, 1e-10);
}

Tensor blob_map(std::size_t channels, std::size_t h, std::size_t w, std::size_t cy, std::size_t cx,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 5.0);
  std::vector<double> m(channels * h * w, -40.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = cy; y < cy + 4; ++y) {
      for (std::size_t x = cx; x < cx + 3; ++x) m[(c * h + y) * w + x] = dist(rng);
    }
  }
  return Tensor(Shape{channels, h, w}, m);
}

Tensor circular_shift(const Tensor& t, std::size_t du, std::size_t dv) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::vector<double> out(t.size());
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out[(k * h + (y + dv) % h) * w + (x + du) % w] = t[(k * h + y) * w + x];
      }
    }
  }
  return Tensor(t.shape(), out);
}

TEST(SpatialSoftmax, InteriorShiftMovesCoordinatesExactly) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t h = 12, w = 15, du = 1 + seed % 5, dv = seed % 4;
    const Tensor base = blob_map(3, h, w, 3, 2, rng);
    Graph g;
    const Tensor a = spatial_softmax(g.constant(base)).value();
    const Tensor b = spatial_softmax(g.constant(circular_shift(base, du, dv))).value();
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(b[c] - a[c], 2.0 * du / (w - 1.0), 1e-6);
      EXPECT_NEAR(b[3 + c] - a[3 + c], 2.0 * dv / (h - 1.0), 1e-6);
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_LE(std::abs(a[i]), 1.0);
      EXPECT_LE(std::abs(b[i]), 1.0);
    }
  }
}

TEST(SpatialSoftmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const auto c = check_jacobian([](Graph&, Var v) { return spatial_softmax(v); },
                                random_tensor({2, 2, 4, 5}, rng, -3.0, 3.0));
  EXPECT_LT(c.max_abs, 1e-5);
}

EncoderConfig paper_mlp() { return EncoderConfig{}; }

EncoderConfig paper_ss() {
  EncoderConfig cfg;
  cfg.kind = EncoderConfig::Kind::kCnnSpatialSoftmax;
  cfg.conv_channels = {16, 16, 16, 16};
  return cfg;
}

TEST(CnnMlpEncoder, ShapeTraceAtPaperSize) {
  const EncoderConfig cfg = paper_mlp();
  Rng rng(14);
  ParameterStore store;
  init_encoder(store, cfg, rng);
  EXPECT_EQ(store.get("enc.fc0.weight").shape(), (Shape{1024, 4096}));
  Graph g;
  BoundParameters p(g, store, false);
  std::mt19937_64 data(15);
  const Var z = cnn_mlp_encode(cfg, p, g.constant(random_tensor({3, 64, 64}, data, 0.0, 1.0)));
  EXPECT_EQ(z.shape(), (Shape{32}));
  const Var zb = cnn_mlp_encode(cfg, p, g.constant(random_tensor({2, 3, 64, 64}, data, 0.0, 1.0)));
  EXPECT_EQ(zb.shape(), (Shape{2, 32}));
  EXPECT_THROW(cnn_mlp_encode(cfg, p, g.constant(Tensor::zeros({3, 32, 32}))), std::invalid_argument);
}

TEST(CnnMlpEncoder, ZeroImageAndBiasesGiveZeroFeatures) {
  const EncoderConfig cfg = paper_mlp();
  Rng rng(16);
  ParameterStore store;
  init_encoder(store, cfg, rng);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.name(i).ends_with(".bias")) store.set(i, zeros_like(store.value(i)));
  }
  Graph g;
  BoundParameters p(g, store, false);
  EXPECT_EQ(max_abs(cnn_mlp_encode(cfg, p, g.constant(Tensor::zeros({3, 64, 64}))).value()), 0.0);
}

// Sum of features against a 4x4 patch of the image in every channel.
TEST(CnnMlpEncoder, PatchGradientMatchesFiniteDifferences) {
  const EncoderConfig cfg = paper_mlp();
  Rng rng(17);
  ParameterStore store;
  init_encoder(store, cfg, rng);
  std::mt19937_64 data(18);
  const Tensor image = random_tensor({3, 64, 64}, data, 0.0, 1.0);
  const Tensor patch = random_tensor({3, 4, 4}, data, 0.0, 1.0);
  const std::size_t y0 = 30, x0 = 21;
  auto with_patch = [&](Graph& g, Var v) {
    // image with the patch region replaced by v
    std::vector<double> mask(image.size(), 1.0);
    std::vector<double> place(image.size() * patch.size(), 0.0);
    std::size_t k = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x, ++k) {
          const std::size_t idx = (c * 64 + y0 + y) * 64 + x0 + x;
          mask[idx] = 0.0;
          place[idx * patch.size() + k] = 1.0;
        }
      }
    }
    const Var placed = matmul(g.constant(Tensor(Shape{image.size(), patch.size()}, place)),
                              reshape(v, {patch.size(), 1}));
    const Var img = add(mul(g.constant(image), g.constant(Tensor(image.shape(), mask))),
                        reshape(placed, image.shape()));
    BoundParameters p(g, store, false);
    return sum(cnn_mlp_encode(cfg, p, img));
  };
  const auto c = check_jacobian(with_patch, patch);
  EXPECT_LT(c.max_mixed, 1e-4);
}

TEST(CnnSsEncoder, ShapeTraceAndConstantImage) {
  const EncoderConfig cfg = paper_ss();
  Rng rng(19);
  ParameterStore store;
  init_encoder(store, cfg, rng);
  EXPECT_EQ(store.get("enc.conv3.weight").shape(), (Shape{16, 16, 3, 3}));
  Graph g;
  BoundParameters p(g, store, false);
  std::mt19937_64 data(20);
  EXPECT_EQ(cnn_ss_encode(cfg, p, g.constant(random_tensor({3, 64, 64}, data, 0.0, 1.0))).shape(),
            (Shape{32}));
  EncoderConfig bad = cfg;
  bad.conv_channels = {16, 8};
  ParameterStore unused;
  EXPECT_THROW(init_encoder(unused, bad, rng), std::invalid_argument);
}

Tensor blob_image(std::size_t x0, std::size_t y0) {
  std::vector<double> v(3 * 64 * 64, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = y0; y < y0 + 6; ++y) {
      for (std::size_t x = x0; x < x0 + 6; ++x) v[(c * 64 + y) * 64 + x] = c == 1 ? 0.5 : 1.0;
    }
  }
  return Tensor(Shape{3, 64, 64}, v);
}

// Four 3x3 layers see 4 px, so away from the border the maps of a shifted
// blob are the shifted maps.
TEST(CnnSsEncoder, BlobShiftTranslatesFeatureMaps) {
  const EncoderConfig cfg = paper_ss();
  Rng rng(21);
  ParameterStore store;
  init_encoder(store, cfg, rng);
  Graph g;
  BoundParameters p(g, store, false);
  const Tensor a = cnn_ss_feature_maps(cfg, p, g.constant(blob_image(24, 28))).value();
  const Tensor b = cnn_ss_feature_maps(cfg, p, g.constant(blob_image(28, 28))).value();
  double worst = 0.0;
  for (std::size_t c = 0; c < 16; ++c) {
    for (std::size_t y = 4; y < 60; ++y) {
      for (std::size_t x = 4; x < 56; ++x) {
        worst = std::max(worst, std::abs(b[(c * 64 + y) * 64 + x + 4] - a[(c * 64 + y) * 64 + x]));
      }
    }
  }
  EXPECT_LT(worst, 1e-12);
}

// With a peaked map (as training produces) the expected coordinate follows
// the blob by 2*4/63. Peaking here comes from scaling the last layer.
TEST(CnnSsEncoder, PeakedChannelFollowsBlob) {
  const EncoderConfig cfg = paper_ss();
  Rng rng(22);
  ParameterStore store;
  init_encoder(store, cfg, rng);
  Graph g;
  BoundParameters p(g, store, false);
  const Var maps_a = cnn_ss_feature_maps(cfg, p, g.constant(blob_image(24, 28)));
  const Var maps_b = cnn_ss_feature_maps(cfg, p, g.constant(blob_image(28, 28)));
  // dominant channel: largest peak-over-median contrast
  std::size_t best = 0;
  double contrast = -1.0;
  for (std::size_t c = 0; c < 16; ++c) {
    std::vector<double> plane(maps_a.value().data() + c * 4096, maps_a.value().data() + (c + 1) * 4096);
    std::nth_element(plane.begin(), plane.begin() + 2048, plane.end());
    const double med = plane[2048];
    const double peak = *std::max_element(plane.begin(), plane.end());
    if (peak - med > contrast) {
      contrast = peak - med;
      best = c;
    }
  }
  const double gain = 60.0 / contrast;
  const Tensor a = spatial_softmax(scale(maps_a, gain)).value();
  const Tensor b = spatial_softmax(scale(maps_b, gain)).value();
  EXPECT_NEAR(b[best] - a[best], 8.0 / 63.0, 1e-3);
}

TEST(CnnSsEncoder, ConstantImageGivesNearlyCenteredFeatures) {
  const EncoderConfig cfg = paper_ss();
  Rng rng(23);
  ParameterStore store;
  init_encoder(store, cfg, rng);
  Graph g;
  BoundParameters p(g, store, false);
  const Tensor maps = cnn_ss_feature_maps(cfg, p, g.constant(Tensor::full({3, 64, 64}, 0.5))).value();
  // interior is exactly uniform; zero padding perturbs a 4 px frame
  for (std::size_t c = 0; c < 16; ++c) {
    const double ref = maps[(c * 64 + 32) * 64 + 32];
    for (std::size_t y = 4; y < 60; ++y) {
      for (std::size_t x = 4; x < 60; ++x) EXPECT_NEAR(maps[(c * 64 + y) * 64 + x], ref, 1e-12);
    }
  }
  EXPECT_LT(max_abs(spatial_softmax(g.constant(maps)).value()), 1e-2);
}

}  // namespace
}  // namespace eli
