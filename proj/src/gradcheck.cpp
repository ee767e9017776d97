#include "eli/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "eli/analysis.hpp"
#include "eli/config.hpp"
#include "eli/simd/kernels.hpp"

namespace eli {
namespace {

using Rng64 = std::mt19937_64;

std::vector<double> randn(std::size_t n, Rng64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

Tensor randt(Shape shape, Rng64& rng, double s = 1.0) {
  std::vector<double> v = randn(element_count(shape), rng);
  for (double& x : v) x *= s;
  return Tensor(std::move(shape), std::move(v));
}

// |a - b| / (1 + |b|), worst entry
double rel_gap(const double* a, const double* b, std::size_t n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / (1.0 + std::abs(b[i])));
  }
  return worst;
}

double rel_gap(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) return INFINITY;
  return rel_gap(a.data(), b.data(), a.size());
}

std::vector<CheckResult> simd_checks(Rng64& rng) {
  const simd::KernelTable* fast = simd::avx2_table();
  const char* names[] = {"simd.gemm", "simd.dot",  "simd.axpy", "simd.add",
                         "simd.mul",  "simd.relu", "simd.relu_backward"};
  std::vector<CheckResult> out;
  if (!fast || !simd::cpu_supports(simd::Isa::kAvx2)) {
    for (const char* n : names) out.push_back({n, 0.0, 1e-12, true});
    return out;
  }
  const simd::KernelTable& ref = simd::scalar_table();
  constexpr double kTol = 1e-12;

  double gemm = 0.0;
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 64, 3}, {17, 9, 33}, {4, 40, 200},
                                   {64, 5, 64}, {2, 300, 9}};
  for (const auto& s : shapes) {
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        const std::vector<double> a = randn(m * k, rng), b = randn(k * n, rng), c0 = randn(m * n, rng);
        std::vector<double> c1 = c0, c2 = c0;
        simd::GemmArgs g;
        g.trans_a = ta;
        g.trans_b = tb;
        g.m = m;
        g.n = n;
        g.k = k;
        g.alpha = 0.7;
        g.beta = 0.3;
        g.a = a.data();
        g.lda = ta ? m : k;
        g.b = b.data();
        g.ldb = tb ? k : n;
        g.ldc = n;
        g.c = c1.data();
        ref.gemm(g);
        g.c = c2.data();
        fast->gemm(g);
        gemm = std::max(gemm, rel_gap(c2.data(), c1.data(), c1.size()) / std::sqrt(double(k)));
      }
    }
  }
  out.push_back({names[0], gemm, kTol, false});

  double dot = 0.0, axpy = 0.0, add = 0.0, mul = 0.0, relu = 0.0, relu_b = 0.0;
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 33u, 1000u}) {
    const std::vector<double> x = randn(n, rng), y = randn(n, rng), g = randn(n, rng);
    const double d1 = ref.dot(x.data(), y.data(), n), d2 = fast->dot(x.data(), y.data(), n);
    dot = std::max(dot, std::abs(d1 - d2) / (1.0 + std::abs(d1)) / std::sqrt(double(n + 1)));
    std::vector<double> r1 = y, r2 = y;
    ref.axpy(n, 1.3, x.data(), r1.data());
    fast->axpy(n, 1.3, x.data(), r2.data());
    axpy = std::max(axpy, rel_gap(r2.data(), r1.data(), n));
    ref.add(n, x.data(), y.data(), r1.data());
    fast->add(n, x.data(), y.data(), r2.data());
    add = std::max(add, rel_gap(r2.data(), r1.data(), n));
    ref.mul(n, x.data(), y.data(), r1.data());
    fast->mul(n, x.data(), y.data(), r2.data());
    mul = std::max(mul, rel_gap(r2.data(), r1.data(), n));
    ref.relu(n, x.data(), r1.data());
    fast->relu(n, x.data(), r2.data());
    relu = std::max(relu, rel_gap(r2.data(), r1.data(), n));
    r1 = y;
    r2 = y;
    ref.relu_backward(n, x.data(), g.data(), r1.data());
    fast->relu_backward(n, x.data(), g.data(), r2.data());
    relu_b = std::max(relu_b, rel_gap(r2.data(), r1.data(), n));
  }
  out.push_back({names[1], dot, kTol, false});
  out.push_back({names[2], axpy, kTol, false});
  out.push_back({names[3], add, kTol, false});
  out.push_back({names[4], mul, kTol, false});
  out.push_back({names[5], relu, kTol, false});
  out.push_back({names[6], relu_b, kTol, false});
  return out;
}

CheckResult fd_check(const std::string& name, const VarFn& f, const Tensor& x) {
  const Tensor ad = jacobian(f, x);
  const Tensor fd = finite_diff_jacobian(forward_only(f), x, 1e-6);
  return {name, rel_gap(ad, fd), 1e-6, false};
}

std::vector<CheckResult> autodiff_checks(Rng64& rng) {
  std::vector<CheckResult> out;
  const Tensor w = randt({3, 2, 3, 3}, rng, 0.5), b = randt({3}, rng, 0.1);
  out.push_back(fd_check(
      "autodiff.conv2d",
      [&](Graph& g, Var x) { return conv2d(x, g.constant(w), g.constant(b), 2, 1); },
      randt({2, 7, 7}, rng)));
  out.push_back(fd_check("autodiff.spatial_softmax",
                         [](Graph&, Var x) { return spatial_softmax(x); }, randt({3, 5, 4}, rng)));

  ParameterStore cell;
  Rng init(7);
  init_lstm_cell(cell, "cell", 5, 4, init);
  const Tensor h = randt({4}, rng), c = randt({4}, rng);
  out.push_back(fd_check(
      "autodiff.lstm_cell",
      [&](Graph& g, Var x) {
        BoundParameters p(g, cell, false);
        const LstmOutput o =
            lstm_cell_step(bind_lstm_cell(p, "cell"), x, g.constant(h), g.constant(c));
        return concat({o.h, o.c}, 0);
      },
      randt({5}, rng)));

  // a whole policy step, both stack variants, w.r.t. image and joints
  for (bool each : {true, false}) {
    PolicyConfig cfg = desk_preset().policy;
    cfg.encoder.image_size = 16;
    cfg.encoder.conv_channels = {2, 3, 2};
    cfg.encoder.hidden = 6;
    cfg.lstm_layers = 3;
    cfg.lstm_units = 5;
    cfg.each_layer_input = each;
    const ParameterStore params = init_policy_params(cfg, 11);
    const Tensor joints = randt({cfg.joint_dim()}, rng);
    LstmState state = init_state(cfg);
    state.h[0] = randt({5}, rng, 0.5);
    state.c[2] = randt({5}, rng, 0.5);
    std::uniform_real_distribution<double> px(0.0, 1.0);
    std::vector<double> img(3 * 16 * 16);
    for (double& v : img) v = px(rng);
    const std::string tag = each ? "each_layer" : "baseline";
    out.push_back(fd_check(
        "autodiff.policy_image." + tag,
        [&](Graph& g, Var x) {
          BoundParameters p(g, params, false);
          return network_step(cfg, p, x, g.constant(joints), constant_state(g, state)).output;
        },
        Tensor({3, 16, 16}, img)));
    out.push_back(fd_check(
        "autodiff.policy_joints." + tag,
        [&](Graph& g, Var x) {
          BoundParameters p(g, params, false);
          return network_step(cfg, p, g.constant(Tensor({3, 16, 16}, img)), x,
                              constant_state(g, state))
              .output;
        },
        joints));
  }
  return out;
}

std::vector<CheckResult> identity_checks(Rng64& rng) {
  using namespace analysis;
  std::vector<CheckResult> out;
  std::uniform_int_distribution<std::size_t> depth(1, 6), width(1, 16);
  double chain = 0.0;
  for (int t = 0; t < 30; ++t) {
    std::vector<std::size_t> dims(depth(rng) + 1);
    for (auto& d : dims) d = width(rng);
    const ChainNet net = random_chain(dims, t % 2 ? Activation::kTanh : Activation::kSigmoid, rng);
    const Tensor x = randt({dims[0]}, rng);
    chain = std::max(chain, max_abs_diff(chain_product_jacobian(net, x),
                                         jacobian([&](Graph&, Var v) { return chain_forward(net, v); }, x)));
  }
  out.push_back({"analysis.chain_product", chain, 1e-10, false});

  double residual = 0.0, weight = 0.0;
  for (std::size_t layers = 1; layers <= 6; ++layers) {
    for (bool inject : {true, false}) {
      const InjectionNet net = random_injection_net(6, 5, 8, layers, rng, inject, 2);
      const Tensor x = randt({6}, rng);
      residual = std::max(residual, each_layer_decomposition(injection_model(net), x).residual);
      const Tensor target = randt({net.v.dim(0)}, rng);
      for (std::size_t k = 0; k < 2; ++k) {
        weight = std::max(weight, weight_grad_decomposition(net, x, target, k).rel_error);
      }
    }
  }
  out.push_back({"analysis.each_layer_decomposition", residual, 1e-9, false});
  out.push_back({"analysis.weight_grad_decomposition", weight, 1e-8, false});
  return out;
}

// one finite-difference case; returns max abs error
using FdCase = std::function<double(Rng64&)>;

double fd_gap(const VarFn& f, const Tensor& x, double eps) {
  const Tensor ad = jacobian(f, x);
  const Tensor fd = finite_diff_jacobian(forward_only(f), x, eps);
  return max_abs_diff(ad, fd);
}

// Random projection r.y of f over trainable parameters: backprop against
// central differences on a few sampled entries of every named tensor.
double param_fd_gap(const ParameterStore& params, const std::vector<std::string>& names,
                    const std::function<Var(Graph&, const BoundParameters&)>& f, Rng64& rng,
                    double eps, std::size_t per_tensor = 4) {
  Graph g;
  BoundParameters bound(g, params, true);
  const Var y = f(g, bound);
  const Tensor r = randt(y.shape(), rng);
  const Gradients grads = g.backward(y, r);
  auto project = [&](const ParameterStore& ps) {
    Graph h;
    BoundParameters b(h, ps, false);
    const Tensor out = f(h, b).value();
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out.data()[i] * r.data()[i];
    return acc;
  };
  double worst = 0.0;
  for (const std::string& name : names) {
    const std::size_t idx = params.index(name);
    const Tensor ad = grads.of(bound.at(idx));
    std::uniform_int_distribution<std::size_t> pick(0, ad.size() - 1);
    for (std::size_t s = 0; s < per_tensor; ++s) {
      const std::size_t e = pick(rng);
      ParameterStore plus = params, minus = params;
      std::vector<double> vp = params.value(idx).to_vector(), vm = vp;
      vp[e] += eps;
      vm[e] -= eps;
      plus.set(idx, Tensor(params.value(idx).shape(), vp));
      minus.set(idx, Tensor(params.value(idx).shape(), vm));
      const double fd = (project(plus) - project(minus)) / (2 * eps);
      worst = std::max(worst, std::abs(fd - ad.data()[e]));
    }
  }
  return worst;
}

// keeps |v| >= margin so a ReLU downstream of the identity sits off its kink
Tensor off_kink(const Tensor& t, double margin = 1e-2) {
  std::vector<double> v = t.to_vector();
  for (double& x : v) {
    if (std::abs(x) < margin) x = x < 0 ? -margin : margin;
  }
  return Tensor(t.shape(), v);
}

PolicyConfig tiny_policy(Rng64& rng, EncoderConfig::Kind kind, bool each) {
  std::uniform_int_distribution<std::size_t> layers(1, 3), units(2, 5);
  PolicyConfig cfg = desk_preset().policy;
  cfg.encoder.kind = kind;
  cfg.each_layer_input = each;
  cfg.lstm_layers = layers(rng);
  cfg.lstm_units = units(rng);
  cfg.joint_count = 2;
  cfg.fixed_joints.clear();
  cfg.fixed_values.clear();
  if (kind == EncoderConfig::Kind::kCnnMlp) {
    cfg.encoder.image_size = 8;
    cfg.encoder.conv_channels = {2, 2};
    cfg.encoder.hidden = 4;
    cfg.feature_dim = cfg.encoder.feature_dim = 6;
  } else {
    cfg.encoder.image_size = 6;
    cfg.encoder.conv_channels = {2, 3};
    cfg.feature_dim = cfg.encoder.feature_dim = 6;
  }
  return cfg;
}

Tensor image(std::size_t s, Rng64& rng) {
  std::uniform_real_distribution<double> px(0.0, 1.0);
  std::vector<double> v(3 * s * s);
  for (double& x : v) x = px(rng);
  return Tensor({3, s, s}, v);
}

std::vector<std::pair<std::string, FdCase>> fd_cases(double eps) {
  std::vector<std::pair<std::string, FdCase>> k;
  k.emplace_back("dense", [eps](Rng64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 9);
    const std::size_t in = d(rng), out = d(rng);
    const Tensor w = randt({out, in}, rng), b = randt({out}, rng), x = randt({3, in}, rng);
    const double gx = fd_gap([&](Graph& g, Var v) { return dense({g.constant(w), g.constant(b)}, v); }, x, eps);
    const double gw = fd_gap([&](Graph& g, Var v) { return dense({v, g.constant(b)}, g.constant(x)); }, w, eps);
    return std::max(gx, gw);
  });
  k.emplace_back("conv2d", [eps](Rng64& rng) {
    std::uniform_int_distribution<std::size_t> st(1, 2), pad(0, 1), ker(2, 4), ch(1, 3);
    const std::size_t stride = st(rng), padding = pad(rng), kk = ker(rng), c = ch(rng), f = ch(rng);
    // extents chosen so every window fits exactly
    const std::size_t hgt = stride * 3 + kk - 2 * padding, wid = stride * 2 + kk - 2 * padding;
    const Tensor w = randt({f, c, kk, kk}, rng, 0.5), b = randt({f}, rng), x = randt({2, c, hgt, wid}, rng);
    const double gx = fd_gap(
        [&](Graph& g, Var v) { return conv2d(v, g.constant(w), g.constant(b), stride, padding); }, x, eps);
    const double gw = fd_gap(
        [&](Graph& g, Var v) { return conv2d(g.constant(x), v, g.constant(b), stride, padding); }, w, eps);
    const double gb = fd_gap(
        [&](Graph& g, Var v) { return conv2d(g.constant(x), g.constant(w), v, stride, padding); }, b, eps);
    return std::max({gx, gw, gb});
  });
  k.emplace_back("elementwise", [eps](Rng64& rng) {
    const Tensor y = randt({6}, rng);
    return fd_gap(
        [&](Graph& g, Var v) {
          const Var c = g.constant(y);
          return add(mul(sigmoid(v), tanh(sub(v, c))), scale(add_scalar(square(relu(v)), 0.3), -0.7));
        },
        off_kink(randt({6}, rng)), eps);
  });
  k.emplace_back("shape_ops", [eps](Rng64& rng) {
    return fd_gap(
        [](Graph&, Var v) {
          const Var a = slice(v, 1, 1, 3);        // [4 x 3]
          const Var b = gather_rows(v, {3, 0, 3});  // [3 x 5]
          return concat({reshape(a, {12}), reshape(b, {15})}, 0);
        },
        randt({4, 5}, rng), eps);
  });
  k.emplace_back("reduce", [eps](Rng64& rng) {
    return fd_gap(
        [](Graph&, Var v) {
          return concat({reshape(reduce(Reduction::kMax, v, {1}), {6}),
                         reshape(reduce(Reduction::kSum, v, {0, 2}), {4}), reshape(mean(v), {1})},
                        0);
        },
        randt({3, 4, 2}, rng), eps);
  });
  k.emplace_back("mse", [eps](Rng64& rng) {
    const Tensor t = randt({3, 4}, rng);
    std::vector<double> m(12);
    for (std::size_t i = 0; i < 12; ++i) m[i] = i % 3 == 1 ? 0.0 : 1.0;
    const Tensor mask({3, 4}, m);
    return fd_gap([&](Graph& g, Var v) { return mse(v, g.constant(t), mask); }, randt({3, 4}, rng), eps);
  });
  k.emplace_back("spatial_softmax", [eps](Rng64& rng) {
    return fd_gap([](Graph&, Var v) { return spatial_softmax(v); }, randt({2, 4, 5}, rng, 2.0), eps);
  });
  k.emplace_back("lstm_cell", [eps](Rng64& rng) {
    ParameterStore cell;
    Rng init(rng());
    init_lstm_cell(cell, "cell", 4, 3, init);
    const Tensor h = randt({2, 3}, rng), c = randt({2, 3}, rng), x = randt({2, 4}, rng);
    auto step = [&](Graph& g, Var xv, Var hv, Var cv) {
      BoundParameters p(g, cell, false);
      const LstmOutput o = lstm_cell_step(bind_lstm_cell(p, "cell"), xv, hv, cv);
      return concat({o.h, o.c}, 1);
    };
    const double gx = fd_gap([&](Graph& g, Var v) { return step(g, v, g.constant(h), g.constant(c)); }, x, eps);
    const double gh = fd_gap([&](Graph& g, Var v) { return step(g, g.constant(x), v, g.constant(c)); }, h, eps);
    const double gc = fd_gap([&](Graph& g, Var v) { return step(g, g.constant(x), g.constant(h), v); }, c, eps);
    return std::max({gx, gh, gc});
  });
  for (bool each : {true, false}) {
    k.emplace_back(each ? "lstm_stack_each_layer" : "lstm_stack_baseline", [eps, each](Rng64& rng) {
      std::uniform_int_distribution<std::size_t> layers(1, 4);
      StackConfig cfg;
      cfg.layers = layers(rng);
      cfg.units = 3;
      cfg.joint_dim = 4;
      cfg.feature_dim = 2;
      cfg.each_layer_input = each;
      ParameterStore store;
      Rng init(rng());
      const std::vector<std::size_t> dims = lstm_input_dims(cfg);
      for (std::size_t n = 0; n < cfg.layers; ++n) {
        init_lstm_cell(store, "l" + std::to_string(n), dims[n], cfg.units, init);
      }
      LstmState st = zero_state(cfg);
      for (auto& h : st.h) h = randt({3}, rng, 0.5);
      const Tensor joints = randt({4}, rng), z = randt({2}, rng);
      auto run = [&](Graph& g, Var j, Var zv) {
        BoundParameters p(g, store, false);
        std::vector<LstmCellParams> cells;
        for (std::size_t n = 0; n < cfg.layers; ++n) cells.push_back(bind_lstm_cell(p, "l" + std::to_string(n)));
        return lstm_stack_step(cfg, cells, j, zv, constant_state(g, st)).features;
      };
      return std::max(fd_gap([&](Graph& g, Var v) { return run(g, v, g.constant(z)); }, joints, eps),
                      fd_gap([&](Graph& g, Var v) { return run(g, g.constant(joints), v); }, z, eps));
    });
  }
  for (auto kind : {EncoderConfig::Kind::kCnnMlp, EncoderConfig::Kind::kCnnSpatialSoftmax}) {
    const std::string name = "encoder_" + encoder_kind_name(kind);
    k.emplace_back(name, [eps, kind](Rng64& rng) {
      const PolicyConfig cfg = tiny_policy(rng, kind, true);
      const ParameterStore params = init_policy_params(cfg, rng());
      const Tensor img = image(cfg.encoder.image_size, rng);
      const double gi = fd_gap(
          [&](Graph& g, Var v) {
            BoundParameters p(g, params, false);
            return encode(cfg.encoder, p, v);
          },
          img, eps);
      const double gw = param_fd_gap(
          params, encoder_parameter_names(cfg.encoder),
          [&](Graph& g, const BoundParameters& p) { return encode(cfg.encoder, p, g.constant(img)); }, rng,
          eps);
      return std::max(gi, gw);
    });
  }
  for (auto kind : {EncoderConfig::Kind::kCnnMlp, EncoderConfig::Kind::kCnnSpatialSoftmax}) {
    for (bool each : {true, false}) {
      const std::string name = std::string("policy_") + encoder_kind_name(kind) + (each ? "_each_layer" : "_baseline");
      k.emplace_back(name, [eps, kind, each](Rng64& rng) {
        const PolicyConfig cfg = tiny_policy(rng, kind, each);
        const ParameterStore params = init_policy_params(cfg, rng());
        const Tensor img = image(cfg.encoder.image_size, rng);
        const Tensor joints = randt({cfg.joint_dim()}, rng);
        LstmState st = init_state(cfg);
        for (auto& c : st.c) c = randt({cfg.lstm_units}, rng, 0.5);
        auto run = [&](Graph& g, Var i, Var j) {
          BoundParameters p(g, params, false);
          return network_step(cfg, p, i, j, constant_state(g, st)).output;
        };
        std::vector<std::string> names;
        for (std::size_t i = 0; i < params.size(); ++i) names.push_back(params.name(i));
        const double gw = param_fd_gap(
            params, names,
            [&](Graph& g, const BoundParameters& p) {
              return network_step(cfg, p, g.constant(img), g.constant(joints), constant_state(g, st)).output;
            },
            rng, eps);
        return std::max({gw, fd_gap([&](Graph& g, Var v) { return run(g, v, g.constant(joints)); }, img, eps),
                         fd_gap([&](Graph& g, Var v) { return run(g, g.constant(img), v); }, joints, eps)});
      });
    }
  }
  return k;
}

}  // namespace

FdSuiteResult run_fd_suite(std::uint64_t seed, std::size_t cases, double eps, double tolerance) {
  const auto kinds = fd_cases(eps);
  FdSuiteResult r;
  for (const auto& [name, fn] : kinds) r.per_kind.push_back({"fd." + name, 0.0, tolerance, false});
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t k = i % kinds.size();
    Rng64 rng(seed * 1000003 + i);
    const double gap = kinds[k].second(rng);
    ++r.cases;
    r.per_kind[k].error = std::max(r.per_kind[k].error, gap);
    if (gap >= r.worst) {
      r.worst = gap;
      r.worst_case = kinds[k].first + " #" + std::to_string(i);
    }
  }
  return r;
}

std::vector<CheckResult> run_gradcheck(std::uint64_t seed) {
  Rng64 rng(seed);
  std::vector<CheckResult> out = simd_checks(rng);
  for (auto& r : autodiff_checks(rng)) out.push_back(std::move(r));
  for (auto& r : identity_checks(rng)) out.push_back(std::move(r));
  return out;
}

}  // namespace eli
