#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "trm/error.hpp"
#include "trm/nn/attention.hpp"
#include "trm/nn/grad_check.hpp"
#include "trm/nn/layers.hpp"
#include "trm/nn/loss.hpp"
#include "trm/nn/optim.hpp"

using namespace trm;
using namespace trm::nn;

namespace {

Tensor2 random_tensor(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Tensor2 t(r, c);
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Linear functional sum(w .* y) used to grad-check layers with a fixed
// random readout.
double readout(const Tensor2& y, const Tensor2& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * w.values()[i];
  return s;
}

}  // namespace

TEST(DenseForward, IdentityWeights) {
  Tensor2 x{{1, 2}};
  Tensor2 w{{1, 0}, {0, 1}};
  Tensor2 b{{0, 0}};
  EXPECT_EQ(dense_forward(x, w, b, Activation::identity), (Tensor2{{1, 2}}));
}

TEST(DenseForward, ReluClampsNegatives) {
  Tensor2 x{{-1, 3}};
  Tensor2 w{{1, 0}, {0, 1}};
  Tensor2 b{{0, 0}};
  EXPECT_EQ(dense_forward(x, w, b, Activation::relu), (Tensor2{{0, 3}}));
}

TEST(DenseForward, MatchesNaiveMatmul) {
  Rng rng(11);
  Tensor2 x = random_tensor(3, 4, rng);
  Tensor2 w = random_tensor(4, 2, rng);
  Tensor2 b = random_tensor(1, 2, rng);
  Tensor2 y = dense_forward(x, w, b, Activation::identity);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = b(0, j);
      for (std::size_t k = 0; k < 4; ++k) s += x(i, k) * w(k, j);
      EXPECT_NEAR(y(i, j), s, 1e-12);
    }
}

TEST(DenseForward, DimensionMismatchIsConfigError) {
  Tensor2 x(1, 3);
  Tensor2 w(2, 2);
  Tensor2 b(1, 2);
  EXPECT_THROW(dense_forward(x, w, b, Activation::relu), ConfigError);
}

TEST(Bce, SymmetricPoint) { EXPECT_NEAR(bce_from_logit(1, 0.0), std::log(2.0), 1e-15); }

TEST(Bce, SaturatedCorrectPredictionNoOverflow) {
  const double l = bce_from_logit(0, -1000.0);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(bce_from_logit(1, 1000.0)));
  EXPECT_TRUE(std::isfinite(bce_from_logit(0, 1000.0)));
  EXPECT_NEAR(bce_from_logit(0, 1000.0), 1000.0, 1e-9);
}

TEST(Bce, GradientMatchesFiniteDifference) {
  const double eta = 0.5;
  const double h = 1e-6;
  const double fd = (bce_from_logit(1, eta + h) - bce_from_logit(1, eta - h)) / (2 * h);
  EXPECT_NEAR(bce_grad(1, eta), -0.3775406687981454, 1e-12);
  EXPECT_NEAR(bce_grad(1, eta), fd, 1e-6);
}

TEST(SoftmaxCe, UniformLogits) {
  std::vector<double> logits(7, 0.3);
  EXPECT_NEAR(softmax_ce(logits, 4).loss, std::log(7.0), 1e-14);
}

TEST(SoftmaxCe, NearCertain) {
  std::vector<double> logits{10, -10};
  EXPECT_NEAR(softmax_ce(logits, 0).loss, 2.061153620314381e-09, 1e-20);
}

TEST(SoftmaxCe, ThreeClassValue) {
  // -log softmax([1,2,3])[2] = log(1 + e^-1 + e^-2), evaluated offline at
  // high precision.
  std::vector<double> logits{1, 2, 3};
  auto r = softmax_ce(logits, 2);
  EXPECT_NEAR(r.loss, 0.4076059644443804, 1e-12);
  double gsum = 0.0;
  for (double g : r.grad) gsum += g;
  EXPECT_NEAR(gsum, 0.0, 1e-15);
}

TEST(SoftmaxCe, TargetOutOfRange) {
  std::vector<double> logits{1, 2};
  EXPECT_THROW(softmax_ce(logits, 2), InputError);
}

TEST(GradCheck, SingleDenseLayerWithBce) {
  Rng rng(1);
  ParamStore store;
  Linear layer(store, "fc", 5, 1, rng);
  for (double& v : store.get("fc.b").value.values()) v = 0.1;
  Tensor2 x = random_tensor(6, 5, rng);
  std::vector<int> y{1, 0, 1, 1, 0, 0};
  auto fn = [&](bool acc) {
    Tensor2 z = layer.forward(x);
    double loss = 0.0;
    Tensor2 dz(z.rows(), 1);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      loss += bce_from_logit(y[i], z(i, 0)) / 6.0;
      dz(i, 0) = bce_grad(y[i], z(i, 0)) / 6.0;
    }
    if (acc) layer.backward(x, dz);
    return loss;
  };
  EXPECT_LT(grad_check(fn, store, 1e-5), 1e-6);
}

TEST(GradCheck, EmptyStoreReportsZero) {
  ParamStore store;
  EXPECT_EQ(grad_check([](bool) { return 1.0; }, store, 1e-5), 0.0);
}

TEST(GradCheck, RejectsBadEpsAndNonFiniteLoss) {
  ParamStore store;
  store.add("p", 1, 1);
  EXPECT_THROW(grad_check([](bool) { return 1.0; }, store, 1e-2), ConfigError);
  EXPECT_THROW(grad_check([](bool) { return NAN; }, store, 1e-5), EvaluationError);
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamStore store;
  Param& p = store.add("p", 1, 1);
  p.value(0, 0) = 2.0;
  auto fn = [&](bool acc) {
    const double v = p.value(0, 0);
    if (acc) p.grad(0, 0) += 3.0 * v;  // true derivative of v^2 is 2v
    return v * v;
  };
  EXPECT_GT(grad_check(fn, store, 1e-5), 0.1);
}

TEST(GradCheck, MlpGeluAndRelu) {
  for (Activation act : {Activation::gelu, Activation::relu}) {
    Rng rng(7);
    ParamStore store;
    Mlp mlp(store, "mlp", {4, 6, 5, 3}, act, rng);
    for (std::size_t i = 0; i < store.size(); ++i)
      for (double& v : store.at(i).value.values())
        if (store.at(i).name.ends_with(".b")) v = 0.05;
    Tensor2 x = random_tensor(5, 4, rng);
    Tensor2 w = random_tensor(5, 3, rng);
    auto fn = [&](bool acc) {
      Mlp::Cache c;
      Tensor2 y = mlp.forward(x, &c);
      if (acc) mlp.backward(c, w);
      return readout(y, w);
    };
    EXPECT_LT(grad_check(fn, store, 1e-6), 1e-6);
  }
}

TEST(GradCheck, LayerNorm) {
  Rng rng(9);
  ParamStore store;
  LayerNorm ln(store, "ln", 5);
  for (double& v : store.get("ln.gain").value.values()) v = 0.5 + std::uniform_real_distribution<>(0, 1)(rng);
  for (double& v : store.get("ln.shift").value.values()) v = std::normal_distribution<>(0, 0.3)(rng);
  Tensor2 x = random_tensor(4, 5, rng);
  Tensor2 w = random_tensor(4, 5, rng);
  // Extra input parameter so that dx is checked too.
  Param& xin = store.add("x", 4, 5);
  xin.value = x;
  auto fn = [&](bool acc) {
    LayerNorm::Cache c;
    Tensor2 y = ln.forward(xin.value, &c);
    if (acc) {
      Tensor2 dx = ln.backward(c, w);
      for (std::size_t i = 0; i < dx.size(); ++i) xin.grad.values()[i] += dx.values()[i];
    }
    return readout(y, w);
  };
  EXPECT_LT(grad_check(fn, store, 1e-5), 1e-5);
}

TEST(GradCheck, MaskedAttentionAndTransformerStack) {
  Rng rng(21);
  ParamStore store;
  const std::size_t seq = 5, d = 8;
  TransformerStack stack(store, "tf", 2, d, 2, 16, rng);
  Param& xin = store.add("x", 2 * seq, d);
  xin.value = random_tensor(2 * seq, d, rng);
  AttentionMask mask(seq);
  for (std::size_t i = 0; i < seq; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
  Tensor2 w = random_tensor(2 * seq, d, rng);
  auto fn = [&](bool acc) {
    TransformerStack::Cache c;
    Tensor2 y = stack.forward(xin.value, seq, mask, &c);
    if (acc) {
      Tensor2 dx = stack.backward(c, mask, w);
      for (std::size_t i = 0; i < dx.size(); ++i) xin.grad.values()[i] += dx.values()[i];
    }
    return readout(y, w);
  };
  auto rep = grad_check_report(fn, store, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param << "[" << rep.worst_index
                                     << "] analytic=" << rep.worst_analytic
                                     << " numeric=" << rep.worst_numeric;
}

TEST(Attention, MaskedPositionsDoNotLeak) {
  Rng rng(2);
  ParamStore store;
  const std::size_t seq = 4, d = 6;
  TransformerStack stack(store, "tf", 2, d, 3, 12, rng);
  AttentionMask mask(seq);
  for (std::size_t i = 0; i < seq; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
  Tensor2 x = random_tensor(seq, d, rng);
  Tensor2 y1 = stack.forward(x, seq, mask, nullptr);
  x(3, 0) += 5.0;
  Tensor2 y2 = stack.forward(x, seq, mask, nullptr);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(y1(i, c), y2(i, c));
  EXPECT_NE(y1(3, 0), y2(3, 0));
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(4);
  ParamStore store;
  Param& p = store.add("w", 3, 3);
  init_uniform_xavier(p, 3, 3, rng);
  const Tensor2 before = p.value;
  OptimizerState state;
  optimizer_step(store, state);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(Optimizer, ConvergesOnQuadratic) {
  ParamStore store;
  Param& p = store.add("theta", 1, 1);
  const double target = 1.5;
  OptimizerState state;
  state.learning_rate = 0.05;
  for (int i = 0; i < 200; ++i) {
    p.grad(0, 0) = 2.0 * (p.value(0, 0) - target);
    optimizer_step(store, state);
  }
  EXPECT_LT(std::abs(p.value(0, 0) - target), 1e-3);
  EXPECT_EQ(state.step, 200u);
}

TEST(Optimizer, IdenticalStoresUpdateBitwiseIdentically) {
  ParamStore a, b;
  Rng ra(8), rb(8);
  init_uniform_xavier(a.add("w", 4, 4), 4, 4, ra);
  init_uniform_xavier(b.add("w", 4, 4), 4, 4, rb);
  OptimizerState sa, sb;
  Rng g(99);
  for (int step = 0; step < 10; ++step) {
    Tensor2 grad = random_tensor(4, 4, g);
    a.get("w").grad = grad;
    b.get("w").grad = grad;
    optimizer_step(a, sa);
    optimizer_step(b, sb);
  }
  EXPECT_EQ(a.get("w").value, b.get("w").value);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  ParamStore store;
  store.add("ok", 1, 1);
  Param& bad = store.add("tower.bad", 1, 2);
  bad.grad(0, 1) = INFINITY;
  OptimizerState state;
  try {
    optimizer_step(store, state);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("tower.bad"), std::string::npos);
  }
  EXPECT_EQ(state.step, 0u);
}

TEST(Optimizer, EmbeddingRowsUpdateLazily) {
  ParamStore store;
  Param& table = store.add("emb", 5, 2, ParamKind::embedding);
  table.value.fill(1.0);
  table.grad(3, 0) = 0.5;
  table.touch_row(3);
  OptimizerState state;
  optimizer_step(store, state);
  for (std::size_t r = 0; r < 5; ++r) {
    if (r == 3) {
      EXPECT_NE(table.value(r, 0), 1.0);
    } else {
      EXPECT_EQ(table.value(r, 0), 1.0);
      EXPECT_EQ(table.value(r, 1), 1.0);
    }
  }
  EXPECT_TRUE(table.touched_rows.empty());
}

TEST(Checkpoint, RoundTripAndErrors) {
  Rng rng(12);
  ParamStore a;
  init_uniform_xavier(a.add("tower.0.w", 3, 4), 3, 4, rng);
  init_uniform_xavier(a.add("emb", 6, 2, ParamKind::embedding), 6, 2, rng);
  const auto path = std::filesystem::temp_directory_path() / "trm_ckpt_test.bin";
  a.save(path);

  ParamStore b;
  b.add("tower.0.w", 3, 4);
  b.add("emb", 6, 2, ParamKind::embedding);
  b.load(path);
  EXPECT_EQ(a.get("tower.0.w").value, b.get("tower.0.w").value);
  EXPECT_EQ(a.get("emb").value, b.get("emb").value);
  EXPECT_EQ(a.total_count(), 24u);
  EXPECT_EQ(a.count(ParamKind::dense), 12u);

  ParamStore wrong;
  wrong.add("tower.0.w", 4, 3);
  wrong.add("emb", 6, 2);
  EXPECT_THROW(wrong.load(path), InputError);
  std::filesystem::remove(path);
}
