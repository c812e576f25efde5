#include <gtest/gtest.h>

#include <cmath>

#include "siggate/attention.hpp"

using namespace siggate;

namespace {

// Plain-loop reference: softmax(scale ⊙ QKᵀ/√d_k) over unmasked entries.
Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix* logit_scale, const Mask* mask) {
  const std::size_t n = q.rows(), m = k.rows(), dk = q.cols();
  Matrix a(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(m, -INFINITY);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j) {
      if (mask && !(*mask)(i, j)) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < dk; ++c) s += q(i, c) * k(j, c);
      s /= std::sqrt(static_cast<double>(dk));
      if (logit_scale) s *= (*logit_scale)(i, j);
      z[j] = s;
      mx = std::max(mx, s);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += std::isinf(z[j]) ? 0.0 : std::exp(z[j] - mx);
    for (std::size_t j = 0; j < m; ++j) a(i, j) = std::isinf(z[j]) ? 0.0 : std::exp(z[j] - mx) / total;
  }
  return a;
}

Matrix project(const Matrix& h, const Matrix& w) {
  Matrix out(h.rows(), w.cols());
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      for (std::size_t c = 0; c < h.cols(); ++c) out(i, j) += h(i, c) * w(c, j);
  return out;
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], tol) << "entry " << i;
}

struct Fixture {
  Matrix h;
  MhsaParams params;
};

Fixture make(GatePlacement p, Activation act = Activation::sigmoid, GateSharing sharing = GateSharing::per_head,
             std::uint64_t seed = 1, std::size_t n = 7, std::size_t d = 12, std::size_t heads = 3) {
  SeededRng rng(seed);
  GateConfig cfg;
  cfg.placement = p;
  cfg.activation = act;
  cfg.sharing = sharing;
  Fixture f;
  f.h = gaussian_matrix(rng, n, d, 1.0);
  f.params = init_mhsa(rng, d, heads, cfg);
  return f;
}

}  // namespace

TEST(Sdpa, MatchesPlainLoops) {
  const auto f = make(GatePlacement::none);
  const auto& head = f.params.heads[0];
  const auto r = sdpa(f.h, head);
  const Matrix a = reference_attention(project(f.h, head.w_q), project(f.h, head.w_k), nullptr, nullptr);
  expect_near(r.attention, a, 1e-13);
  expect_near(r.y, project(a, project(f.h, head.w_v)), 1e-12);
}

TEST(Sdpa, MaskedEntriesAreExactlyZero) {
  const auto f = make(GatePlacement::none);
  Mask mask(7, 7, true);
  mask.set(0, 3, false);
  mask.set(2, 6, false);
  mask.set(5, 0, false);
  const auto r = sdpa(f.h, f.params.heads[1], &mask);
  EXPECT_EQ(r.attention(0, 3), 0.0);
  EXPECT_EQ(r.attention(2, 6), 0.0);
  EXPECT_EQ(r.attention(5, 0), 0.0);
  const auto& hd = f.params.heads[1];
  expect_near(r.attention, reference_attention(project(f.h, hd.w_q), project(f.h, hd.w_k), nullptr, &mask), 1e-13);
}

TEST(GatedHead, OutputGateComposition) {
  const auto f = make(GatePlacement::g1);
  const auto& head = f.params.heads[2];
  const auto& gate = f.params.gate_for(2);
  const auto t = gated_head_forward(f.h, head, &gate, f.params.gate_config);
  const auto plain = sdpa(f.h, head);
  const Matrix pre = project(f.h, gate.w_g);
  Matrix expected(plain.y.rows(), plain.y.cols());
  for (std::size_t i = 0; i < pre.rows(); ++i)
    for (std::size_t j = 0; j < pre.cols(); ++j)
      expected(i, j) = plain.y(i, j) / (1.0 + std::exp(-(pre(i, j) + gate.b_g(0, j))));
  expect_near(t.output, expected, 1e-12);
  expect_near(t.attention, plain.attention, 0.0);
}

TEST(GatedHead, ValueGateComposition) {
  const auto f = make(GatePlacement::g2, Activation::tanh);
  const auto& head = f.params.heads[0];
  const auto& gate = f.params.gate_for(0);
  const auto t = gated_head_forward(f.h, head, &gate, f.params.gate_config);
  const Matrix v = project(f.h, head.w_v);
  const Matrix pre = project(f.h, gate.w_g);
  Matrix gv(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) gv(i, j) = v(i, j) * std::tanh(pre(i, j) + gate.b_g(0, j));
  const Matrix a = reference_attention(project(f.h, head.w_q), project(f.h, head.w_k), nullptr, nullptr);
  expect_near(t.output, project(a, gv), 1e-12);
}

TEST(GatedHead, LogitGateComposition) {
  const auto f = make(GatePlacement::g3);
  const auto& head = f.params.heads[1];
  const auto& gate = f.params.gate_for(1);
  ASSERT_EQ(gate.b_g.size(), 1u);
  const auto t = gated_head_forward(f.h, head, &gate, f.params.gate_config);
  const Matrix l = project(f.h, gate.w_g);
  const Matrix r = project(f.h, gate.w_g2);
  const double dk = static_cast<double>(head.w_q.cols());
  Matrix g(f.h.rows(), f.h.rows());
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < l.cols(); ++c) s += l(i, c) * r(j, c);
      g(i, j) = 1.0 / (1.0 + std::exp(-(s / std::sqrt(dk) + gate.b_g(0, 0))));
    }
  expect_near(t.gate, g, 1e-13);
  const Matrix a = reference_attention(project(f.h, head.w_q), project(f.h, head.w_k), &g, nullptr);
  expect_near(t.attention, a, 1e-13);
  expect_near(t.output, project(a, project(f.h, head.w_v)), 1e-12);
}

TEST(GatedHead, ActivationRanges) {
  for (auto act : {Activation::sigmoid, Activation::sigmoid_squared}) {
    const auto f = make(GatePlacement::g1, act);
    for (const auto& t : siggate_mhsa(f.h, f.params).traces)
      for (double g : t.gate.data()) {
        EXPECT_GT(g, 0.0);
        EXPECT_LT(g, 1.0);
      }
  }
  const auto f = make(GatePlacement::g1, Activation::relu);
  for (const auto& t : siggate_mhsa(f.h, f.params).traces)
    for (double g : t.gate.data()) EXPECT_GE(g, 0.0);
}

TEST(Mhsa, ForcedOnesEqualsUngatedBitwise) {
  auto f = make(GatePlacement::g1);
  f.params.gate_config.override_gate = GateOverride::ones;
  MhsaParams ungated = f.params;
  ungated.gate_config.placement = GatePlacement::none;
  ungated.gates.clear();
  EXPECT_EQ(siggate_mhsa(f.h, f.params).out, siggate_mhsa(f.h, ungated).out);
}

TEST(Mhsa, ForcedZerosGivesZeroBranch) {
  auto f = make(GatePlacement::g1);
  f.params.gate_config.override_gate = GateOverride::zeros;
  const auto r = siggate_mhsa(f.h, f.params);
  for (double v : r.out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mhsa, SharedEqualsPerHeadWithDuplicatedGates) {
  for (auto p : {GatePlacement::g1, GatePlacement::g2, GatePlacement::g3}) {
    const auto f = make(p, Activation::sigmoid, GateSharing::shared);
    ASSERT_EQ(f.params.gates.size(), 1u);
    MhsaParams per_head = f.params;
    per_head.gate_config.sharing = GateSharing::per_head;
    per_head.gates.assign(per_head.num_heads(), f.params.gates.front());
    EXPECT_EQ(siggate_mhsa(f.h, f.params).out, siggate_mhsa(f.h, per_head).out) << to_string(p);
  }
}

TEST(Mhsa, FreshInitGateIsSigmoidOfBias) {
  SeededRng rng(2);
  GateConfig cfg;  // g1, sigmoid, bias 0.5
  const MhsaParams params = init_mhsa(rng, 16, 4, cfg, true);
  const Matrix h = gaussian_matrix(rng, 9, 16, 1.0);
  for (const auto& t : siggate_mhsa(h, params).traces)
    for (double g : t.gate.data()) EXPECT_NEAR(g, 0.6224593, 1e-6);
}

TEST(Mhsa, RowPermutationEquivariance) {
  const auto f = make(GatePlacement::g3);
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  Matrix hp(f.h.rows(), f.h.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < f.h.cols(); ++j) hp(i, j) = f.h(perm[i], j);
  const Matrix out = siggate_mhsa(f.h, f.params).out;
  const Matrix outp = siggate_mhsa(hp, f.params).out;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) EXPECT_NEAR(outp(i, j), out(perm[i], j), 1e-12);
}

TEST(Mhsa, BackwardMatchesFiniteDifferences) {
  for (auto p : {GatePlacement::g1, GatePlacement::g2, GatePlacement::g3}) {
    for (auto sharing : {GateSharing::per_head, GateSharing::shared}) {
      auto f = make(p, Activation::sigmoid, sharing, 6, 5, 8, 2);
      SeededRng rng(99);
      const Matrix w = gaussian_matrix(rng, 5, 8, 1.0);
      auto loss = [&](const MhsaParams& prm, const Matrix& h) {
        const Matrix o = siggate_mhsa(h, prm).out;
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += w.data()[i] * o.data()[i];
        return s;
      };
      MhsaCache cache;
      siggate_mhsa_cached(f.h, f.params, nullptr, cache);
      MhsaParams grads = zeros_like(f.params);
      const Matrix dh = siggate_mhsa_backward(f.h, f.params, cache, w, grads);
      const double step = 1e-6;
      auto check = [&](Matrix& target, const Matrix& analytic, const char* what) {
        for (std::size_t k = 0; k < target.size(); ++k) {
          const double orig = target.data()[k];
          target.data()[k] = orig + step;
          const double fp = loss(f.params, f.h);
          target.data()[k] = orig - step;
          const double fm = loss(f.params, f.h);
          target.data()[k] = orig;
          EXPECT_NEAR(analytic.data()[k], (fp - fm) / (2 * step), 1e-6)
              << to_string(p) << "/" << to_string(sharing) << " " << what << "[" << k << "]";
        }
      };
      check(f.h, dh, "h");
      check(f.params.w_o, grads.w_o, "w_o");
      check(f.params.heads[1].w_k, grads.heads[1].w_k, "w_k");
      check(f.params.gates[0].w_g, grads.gates[0].w_g, "w_g");
      check(f.params.gates[0].b_g, grads.gates[0].b_g, "b_g");
      if (p == GatePlacement::g3) check(f.params.gates[0].w_g2, grads.gates[0].w_g2, "w_g2");
    }
  }
}

TEST(Mhsa, InvalidShapesAreRejected) {
  SeededRng rng(0);
  EXPECT_THROW(init_mhsa(rng, 10, 4, GateConfig{}), ConfigError);
  auto f = make(GatePlacement::g1);
  f.params.gates.pop_back();
  EXPECT_THROW(f.params.validate(), ConfigError);
  EXPECT_THROW(parse_placement("g4"), std::invalid_argument);
}

TEST(GateParamCount, ClosedForm) {
  EXPECT_EQ(gate_param_count(256, 32, 8, 5), 328960);
  EXPECT_EQ(gate_param_count(64, 8, 8, 10), 41600);
  EXPECT_EQ(gate_param_count(64, 8, 8, 0), 0);
  SeededRng rng(0);
  const MhsaParams p = init_mhsa(rng, 24, 4, GateConfig{});
  std::int64_t counted = 0;
  for (const auto& g : p.gates) counted += static_cast<std::int64_t>(g.w_g.size() + g.b_g.size());
  EXPECT_EQ(counted, gate_param_count(24, 6, 4, 1));
}
