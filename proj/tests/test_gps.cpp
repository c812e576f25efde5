#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "siggate/gps.hpp"

using namespace siggate;

namespace {

GraphInstance random_graph(SeededRng& rng, std::size_t n, std::size_t d_in, std::size_t d_e, double p = 0.4) {
  GraphInstance g;
  g.n = n;
  g.node_features = gaussian_matrix(rng, n, d_in, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && rng.uniform() < p) g.edges.push_back({i, j});
  if (d_e > 0) g.edge_features = gaussian_matrix(rng, g.edges.size(), d_e, 1.0);
  g.validate();
  return g;
}

GraphInstance permuted(const GraphInstance& g, const std::vector<std::size_t>& perm) {
  // Node i of the result is node perm[i] of g.
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  GraphInstance out;
  out.n = g.n;
  out.node_features = Matrix(g.n, g.node_features.cols());
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t c = 0; c < g.node_features.cols(); ++c) out.node_features(i, c) = g.node_features(perm[i], c);
  for (const auto& e : g.edges) out.edges.push_back({inv[e.src], inv[e.dst]});
  out.edge_features = g.edge_features;
  if (g.attn_mask) {
    Mask m(g.n, g.n, true);
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t j = 0; j < g.n; ++j) m.set(i, j, (*g.attn_mask)(perm[i], perm[j]));
    out.attn_mask = m;
  }
  out.validate();
  return out;
}

double gelu_reference(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST(LayerNorm, HandExample) {
  const Matrix out = layer_norm(Matrix{{1.0, 2.0, 3.0}}, Matrix{{1.0, 1.0, 1.0}}, Matrix{{0.0, 0.0, 0.0}});
  const double s = std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(out(0, 0), -1.0 / s, 1e-14);
  EXPECT_NEAR(out(0, 1), 0.0, 1e-14);
  EXPECT_NEAR(out(0, 2), 1.0 / s, 1e-14);
  const Matrix affine = layer_norm(Matrix{{1.0, 2.0, 3.0}}, Matrix{{2.0, 2.0, 2.0}}, Matrix{{1.0, -1.0, 0.5}});
  EXPECT_NEAR(affine(0, 0), 1.0 - 2.0 / s, 1e-14);
  EXPECT_NEAR(affine(0, 1), -1.0, 1e-14);
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  SeededRng rng(3);
  const Matrix x = gaussian_matrix(rng, 4, 6, 2.0);
  const Matrix scale = gaussian_matrix(rng, 1, 6, 1.0);
  const Matrix shift = gaussian_matrix(rng, 1, 6, 1.0);
  const Matrix w = gaussian_matrix(rng, 4, 6, 1.0);
  LayerNormCache cache;
  layer_norm_cached(x, scale, shift, cache);
  Matrix gs(1, 6), gb(1, 6);
  const Matrix dx = layer_norm_backward(cache, scale, w, gs, gb);
  auto loss = [&](const Matrix& xx, const Matrix& sc) {
    const Matrix o = layer_norm(xx, sc, shift);
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += w.data()[i] * o.data()[i];
    return s;
  };
  for (std::size_t k = 0; k < x.size(); ++k) {
    Matrix p = x, m = x;
    p.data()[k] += 1e-6;
    m.data()[k] -= 1e-6;
    EXPECT_NEAR(dx.data()[k], (loss(p, scale) - loss(m, scale)) / 2e-6, 1e-7);
  }
  for (std::size_t k = 0; k < scale.size(); ++k) {
    Matrix p = scale, m = scale;
    p.data()[k] += 1e-6;
    m.data()[k] -= 1e-6;
    EXPECT_NEAR(gs.data()[k], (loss(x, p) - loss(x, m)) / 2e-6, 1e-7);
    EXPECT_NEAR(gb.data()[k], column_sums(w)(0, k), 1e-12);
  }
}

TEST(Gelu, ErfFormAndDerivative) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-15);
  for (double x : {-3.0, -0.5, 0.2, 2.5}) {
    EXPECT_NEAR(gelu(x), gelu_reference(x), 1e-15);
    EXPECT_NEAR(gelu_derivative(x), (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6, 1e-8);
  }
}

TEST(Mpnn, MatchesEdgeLoop) {
  SeededRng rng(4);
  const std::size_t d = 5, d_e = 2;
  const GraphInstance g = random_graph(rng, 6, d, d_e);
  const Matrix h = gaussian_matrix(rng, 6, d, 1.0);
  MpnnParams p{gaussian_matrix(rng, 2 * d + d_e, d, 0.3), gaussian_matrix(rng, d, d, 0.3)};
  const Matrix out = mpnn_forward(g, h, p);
  Matrix expected(6, d);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [j, i] = std::pair{g.edges[e].src, g.edges[e].dst};
    std::vector<double> in;
    for (std::size_t c = 0; c < d; ++c) in.push_back(h(i, c));
    for (std::size_t c = 0; c < d; ++c) in.push_back(h(j, c));
    for (std::size_t c = 0; c < d_e; ++c) in.push_back((*g.edge_features)(e, c));
    for (std::size_t o = 0; o < d; ++o) {
      double z = 0.0, v = 0.0;
      for (std::size_t c = 0; c < in.size(); ++c) z += in[c] * p.w_edge(c, o);
      for (std::size_t c = 0; c < d; ++c) v += h(j, c) * p.w_val(c, o);
      expected(i, o) += v / (1.0 + std::exp(-z));
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) EXPECT_NEAR(out.data()[k], expected.data()[k], 1e-12);
}

TEST(Mpnn, IsolatedNodesReceiveNothing) {
  SeededRng rng(5);
  GraphInstance g;
  g.n = 3;
  g.node_features = gaussian_matrix(rng, 3, 4, 1.0);
  g.edges = {{0, 1}};
  g.validate();
  MpnnParams p{gaussian_matrix(rng, 8, 4, 1.0), gaussian_matrix(rng, 4, 4, 1.0)};
  const Matrix out = mpnn_forward(g, g.node_features, p);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(out(0, c), 0.0);
    EXPECT_EQ(out(2, c), 0.0);
    EXPECT_NE(out(1, c), 0.0);
  }
}

TEST(GpsLayer, ComposesItsBlocks) {
  SeededRng rng(6);
  ModelShape shape;
  shape.d_in = 16;
  const ModelParams m = init_model(shape, 12);
  const GraphInstance g = random_graph(rng, 7, 16, 0);
  const Matrix& h = g.node_features;
  const auto& p = m.layers[0];
  const auto r = gps_layer_forward(g, h, p);
  Matrix s = h + mpnn_forward(g, h, p.mpnn) + siggate_mhsa(h, p.attn).out;
  const Matrix t = layer_norm(s, p.ln1.scale, p.ln1.shift);
  Matrix u = add_row_broadcast(matmul(t, p.ffn.w1), p.ffn.b1);
  for (double& v : u.data()) v = gelu_reference(v);
  const Matrix f = add_row_broadcast(matmul(u, p.ffn.w2), p.ffn.b2);
  const Matrix expected = layer_norm(f + t, p.ln2.scale, p.ln2.shift);
  for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_NEAR(r.h_next.data()[k], expected.data()[k], 1e-12);
  ASSERT_EQ(r.head_traces.size(), shape.heads);
}

TEST(Model, ReadoutAndHead) {
  SeededRng rng(7);
  for (auto readout : {Readout::mean, Readout::sum}) {
    ModelShape shape;
    shape.readout = readout;
    shape.d_out = 2;
    const ModelParams m = init_model(shape, 1);
    const GraphInstance g = random_graph(rng, 5, 4, 0);
    const auto out = model_forward(g, m);
    ASSERT_EQ(out.trace.hidden.size(), shape.layers);
    const Matrix pooled = readout == Readout::mean ? column_means(out.trace.hidden.back())
                                                   : column_sums(out.trace.hidden.back());
    const Matrix expected = add_row_broadcast(matmul(pooled, m.w_head), m.b_head);
    EXPECT_NEAR(out.prediction(0, 0), expected(0, 0), 1e-12);
    EXPECT_NEAR(out.prediction(0, 1), expected(0, 1), 1e-12);
  }
}

TEST(Model, PermutationInvariant) {
  SeededRng rng(8);
  for (auto p : {GatePlacement::none, GatePlacement::g1, GatePlacement::g2, GatePlacement::g3}) {
    ModelShape shape;
    shape.d_e = 2;
    shape.gate.placement = p;
    const ModelParams m = init_model(shape, 3);
    const GraphInstance g = random_graph(rng, 8, 4, 2);
    const double base = model_forward(g, m).prediction(0, 0);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<std::size_t> perm(8);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
      EXPECT_NEAR(model_forward(permuted(g, perm), m).prediction(0, 0), base, 1e-9);
    }
  }
}

TEST(Model, AttentionMaskIsHonoured) {
  SeededRng rng(9);
  GraphInstance g = random_graph(rng, 6, 4, 0);
  Mask mask(6, 6, true);
  mask.set(0, 5, false);
  mask.set(3, 1, false);
  mask.set(2, 2, false);  // forced back on by validate
  g.attn_mask = mask;
  g.validate();
  EXPECT_TRUE((*g.attn_mask)(2, 2));
  ModelShape shape;
  shape.gate.placement = GatePlacement::g3;
  const auto out = model_forward(g, init_model(shape, 0));
  for (const auto& layer : out.trace.head_traces) {
    for (const auto& t : layer) {
      EXPECT_EQ(t.attention(0, 5), 0.0);
      EXPECT_EQ(t.attention(3, 1), 0.0);
      for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (double v : t.attention.row(i)) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Model, InitIsDeterministicAndValidated) {
  ModelShape shape;
  const ModelParams a = init_model(shape, 5);
  const ModelParams b = init_model(shape, 5);
  const ModelParams c = init_model(shape, 6);
  EXPECT_EQ(a.w_in, b.w_in);
  EXPECT_EQ(a.layers[1].attn.w_o, b.layers[1].attn.w_o);
  EXPECT_NE(a.w_in, c.w_in);
  shape.layers = 0;
  EXPECT_THROW(init_model(shape, 0), ConfigError);
  shape.layers = 1;
  shape.heads = 5;
  EXPECT_THROW(init_model(shape, 0), ConfigError);
}

TEST(Model, RejectsMismatchedInput) {
  SeededRng rng(10);
  const ModelParams m = init_model(ModelShape{}, 0);
  const GraphInstance g = random_graph(rng, 4, 3, 0);
  EXPECT_THROW(model_forward(g, m), ConfigError);
}

TEST(GraphIo, RoundTripIsExact) {
  SeededRng rng(11);
  const GraphInstance g = random_graph(rng, 5, 3, 2);
  std::stringstream ss;
  write_graph(ss, g);
  const GraphInstance back = read_graph(ss);
  EXPECT_EQ(back.n, g.n);
  EXPECT_EQ(back.node_features, g.node_features);
  EXPECT_EQ(back.edges, g.edges);
  ASSERT_TRUE(back.edge_features.has_value());
  EXPECT_EQ(*back.edge_features, *g.edge_features);
}

TEST(GraphIo, FormatViolationsAreReported) {
  auto parse = [](const std::string& text) {
    std::istringstream is(text);
    return read_graph(is);
  };
  EXPECT_NO_THROW(parse("2 1 0\n1.0\n2.0\n1\n0 1\n"));
  EXPECT_THROW(parse("2 1 0\n1.0\n"), std::runtime_error);
  EXPECT_THROW(parse("2 1 0\n1.0\nabc\n0\n"), std::runtime_error);
  EXPECT_THROW(parse("2 1 0\n1.0\n2.0\n1\n0 7\n"), std::exception);
  EXPECT_THROW(parse("2 1 0\n1.0\n2.0\n0\nextra\n"), std::runtime_error);
  EXPECT_THROW(load_graph("/nonexistent/graph.txt"), std::runtime_error);
}
