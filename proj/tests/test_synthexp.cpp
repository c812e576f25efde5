#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <set>
#include <sstream>

#include "siggate/synthexp.hpp"

using namespace siggate;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

double svd_stable_rank(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
  return s.squaredNorm() / (s(0) * s(0));
}

RankExpConfig miniature() {
  RankExpConfig cfg;
  cfg.n = 8;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.d_k = 4;
  cfg.seeds = {3, 4};
  cfg.keep_intermediates = true;
  return cfg;
}

}  // namespace

TEST(GaussHermite, EvenMomentsAreDoubleFactorials) {
  const Quadrature q = gauss_hermite_normal(96);
  ASSERT_EQ(q.nodes.size(), 96u);
  double w = 0.0, odd = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i) {
    w += q.weights[i];
    odd += q.weights[i] * q.nodes[i] * q.nodes[i] * q.nodes[i];
  }
  EXPECT_NEAR(w, 1.0, 1e-13);
  EXPECT_NEAR(odd, 0.0, 1e-12);
  double double_factorial = 1.0;
  for (int k = 1; k <= 6; ++k) {
    double_factorial *= 2 * k - 1;
    double m = 0.0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i) m += q.weights[i] * std::pow(q.nodes[i], 2 * k);
    EXPECT_NEAR(m, double_factorial, 1e-10 * double_factorial) << "k=" << k;
  }
}

TEST(GaussHermite, SigmoidMomentsMatchMonteCarlo) {
  const Quadrature q = gauss_hermite_normal(96);
  const GateMoments m = sigmoid_gaussian_moments(1.3, -0.4, q);
  SeededRng rng(1);
  double s = 0.0, s2 = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    const double g = sigmoid(1.3 * rng.normal() - 0.4);
    s += g;
    s2 += g * g;
  }
  EXPECT_NEAR(m.mean, s / n, 2e-3);
  EXPECT_NEAR(m.std, std::sqrt(s2 / n - (s / n) * (s / n)), 2e-3);
}

TEST(Calibration, SymmetricAndDegenerateCases) {
  const CalibratedGate flat = calibrate_gate(0.5, 0.0);
  EXPECT_EQ(flat.scale, 0.0);
  EXPECT_NEAR(flat.bias, 0.0, 1e-15);
  const CalibratedGate sym = calibrate_gate(0.5, 0.2);
  EXPECT_NEAR(sym.bias, 0.0, 1e-9);
  EXPECT_GT(sym.scale, 0.0);
  EXPECT_NEAR(calibrate_gate(0.7, 0.0).bias, std::log(0.7 / 0.3), 1e-12);
}

TEST(Calibration, HitsDefaultTargets) {
  const CalibratedGate cal = calibrate_gate(0.58, 0.19);
  EXPECT_NEAR(cal.attained_mean, 0.58, 1e-9);
  EXPECT_NEAR(cal.attained_std, 0.19, 1e-9);
  const GateMoments check = sigmoid_gaussian_moments(cal.scale, cal.bias, gauss_hermite_normal(96));
  EXPECT_NEAR(check.mean, 0.58, 1e-9);
  EXPECT_NEAR(check.std, 0.19, 1e-9);
  const CalibratedGate again = calibrate_gate(0.58, 0.19);
  EXPECT_EQ(cal.scale, again.scale);
  EXPECT_EQ(cal.bias, again.bias);
}

TEST(Calibration, RejectsInfeasibleTargets) {
  EXPECT_THROW(calibrate_gate(0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(calibrate_gate(1.2, 0.1), std::invalid_argument);
  EXPECT_THROW(calibrate_gate(0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(calibrate_gate(0.9, 0.31), std::invalid_argument);
  EXPECT_THROW(calibrate_gate(0.5, -0.1), std::invalid_argument);
}

TEST(RankExperiment, MiniatureMatchesSvdRecomputation) {
  const RankExpResult r = run_rank_experiment(miniature());
  ASSERT_EQ(r.heads.size(), 4u);
  ASSERT_EQ(r.per_seed.size(), 2u);
  for (const auto& h : r.heads) {
    ASSERT_EQ(h.attention.rows(), 8u);
    for (std::size_t i = 0; i < 8; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 8; ++j) s += h.attention(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const Eigen::MatrixXd y = to_eigen(h.attention) * to_eigen(h.values);
    EXPECT_LT((y - to_eigen(h.output)).norm(), 1e-12);
    EXPECT_NEAR(h.srank_ungated, svd_stable_rank(y), 1e-9);
    EXPECT_NEAR(h.srank_gated, svd_stable_rank(y.cwiseProduct(to_eigen(h.gate))), 1e-9);
  }
  for (std::size_t s = 0; s < 2; ++s) {
    const double u = 0.5 * (r.heads[2 * s].srank_ungated + r.heads[2 * s + 1].srank_ungated);
    const double g = 0.5 * (r.heads[2 * s].srank_gated + r.heads[2 * s + 1].srank_gated);
    EXPECT_NEAR(r.per_seed[s].relative_gain, (g - u) / u, 1e-14);
  }
  EXPECT_NEAR(r.mean_gain, 0.5 * (r.per_seed[0].relative_gain + r.per_seed[1].relative_gain), 1e-15);
}

TEST(RankExperiment, UnitGateGivesZeroGain) {
  RankExpConfig cfg = miniature();
  cfg.rho = 0.0;
  cfg.force_unit_gate = true;
  const RankExpResult r = run_rank_experiment(cfg);
  for (const auto& h : r.heads) EXPECT_EQ(h.srank_gated, h.srank_ungated);
  EXPECT_EQ(r.mean_gain, 0.0);
  EXPECT_EQ(r.attained_gate_mean, 1.0);
}

TEST(RankExperiment, LowConcentrationCollapsesUngatedRank) {
  RankExpConfig cfg = miniature();
  cfg.n = 32;
  cfg.d = 32;
  cfg.heads = 2;
  cfg.d_k = 16;
  cfg.c = 1e-4;
  cfg.rho = 0.0;
  const RankExpResult r = run_rank_experiment(cfg);
  for (const auto& h : r.heads) {
    EXPECT_LT(h.srank_ungated, 1.0 + 1e-3);
    EXPECT_GT(h.srank_gated, h.srank_ungated);
  }
}

TEST(RankExperiment, GatedExceedsUngatedForNearlyAllDraws) {
  const RankExpResult r = run_rank_experiment(RankExpConfig{});
  std::size_t positive = 0;
  for (const auto& h : r.heads) positive += h.srank_gated > h.srank_ungated ? 1 : 0;
  EXPECT_GE(static_cast<double>(positive), 0.95 * static_cast<double>(r.heads.size()));
  for (const auto& s : r.per_seed) EXPECT_GT(s.relative_gain, 0.0);
}

TEST(RankExperiment, ThreadsDoNotChangeResults) {
  RankExpConfig cfg = miniature();
  cfg.keep_intermediates = false;
  cfg.seeds = {0, 1, 2, 3, 4, 5};
  const RankExpResult a = run_rank_experiment(cfg);
  cfg.threads = 4;
  const RankExpResult b = run_rank_experiment(cfg);
  ASSERT_EQ(a.per_seed.size(), b.per_seed.size());
  for (std::size_t i = 0; i < a.per_seed.size(); ++i) {
    EXPECT_EQ(a.per_seed[i].seed, b.per_seed[i].seed);
    EXPECT_EQ(a.per_seed[i].relative_gain, b.per_seed[i].relative_gain);
  }
  EXPECT_EQ(a.attained_gate_std, b.attained_gate_std);
}

TEST(RankExperiment, InvalidConfigsThrow) {
  RankExpConfig cfg;
  cfg.d_k = 0;
  EXPECT_THROW(run_rank_experiment(cfg), ConfigError);
  cfg = RankExpConfig{};
  cfg.rho = 1.0;
  EXPECT_THROW(run_rank_experiment(cfg), ConfigError);
  cfg = RankExpConfig{};
  cfg.seeds.clear();
  EXPECT_THROW(run_rank_experiment(cfg), ConfigError);
  cfg = RankExpConfig{};
  cfg.target_gate_std = 0.6;
  EXPECT_THROW(run_rank_experiment(cfg), std::exception);
}

TEST(RobustnessSweep, CellsAndCsv) {
  RankExpConfig cfg = miniature();
  cfg.keep_intermediates = false;
  const auto cells = run_robustness_sweep(cfg, {0.5, 2.0}, {0.1});
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0].config_id, "c=0.5");
  EXPECT_EQ(cells[1].config_id, "c=2");
  EXPECT_EQ(cells[2].config_id, "rho=0.1");
  EXPECT_EQ(cells[2].c, cfg.c);

  RankExpConfig direct = cfg;
  direct.c = 2.0;
  EXPECT_EQ(run_rank_experiment(direct).mean_gain, cells[1].result.mean_gain);

  std::ostringstream rows, agg;
  write_rank_results_csv(rows, cells);
  write_rank_aggregate_csv(agg, cells);
  std::size_t lines = 0;
  for (char ch : rows.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 3u * 2u);
  EXPECT_EQ(rows.str().substr(0, rows.str().find('\n')), "config_id,c,rho,seed,srank_ungated,srank_gated,rel_gain");
  EXPECT_NE(agg.str().find(",mean,"), std::string::npos);
  EXPECT_NE(agg.str().find(",std,"), std::string::npos);
}

TEST(ToyTask, EdgelessGraphsAreLabelledByFeatures) {
  ToyTaskConfig cfg;
  cfg.edge_prob = 0.0;
  cfg.n_graphs = 6;
  const SyntheticTask task = make_toy_task(2, cfg);
  for (std::size_t i = 0; i < task.graphs.size(); ++i) {
    EXPECT_TRUE(task.graphs[i].edges.empty());
    double s = 0.0;
    for (double x : task.graphs[i].node_features.data()) s += x;
    EXPECT_NEAR(task.targets[i](0, 0), 0.1 * s, 1e-12);
  }
}

TEST(ToyTask, TriangleCountMatchesTraceOracle) {
  const SyntheticTask task = make_toy_task(7);
  ASSERT_EQ(task.graphs.size(), 64u);
  double total_triangles = 0.0;
  for (std::size_t i = 0; i < task.graphs.size(); ++i) {
    const GraphInstance& g = task.graphs[i];
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(g.n, g.n);
    for (const Edge& e : g.edges) adj(e.src, e.dst) = 1.0;
    EXPECT_EQ((adj - adj.transpose()).norm(), 0.0);
    EXPECT_EQ(adj.diagonal().norm(), 0.0);
    const double triangles = (adj * adj * adj).trace() / 6.0;
    total_triangles += triangles;
    double s = 0.0;
    for (double x : g.node_features.data()) s += x;
    EXPECT_NEAR(task.targets[i](0, 0), 0.25 * triangles + 0.1 * s, 1e-12);
  }
  EXPECT_GT(total_triangles, 0.0);
}

TEST(ToyTask, SplitIsAPartition) {
  const SyntheticTask task = make_toy_task(1);
  EXPECT_EQ(task.test.size(), 16u);
  EXPECT_EQ(task.train.size(), 48u);
  std::set<std::size_t> all(task.train.begin(), task.train.end());
  all.insert(task.test.begin(), task.test.end());
  EXPECT_EQ(all.size(), 64u);
  EXPECT_TRUE(std::is_sorted(task.train.begin(), task.train.end()));
}

TEST(ToyTask, DeterministicPerSeed) {
  const SyntheticTask a = make_toy_task(5), b = make_toy_task(5), c = make_toy_task(6);
  EXPECT_EQ(a.graphs, b.graphs);
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.graphs, c.graphs);
  ToyTaskConfig tiny;
  tiny.n_graphs = 1;
  EXPECT_THROW(make_toy_task(0, tiny), std::exception);
}
