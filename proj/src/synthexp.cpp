#include "siggate/synthexp.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "siggate/attention.hpp"
#include "siggate/diagnostics.hpp"
#include "siggate/parallel.hpp"

namespace siggate {

namespace {

constexpr std::size_t kCalibrationOrder = 96;

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Population standard deviation.
double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::string format_double(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

// Bias that makes the gate mean equal `target` at a fixed scale.
double match_bias(double scale, double target, const Quadrature& q) {
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sigmoid_gaussian_moments(scale, mid, q).mean < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

Quadrature gauss_hermite_normal(std::size_t order) {
  if (order == 0) throw std::invalid_argument("gauss_hermite_normal: order must be positive");
  // Newton iteration on the orthonormal Hermite recurrence (weight e^{-x²}),
  // then the change of variables x → √2·x, w → w/√π.
  const std::size_t n = order;
  std::vector<double> x(n), w(n);
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  const std::size_t m = (n + 1) / 2;
  double z = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double nd = static_cast<double>(n);
    if (i == 0) {
      z = std::sqrt(2.0 * nd + 1.0) - 1.85575 * std::pow(2.0 * nd + 1.0, -1.0 / 6.0);
    } else if (i == 1) {
      z -= 1.14 * std::pow(nd, 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double jd = static_cast<double>(j);
        p1 = z * std::sqrt(2.0 / (jd + 1.0)) * p2 - std::sqrt(jd / (jd + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * nd) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
  Quadrature q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    q.nodes[i] = std::numbers::sqrt2 * x[n - 1 - i];
    q.weights[i] = w[n - 1 - i] * inv_sqrt_pi;
  }
  return q;
}

GateMoments sigmoid_gaussian_moments(double scale, double bias, const Quadrature& q) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i) {
    const double s = sigmoid(scale * q.nodes[i] + bias);
    m1 += q.weights[i] * s;
    m2 += q.weights[i] * s * s;
  }
  return {m1, std::sqrt(std::max(0.0, m2 - m1 * m1))};
}

CalibratedGate calibrate_gate(double target_mean, double target_std) {
  if (!(target_mean > 0.0 && target_mean < 1.0)) {
    throw std::invalid_argument("calibrate_gate: target mean must lie in (0, 1), got " + format_double(target_mean));
  }
  const double max_std = std::sqrt(target_mean * (1.0 - target_mean));
  if (!(target_std >= 0.0 && target_std < max_std)) {
    throw std::invalid_argument("calibrate_gate: target std " + format_double(target_std) +
                                " is infeasible at mean " + format_double(target_mean) +
                                "; feasible range is [0, " + format_double(max_std) + ")");
  }
  const Quadrature q = gauss_hermite_normal(kCalibrationOrder);
  CalibratedGate out;
  if (target_std == 0.0) {
    out.scale = 0.0;
    out.bias = std::log(target_mean / (1.0 - target_mean));
  } else {
    auto std_at = [&](double scale) {
      return sigmoid_gaussian_moments(scale, match_bias(scale, target_mean, q), q).std;
    };
    double lo = 0.0, hi = 1.0;
    while (std_at(hi) < target_std) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e4) {
        throw std::invalid_argument("calibrate_gate: no scale reaches std " + format_double(target_std));
      }
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (std_at(mid) < target_std) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    out.scale = 0.5 * (lo + hi);
    out.bias = match_bias(out.scale, target_mean, q);
  }
  const auto mom = sigmoid_gaussian_moments(out.scale, out.bias, q);
  out.attained_mean = mom.mean;
  out.attained_std = mom.std;
  return out;
}

void RankExpConfig::validate() const {
  if (n == 0 || d == 0 || heads == 0 || d_k == 0) throw ConfigError("rank experiment: sizes must be positive");
  if (d_k * heads != d) {
    throw ConfigError("rank experiment: d_k·K = " + std::to_string(d_k * heads) + " must equal d = " +
                      std::to_string(d));
  }
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rank experiment: rho must lie in [0, 1), got " + format_double(rho));
  if (!(c > 0.0)) throw ConfigError("rank experiment: c must be positive, got " + format_double(c));
  if (seeds.empty()) throw ConfigError("rank experiment: at least one seed is required");
}

namespace {

struct SeedOutcome {
  SeedResult summary;
  std::vector<HeadSample> heads;
  std::vector<double> gate_sum_sq;  // {Σg, Σg², count}
};

SeedOutcome run_one_seed(const RankExpConfig& cfg, const CalibratedGate& cal, std::uint64_t seed) {
  SeededRng rng(seed);
  const Matrix h = gaussian_matrix(rng, cfg.n, cfg.d, 1.0);
  // One mask per seed, shared by all heads, like a graph's connectivity.
  Mask mask(cfg.n, cfg.n, true);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (std::size_t j = 0; j < cfg.n; ++j) {
      const double u = rng.uniform();
      if (i != j && u < cfg.rho) mask.set(i, j, false);
    }
  }
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));

  SeedOutcome out;
  double g_sum = 0.0, g_sq = 0.0, g_count = 0.0;
  std::vector<double> ungated, gated;
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    const Matrix w_q = gaussian_matrix(rng, cfg.d, cfg.d_k, proj_std);
    const Matrix w_k = gaussian_matrix(rng, cfg.d, cfg.d_k, proj_std);
    const Matrix w_v = gaussian_matrix(rng, cfg.d, cfg.d_k, proj_std);
    const Matrix w_g = gaussian_matrix(rng, cfg.d, cfg.d_k, proj_std);
    const Matrix q = matmul(h, w_q);
    const Matrix kk = matmul(h, w_k);
    Matrix v = matmul(h, w_v);
    Matrix logits = matmul_nt(q, kk);
    logits *= cfg.c * inv_sqrt_dk;
    Matrix a = row_softmax(logits, &mask);
    Matrix y = matmul(a, v);
    Matrix g(cfg.n, cfg.d_k, 1.0);
    if (!cfg.force_unit_gate) {
      const Matrix pre = matmul(h, w_g);
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = sigmoid(cal.scale * pre.data()[i] + cal.bias);
    }
    for (double x : g.data()) {
      g_sum += x;
      g_sq += x * x;
      g_count += 1.0;
    }
    Matrix yg = hadamard(y, g);
    HeadSample sample;
    sample.seed = seed;
    sample.head = k;
    sample.srank_ungated = stable_rank(y);
    sample.srank_gated = stable_rank(yg);
    ungated.push_back(sample.srank_ungated);
    gated.push_back(sample.srank_gated);
    if (cfg.keep_intermediates) {
      sample.attention = std::move(a);
      sample.values = std::move(v);
      sample.output = std::move(y);
      sample.gate = std::move(g);
    }
    out.heads.push_back(std::move(sample));
  }
  out.summary.seed = seed;
  out.summary.srank_ungated = mean_of(ungated);
  out.summary.srank_gated = mean_of(gated);
  out.summary.relative_gain = (out.summary.srank_gated - out.summary.srank_ungated) / out.summary.srank_ungated;
  out.gate_sum_sq = {g_sum, g_sq, g_count};
  return out;
}

}  // namespace

RankExpResult run_rank_experiment(const RankExpConfig& cfg) {
  cfg.validate();
  RankExpResult r;
  if (!cfg.force_unit_gate) r.calibration = calibrate_gate(cfg.target_gate_mean, cfg.target_gate_std);

  std::vector<SeedOutcome> outcomes(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads,
               [&](std::size_t i) { outcomes[i] = run_one_seed(cfg, r.calibration, cfg.seeds[i]); });

  std::vector<double> ungated, gated, gains;
  double g_sum = 0.0, g_sq = 0.0, g_count = 0.0;
  for (auto& o : outcomes) {
    r.per_seed.push_back(o.summary);
    ungated.push_back(o.summary.srank_ungated);
    gated.push_back(o.summary.srank_gated);
    gains.push_back(o.summary.relative_gain);
    for (auto& h : o.heads) r.heads.push_back(std::move(h));
    g_sum += o.gate_sum_sq[0];
    g_sq += o.gate_sum_sq[1];
    g_count += o.gate_sum_sq[2];
  }
  r.mean_ungated = mean_of(ungated);
  r.std_ungated = std_of(ungated);
  r.mean_gated = mean_of(gated);
  r.std_gated = std_of(gated);
  r.mean_gain = mean_of(gains);
  r.std_gain = std_of(gains);
  r.attained_gate_mean = g_sum / g_count;
  r.attained_gate_std = std::sqrt(std::max(0.0, g_sq / g_count - r.attained_gate_mean * r.attained_gate_mean));
  return r;
}

std::vector<SweepCell> run_robustness_sweep(const RankExpConfig& base, const std::vector<double>& c_values,
                                            const std::vector<double>& rho_values) {
  base.validate();
  std::vector<SweepCell> cells;
  for (double c : c_values) cells.push_back({"c=" + format_double(c), c, base.rho, {}});
  for (double rho : rho_values) cells.push_back({"rho=" + format_double(rho), base.c, rho, {}});
  for (auto& cell : cells) {
    RankExpConfig cfg = base;
    cfg.c = cell.c;
    cfg.rho = cell.rho;
    cell.result = run_rank_experiment(cfg);
  }
  return cells;
}

void write_rank_results_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  const auto old_precision = os.precision(17);
  os << "config_id,c,rho,seed,srank_ungated,srank_gated,rel_gain\n";
  for (const auto& cell : cells) {
    for (const auto& s : cell.result.per_seed) {
      os << cell.config_id << ',' << cell.c << ',' << cell.rho << ',' << s.seed << ',' << s.srank_ungated << ','
         << s.srank_gated << ',' << s.relative_gain << '\n';
    }
  }
  os.precision(old_precision);
}

void write_rank_aggregate_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  const auto old_precision = os.precision(17);
  os << "config_id,c,rho,seed,srank_ungated,srank_gated,rel_gain\n";
  for (const auto& cell : cells) {
    const auto& r = cell.result;
    os << cell.config_id << ',' << cell.c << ',' << cell.rho << ",mean," << r.mean_ungated << ',' << r.mean_gated
       << ',' << r.mean_gain << '\n';
    os << cell.config_id << ',' << cell.c << ',' << cell.rho << ",std," << r.std_ungated << ',' << r.std_gated
       << ',' << r.std_gain << '\n';
  }
  os.precision(old_precision);
}

SyntheticTask make_toy_task(std::uint64_t seed, const ToyTaskConfig& cfg) {
  if (cfg.n_graphs < 2 || cfg.nodes_per_graph == 0 || cfg.d_in == 0) {
    throw std::invalid_argument("make_toy_task: need at least two graphs and positive sizes");
  }
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) {
    throw std::invalid_argument("make_toy_task: test_fraction must lie in (0, 1)");
  }
  SeededRng rng(seed);
  SyntheticTask task;
  task.d_in = cfg.d_in;
  const std::size_t n = cfg.nodes_per_graph;
  for (std::size_t gi = 0; gi < cfg.n_graphs; ++gi) {
    GraphInstance g;
    g.n = n;
    g.node_features = gaussian_matrix(rng, n, cfg.d_in, 1.0);
    std::vector<char> adj(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (rng.uniform() < cfg.edge_prob) {
          adj[i * n + j] = adj[j * n + i] = 1;
          g.edges.push_back({i, j});
          g.edges.push_back({j, i});
        }
      }
    }
    std::size_t triangles = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        for (std::size_t k = j + 1; k < n; ++k)
          triangles += (adj[i * n + j] && adj[j * n + k] && adj[i * n + k]) ? 1 : 0;
    double feature_sum = 0.0;
    for (double x : g.node_features.data()) feature_sum += x;
    g.validate();
    task.graphs.push_back(std::move(g));
    task.targets.push_back(
        Matrix(1, 1, cfg.triangle_weight * static_cast<double>(triangles) + cfg.feature_weight * feature_sum));
  }
  std::vector<std::size_t> order(cfg.n_graphs);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  auto n_test = static_cast<std::size_t>(std::round(cfg.test_fraction * static_cast<double>(cfg.n_graphs)));
  n_test = std::clamp<std::size_t>(n_test, 1, cfg.n_graphs - 1);
  task.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  task.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(task.test.begin(), task.test.end());
  std::sort(task.train.begin(), task.train.end());
  return task;
}

}  // namespace siggate
