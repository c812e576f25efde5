#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "siggate/numeric.hpp"
#include "siggate/training.hpp"

namespace siggate {

/// Nodes and weights for E[f(Z)], Z ~ N(0, 1): Σ w_i f(x_i).
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Hermite rule for the standard normal weight.
Quadrature gauss_hermite_normal(std::size_t order);

struct GateMoments {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and std of σ(scale·Z + bias), Z ~ N(0, 1), by quadrature.
GateMoments sigmoid_gaussian_moments(double scale, double bias, const Quadrature& q);

struct CalibratedGate {
  double scale = 0.0;
  double bias = 0.0;
  double attained_mean = 0.0;
  double attained_std = 0.0;
};

/// Finds (scale, bias) so that σ(scale·Z + bias) has the requested moments.
/// Nested bisection: bias matches the mean for a given scale, and the std at
/// matched mean increases with scale. Uses a 96-node Gauss-Hermite rule.
CalibratedGate calibrate_gate(double target_mean, double target_std);

struct RankExpConfig {
  std::size_t n = 64;
  std::size_t d = 256;
  std::size_t heads = 8;
  std::size_t d_k = 32;
  double rho = 0.20;
  double c = 1.0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double target_gate_mean = 0.58;
  double target_gate_std = 0.19;
  bool force_unit_gate = false;     // gate ≡ 1
  bool keep_intermediates = false;  // store per-head A, V, Y, g
  int threads = 1;

  void validate() const;
};

struct HeadSample {
  std::uint64_t seed = 0;
  std::size_t head = 0;
  double srank_ungated = 0.0;
  double srank_gated = 0.0;
  Matrix attention, values, output, gate;  // only with keep_intermediates
};

struct SeedResult {
  std::uint64_t seed = 0;
  double srank_ungated = 0.0;  // mean over heads
  double srank_gated = 0.0;
  double relative_gain = 0.0;  // (gated - ungated) / ungated
};

struct RankExpResult {
  std::vector<SeedResult> per_seed;
  std::vector<HeadSample> heads;
  double mean_ungated = 0.0, std_ungated = 0.0;
  double mean_gated = 0.0, std_gated = 0.0;
  double mean_gain = 0.0, std_gain = 0.0;  // over seeds
  CalibratedGate calibration;
  double attained_gate_mean = 0.0;  // pooled over all gate entries
  double attained_gate_std = 0.0;
};

RankExpResult run_rank_experiment(const RankExpConfig& cfg);

struct SweepCell {
  std::string config_id;
  double c = 0.0;
  double rho = 0.0;
  RankExpResult result;
};

/// Concentration sweep at the base ρ, then sparsity sweep at the base c.
std::vector<SweepCell> run_robustness_sweep(const RankExpConfig& base,
                                            const std::vector<double>& c_values = {0.5, 1.0, 1.5, 2.0, 3.0},
                                            const std::vector<double>& rho_values = {0.05, 0.20, 0.40, 0.60});

/// CSV `config_id,c,rho,seed,srank_ungated,srank_gated,rel_gain`.
void write_rank_results_csv(std::ostream& os, const std::vector<SweepCell>& cells);
/// Same columns, with `seed` replaced by `mean` / `std` rows per config.
void write_rank_aggregate_csv(std::ostream& os, const std::vector<SweepCell>& cells);

struct ToyTaskConfig {
  std::size_t n_graphs = 64;
  std::size_t nodes_per_graph = 8;
  std::size_t d_in = 4;
  double edge_prob = 0.35;
  double test_fraction = 0.25;
  double triangle_weight = 0.25;
  double feature_weight = 0.1;
};

/// Random undirected graphs labelled by
/// triangle_weight·(#triangles) + feature_weight·Σ node features.
SyntheticTask make_toy_task(std::uint64_t seed, const ToyTaskConfig& cfg = {});

}  // namespace siggate
