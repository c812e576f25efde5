#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "siggate/gps.hpp"
#include "siggate/numeric.hpp"

namespace siggate {

/// ‖M‖_F² / ‖M‖₂². Throws NumericError for a zero matrix.
double stable_rank(const Matrix& m);

/// Mean over unordered node pairs of (1 - cosine similarity). Rows with norm
/// below 1e-12 are excluded; fewer than two remaining rows is an error.
double mad(const Matrix& h);

/// Mean over rows of -Σ_j A_ij ln A_ij, with 0·ln 0 = 0.
double attention_entropy(const Matrix& attn);

struct GateStats {
  double mean = 0.0;
  double std = 0.0;
  double frac_below = 0.0;  // entries < 0.1
  double frac_above = 0.0;  // entries > 0.9
  std::size_t count = 0;
};

/// Statistics over every entry of every matrix (pooled element distribution).
GateStats gate_stats(std::span<const Matrix> gates);
/// One GateStats per layer; each inner vector holds that layer's gate tensors.
std::vector<GateStats> gate_stats_per_layer(const std::vector<std::vector<Matrix>>& per_layer);
/// Pooled statistics across all layers.
GateStats gate_stats_pooled(const std::vector<std::vector<Matrix>>& per_layer);

struct RankBoundCheck {
  double srank_av = 0.0;
  double srank_a = 0.0;
  double srank_v = 0.0;
  bool holds = false;
};

/// srank(AV) ≤ min(srank(A), srank(V)) + 1e-9 for row-stochastic A.
RankBoundCheck rank_bound_holds(const Matrix& a, const Matrix& v);

struct DepthProfile {
  std::vector<double> mad;
  std::vector<double> entropy;  // mean over heads of per-head entropy
};

DepthProfile depth_profile(const LayerTrace& trace);

/// Gate tensors grouped by layer; empty when the model is ungated.
std::vector<std::vector<Matrix>> gate_tensors(const LayerTrace& trace);

struct DiagnosticsReport {
  DepthProfile profile;
  std::vector<GateStats> gates_per_layer;  // empty for ungated models
  GateStats gates_pooled;
};

DiagnosticsReport diagnose(const LayerTrace& trace);

/// CSV `layer,mad,entropy,gate_mean,gate_std,gate_below,gate_above`, one row
/// per layer and a final `pooled` row for the gate columns.
void write_diagnostics_csv(std::ostream& os, const DiagnosticsReport& r);
void write_diagnostics_json(std::ostream& os, const DiagnosticsReport& r);

}  // namespace siggate
