#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "siggate/attention.hpp"
#include "siggate/numeric.hpp"

namespace siggate {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// An attributed graph. Edges are directed; an undirected edge is two entries.
struct GraphInstance {
  std::size_t n = 0;
  Matrix node_features;                // n × d_in
  std::vector<Edge> edges;
  std::optional<Matrix> edge_features; // |E| × d_e
  std::optional<Mask> attn_mask;       // n × n, diagonal forced true

  std::size_t edge_dim() const { return edge_features ? edge_features->cols() : 0; }
  /// Checks ranges and shapes; forces the mask diagonal on.
  void validate();
  friend bool operator==(const GraphInstance&, const GraphInstance&) = default;
};

/// Text format: `n d_in d_e`, n feature rows, `m`, then m lines
/// `src dst [edge features]`. Values are written with 17 significant digits.
void write_graph(std::ostream& os, const GraphInstance& g);
GraphInstance read_graph(std::istream& is);
GraphInstance load_graph(const std::string& path);
void save_graph(const std::string& path, const GraphInstance& g);

struct MpnnParams {
  Matrix w_edge;  // (2d + d_e) × d
  Matrix w_val;   // d × d
};

struct LayerNormParams {
  Matrix scale;  // 1 × d
  Matrix shift;  // 1 × d
};

struct FfnParams {
  Matrix w1;  // d × d_ff
  Matrix b1;  // 1 × d_ff
  Matrix w2;  // d_ff × d
  Matrix b2;  // 1 × d
};

struct GpsLayerParams {
  MpnnParams mpnn;
  MhsaParams attn;
  FfnParams ffn;
  LayerNormParams ln1;
  LayerNormParams ln2;
};

enum class Readout { mean, sum };
std::string to_string(Readout r);
Readout parse_readout(const std::string& s);

struct ModelParams {
  Matrix w_in;  // d_in × d
  Matrix b_in;  // 1 × d
  std::vector<GpsLayerParams> layers;
  Matrix w_head;  // d × d_out
  Matrix b_head;  // 1 × d_out
  Readout readout = Readout::mean;
};

struct ModelShape {
  std::size_t d_in = 4;
  std::size_t d_e = 0;
  std::size_t d = 16;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_ff = 32;
  std::size_t d_out = 1;
  Readout readout = Readout::mean;
  GateConfig gate;
  bool zero_gate_weights = false;
};

ModelParams init_model(const ModelShape& shape, std::uint64_t seed);

/// Per-layer capture for diagnostics.
struct LayerTrace {
  std::vector<Matrix> hidden;                        // post-layer h, one per layer
  std::vector<std::vector<HeadTrace>> head_traces;   // [layer][head]
};

/// Row-wise normalization to zero mean / unit variance (ε = 1e-5), then affine.
Matrix layer_norm(const Matrix& h, const Matrix& scale, const Matrix& shift);

/// Sum over incoming edges j→i of σ([h_i‖h_j‖e_ij]·w_edge) ⊙ (h_j·w_val).
Matrix mpnn_forward(const GraphInstance& g, const Matrix& h, const MpnnParams& p);

struct GpsLayerResult {
  Matrix h_next;
  std::vector<HeadTrace> head_traces;
};

GpsLayerResult gps_layer_forward(const GraphInstance& g, const Matrix& h, const GpsLayerParams& p);

struct ModelOutput {
  Matrix prediction;  // 1 × d_out
  LayerTrace trace;
};

ModelOutput model_forward(const GraphInstance& g, const ModelParams& m);

// Reverse pass. The cache holds every intermediate the backward needs.
struct LayerNormCache {
  Matrix normalized;
  std::vector<double> inv_std;
};

struct MpnnCache {
  Matrix edge_input;  // |E| × (2d + d_e)
  Matrix edge_gate;   // |E| × d
  Matrix values;      // |E| × d
};

struct GpsLayerCache {
  Matrix input;
  MpnnCache mpnn;
  MhsaCache attn;
  LayerNormCache ln1;
  Matrix ln1_out;
  Matrix ffn_pre;   // t·w1 + b1
  Matrix ffn_act;   // gelu(ffn_pre)
  LayerNormCache ln2;
};

struct ModelCache {
  std::vector<GpsLayerCache> layers;
  Matrix final_hidden;
  Matrix pooled;
};

ModelOutput model_forward_cached(const GraphInstance& g, const ModelParams& m, ModelCache& cache);

/// Accumulates dL/dθ for one graph into `grads` (same structure as `m`).
void model_backward(const GraphInstance& g, const ModelParams& m, const ModelCache& cache,
                    const Matrix& grad_prediction, ModelParams& grads);

/// Zero-valued copy with the same structure and shapes.
ModelParams zeros_like(const ModelParams& m);

// Exposed for unit tests of the individual blocks.
Matrix layer_norm_cached(const Matrix& h, const Matrix& scale, const Matrix& shift,
                         LayerNormCache& cache);
Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& scale, const Matrix& grad_out,
                           Matrix& grad_scale, Matrix& grad_shift);
double gelu(double x);
double gelu_derivative(double x);

}  // namespace siggate
