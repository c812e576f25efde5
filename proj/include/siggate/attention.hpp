#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "siggate/numeric.hpp"

namespace siggate {

/// Model configuration is inconsistent (head counts, widths, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// G1 gates the SDPA output, G2 gates V before aggregation, G3 gates the
// pre-softmax logits with an n×n bilinear gate.
enum class GatePlacement { none, g1, g2, g3 };
enum class GateSharing { per_head, shared };
// Testing hook: replace the computed gate by exact ones or zeros.
enum class GateOverride { none, ones, zeros };

std::string to_string(GatePlacement p);
std::string to_string(GateSharing s);
GatePlacement parse_placement(const std::string& s);
GateSharing parse_sharing(const std::string& s);

struct GateConfig {
  GatePlacement placement = GatePlacement::g1;
  GateSharing sharing = GateSharing::per_head;
  Activation activation = Activation::sigmoid;
  double bias_init = 0.5;
  GateOverride override_gate = GateOverride::none;

  bool gated() const { return placement != GatePlacement::none; }
};

/// Query/key/value projections of one head, each d × d_k.
struct HeadParams {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
};

/// Gate projection. For G1/G2, gate = act(h·w_g + b_g) with b_g 1×d_k.
/// For G3 the gate is n×n: act((h·w_g)(h·w_g2)ᵀ/√d_k + b_g) with b_g 1×1.
struct GateParams {
  Matrix w_g;
  Matrix b_g;
  Matrix w_g2;
};

struct MhsaParams {
  std::vector<HeadParams> heads;
  // One entry per head (per_head) or a single entry (shared). Empty when
  // the placement is none.
  std::vector<GateParams> gates;
  Matrix w_o;
  GateConfig gate_config;

  std::size_t num_heads() const { return heads.size(); }
  std::size_t head_dim() const { return heads.empty() ? 0 : heads.front().w_q.cols(); }
  std::size_t model_dim() const { return w_o.cols(); }
  const GateParams& gate_for(std::size_t head) const {
    return gate_config.sharing == GateSharing::shared ? gates.front() : gates.at(head);
  }
  /// Throws ConfigError on any shape inconsistency.
  void validate() const;
};

struct HeadTrace {
  Matrix attention;  // n × n, row-stochastic
  Matrix gate;       // n × d_k (G1/G2), n × n (G3), empty (none)
  Matrix output;     // n × d_k
};

/// Intermediates kept for the backward pass of one head.
struct HeadCache {
  Matrix q, k, v;
  Matrix logits;          // QKᵀ/√d_k before any gating
  Matrix gate_pre;        // pre-activation of the gate
  Matrix gate_left;       // G3 only: h·w_g
  Matrix gate_right;      // G3 only: h·w_g2
  Matrix attn_v;          // A·V (G1) or A·(g⊙V) (G2)
  Matrix gated_v;         // G2 only
  HeadTrace trace;
};

struct AttentionResult {
  Matrix attention;
  Matrix y;
};

/// softmax(QKᵀ/√d_k)·V for one head.
AttentionResult sdpa(const Matrix& h, const HeadParams& head, const Mask* mask = nullptr);

/// act(h·w_g + b_g), n × d_k.
Matrix compute_gate(const Matrix& h, const GateParams& gate, Activation activation);

HeadTrace gated_head_forward(const Matrix& h, const HeadParams& head, const GateParams* gate,
                             const GateConfig& cfg, const Mask* mask = nullptr);

struct MhsaResult {
  Matrix out;
  std::vector<HeadTrace> traces;
};

MhsaResult siggate_mhsa(const Matrix& h, const MhsaParams& params, const Mask* mask = nullptr);

// Forward with caches, and the matching reverse pass.
struct MhsaCache {
  std::vector<HeadCache> heads;
  Matrix concat;  // n × K·d_k
};

HeadCache gated_head_forward_cached(const Matrix& h, const HeadParams& head, const GateParams* gate,
                                    const GateConfig& cfg, const Mask* mask);

MhsaResult siggate_mhsa_cached(const Matrix& h, const MhsaParams& params, const Mask* mask,
                               MhsaCache& cache);

/// Zero-valued copy of `params`, used as a gradient accumulator.
MhsaParams zeros_like(const MhsaParams& params);

/// Accumulates parameter gradients into `grads` and returns dL/dh.
Matrix siggate_mhsa_backward(const Matrix& h, const MhsaParams& params, const MhsaCache& cache,
                             const Matrix& grad_out, MhsaParams& grads);

/// Random initialization: Q/K/V/O and gate weights ~ N(0, 1/d), gate bias =
/// bias_init. With `zero_gate_weights` the gate weights start at 0.
MhsaParams init_mhsa(SeededRng& rng, std::size_t d, std::size_t num_heads, const GateConfig& cfg,
                     bool zero_gate_weights = false);

/// Gate parameters added by per-head output gating: L·K·(d·d_k + d_k).
std::int64_t gate_param_count(std::int64_t d, std::int64_t d_k, std::int64_t num_heads,
                              std::int64_t num_layers);

}  // namespace siggate
