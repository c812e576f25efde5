#include "siggate/attention.hpp"

#include <cmath>

namespace siggate {

std::string to_string(GatePlacement p) {
  switch (p) {
    case GatePlacement::none: return "none";
    case GatePlacement::g1: return "G1";
    case GatePlacement::g2: return "G2";
    case GatePlacement::g3: return "G3";
  }
  return "?";
}

std::string to_string(GateSharing s) {
  return s == GateSharing::shared ? "shared" : "per_head";
}

GatePlacement parse_placement(const std::string& s) {
  if (s == "none" || s == "None") return GatePlacement::none;
  if (s == "G1" || s == "g1") return GatePlacement::g1;
  if (s == "G2" || s == "g2") return GatePlacement::g2;
  if (s == "G3" || s == "g3") return GatePlacement::g3;
  throw std::invalid_argument("unknown gate placement '" + s + "'");
}

GateSharing parse_sharing(const std::string& s) {
  if (s == "per_head") return GateSharing::per_head;
  if (s == "shared") return GateSharing::shared;
  throw std::invalid_argument("unknown gate sharing '" + s + "'");
}

void MhsaParams::validate() const {
  if (heads.empty()) throw ConfigError("MHSA: at least one head is required");
  const std::size_t d = heads.front().w_q.rows();
  const std::size_t dk = heads.front().w_q.cols();
  for (std::size_t k = 0; k < heads.size(); ++k) {
    const auto& h = heads[k];
    for (const Matrix* w : {&h.w_q, &h.w_k, &h.w_v}) {
      if (w->rows() != d || w->cols() != dk) {
        throw ConfigError("MHSA: head " + std::to_string(k) + " projection " + w->shape_string() +
                          " differs from " + heads.front().w_q.shape_string());
      }
    }
  }
  if (w_o.rows() != dk * heads.size()) {
    throw ConfigError("MHSA: w_o " + w_o.shape_string() + " expects " +
                      std::to_string(dk * heads.size()) + " input rows (K*d_k)");
  }
  if (!gate_config.gated()) return;
  const std::size_t expected = gate_config.sharing == GateSharing::shared ? 1 : heads.size();
  if (gates.size() != expected) {
    throw ConfigError("MHSA: expected " + std::to_string(expected) + " gate parameter sets, got " +
                      std::to_string(gates.size()));
  }
  for (const auto& g : gates) {
    if (g.w_g.rows() != d || g.w_g.cols() != dk) {
      throw ConfigError("MHSA: gate weight " + g.w_g.shape_string() + " must be " +
                        heads.front().w_q.shape_string());
    }
    if (gate_config.placement == GatePlacement::g3) {
      if (!g.w_g2.same_shape(g.w_g) || g.b_g.rows() != 1 || g.b_g.cols() != 1) {
        throw ConfigError("MHSA: G3 gate needs w_g2 " + g.w_g.shape_string() + " and a 1x1 bias");
      }
    } else if (g.b_g.rows() != 1 || g.b_g.cols() != dk) {
      throw ConfigError("MHSA: gate bias " + g.b_g.shape_string() + " must be (1x" +
                        std::to_string(dk) + ")");
    }
  }
}

AttentionResult sdpa(const Matrix& h, const HeadParams& head, const Mask* mask) {
  const Matrix q = matmul(h, head.w_q);
  const Matrix k = matmul(h, head.w_k);
  const Matrix v = matmul(h, head.w_v);
  Matrix logits = matmul_nt(q, k) * (1.0 / std::sqrt(static_cast<double>(q.cols())));
  Matrix attn = row_softmax(logits, mask);
  Matrix y = matmul(attn, v);
  return {std::move(attn), std::move(y)};
}

Matrix compute_gate(const Matrix& h, const GateParams& gate, Activation activation) {
  return elementwise(activation, add_row_broadcast(matmul(h, gate.w_g), gate.b_g));
}

namespace {

Matrix overridden(const Matrix& like, GateOverride o) {
  return Matrix(like.rows(), like.cols(), o == GateOverride::ones ? 1.0 : 0.0);
}

}  // namespace

HeadCache gated_head_forward_cached(const Matrix& h, const HeadParams& head, const GateParams* gate,
                                    const GateConfig& cfg, const Mask* mask) {
  if (cfg.gated() && gate == nullptr) throw ConfigError("gated head requires gate parameters");
  HeadCache c;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head.w_q.cols()));
  c.q = matmul(h, head.w_q);
  c.k = matmul(h, head.w_k);
  c.v = matmul(h, head.w_v);
  c.logits = matmul_nt(c.q, c.k) * inv_sqrt_dk;
  const std::size_t n = h.rows();

  switch (cfg.placement) {
    case GatePlacement::none: {
      c.trace.attention = row_softmax(c.logits, mask);
      c.attn_v = matmul(c.trace.attention, c.v);
      c.trace.output = c.attn_v;
      break;
    }
    case GatePlacement::g1: {
      c.trace.attention = row_softmax(c.logits, mask);
      c.attn_v = matmul(c.trace.attention, c.v);
      c.gate_pre = add_row_broadcast(matmul(h, gate->w_g), gate->b_g);
      c.trace.gate = cfg.override_gate == GateOverride::none
                         ? elementwise(cfg.activation, c.gate_pre)
                         : overridden(c.gate_pre, cfg.override_gate);
      c.trace.output = hadamard(c.attn_v, c.trace.gate);
      break;
    }
    case GatePlacement::g2: {
      c.trace.attention = row_softmax(c.logits, mask);
      c.gate_pre = add_row_broadcast(matmul(h, gate->w_g), gate->b_g);
      c.trace.gate = cfg.override_gate == GateOverride::none
                         ? elementwise(cfg.activation, c.gate_pre)
                         : overridden(c.gate_pre, cfg.override_gate);
      c.gated_v = hadamard(c.trace.gate, c.v);
      c.attn_v = matmul(c.trace.attention, c.gated_v);
      c.trace.output = c.attn_v;
      break;
    }
    case GatePlacement::g3: {
      c.gate_left = matmul(h, gate->w_g);
      c.gate_right = matmul(h, gate->w_g2);
      c.gate_pre = matmul_nt(c.gate_left, c.gate_right) * inv_sqrt_dk;
      for (double& z : c.gate_pre.data()) z += gate->b_g(0, 0);
      c.trace.gate = cfg.override_gate == GateOverride::none
                         ? elementwise(cfg.activation, c.gate_pre)
                         : overridden(c.gate_pre, cfg.override_gate);
      if (c.trace.gate.rows() != n || c.trace.gate.cols() != n) {
        throw DimensionError("G3 gate " + c.trace.gate.shape_string() + " must match logits " +
                             c.logits.shape_string());
      }
      c.trace.attention = row_softmax(hadamard(c.trace.gate, c.logits), mask);
      c.attn_v = matmul(c.trace.attention, c.v);
      c.trace.output = c.attn_v;
      break;
    }
  }
  return c;
}

HeadTrace gated_head_forward(const Matrix& h, const HeadParams& head, const GateParams* gate,
                             const GateConfig& cfg, const Mask* mask) {
  return gated_head_forward_cached(h, head, gate, cfg, mask).trace;
}

MhsaResult siggate_mhsa_cached(const Matrix& h, const MhsaParams& params, const Mask* mask,
                               MhsaCache& cache) {
  params.validate();
  if (h.cols() != params.heads.front().w_q.rows()) {
    throw ConfigError("MHSA: input " + h.shape_string() + " does not match projection " +
                      params.heads.front().w_q.shape_string());
  }
  const std::size_t num_heads = params.num_heads();
  cache.heads.clear();
  cache.heads.reserve(num_heads);
  std::vector<Matrix> outputs;
  outputs.reserve(num_heads);
  MhsaResult result;
  for (std::size_t k = 0; k < num_heads; ++k) {
    const GateParams* gate = params.gate_config.gated() ? &params.gate_for(k) : nullptr;
    cache.heads.push_back(gated_head_forward_cached(h, params.heads[k], gate, params.gate_config, mask));
    outputs.push_back(cache.heads.back().trace.output);
    result.traces.push_back(cache.heads.back().trace);
  }
  cache.concat = hconcat(outputs);
  result.out = matmul(cache.concat, params.w_o);
  return result;
}

MhsaResult siggate_mhsa(const Matrix& h, const MhsaParams& params, const Mask* mask) {
  MhsaCache cache;
  return siggate_mhsa_cached(h, params, mask, cache);
}

MhsaParams zeros_like(const MhsaParams& params) {
  MhsaParams g;
  g.gate_config = params.gate_config;
  for (const auto& h : params.heads) {
    g.heads.push_back({Matrix(h.w_q.rows(), h.w_q.cols()), Matrix(h.w_k.rows(), h.w_k.cols()),
                       Matrix(h.w_v.rows(), h.w_v.cols())});
  }
  for (const auto& gp : params.gates) {
    g.gates.push_back({Matrix(gp.w_g.rows(), gp.w_g.cols()), Matrix(gp.b_g.rows(), gp.b_g.cols()),
                       Matrix(gp.w_g2.rows(), gp.w_g2.cols())});
  }
  g.w_o = Matrix(params.w_o.rows(), params.w_o.cols());
  return g;
}

namespace {

// dL/d(pre-activation) of the gate, given dL/d(gate). An overridden gate is a
// constant, so nothing flows back.
Matrix gate_pre_grad(const Matrix& grad_gate, const Matrix& gate_pre, const GateConfig& cfg) {
  Matrix out(grad_gate.rows(), grad_gate.cols());
  if (cfg.override_gate != GateOverride::none) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = grad_gate.data()[i] * activation_derivative(cfg.activation, gate_pre.data()[i]);
  }
  return out;
}

Matrix head_backward(const Matrix& h, const HeadParams& head, const GateParams* gate,
                     const GateConfig& cfg, const HeadCache& c, const Matrix& grad_out,
                     HeadParams& head_grad, GateParams* gate_grad) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head.w_q.cols()));
  const Matrix& attn = c.trace.attention;
  Matrix grad_h(h.rows(), h.cols());
  Matrix grad_attn;
  Matrix grad_v;

  switch (cfg.placement) {
    case GatePlacement::none:
    case GatePlacement::g3: {
      grad_attn = matmul_nt(grad_out, c.v);
      grad_v = matmul_tn(attn, grad_out);
      break;
    }
    case GatePlacement::g1: {
      const Matrix grad_attn_v = hadamard(grad_out, c.trace.gate);
      const Matrix grad_pre = gate_pre_grad(hadamard(grad_out, c.attn_v), c.gate_pre, cfg);
      gate_grad->w_g += matmul_tn(h, grad_pre);
      gate_grad->b_g += column_sums(grad_pre);
      grad_h += matmul_nt(grad_pre, gate->w_g);
      grad_attn = matmul_nt(grad_attn_v, c.v);
      grad_v = matmul_tn(attn, grad_attn_v);
      break;
    }
    case GatePlacement::g2: {
      grad_attn = matmul_nt(grad_out, c.gated_v);
      const Matrix grad_gated_v = matmul_tn(attn, grad_out);
      grad_v = hadamard(grad_gated_v, c.trace.gate);
      const Matrix grad_pre = gate_pre_grad(hadamard(grad_gated_v, c.v), c.gate_pre, cfg);
      gate_grad->w_g += matmul_tn(h, grad_pre);
      gate_grad->b_g += column_sums(grad_pre);
      grad_h += matmul_nt(grad_pre, gate->w_g);
      break;
    }
  }

  Matrix grad_scores = row_softmax_backward(attn, grad_attn);
  Matrix grad_logits = grad_scores;
  if (cfg.placement == GatePlacement::g3) {
    grad_logits = hadamard(grad_scores, c.trace.gate);
    const Matrix grad_pre = gate_pre_grad(hadamard(grad_scores, c.logits), c.gate_pre, cfg);
    double bias_grad = 0.0;
    for (double v : grad_pre.data()) bias_grad += v;
    gate_grad->b_g(0, 0) += bias_grad;
    const Matrix grad_left = matmul(grad_pre, c.gate_right) * inv_sqrt_dk;
    const Matrix grad_right = matmul_tn(grad_pre, c.gate_left) * inv_sqrt_dk;
    gate_grad->w_g += matmul_tn(h, grad_left);
    gate_grad->w_g2 += matmul_tn(h, grad_right);
    grad_h += matmul_nt(grad_left, gate->w_g);
    grad_h += matmul_nt(grad_right, gate->w_g2);
  }

  const Matrix grad_q = matmul(grad_logits, c.k) * inv_sqrt_dk;
  const Matrix grad_k = matmul_tn(grad_logits, c.q) * inv_sqrt_dk;
  head_grad.w_q += matmul_tn(h, grad_q);
  head_grad.w_k += matmul_tn(h, grad_k);
  head_grad.w_v += matmul_tn(h, grad_v);
  grad_h += matmul_nt(grad_q, head.w_q);
  grad_h += matmul_nt(grad_k, head.w_k);
  grad_h += matmul_nt(grad_v, head.w_v);
  return grad_h;
}

}  // namespace

Matrix siggate_mhsa_backward(const Matrix& h, const MhsaParams& params, const MhsaCache& cache,
                             const Matrix& grad_out, MhsaParams& grads) {
  grads.w_o += matmul_tn(cache.concat, grad_out);
  const Matrix grad_concat = matmul_nt(grad_out, params.w_o);
  const std::size_t dk = params.head_dim();
  const bool shared = params.gate_config.sharing == GateSharing::shared;
  Matrix grad_h(h.rows(), h.cols());
  for (std::size_t k = 0; k < params.num_heads(); ++k) {
    const Matrix grad_head = column_block(grad_concat, k * dk, dk);
    const GateParams* gate = params.gate_config.gated() ? &params.gate_for(k) : nullptr;
    GateParams* gate_grad = params.gate_config.gated() ? &grads.gates[shared ? 0 : k] : nullptr;
    grad_h += head_backward(h, params.heads[k], gate, params.gate_config, cache.heads[k], grad_head,
                            grads.heads[k], gate_grad);
  }
  return grad_h;
}

MhsaParams init_mhsa(SeededRng& rng, std::size_t d, std::size_t num_heads, const GateConfig& cfg,
                     bool zero_gate_weights) {
  if (num_heads == 0) throw ConfigError("MHSA: at least one head is required");
  if (d % num_heads != 0) {
    throw ConfigError("MHSA: model width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  const std::size_t dk = d / num_heads;
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(d));
  MhsaParams p;
  p.gate_config = cfg;
  for (std::size_t k = 0; k < num_heads; ++k) {
    HeadParams head;
    head.w_q = gaussian_matrix(rng, d, dk, std_dev);
    head.w_k = gaussian_matrix(rng, d, dk, std_dev);
    head.w_v = gaussian_matrix(rng, d, dk, std_dev);
    p.heads.push_back(std::move(head));
  }
  p.w_o = gaussian_matrix(rng, num_heads * dk, d, 1.0 / std::sqrt(static_cast<double>(num_heads * dk)));
  if (cfg.gated()) {
    const std::size_t count = cfg.sharing == GateSharing::shared ? 1 : num_heads;
    for (std::size_t k = 0; k < count; ++k) {
      GateParams g;
      g.w_g = zero_gate_weights ? Matrix(d, dk) : gaussian_matrix(rng, d, dk, std_dev);
      if (cfg.placement == GatePlacement::g3) {
        g.w_g2 = zero_gate_weights ? Matrix(d, dk) : gaussian_matrix(rng, d, dk, std_dev);
        g.b_g = Matrix(1, 1, cfg.bias_init);
      } else {
        g.b_g = Matrix(1, dk, cfg.bias_init);
      }
      p.gates.push_back(std::move(g));
    }
  }
  return p;
}

std::int64_t gate_param_count(std::int64_t d, std::int64_t d_k, std::int64_t num_heads,
                              std::int64_t num_layers) {
  return num_layers * num_heads * (d * d_k + d_k);
}

}  // namespace siggate
