#include "siggate/gps.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace siggate {

namespace {

constexpr double kLayerNormEps = 1e-5;

}  // namespace

void GraphInstance::validate() {
  if (n == 0) throw ConfigError("graph: empty graph (n = 0)");
  if (node_features.rows() != n) {
    throw DimensionError("graph: node features " + node_features.shape_string() + " for " +
                         std::to_string(n) + " nodes");
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].src >= n || edges[e].dst >= n) {
      throw ConfigError("graph: edge " + std::to_string(e) + " (" + std::to_string(edges[e].src) +
                        " -> " + std::to_string(edges[e].dst) + ") out of range for n = " +
                        std::to_string(n));
    }
  }
  if (edge_features && edge_features->rows() != edges.size()) {
    throw DimensionError("graph: edge features " + edge_features->shape_string() + " for " +
                         std::to_string(edges.size()) + " edges");
  }
  if (attn_mask) {
    if (attn_mask->rows != n || attn_mask->cols != n) {
      throw DimensionError("graph: attention mask must be " + std::to_string(n) + "x" +
                           std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) attn_mask->set(i, i, true);
  }
}

void write_graph(std::ostream& os, const GraphInstance& g) {
  const auto old_precision = os.precision(17);
  os << g.n << ' ' << g.node_features.cols() << ' ' << g.edge_dim() << '\n';
  for (std::size_t i = 0; i < g.n; ++i) {
    const auto r = g.node_features.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) os << (j ? " " : "") << r[j];
    os << '\n';
  }
  os << g.edges.size() << '\n';
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    os << g.edges[e].src << ' ' << g.edges[e].dst;
    if (g.edge_features) {
      for (double v : g.edge_features->row(e)) os << ' ' << v;
    }
    os << '\n';
  }
  os.precision(old_precision);
}

namespace {

template <class T>
T read_value(std::istream& is, const char* what) {
  std::string token;
  if (!(is >> token)) throw std::runtime_error(std::string("graph file: missing ") + what);
  T value{};
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw std::runtime_error(std::string("graph file: bad ") + what + " '" + token + "'");
  }
  return value;
}

}  // namespace

GraphInstance read_graph(std::istream& is) {
  GraphInstance g;
  g.n = read_value<std::size_t>(is, "node count");
  const auto d_in = read_value<std::size_t>(is, "feature width");
  const auto d_e = read_value<std::size_t>(is, "edge feature width");
  g.node_features = Matrix(g.n, d_in);
  for (double& v : g.node_features.data()) v = read_value<double>(is, "node feature");
  const auto m = read_value<std::size_t>(is, "edge count");
  g.edges.resize(m);
  if (d_e > 0) g.edge_features = Matrix(m, d_e);
  for (std::size_t e = 0; e < m; ++e) {
    g.edges[e].src = read_value<std::size_t>(is, "edge source");
    g.edges[e].dst = read_value<std::size_t>(is, "edge target");
    for (std::size_t j = 0; j < d_e; ++j) (*g.edge_features)(e, j) = read_value<double>(is, "edge feature");
  }
  std::string rest;
  if (is >> rest) throw std::runtime_error("graph file: trailing content '" + rest + "'");
  g.validate();
  return g;
}

GraphInstance load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file '" + path + "'");
  return read_graph(in);
}

void save_graph(const std::string& path, const GraphInstance& g) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write graph file '" + path + "'");
  write_graph(out, g);
}

std::string to_string(Readout r) { return r == Readout::sum ? "sum" : "mean"; }

Readout parse_readout(const std::string& s) {
  if (s == "mean") return Readout::mean;
  if (s == "sum") return Readout::sum;
  throw std::invalid_argument("unknown readout '" + s + "'");
}

ModelParams init_model(const ModelShape& shape, std::uint64_t seed) {
  if (shape.layers == 0) throw ConfigError("model: at least one layer is required");
  SeededRng rng(seed);
  const std::size_t d = shape.d;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  ModelParams m;
  m.readout = shape.readout;
  m.w_in = gaussian_matrix(rng, shape.d_in, d, 1.0 / std::sqrt(static_cast<double>(shape.d_in)));
  m.b_in = Matrix(1, d);
  for (std::size_t l = 0; l < shape.layers; ++l) {
    GpsLayerParams p;
    p.mpnn.w_edge = gaussian_matrix(rng, 2 * d + shape.d_e, d,
                                    1.0 / std::sqrt(static_cast<double>(2 * d + shape.d_e)));
    p.mpnn.w_val = gaussian_matrix(rng, d, d, sd);
    p.attn = init_mhsa(rng, d, shape.heads, shape.gate, shape.zero_gate_weights);
    p.ffn.w1 = gaussian_matrix(rng, d, shape.d_ff, sd);
    p.ffn.b1 = Matrix(1, shape.d_ff);
    p.ffn.w2 = gaussian_matrix(rng, shape.d_ff, d, 1.0 / std::sqrt(static_cast<double>(shape.d_ff)));
    p.ffn.b2 = Matrix(1, d);
    p.ln1 = {Matrix(1, d, 1.0), Matrix(1, d)};
    p.ln2 = {Matrix(1, d, 1.0), Matrix(1, d)};
    m.layers.push_back(std::move(p));
  }
  m.w_head = gaussian_matrix(rng, d, shape.d_out, sd);
  m.b_head = Matrix(1, shape.d_out);
  return m;
}

Matrix layer_norm_cached(const Matrix& h, const Matrix& scale, const Matrix& shift,
                         LayerNormCache& cache) {
  if (scale.rows() != 1 || scale.cols() != h.cols() || !shift.same_shape(scale)) {
    throw DimensionError("layer_norm: scale " + scale.shape_string() + " / shift " +
                         shift.shape_string() + " for input " + h.shape_string());
  }
  const auto d = static_cast<double>(h.cols());
  cache.normalized = Matrix(h.rows(), h.cols());
  cache.inv_std.assign(h.rows(), 0.0);
  Matrix out(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    const auto r = h.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[i] = inv;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double x = (r[j] - mean) * inv;
      cache.normalized(i, j) = x;
      out(i, j) = x * scale(0, j) + shift(0, j);
    }
  }
  return out;
}

Matrix layer_norm(const Matrix& h, const Matrix& scale, const Matrix& shift) {
  LayerNormCache cache;
  return layer_norm_cached(h, scale, shift, cache);
}

Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& scale, const Matrix& grad_out,
                           Matrix& grad_scale, Matrix& grad_shift) {
  const Matrix& xhat = cache.normalized;
  const auto d = static_cast<double>(xhat.cols());
  Matrix grad_in(xhat.rows(), xhat.cols());
  for (std::size_t i = 0; i < xhat.rows(); ++i) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t j = 0; j < xhat.cols(); ++j) {
      grad_scale(0, j) += grad_out(i, j) * xhat(i, j);
      grad_shift(0, j) += grad_out(i, j);
      const double g = grad_out(i, j) * scale(0, j);
      sum_g += g;
      sum_gx += g * xhat(i, j);
    }
    for (std::size_t j = 0; j < xhat.cols(); ++j) {
      const double g = grad_out(i, j) * scale(0, j);
      grad_in(i, j) = cache.inv_std[i] / d * (d * g - sum_g - xhat(i, j) * sum_gx);
    }
  }
  return grad_in;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace {

void check_mpnn_shapes(const GraphInstance& g, const Matrix& h, const MpnnParams& p) {
  const std::size_t d = h.cols();
  if (p.w_edge.rows() != 2 * d + g.edge_dim() || p.w_edge.cols() != d) {
    throw ConfigError("mpnn: w_edge " + p.w_edge.shape_string() + " does not match [h_i|h_j|e_ij] width " +
                      std::to_string(2 * d + g.edge_dim()) + " -> " + std::to_string(d));
  }
  if (p.w_val.rows() != d || p.w_val.cols() != d) {
    throw ConfigError("mpnn: w_val " + p.w_val.shape_string() + " must be " + std::to_string(d) + "x" +
                      std::to_string(d));
  }
  if (h.rows() != g.n) {
    throw ConfigError("mpnn: hidden " + h.shape_string() + " for " + std::to_string(g.n) + " nodes");
  }
}

Matrix mpnn_forward_cached(const GraphInstance& g, const Matrix& h, const MpnnParams& p,
                           MpnnCache& cache) {
  check_mpnn_shapes(g, h, p);
  const std::size_t d = h.cols();
  const std::size_t m = g.edges.size();
  const std::size_t width = 2 * d + g.edge_dim();
  cache.edge_input = Matrix(m, width);
  Matrix sources(m, d);
  for (std::size_t e = 0; e < m; ++e) {
    auto row = cache.edge_input.row(e);
    const auto hi = h.row(g.edges[e].dst);
    const auto hj = h.row(g.edges[e].src);
    std::copy(hi.begin(), hi.end(), row.begin());
    std::copy(hj.begin(), hj.end(), row.begin() + static_cast<std::ptrdiff_t>(d));
    std::copy(hj.begin(), hj.end(), sources.row(e).begin());
    if (g.edge_features) {
      const auto ef = g.edge_features->row(e);
      std::copy(ef.begin(), ef.end(), row.begin() + static_cast<std::ptrdiff_t>(2 * d));
    }
  }
  cache.edge_gate = elementwise(Activation::sigmoid, matmul(cache.edge_input, p.w_edge));
  cache.values = matmul(sources, p.w_val);
  Matrix out(g.n, d);
  for (std::size_t e = 0; e < m; ++e) {
    auto dst = out.row(g.edges[e].dst);
    for (std::size_t j = 0; j < d; ++j) dst[j] += cache.edge_gate(e, j) * cache.values(e, j);
  }
  return out;
}

Matrix mpnn_backward(const GraphInstance& g, const MpnnParams& p, const MpnnCache& cache,
                     const Matrix& grad_out, MpnnParams& grads) {
  const std::size_t d = grad_out.cols();
  const std::size_t m = g.edges.size();
  Matrix grad_h(g.n, d);
  if (m == 0) return grad_h;
  Matrix grad_pre(m, d);
  Matrix grad_values(m, d);
  for (std::size_t e = 0; e < m; ++e) {
    const auto up = grad_out.row(g.edges[e].dst);
    for (std::size_t j = 0; j < d; ++j) {
      const double s = cache.edge_gate(e, j);
      grad_pre(e, j) = up[j] * cache.values(e, j) * s * (1.0 - s);
      grad_values(e, j) = up[j] * s;
    }
  }
  grads.w_edge += matmul_tn(cache.edge_input, grad_pre);
  Matrix sources(m, d);
  for (std::size_t e = 0; e < m; ++e) {
    const auto hj = cache.edge_input.row(e).subspan(d, d);
    std::copy(hj.begin(), hj.end(), sources.row(e).begin());
  }
  grads.w_val += matmul_tn(sources, grad_values);
  const Matrix grad_input = matmul_nt(grad_pre, p.w_edge);
  const Matrix grad_sources = matmul_nt(grad_values, p.w_val);
  for (std::size_t e = 0; e < m; ++e) {
    auto gi = grad_h.row(g.edges[e].dst);
    auto gj = grad_h.row(g.edges[e].src);
    for (std::size_t j = 0; j < d; ++j) {
      gi[j] += grad_input(e, j);
      gj[j] += grad_input(e, d + j) + grad_sources(e, j);
    }
  }
  return grad_h;
}

GpsLayerResult gps_layer_forward_cached(const GraphInstance& g, const Matrix& h,
                                        const GpsLayerParams& p, GpsLayerCache& cache) {
  cache.input = h;
  const Mask* attn_mask = g.attn_mask ? &*g.attn_mask : nullptr;
  Matrix s = h;
  s += mpnn_forward_cached(g, h, p.mpnn, cache.mpnn);
  MhsaResult attn = siggate_mhsa_cached(h, p.attn, attn_mask, cache.attn);
  s += attn.out;
  cache.ln1_out = layer_norm_cached(s, p.ln1.scale, p.ln1.shift, cache.ln1);
  cache.ffn_pre = add_row_broadcast(matmul(cache.ln1_out, p.ffn.w1), p.ffn.b1);
  cache.ffn_act = cache.ffn_pre;
  for (double& v : cache.ffn_act.data()) v = gelu(v);
  Matrix r = add_row_broadcast(matmul(cache.ffn_act, p.ffn.w2), p.ffn.b2);
  r += cache.ln1_out;
  GpsLayerResult out;
  out.h_next = layer_norm_cached(r, p.ln2.scale, p.ln2.shift, cache.ln2);
  out.head_traces = std::move(attn.traces);
  return out;
}

Matrix gps_layer_backward(const GraphInstance& g, const GpsLayerParams& p, const GpsLayerCache& cache,
                          const Matrix& grad_out, GpsLayerParams& grads) {
  Matrix grad_r = layer_norm_backward(cache.ln2, p.ln2.scale, grad_out, grads.ln2.scale, grads.ln2.shift);
  grads.ffn.w2 += matmul_tn(cache.ffn_act, grad_r);
  grads.ffn.b2 += column_sums(grad_r);
  Matrix grad_pre = matmul_nt(grad_r, p.ffn.w2);
  for (std::size_t i = 0; i < grad_pre.size(); ++i) {
    grad_pre.data()[i] *= gelu_derivative(cache.ffn_pre.data()[i]);
  }
  grads.ffn.w1 += matmul_tn(cache.ln1_out, grad_pre);
  grads.ffn.b1 += column_sums(grad_pre);
  Matrix grad_t = grad_r;
  grad_t += matmul_nt(grad_pre, p.ffn.w1);
  const Matrix grad_s = layer_norm_backward(cache.ln1, p.ln1.scale, grad_t, grads.ln1.scale, grads.ln1.shift);
  Matrix grad_h = grad_s;
  grad_h += mpnn_backward(g, p.mpnn, cache.mpnn, grad_s, grads.mpnn);
  grad_h += siggate_mhsa_backward(cache.input, p.attn, cache.attn, grad_s, grads.attn);
  return grad_h;
}

}  // namespace

Matrix mpnn_forward(const GraphInstance& g, const Matrix& h, const MpnnParams& p) {
  MpnnCache cache;
  return mpnn_forward_cached(g, h, p, cache);
}

GpsLayerResult gps_layer_forward(const GraphInstance& g, const Matrix& h, const GpsLayerParams& p) {
  GpsLayerCache cache;
  return gps_layer_forward_cached(g, h, p, cache);
}

ModelOutput model_forward_cached(const GraphInstance& g, const ModelParams& m, ModelCache& cache) {
  if (g.n == 0) throw ConfigError("model_forward: empty graph (n = 0)");
  if (m.layers.empty()) throw ConfigError("model_forward: at least one layer is required");
  if (g.node_features.rows() != g.n || g.node_features.cols() != m.w_in.rows()) {
    throw ConfigError("model_forward: node features " + g.node_features.shape_string() +
                      " do not match input projection " + m.w_in.shape_string());
  }
  ModelOutput out;
  Matrix h = add_row_broadcast(matmul(g.node_features, m.w_in), m.b_in);
  cache.layers.assign(m.layers.size(), {});
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    GpsLayerResult r = gps_layer_forward_cached(g, h, m.layers[l], cache.layers[l]);
    h = std::move(r.h_next);
    out.trace.hidden.push_back(h);
    out.trace.head_traces.push_back(std::move(r.head_traces));
  }
  cache.pooled = m.readout == Readout::mean ? column_means(h) : column_sums(h);
  cache.final_hidden = std::move(h);
  out.prediction = add_row_broadcast(matmul(cache.pooled, m.w_head), m.b_head);
  return out;
}

ModelOutput model_forward(const GraphInstance& g, const ModelParams& m) {
  ModelCache cache;
  return model_forward_cached(g, m, cache);
}

void model_backward(const GraphInstance& g, const ModelParams& m, const ModelCache& cache,
                    const Matrix& grad_prediction, ModelParams& grads) {
  grads.w_head += matmul_tn(cache.pooled, grad_prediction);
  grads.b_head += grad_prediction;
  Matrix grad_pooled = matmul_nt(grad_prediction, m.w_head);
  const double w = m.readout == Readout::mean ? 1.0 / static_cast<double>(g.n) : 1.0;
  Matrix grad_h(g.n, grad_pooled.cols());
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < grad_pooled.cols(); ++j) grad_h(i, j) = w * grad_pooled(0, j);
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    grad_h = gps_layer_backward(g, m.layers[l], cache.layers[l], grad_h, grads.layers[l]);
  }
  grads.w_in += matmul_tn(g.node_features, grad_h);
  grads.b_in += column_sums(grad_h);
}

ModelParams zeros_like(const ModelParams& m) {
  auto z = [](const Matrix& x) { return Matrix(x.rows(), x.cols()); };
  ModelParams g;
  g.readout = m.readout;
  g.w_in = z(m.w_in);
  g.b_in = z(m.b_in);
  for (const auto& l : m.layers) {
    GpsLayerParams p;
    p.mpnn = {z(l.mpnn.w_edge), z(l.mpnn.w_val)};
    p.attn = zeros_like(l.attn);
    p.ffn = {z(l.ffn.w1), z(l.ffn.b1), z(l.ffn.w2), z(l.ffn.b2)};
    p.ln1 = {z(l.ln1.scale), z(l.ln1.shift)};
    p.ln2 = {z(l.ln2.scale), z(l.ln2.shift)};
    g.layers.push_back(std::move(p));
  }
  g.w_head = z(m.w_head);
  g.b_head = z(m.b_head);
  return g;
}

}  // namespace siggate
