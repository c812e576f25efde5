#include "siggate/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"

namespace siggate {

double stable_rank(const Matrix& m) {
  const double top = top_singular_value(m);
  return frobenius_norm_sq(m) / (top * top);
}

double mad(const Matrix& h) {
  std::vector<std::size_t> rows;
  std::vector<double> norms(h.rows(), 0.0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double s = 0.0;
    for (double v : h.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] >= 1e-12) rows.push_back(i);
  }
  if (rows.size() < 2) {
    throw NumericError("mad: needs at least two nonzero rows, got " + std::to_string(rows.size()));
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const auto ra = h.row(rows[a]);
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      const auto rb = h.row(rows[b]);
      double dot = 0.0;
      for (std::size_t j = 0; j < ra.size(); ++j) dot += ra[j] * rb[j];
      const double cosine = std::clamp(dot / (norms[rows[a]] * norms[rows[b]]), -1.0, 1.0);
      total += 1.0 - cosine;
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double attention_entropy(const Matrix& attn) {
  if (attn.rows() == 0) throw NumericError("attention_entropy: empty matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < attn.rows(); ++i) {
    double row_sum = 0.0;
    double h = 0.0;
    for (double p : attn.row(i)) {
      if (p < 0.0) throw NumericError("attention_entropy: negative entry in row " + std::to_string(i));
      row_sum += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw NumericError("attention_entropy: row " + std::to_string(i) + " sums to " +
                         std::to_string(row_sum));
    }
    total += h;
  }
  return total / static_cast<double>(attn.rows());
}

GateStats gate_stats(std::span<const Matrix> gates) {
  GateStats s;
  double sum = 0.0;
  std::size_t below = 0, above = 0;
  for (const auto& g : gates) {
    for (double v : g.data()) {
      sum += v;
      below += v < 0.1 ? 1 : 0;
      above += v > 0.9 ? 1 : 0;
      ++s.count;
    }
  }
  if (s.count == 0) return s;
  const auto n = static_cast<double>(s.count);
  s.mean = sum / n;
  double ss = 0.0;
  for (const auto& g : gates)
    for (double v : g.data()) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  s.frac_below = static_cast<double>(below) / n;
  s.frac_above = static_cast<double>(above) / n;
  return s;
}

std::vector<GateStats> gate_stats_per_layer(const std::vector<std::vector<Matrix>>& per_layer) {
  std::vector<GateStats> out;
  out.reserve(per_layer.size());
  for (const auto& layer : per_layer) out.push_back(gate_stats(layer));
  return out;
}

GateStats gate_stats_pooled(const std::vector<std::vector<Matrix>>& per_layer) {
  std::vector<Matrix> all;
  for (const auto& layer : per_layer) all.insert(all.end(), layer.begin(), layer.end());
  return gate_stats(all);
}

RankBoundCheck rank_bound_holds(const Matrix& a, const Matrix& v) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double sum = 0.0;
    for (double p : a.row(i)) {
      if (p < 0.0) throw NumericError("rank_bound_holds: A has a negative entry in row " + std::to_string(i));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw NumericError("rank_bound_holds: A row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
  RankBoundCheck r;
  r.srank_av = stable_rank(matmul(a, v));
  r.srank_a = stable_rank(a);
  r.srank_v = stable_rank(v);
  r.holds = r.srank_av <= std::min(r.srank_a, r.srank_v) + 1e-9;
  return r;
}

DepthProfile depth_profile(const LayerTrace& trace) {
  DepthProfile p;
  for (std::size_t l = 0; l < trace.hidden.size(); ++l) {
    p.mad.push_back(mad(trace.hidden[l]));
    const auto& heads = trace.head_traces.at(l);
    double e = 0.0;
    for (const auto& h : heads) e += attention_entropy(h.attention);
    p.entropy.push_back(heads.empty() ? 0.0 : e / static_cast<double>(heads.size()));
  }
  return p;
}

std::vector<std::vector<Matrix>> gate_tensors(const LayerTrace& trace) {
  std::vector<std::vector<Matrix>> out;
  bool any = false;
  for (const auto& layer : trace.head_traces) {
    std::vector<Matrix> gates;
    for (const auto& h : layer) {
      if (!h.gate.empty()) {
        gates.push_back(h.gate);
        any = true;
      }
    }
    out.push_back(std::move(gates));
  }
  if (!any) out.clear();
  return out;
}

DiagnosticsReport diagnose(const LayerTrace& trace) {
  DiagnosticsReport r;
  r.profile = depth_profile(trace);
  const auto gates = gate_tensors(trace);
  if (!gates.empty()) {
    r.gates_per_layer = gate_stats_per_layer(gates);
    r.gates_pooled = gate_stats_pooled(gates);
  }
  return r;
}

void write_diagnostics_csv(std::ostream& os, const DiagnosticsReport& r) {
  const auto old_precision = os.precision(17);
  os << "layer,mad,entropy,gate_mean,gate_std,gate_below,gate_above\n";
  const bool gated = !r.gates_per_layer.empty();
  for (std::size_t l = 0; l < r.profile.mad.size(); ++l) {
    os << (l + 1) << ',' << r.profile.mad[l] << ',' << r.profile.entropy[l];
    if (gated) {
      const auto& g = r.gates_per_layer[l];
      os << ',' << g.mean << ',' << g.std << ',' << g.frac_below << ',' << g.frac_above;
    } else {
      os << ",,,,";
    }
    os << '\n';
  }
  if (gated) {
    const auto& g = r.gates_pooled;
    os << "pooled,,," << g.mean << ',' << g.std << ',' << g.frac_below << ',' << g.frac_above << '\n';
  }
  os.precision(old_precision);
}

void write_diagnostics_json(std::ostream& os, const DiagnosticsReport& r) {
  using nlohmann::json;
  auto stats = [](const GateStats& g) {
    return json{{"mean", g.mean}, {"std", g.std}, {"frac_below_0.1", g.frac_below},
                {"frac_above_0.9", g.frac_above}, {"count", g.count}};
  };
  json layers = json::array();
  for (std::size_t l = 0; l < r.profile.mad.size(); ++l) {
    json entry{{"layer", l + 1}, {"mad", r.profile.mad[l]}, {"entropy", r.profile.entropy[l]}};
    if (!r.gates_per_layer.empty()) entry["gate"] = stats(r.gates_per_layer[l]);
    layers.push_back(std::move(entry));
  }
  json doc{{"layers", layers}};
  doc["gate_pooled"] = r.gates_per_layer.empty() ? json(nullptr) : stats(r.gates_pooled);
  os << doc.dump(2) << '\n';
}

}  // namespace siggate
