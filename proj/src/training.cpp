#include "siggate/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace siggate {

namespace {

template <class Model, class Push>
void visit_params(Model& m, Push push) {
  push("in.w", m.w_in);
  push("in.b", m.b_in);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    push(p + "mpnn.w_edge", layer.mpnn.w_edge);
    push(p + "mpnn.w_val", layer.mpnn.w_val);
    for (std::size_t k = 0; k < layer.attn.heads.size(); ++k) {
      const std::string h = p + "attn.head" + std::to_string(k) + ".";
      push(h + "w_q", layer.attn.heads[k].w_q);
      push(h + "w_k", layer.attn.heads[k].w_k);
      push(h + "w_v", layer.attn.heads[k].w_v);
    }
    for (std::size_t k = 0; k < layer.attn.gates.size(); ++k) {
      const std::string g = p + "attn.gate" + std::to_string(k) + ".";
      push(g + "w_g", layer.attn.gates[k].w_g);
      push(g + "b_g", layer.attn.gates[k].b_g);
      push(g + "w_g2", layer.attn.gates[k].w_g2);
    }
    push(p + "attn.w_o", layer.attn.w_o);
    push(p + "ffn.w1", layer.ffn.w1);
    push(p + "ffn.b1", layer.ffn.b1);
    push(p + "ffn.w2", layer.ffn.w2);
    push(p + "ffn.b2", layer.ffn.b2);
    push(p + "ln1.scale", layer.ln1.scale);
    push(p + "ln1.shift", layer.ln1.shift);
    push(p + "ln2.scale", layer.ln2.scale);
    push(p + "ln2.shift", layer.ln2.shift);
  }
  push("head.w", m.w_head);
  push("head.b", m.b_head);
}

}  // namespace

std::vector<NamedParam> param_registry(ModelParams& m) {
  std::vector<NamedParam> out;
  visit_params(m, [&](const std::string& name, Matrix& x) {
    if (!x.empty()) out.push_back({name, &x});
  });
  return out;
}

std::vector<NamedConstParam> param_registry(const ModelParams& m) {
  std::vector<NamedConstParam> out;
  visit_params(m, [&](const std::string& name, const Matrix& x) {
    if (!x.empty()) out.push_back({name, &x});
  });
  return out;
}

std::size_t count_parameters(const ModelParams& m) {
  std::size_t n = 0;
  for (const auto& p : param_registry(m)) n += p.value->size();
  return n;
}

std::size_t count_gate_parameters(const ModelParams& m) {
  std::size_t n = 0;
  for (const auto& p : param_registry(m)) {
    if (p.name.find(".attn.gate") != std::string::npos) n += p.value->size();
  }
  return n;
}

void write_params(std::ostream& os, const ModelParams& m) {
  const auto old_precision = os.precision(17);
  for (const auto& p : param_registry(m)) {
    os << p.name << ' ' << p.value->rows() << ' ' << p.value->cols() << '\n';
    for (std::size_t i = 0; i < p.value->rows(); ++i) {
      const auto r = p.value->row(i);
      for (std::size_t j = 0; j < r.size(); ++j) os << (j ? " " : "") << r[j];
      os << '\n';
    }
  }
  os.precision(old_precision);
}

void read_params(std::istream& is, ModelParams& m) {
  for (const auto& p : param_registry(m)) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols)) {
      throw std::runtime_error("parameter file: missing entry for '" + p.name + "'");
    }
    if (name != p.name || rows != p.value->rows() || cols != p.value->cols()) {
      throw std::runtime_error("parameter file: expected " + p.name + " " + p.value->shape_string() +
                               ", found " + name + " (" + std::to_string(rows) + "x" +
                               std::to_string(cols) + ")");
    }
    for (double& v : p.value->data()) {
      std::string token;
      if (!(is >> token)) throw std::runtime_error("parameter file: truncated values for " + name);
      std::size_t used = 0;
      try {
        v = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) {
        throw std::runtime_error("parameter file: bad value '" + token + "' in " + name);
      }
    }
  }
  std::string rest;
  if (is >> rest) throw std::runtime_error("parameter file: unexpected entry '" + rest + "'");
}

void save_params(const std::string& path, const ModelParams& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write parameter file '" + path + "'");
  write_params(out, m);
}

void load_params(const std::string& path, ModelParams& m) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open parameter file '" + path + "'");
  read_params(in, m);
}

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "mae"; }

LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "mae") return LossKind::mae;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

namespace {

double example_loss(const Matrix& pred, const Matrix& target, LossKind kind, Matrix* grad) {
  if (!pred.same_shape(target)) {
    throw DimensionError("loss: prediction " + pred.shape_string() + " vs target " + target.shape_string());
  }
  const auto count = static_cast<double>(pred.size());
  double loss = 0.0;
  if (grad) *grad = Matrix(pred.rows(), pred.cols());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred.data()[i] - target.data()[i];
    if (kind == LossKind::mse) {
      loss += r * r;
      if (grad) grad->data()[i] = 2.0 * r / count;
    } else {
      loss += std::abs(r);
      if (grad) grad->data()[i] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) / count;
    }
  }
  return loss / count;
}

std::string first_non_finite(const ModelParams& m, const ModelParams* grads) {
  for (const auto& p : param_registry(m)) {
    if (!all_finite(*p.value)) return p.name;
  }
  if (grads) {
    for (const auto& p : param_registry(*grads)) {
      if (!all_finite(*p.value)) return p.name;
    }
  }
  return "unknown";
}

}  // namespace

double batch_loss(const ModelParams& m, const std::vector<Example>& batch, LossKind kind) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    total += example_loss(model_forward(*ex.graph, m).prediction, ex.target, kind, nullptr);
  }
  return total / static_cast<double>(batch.size());
}

LossAndGrads loss_and_gradients(const ModelParams& m, const std::vector<Example>& batch, LossKind kind) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
  for (const auto& p : param_registry(m)) {
    if (!all_finite(*p.value)) throw TrainingError("non-finite parameter " + p.name, p.name);
  }
  LossAndGrads out;
  out.grads = zeros_like(m);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  ModelCache cache;
  try {
    for (const auto& ex : batch) {
      const ModelOutput fwd = model_forward_cached(*ex.graph, m, cache);
      Matrix grad_pred;
      out.loss += example_loss(fwd.prediction, ex.target, kind, &grad_pred);
      grad_pred *= inv_batch;
      model_backward(*ex.graph, m, cache, grad_pred, out.grads);
    }
  } catch (const NumericError& e) {
    const std::string name = first_non_finite(m, &out.grads);
    throw TrainingError(std::string("numeric failure: ") + e.what(), name);
  }
  out.loss *= inv_batch;
  if (!std::isfinite(out.loss)) {
    const std::string name = first_non_finite(m, &out.grads);
    throw TrainingError("non-finite loss (parameter " + name + ")", name);
  }
  return out;
}

FdReport finite_difference_check(const ModelParams& m, const std::vector<Example>& batch, LossKind kind,
                                 const FdOptions& opts) {
  if (!(opts.step >= 1e-7 && opts.step <= 1e-3)) {
    throw std::invalid_argument("finite_difference_check: step must lie in [1e-7, 1e-3]");
  }
  LossAndGrads analytic = loss_and_gradients(m, batch, kind);
  if (opts.tamper) opts.tamper(analytic.grads);
  ModelParams probe = m;
  auto params = param_registry(probe);
  const auto grads = param_registry(std::as_const(analytic.grads));
  SeededRng rng(opts.seed);
  FdReport report;
  report.max_rel_err = -1.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& w = *params[p].value;
    std::vector<std::size_t> coords;
    if (opts.sample == 0 || opts.sample >= w.size()) {
      coords.resize(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t s = 0; s < opts.sample; ++s) coords.push_back(rng.below(w.size()));
    }
    for (std::size_t idx : coords) {
      const double saved = w.data()[idx];
      w.data()[idx] = saved + opts.step;
      const double f_plus = batch_loss(probe, batch, kind);
      w.data()[idx] = saved - opts.step;
      const double f_minus = batch_loss(probe, batch, kind);
      w.data()[idx] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * opts.step);
      const double a = grads[p].value->data()[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[p].name;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  if (report.max_rel_err < 0.0) report.max_rel_err = 0.0;
  return report;
}

OptimizerState init_optimizer(const ModelParams& m) {
  return {zeros_like(m), zeros_like(m), 0};
}

void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                const AdamWConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto rp = param_registry(params);
  auto rg = param_registry(grads);
  auto rm = param_registry(state.first_moment);
  auto rv = param_registry(state.second_moment);
  if (rp.size() != rg.size() || rp.size() != rm.size() || rp.size() != rv.size()) {
    throw ConfigError("adamw_step: parameter structures differ");
  }
  for (std::size_t p = 0; p < rp.size(); ++p) {
    auto& w = rp[p].value->data();
    const auto& gr = rg[p].value->data();
    auto& m1 = rm[p].value->data();
    auto& m2 = rv[p].value->data();
    if (gr.size() != w.size() || m1.size() != w.size() || m2.size() != w.size()) {
      throw DimensionError("adamw_step: shape mismatch for " + rp[p].name);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * cfg.weight_decay * w[i];
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gr[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
      const double mhat = m1[i] / c1;
      const double vhat = m2[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + "]");
  }
  if (step == total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::vector<Example> SyntheticTask::examples(const std::vector<std::size_t>& idx) const {
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back({&graphs.at(i), targets.at(i)});
  return out;
}

TrainHistory train_toy(const TrainConfig& cfg, const SyntheticTask& task) {
  if (!(cfg.lr >= 0.0)) throw std::invalid_argument("train_toy: lr must be non-negative");
  if (cfg.epochs < 1) throw std::invalid_argument("train_toy: epochs must be >= 1");
  if (task.train.empty()) throw std::invalid_argument("train_toy: empty training split");
  const std::size_t batch_size = std::max<std::size_t>(1, cfg.batch_size);

  ModelShape shape = cfg.model;
  shape.d_in = task.d_in;
  shape.d_e = task.graphs.front().edge_dim();
  TrainHistory hist;
  hist.final_params = init_model(shape, SeededRng::derive_seed(cfg.seed, 1));
  ModelParams& params = hist.final_params;
  OptimizerState state = init_optimizer(params);
  AdamWConfig adam = cfg.adam;
  adam.weight_decay = cfg.weight_decay;

  const auto train_set = task.examples(task.train);
  SeededRng order_rng(SeededRng::derive_seed(cfg.seed, 2));
  const std::size_t batches = (task.train.size() + batch_size - 1) / batch_size;
  const auto total_steps = static_cast<std::int64_t>(batches) * cfg.epochs;
  std::int64_t step = 0;
  hist.initial_loss = batch_loss(params, train_set, cfg.loss);
  if (!task.test.empty()) hist.initial_test_loss = batch_loss(params, task.examples(task.test), cfg.loss);

  std::vector<std::size_t> order(task.train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    const double epoch_lr = cosine_lr(step, total_steps, cfg.lr);
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Example> batch;
      for (std::size_t i = b * batch_size; i < std::min(order.size(), (b + 1) * batch_size); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      LossAndGrads lg;
      try {
        lg = loss_and_gradients(params, batch, cfg.loss);
      } catch (const TrainingError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(),
                            e.param(), epoch);
      }
      adamw_step(params, lg.grads, state, cosine_lr(step, total_steps, cfg.lr), adam);
      ++step;
    }
    const double loss = batch_loss(params, train_set, cfg.loss);
    if (!std::isfinite(loss) || loss > cfg.divergence_threshold) {
      const std::string name = first_non_finite(params, nullptr);
      throw TrainingError("training diverged at epoch " + std::to_string(epoch) + " (loss " +
                              std::to_string(loss) + ")",
                          name, epoch);
    }
    hist.epochs.push_back({epoch, loss, epoch_lr});
  }
  if (!task.test.empty()) {
    const auto test_set = task.examples(task.test);
    hist.final_test_loss = batch_loss(params, test_set, cfg.loss);
    for (const auto& ex : test_set) hist.test_traces.push_back(model_forward(*ex.graph, params).trace);
  }
  return hist;
}

void write_history_csv(std::ostream& os, const TrainHistory& h) {
  const auto old_precision = os.precision(17);
  os << "epoch,loss,lr\n";
  for (const auto& r : h.epochs) os << r.epoch << ',' << r.loss << ',' << r.lr << '\n';
  os.precision(old_precision);
}

}  // namespace siggate
