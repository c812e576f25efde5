#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "siggate/gps.hpp"

namespace siggate {

/// Raised when training or a loss evaluation produces a non-finite value or
/// diverges. Carries the offending parameter name and epoch when known.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::string param, int epoch = -1)
      : std::runtime_error(what), param_(std::move(param)), epoch_(epoch) {}
  const std::string& param() const { return param_; }
  int epoch() const { return epoch_; }

 private:
  std::string param_;
  int epoch_;
};

struct NamedParam {
  std::string name;
  Matrix* value;
};

struct NamedConstParam {
  std::string name;
  const Matrix* value;
};

/// Flat, deterministic registry of every trainable matrix in the model.
/// Order: input projection, then per layer mpnn, attention heads, gates,
/// w_o, ffn, ln1, ln2, then the readout head. Empty matrices are skipped.
std::vector<NamedParam> param_registry(ModelParams& m);
std::vector<NamedConstParam> param_registry(const ModelParams& m);

std::size_t count_parameters(const ModelParams& m);
/// Parameters belonging to gate projections only.
std::size_t count_gate_parameters(const ModelParams& m);

/// `name rows cols` then the row-major values, 17 significant digits.
void write_params(std::ostream& os, const ModelParams& m);
/// Reads into a model of matching structure (names and shapes must agree).
void read_params(std::istream& is, ModelParams& m);
void save_params(const std::string& path, const ModelParams& m);
void load_params(const std::string& path, ModelParams& m);

enum class LossKind { mse, mae };
std::string to_string(LossKind k);
LossKind parse_loss(const std::string& s);

struct Example {
  const GraphInstance* graph;
  Matrix target;  // 1 × d_out
};

struct LossAndGrads {
  double loss = 0.0;
  ModelParams grads;
};

double batch_loss(const ModelParams& m, const std::vector<Example>& batch, LossKind kind);

/// Mean loss over the batch and its exact gradient for every parameter.
LossAndGrads loss_and_gradients(const ModelParams& m, const std::vector<Example>& batch, LossKind kind);

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

struct FdOptions {
  double step = 1e-5;
  std::size_t sample = 0;  // coordinates per parameter; 0 checks every coordinate
  std::uint64_t seed = 0;
  // Testing hook applied to the analytic gradients before comparison.
  std::function<void(ModelParams&)> tamper;
};

/// Central differences (f(w+h) - f(w-h)) / 2h against loss_and_gradients.
/// Relative error uses max(|analytic|, |numeric|, 1e-12) as denominator.
FdReport finite_difference_check(const ModelParams& m, const std::vector<Example>& batch, LossKind kind,
                                 const FdOptions& opts);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::int64_t step = 0;
};

OptimizerState init_optimizer(const ModelParams& m);

/// One AdamW step with bias correction and decoupled weight decay.
void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                const AdamWConfig& cfg);

/// lr_max · ½(1 + cos(π·step/total_steps)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max);

/// Graph-regression dataset with a fixed train/test split.
struct SyntheticTask {
  std::vector<GraphInstance> graphs;
  std::vector<Matrix> targets;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::size_t d_in = 0;

  std::vector<Example> examples(const std::vector<std::size_t>& idx) const;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mae;
  ModelShape model;
  AdamWConfig adam;
  double divergence_threshold = 1e6;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean training loss after the epoch
  double lr = 0.0;    // learning rate of the epoch's first step
};

struct TrainHistory {
  double initial_loss = 0.0;       // training split, before any step
  double initial_test_loss = 0.0;  // test split, before any step
  std::vector<EpochRecord> epochs;
  double final_test_loss = 0.0;
  ModelParams final_params;
  std::vector<LayerTrace> test_traces;  // one per test graph, final parameters
};

TrainHistory train_toy(const TrainConfig& cfg, const SyntheticTask& task);

/// CSV `epoch,loss,lr`.
void write_history_csv(std::ostream& os, const TrainHistory& h);

}  // namespace siggate
