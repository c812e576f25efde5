#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "siggate/config.hpp"

namespace siggate::cli {

enum ExitCode : int { kSuccess = 0, kBandFailure = 1, kUsageError = 2 };

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct ToyCellResult {
  bool diverged = false;
  std::string message;
  double initial_test_loss = 0.0;
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  double last_mad = 0.0;      // final layer, mean over test graphs
  double last_entropy = 0.0;  // final layer, mean over test graphs and heads
  std::optional<double> gate_mean;
};

/// Trains `model` on the configured toy task at learning rate `lr`.
ToyCellResult run_toy_cell(const RunConfig& cfg, const ModelShape& model, double lr);

struct AblationCell {
  GatePlacement placement = GatePlacement::none;
  GateSharing sharing = GateSharing::per_head;
  Activation activation = Activation::sigmoid;
  std::string label() const;
};

/// Placement × sharing × activation, with the ungated placement collapsed to
/// a single cell.
std::vector<AblationCell> ablation_cells(const AblationSettings& s);

ModelShape shape_for(const RunConfig& cfg, const AblationCell& cell);

}  // namespace siggate::cli
