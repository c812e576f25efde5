#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "siggate/attention.hpp"
#include "siggate/synthexp.hpp"
#include "siggate/training.hpp"

namespace siggate {

struct GradCheckSettings {
  std::size_t nodes = 6;
  std::size_t graphs = 1;
  LossKind loss = LossKind::mse;
  double step = 1e-5;
  std::size_t sample = 0;  // 0 = every coordinate
  double tolerance = 1e-5;
  std::vector<GatePlacement> placements{GatePlacement::none, GatePlacement::g1, GatePlacement::g2,
                                        GatePlacement::g3};
  std::vector<Activation> activations{Activation::sigmoid, Activation::tanh, Activation::relu,
                                      Activation::sigmoid_squared};
};

struct AblationSettings {
  std::vector<GatePlacement> placements{GatePlacement::none, GatePlacement::g1, GatePlacement::g2,
                                        GatePlacement::g3};
  std::vector<GateSharing> sharings{GateSharing::per_head, GateSharing::shared};
  std::vector<Activation> activations{Activation::sigmoid, Activation::tanh, Activation::relu,
                                      Activation::sigmoid_squared};
};

/// Everything a subcommand can be configured with. Keys are written
/// `section.name`; inside a `[section]` block the prefix may be omitted.
struct RunConfig {
  TrainConfig train;              // [model] and [training]
  ToyTaskConfig task;             // [task]
  std::uint64_t task_seed = 0;
  RankExpConfig rank;             // [experiment]
  bool run_sweep = true;
  std::vector<double> sweep_c{0.5, 1.0, 1.5, 2.0, 3.0};
  std::vector<double> sweep_rho{0.05, 0.20, 0.40, 0.60};
  GradCheckSettings grad;         // [gradcheck]
  AblationSettings ablate;        // [ablate]
  std::vector<double> lrs{5e-4, 1e-3, 2e-3, 3e-3, 5e-3};  // [lrsweep]
};

/// Parse error with the offending source and line in the message.
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(const std::string& source, std::size_t line, const std::string& msg)
      : ConfigError(source + ":" + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

RunConfig parse_config(std::istream& is, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Fully resolved configuration in the same format; parsing it back yields
/// an identical RunConfig.
void write_config(std::ostream& os, const RunConfig& cfg);

struct ConfigKeyDoc {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default.
std::vector<ConfigKeyDoc> config_keys();

}  // namespace siggate
