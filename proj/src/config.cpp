#include "siggate/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace siggate {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty element in list '" + s + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += f(v[i]);
  }
  return out;
}

template <typename T, typename F>
std::vector<T> map_list(const std::string& s, F&& f) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(f(item));
  return out;
}

struct KeySpec {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(name, field, help)                                                         \
  KeySpec {                                                                                 \
    name, help, [](RunConfig& c, const std::string& v) { c.field = to_u64(v); },            \
        [](const RunConfig& c) { return std::to_string(c.field); }                          \
  }
#define DOUBLE_KEY(name, field, help)                                                       \
  KeySpec {                                                                                 \
    name, help, [](RunConfig& c, const std::string& v) { c.field = to_double(v); },         \
        [](const RunConfig& c) { return fmt(c.field); }                                     \
  }
#define BOOL_KEY(name, field, help)                                                         \
  KeySpec {                                                                                 \
    name, help, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); },           \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }          \
  }
#define ENUM_KEY(name, field, parse, help)                                                  \
  KeySpec {                                                                                 \
    name, help, [](RunConfig& c, const std::string& v) { c.field = parse(v); },             \
        [](const RunConfig& c) { return to_string(c.field); }                               \
  }
#define DOUBLE_LIST_KEY(name, field, help)                                                  \
  KeySpec {                                                                                 \
    name, help, [](RunConfig& c, const std::string& v) { c.field = map_list<double>(v, to_double); }, \
        [](const RunConfig& c) { return join(c.field, fmt); }                               \
  }
#define ENUM_LIST_KEY(name, field, type, parse, help)                                       \
  KeySpec {                                                                                 \
    name, help,                                                                             \
        [](RunConfig& c, const std::string& v) {                                            \
          c.field = map_list<type>(v, [](const std::string& s) { return parse(s); });       \
        },                                                                                  \
        [](const RunConfig& c) { return join(c.field, [](type t) { return to_string(t); }); } \
  }

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      SIZE_KEY("model.d_in", train.model.d_in, "node feature width"),
      SIZE_KEY("model.d_e", train.model.d_e, "edge feature width"),
      SIZE_KEY("model.d", train.model.d, "hidden width"),
      SIZE_KEY("model.heads", train.model.heads, "attention heads"),
      SIZE_KEY("model.layers", train.model.layers, "GPS layers"),
      SIZE_KEY("model.d_ff", train.model.d_ff, "feed-forward width"),
      SIZE_KEY("model.d_out", train.model.d_out, "prediction width"),
      ENUM_KEY("model.readout", train.model.readout, parse_readout, "mean | sum"),
      ENUM_KEY("model.placement", train.model.gate.placement, parse_placement, "none | g1 | g2 | g3"),
      ENUM_KEY("model.sharing", train.model.gate.sharing, parse_sharing, "per_head | shared"),
      ENUM_KEY("model.activation", train.model.gate.activation, parse_activation,
               "sigmoid | tanh | relu | sigmoid_squared | identity"),
      DOUBLE_KEY("model.bias_init", train.model.gate.bias_init, "initial gate bias"),
      BOOL_KEY("model.zero_gate_weights", train.model.zero_gate_weights, "start gate weights at zero"),

      DOUBLE_KEY("training.lr", train.lr, "peak learning rate"),
      DOUBLE_KEY("training.weight_decay", train.weight_decay, "decoupled weight decay"),
      SIZE_KEY("training.epochs", train.epochs, "training epochs"),
      SIZE_KEY("training.batch_size", train.batch_size, "graphs per step"),
      SIZE_KEY("training.seed", train.seed, "model and shuffle seed"),
      ENUM_KEY("training.loss", train.loss, parse_loss, "mae | mse"),
      DOUBLE_KEY("training.divergence_threshold", train.divergence_threshold, "loss above this aborts"),

      SIZE_KEY("task.seed", task_seed, "dataset seed"),
      SIZE_KEY("task.graphs", task.n_graphs, "number of graphs"),
      SIZE_KEY("task.nodes", task.nodes_per_graph, "nodes per graph"),
      SIZE_KEY("task.d_in", task.d_in, "node feature width of the data"),
      DOUBLE_KEY("task.edge_prob", task.edge_prob, "edge probability"),
      DOUBLE_KEY("task.test_fraction", task.test_fraction, "held-out fraction"),

      SIZE_KEY("experiment.n", rank.n, "nodes"),
      SIZE_KEY("experiment.d", rank.d, "hidden width"),
      SIZE_KEY("experiment.heads", rank.heads, "heads"),
      SIZE_KEY("experiment.d_k", rank.d_k, "per-head width"),
      DOUBLE_KEY("experiment.rho", rank.rho, "masked fraction of off-diagonal pairs"),
      DOUBLE_KEY("experiment.c", rank.c, "logit concentration scale"),
      KeySpec{"experiment.seeds", "comma-separated seeds",
              [](RunConfig& c, const std::string& v) { c.rank.seeds = map_list<std::uint64_t>(v, to_u64); },
              [](const RunConfig& c) {
                return join(c.rank.seeds, [](std::uint64_t s) { return std::to_string(s); });
              }},
      DOUBLE_KEY("experiment.target_gate_mean", rank.target_gate_mean, "calibration target mean"),
      DOUBLE_KEY("experiment.target_gate_std", rank.target_gate_std, "calibration target std"),
      BOOL_KEY("experiment.sweep", run_sweep, "also run the robustness sweep"),
      DOUBLE_LIST_KEY("experiment.sweep_c", sweep_c, "concentration values"),
      DOUBLE_LIST_KEY("experiment.sweep_rho", sweep_rho, "sparsity values"),

      SIZE_KEY("gradcheck.nodes", grad.nodes, "nodes per check graph"),
      SIZE_KEY("gradcheck.graphs", grad.graphs, "graphs in the check batch"),
      ENUM_KEY("gradcheck.loss", grad.loss, parse_loss, "mse | mae"),
      DOUBLE_KEY("gradcheck.step", grad.step, "central difference step"),
      SIZE_KEY("gradcheck.sample", grad.sample, "coordinates per parameter, 0 = all"),
      DOUBLE_KEY("gradcheck.tolerance", grad.tolerance, "maximum relative error"),
      ENUM_LIST_KEY("gradcheck.placements", grad.placements, GatePlacement, parse_placement, "placements"),
      ENUM_LIST_KEY("gradcheck.activations", grad.activations, Activation, parse_activation, "activations"),

      ENUM_LIST_KEY("ablate.placements", ablate.placements, GatePlacement, parse_placement, "placements"),
      ENUM_LIST_KEY("ablate.sharings", ablate.sharings, GateSharing, parse_sharing, "sharings"),
      ENUM_LIST_KEY("ablate.activations", ablate.activations, Activation, parse_activation, "activations"),

      DOUBLE_LIST_KEY("lrsweep.lrs", lrs, "learning rates"),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY
#undef ENUM_KEY
#undef DOUBLE_LIST_KEY
#undef ENUM_LIST_KEY

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : key_table())
    if (k.key == key) return &k;
  return nullptr;
}

std::set<std::string> sections() {
  std::set<std::string> out;
  for (const auto& k : key_table()) out.insert(k.key.substr(0, k.key.find('.')));
  return out;
}

}  // namespace

RunConfig parse_config(std::istream& is, const std::string& source) {
  RunConfig cfg;
  const auto known_sections = sections();
  std::string section;
  std::set<std::string> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigParseError(source, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_sections.contains(section)) {
        throw ConfigParseError(source, line_no, "unknown section '" + section + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigParseError(source, line_no, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigParseError(source, line_no, "missing key");
    if (value.empty()) throw ConfigParseError(source, line_no, "missing value for '" + key + "'");
    if (key.find('.') == std::string::npos) {
      if (section.empty()) {
        throw ConfigParseError(source, line_no, "key '" + key + "' needs a section prefix or a [section] header");
      }
      key = section + "." + key;
    } else if (!section.empty() && key.substr(0, key.find('.')) != section) {
      throw ConfigParseError(source, line_no, "key '" + key + "' does not belong to section [" + section + "]");
    }
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigParseError(source, line_no, "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigParseError(source, line_no, "duplicate key '" + key + "'");
    try {
      spec->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigParseError(source, line_no, key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

void write_config(std::ostream& os, const RunConfig& cfg) {
  std::string section;
  for (const auto& k : key_table()) {
    const auto dot = k.key.find('.');
    const std::string sec = k.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << k.key.substr(dot + 1) << " = " << k.get(cfg) << '\n';
  }
}

std::vector<ConfigKeyDoc> config_keys() {
  const RunConfig defaults;
  std::vector<ConfigKeyDoc> out;
  for (const auto& k : key_table()) out.push_back({k.key, k.get(defaults), k.help});
  return out;
}

}  // namespace siggate
