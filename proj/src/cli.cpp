#include "siggate/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "siggate/diagnostics.hpp"
#include "siggate/parallel.hpp"
#include "siggate/synthexp.hpp"
#include "siggate/training.hpp"

namespace siggate::cli {

namespace fs = std::filesystem;

namespace {

// Acceptance bands for the rank study.
constexpr double kMainGainLow = 0.05;
constexpr double kMainGainHigh = 0.09;
constexpr double kSweepGainLow = 0.04;
constexpr double kSweepGainHigh = 0.10;
constexpr double kGateMeanTol = 0.03;
constexpr double kGateStdTol = 0.02;

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;
  int parallel = 1;
  // diagnose
  std::string model_path;
  std::string graph_path;
  // grad-check negative control
  std::string corrupt_param;
};

std::string percent(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f%%", 100.0 * x);
  return buf;
}

std::string fixed(double x, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

RunConfig resolve(const Options& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig{} : load_config(opt.config_path);
  if (opt.seed_override) {
    cfg.train.seed = *opt.seed_override;
    cfg.rank.seeds = {*opt.seed_override};
  }
  cfg.rank.threads = opt.parallel;
  return cfg;
}

fs::path prepare_out(const Options& opt, const RunConfig& cfg) {
  const fs::path dir(opt.out_dir);
  fs::create_directories(dir);
  std::ofstream os(dir / "resolved_config.cfg");
  if (!os) throw std::runtime_error("cannot write to output directory '" + opt.out_dir + "'");
  write_config(os, cfg);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  return os;
}

// ---------------------------------------------------------------- rank-exp

int cmd_rank_exp(const Options& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  const fs::path dir = prepare_out(opt, cfg);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<SweepCell> cells;
  cells.push_back({"base", cfg.rank.c, cfg.rank.rho, run_rank_experiment(cfg.rank)});
  std::vector<SweepCell> sweep;
  if (cfg.run_sweep) {
    sweep = run_robustness_sweep(cfg.rank, cfg.sweep_c, cfg.sweep_rho);
    cells.insert(cells.end(), sweep.begin(), sweep.end());
  }
  const RankExpResult& base = cells.front().result;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  {
    auto os = open_out(dir / "rank_results.csv");
    write_rank_results_csv(os, cells);
  }
  {
    auto os = open_out(dir / "rank_aggregate.csv");
    write_rank_aggregate_csv(os, cells);
  }

  const auto& rc = cfg.rank;
  out << "Synthetic stable-rank experiment (n=" << rc.n << ", d=" << rc.d << ", K=" << rc.heads
      << ", d_k=" << rc.d_k << ", rho=" << rc.rho << ", c=" << rc.c << ")\n";
  out << std::left << std::setw(8) << "Seed" << std::setw(14) << "srank(Y)" << std::setw(16) << "srank(Y*g)"
      << "Delta\n";
  bool every_seed = true;
  for (const auto& s : base.per_seed) {
    out << std::setw(8) << s.seed << std::setw(14) << fixed(s.srank_ungated) << std::setw(16)
        << fixed(s.srank_gated) << percent(s.relative_gain) << '\n';
    every_seed = every_seed && s.srank_gated > s.srank_ungated;
  }
  out << std::setw(8) << "Mean" << std::setw(14) << (fixed(base.mean_ungated, 2) + " ± " + fixed(base.std_ungated, 2))
      << std::setw(16) << (fixed(base.mean_gated, 2) + " ± " + fixed(base.std_gated, 2)) << percent(base.mean_gain)
      << '\n';
  out << "Calibrated gate: scale " << fixed(base.calibration.scale) << ", bias " << fixed(base.calibration.bias)
      << "; attained mean " << fixed(base.attained_gate_mean, 3) << " and std " << fixed(base.attained_gate_std, 3)
      << " (targets " << rc.target_gate_mean << ", " << rc.target_gate_std << ")\n";

  bool ok = every_seed && base.mean_gain >= kMainGainLow && base.mean_gain <= kMainGainHigh;
  if (!rc.force_unit_gate) {
    ok = ok && std::abs(base.attained_gate_mean - rc.target_gate_mean) <= kGateMeanTol &&
         std::abs(base.attained_gate_std - rc.target_gate_std) <= kGateStdTol;
  }
  if (!sweep.empty()) {
    out << "\nRobustness of the rank gain\n";
    out << std::setw(12) << "Config" << std::setw(10) << "Gain" << "Band\n";
    for (const auto& cell : sweep) {
      const double g = cell.result.mean_gain;
      const bool in_band = g > 0.0 && g >= kSweepGainLow && g <= kSweepGainHigh;
      ok = ok && in_band;
      out << std::setw(12) << cell.config_id << std::setw(10) << percent(g) << (in_band ? "ok" : "OUT") << '\n';
    }
  }
  out << std::right << "\nRuntime " << fixed(seconds, 2) << " s. Results in " << (dir / "rank_results.csv").string()
      << "\n";
  out << (ok ? "All acceptance bands met.\n" : "Acceptance bands NOT met.\n");
  return ok ? kSuccess : kBandFailure;
}

// ---------------------------------------------------------------- report

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  const std::string expected = "config_id,c,rho,seed,srank_ungated,srank_gated,rel_gain";
  if (rows.empty()) throw ConfigError("'" + p.string() + "' is empty");
  std::string header;
  for (std::size_t i = 0; i < rows.front().size(); ++i) header += (i ? "," : "") + rows.front()[i];
  if (header != expected) throw ConfigError("'" + p.string() + "': unexpected header '" + header + "'");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 7) throw ConfigError("'" + p.string() + "' row " + std::to_string(r + 1) + ": expected 7 fields");
  }
  rows.erase(rows.begin());
  return rows;
}

int cmd_report(const Options& opt, std::ostream& out) {
  const fs::path dir(opt.out_dir);
  const auto results = read_csv(dir / "rank_results.csv");
  const auto aggregate = read_csv(dir / "rank_aggregate.csv");
  std::string current;
  for (const auto& r : results) {
    if (r[0] != current) {
      current = r[0];
      out << "\n[" << current << "] c=" << r[1] << " rho=" << r[2] << '\n';
      out << std::left << std::setw(8) << "Seed" << std::setw(14) << "srank(Y)" << std::setw(16) << "srank(Y*g)"
          << "Delta\n";
    }
    out << std::setw(8) << r[3] << std::setw(14) << fixed(std::stod(r[4])) << std::setw(16) << fixed(std::stod(r[5]))
        << percent(std::stod(r[6])) << '\n';
  }
  out << "\nConfig       Mean gain   Std\n";
  for (std::size_t i = 0; i + 1 < aggregate.size(); i += 2) {
    const auto& m = aggregate[i];
    const auto& s = aggregate[i + 1];
    out << std::setw(13) << m[0] << std::setw(12) << percent(std::stod(m[6])) << fixed(100.0 * std::stod(s[6]), 2)
        << "%\n";
  }
  out << std::right;
  return kSuccess;
}

// ---------------------------------------------------------------- grad-check

int cmd_grad_check(const Options& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  const fs::path dir = prepare_out(opt, cfg);
  const auto& gc = cfg.grad;
  ToyTaskConfig tc = cfg.task;
  tc.n_graphs = std::max<std::size_t>(2, gc.graphs);
  tc.nodes_per_graph = gc.nodes;
  const SyntheticTask task = make_toy_task(cfg.task_seed, tc);
  std::vector<std::size_t> all(task.graphs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  all.resize(gc.graphs);
  const auto batch = task.examples(all);

  std::vector<AblationCell> combos;
  for (auto p : gc.placements) {
    if (p == GatePlacement::none) {
      combos.push_back({p, cfg.train.model.gate.sharing, Activation::sigmoid});
      continue;
    }
    for (auto a : gc.activations) combos.push_back({p, cfg.train.model.gate.sharing, a});
  }
  std::vector<FdReport> reports(combos.size());
  parallel_for(combos.size(), opt.parallel, [&](std::size_t i) {
    ModelShape shape = shape_for(cfg, combos[i]);
    shape.d_in = task.d_in;
    const ModelParams params = init_model(shape, cfg.train.seed);
    FdOptions fd;
    fd.step = gc.step;
    fd.sample = gc.sample;
    fd.seed = cfg.train.seed;
    if (!opt.corrupt_param.empty()) {
      const std::string name = opt.corrupt_param;
      fd.tamper = [name](ModelParams& g) {
        for (auto& p : param_registry(g)) {
          if (p.name == name) {
            p.value->data()[0] += 1e-3 + std::abs(p.value->data()[0]);
            return;
          }
        }
        throw ConfigError("--corrupt-gradient: unknown parameter '" + name + "'");
      };
    }
    reports[i] = finite_difference_check(params, batch, gc.loss, fd);
  });

  auto os = open_out(dir / "grad_check.csv");
  os.precision(17);
  os << "placement,activation,max_rel_err,worst_param,worst_index,analytic,numeric,coords,pass\n";
  bool ok = true;
  out << "Gradient check: " << cfg.train.model.layers << " layers, d=" << cfg.train.model.d
      << ", K=" << cfg.train.model.heads << ", " << gc.graphs << " graph(s) of " << gc.nodes << " nodes, h=" << gc.step
      << ", " << to_string(gc.loss) << (gc.sample == 0 ? ", every coordinate" : ", sampled") << '\n';
  for (std::size_t i = 0; i < combos.size(); ++i) {
    const auto& r = reports[i];
    const bool pass = r.max_rel_err <= gc.tolerance;
    ok = ok && pass;
    const std::string act = combos[i].placement == GatePlacement::none ? "-" : to_string(combos[i].activation);
    os << to_string(combos[i].placement) << ',' << act << ',' << r.max_rel_err << ',' << r.worst_param << ','
       << r.worst_index << ',' << r.worst_analytic << ',' << r.worst_numeric << ',' << r.coords_checked << ','
       << (pass ? "true" : "false") << '\n';
    std::ostringstream err;
    err << std::scientific << std::setprecision(2) << r.max_rel_err;
    out << "  " << std::left << std::setw(5) << to_string(combos[i].placement) << std::setw(16) << act
        << std::right << "max rel err " << err.str() << "  " << (pass ? "PASS" : "FAIL") << "  worst "
        << r.worst_param << '[' << r.worst_index << "]  (" << r.coords_checked << " coords)\n";
  }
  out << (ok ? "All gradients within tolerance.\n" : "Gradient check FAILED.\n");
  return ok ? kSuccess : kBandFailure;
}

// ---------------------------------------------------------------- ablate / lr-sweep

void write_cell(std::ostream& os, const ToyCellResult& r) {
  if (r.diverged) {
    os << "diverged,,,,,,";
    return;
  }
  os << "ok," << r.initial_test_loss << ',' << r.final_train_loss << ',' << r.final_test_loss << ',' << r.last_mad
     << ',' << r.last_entropy << ',';
  if (r.gate_mean) os << *r.gate_mean;
}

int cmd_ablate(const Options& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  const fs::path dir = prepare_out(opt, cfg);
  const auto cells = ablation_cells(cfg.ablate);
  std::vector<ToyCellResult> results(cells.size());
  parallel_for(cells.size(), opt.parallel,
               [&](std::size_t i) { results[i] = run_toy_cell(cfg, shape_for(cfg, cells[i]), cfg.train.lr); });

  auto os = open_out(dir / "ablation_toy.csv");
  os.precision(17);
  os << "placement,sharing,activation,status,initial_test_loss,final_train_loss,final_test_loss,last_mad,"
        "last_entropy,gate_mean\n";
  out << "Gate ablation on the toy regression task (surrogate; not benchmark scores)\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const bool gated = c.placement != GatePlacement::none;
    os << to_string(c.placement) << ',' << (gated ? to_string(c.sharing) : "-") << ','
       << (gated ? to_string(c.activation) : "-") << ',';
    write_cell(os, results[i]);
    os << '\n';
    out << "  " << std::left << std::setw(36) << c.label() << std::right;
    if (results[i].diverged) {
      out << "diverged: " << results[i].message << '\n';
    } else {
      out << "test loss " << fixed(results[i].final_test_loss) << "  last-layer MAD " << fixed(results[i].last_mad)
          << '\n';
    }
  }
  return kSuccess;
}

int cmd_lr_sweep(const Options& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  const fs::path dir = prepare_out(opt, cfg);
  AblationCell gated_cell{cfg.train.model.gate.placement, cfg.train.model.gate.sharing,
                          cfg.train.model.gate.activation};
  if (gated_cell.placement == GatePlacement::none) gated_cell.placement = GatePlacement::g1;
  const AblationCell ungated_cell{GatePlacement::none, GateSharing::per_head, Activation::sigmoid};
  const std::vector<std::pair<std::string, AblationCell>> models{{"ungated", ungated_cell}, {"gated", gated_cell}};

  const std::size_t n_lr = cfg.lrs.size();
  std::vector<ToyCellResult> results(models.size() * n_lr);
  parallel_for(results.size(), opt.parallel, [&](std::size_t i) {
    results[i] = run_toy_cell(cfg, shape_for(cfg, models[i / n_lr].second), cfg.lrs[i % n_lr]);
  });

  auto os = open_out(dir / "lr_sweep_toy.csv");
  os.precision(17);
  os << "model,lr,status,initial_test_loss,final_train_loss,final_test_loss,last_mad,last_entropy,gate_mean\n";
  auto ros = open_out(dir / "lr_sweep_toy_range.csv");
  ros.precision(17);
  ros << "model,completed,min_loss,max_loss,range\n";
  out << "Learning-rate sensitivity on the toy regression task (surrogate; not benchmark scores)\n";
  for (std::size_t m = 0; m < models.size(); ++m) {
    double lo = INFINITY, hi = -INFINITY;
    std::size_t completed = 0;
    out << "  " << models[m].first << '\n';
    for (std::size_t j = 0; j < n_lr; ++j) {
      const auto& r = results[m * n_lr + j];
      os << models[m].first << ',' << cfg.lrs[j] << ',';
      write_cell(os, r);
      os << '\n';
      out << "    lr " << std::left << std::setw(10) << cfg.lrs[j] << std::right;
      if (r.diverged) {
        out << "diverged\n";
        continue;
      }
      ++completed;
      lo = std::min(lo, r.final_test_loss);
      hi = std::max(hi, r.final_test_loss);
      out << "test loss " << fixed(r.final_test_loss) << '\n';
    }
    if (completed > 0) {
      ros << models[m].first << ',' << completed << ',' << lo << ',' << hi << ',' << (hi - lo) << '\n';
      out << "    range (max - min) " << fixed(hi - lo) << " over " << completed << " completed runs\n";
    } else {
      ros << models[m].first << ",0,,,\n";
      out << "    no completed runs\n";
    }
  }
  return kSuccess;
}

// ---------------------------------------------------------------- train / diagnose

void print_diagnostics(std::ostream& out, const DiagnosticsReport& r) {
  out << std::left << std::setw(7) << "Layer" << std::setw(10) << "MAD" << std::setw(10) << "Entropy";
  const bool gated = !r.gates_per_layer.empty();
  if (gated) out << std::setw(10) << "Gate mean" << std::setw(10) << "Gate std" << std::setw(9) << "<0.1" << ">0.9";
  out << '\n';
  for (std::size_t l = 0; l < r.profile.mad.size(); ++l) {
    out << std::setw(7) << (l + 1) << std::setw(10) << fixed(r.profile.mad[l]) << std::setw(10)
        << fixed(r.profile.entropy[l]);
    if (gated) {
      const auto& g = r.gates_per_layer[l];
      out << std::setw(10) << fixed(g.mean) << std::setw(10) << fixed(g.std) << std::setw(9) << fixed(g.frac_below, 3)
          << fixed(g.frac_above, 3);
    }
    out << '\n';
  }
  if (gated) {
    const auto& g = r.gates_pooled;
    out << std::setw(27) << "Pooled" << std::setw(10) << fixed(g.mean) << std::setw(10) << fixed(g.std)
        << std::setw(9) << fixed(g.frac_below, 3) << fixed(g.frac_above, 3) << '\n';
  }
  out << std::right;
}

void write_diagnostics_files(const fs::path& dir, const DiagnosticsReport& r) {
  {
    auto os = open_out(dir / "diagnostics.csv");
    write_diagnostics_csv(os, r);
  }
  auto os = open_out(dir / "diagnostics.json");
  write_diagnostics_json(os, r);
}

int cmd_train(const Options& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  const fs::path dir = prepare_out(opt, cfg);
  const SyntheticTask task = make_toy_task(cfg.task_seed, cfg.task);
  const TrainHistory hist = train_toy(cfg.train, task);
  {
    auto os = open_out(dir / "history.csv");
    write_history_csv(os, hist);
  }
  save_params((dir / "params.txt").string(), hist.final_params);
  const GraphInstance& sample = task.graphs.at(task.test.front());
  save_graph((dir / "graph.txt").string(), sample);
  const DiagnosticsReport report = diagnose(model_forward(sample, hist.final_params).trace);
  write_diagnostics_files(dir, report);
  out << "Toy regression task: " << task.train.size() << " train / " << task.test.size() << " test graphs\n";
  out << "Initial train loss " << fixed(hist.initial_loss) << ", final train loss "
      << fixed(hist.epochs.back().loss) << ", final test loss " << fixed(hist.final_test_loss) << '\n';
  out << "Diagnostics on the first test graph:\n";
  print_diagnostics(out, report);
  return kSuccess;
}

int cmd_diagnose(const Options& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  if (opt.graph_path.empty()) throw ConfigError("diagnose: --graph is required");
  const fs::path dir = prepare_out(opt, cfg);
  const GraphInstance g = load_graph(opt.graph_path);
  ModelShape shape = cfg.train.model;
  shape.d_in = g.node_features.cols();
  shape.d_e = g.edge_dim();
  ModelParams params = init_model(shape, cfg.train.seed);
  if (!opt.model_path.empty()) load_params(opt.model_path, params);
  const DiagnosticsReport report = diagnose(model_forward(g, params).trace);
  write_diagnostics_files(dir, report);
  print_diagnostics(out, report);
  return kSuccess;
}

// ---------------------------------------------------------------- param-count

int cmd_param_count(const Options& opt, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(opt);
  const ModelShape& s = cfg.train.model;
  if (s.heads == 0 || s.d % s.heads != 0) {
    throw ConfigError("param-count: d = " + std::to_string(s.d) + " is not divisible by K = " +
                      std::to_string(s.heads));
  }
  const auto d = static_cast<std::int64_t>(s.d);
  const auto dk = static_cast<std::int64_t>(s.d / s.heads);
  const auto k = static_cast<std::int64_t>(s.heads);
  const auto l = static_cast<std::int64_t>(s.layers);
  const std::int64_t formula = gate_param_count(d, dk, k, l);
  out << "d=" << d << " K=" << k << " d_k=" << dk << " L=" << l << '\n';
  out << "Per-head output gate parameters (L·K·(d·d_k + d_k)): " << formula << '\n';
  if (l == 0) {
    err << "warning: L = 0, the model has no attention layers\n";
    const auto io = static_cast<std::int64_t>(s.d_in * s.d + s.d + s.d * s.d_out + s.d_out);
    out << "Total parameters: " << io << "\nGate parameters: 0\nGate fraction: 0\n";
    return kSuccess;
  }
  const ModelParams params = init_model(s, cfg.train.seed);
  const auto total = count_parameters(params);
  const auto gates = count_gate_parameters(params);
  out << "Configured model (" << to_string(s.gate.placement) << ", " << to_string(s.gate.sharing) << ")\n";
  out << "Total parameters: " << total << '\n';
  out << "Gate parameters: " << gates << '\n';
  out << "Gate fraction: " << fixed(100.0 * static_cast<double>(gates) / static_cast<double>(total), 2) << "%\n";
  return kSuccess;
}

}  // namespace

std::string AblationCell::label() const {
  if (placement == GatePlacement::none) return "none";
  return to_string(placement) + "/" + to_string(sharing) + "/" + to_string(activation);
}

std::vector<AblationCell> ablation_cells(const AblationSettings& s) {
  std::vector<AblationCell> out;
  for (auto p : s.placements) {
    if (p == GatePlacement::none) {
      out.push_back({p, GateSharing::per_head, Activation::sigmoid});
      continue;
    }
    for (auto sh : s.sharings)
      for (auto a : s.activations) out.push_back({p, sh, a});
  }
  return out;
}

ModelShape shape_for(const RunConfig& cfg, const AblationCell& cell) {
  ModelShape shape = cfg.train.model;
  shape.gate.placement = cell.placement;
  shape.gate.sharing = cell.sharing;
  shape.gate.activation = cell.activation;
  return shape;
}

ToyCellResult run_toy_cell(const RunConfig& cfg, const ModelShape& model, double lr) {
  const SyntheticTask task = make_toy_task(cfg.task_seed, cfg.task);
  TrainConfig tc = cfg.train;
  tc.model = model;
  tc.lr = lr;
  ToyCellResult r;
  TrainHistory hist;
  try {
    hist = train_toy(tc, task);
  } catch (const TrainingError& e) {
    r.diverged = true;
    r.message = e.what();
    return r;
  }
  r.initial_test_loss = hist.initial_test_loss;
  r.final_train_loss = hist.epochs.back().loss;
  r.final_test_loss = hist.final_test_loss;
  std::vector<std::vector<Matrix>> gates(1);
  for (const auto& trace : hist.test_traces) {
    const auto profile = depth_profile(trace);
    r.last_mad += profile.mad.back();
    r.last_entropy += profile.entropy.back();
    for (auto& layer : gate_tensors(trace))
      for (auto& g : layer) gates.front().push_back(std::move(g));
  }
  const auto n = static_cast<double>(hist.test_traces.size());
  r.last_mad /= n;
  r.last_entropy /= n;
  if (!gates.front().empty()) r.gate_mean = gate_stats_pooled(gates).mean;
  return r;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sigmoid-gated attention for graph transformers: experiments and diagnostics", "siggate"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", opt.config_path, "Configuration file (key = value)");
    if (config_required) c->required();
    sub->add_option("--out", opt.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed-override", opt.seed_override, "Replace the training seed and experiment seeds");
    sub->add_option("--parallel", opt.parallel, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto* rank = app.add_subcommand("rank-exp", "Synthetic stable-rank study and robustness sweep");
  add_common(rank, true);
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient verification");
  add_common(grad, true);
  grad->add_option("--corrupt-gradient", opt.corrupt_param, "Perturb one analytic gradient (negative control)")
      ->group("");
  auto* ablate = app.add_subcommand("ablate", "Placement × sharing × activation matrix on the toy task");
  add_common(ablate, true);
  auto* lr = app.add_subcommand("lr-sweep", "Learning-rate sensitivity on the toy task");
  add_common(lr, true);
  auto* diag = app.add_subcommand("diagnose", "Depth profile and gate statistics for one graph");
  add_common(diag, true);
  diag->add_option("--model", opt.model_path, "Parameter file (default: fresh initialization)");
  diag->add_option("--graph", opt.graph_path, "Graph file")->required();
  auto* count = app.add_subcommand("param-count", "Parameter and gate-parameter totals");
  add_common(count, true);
  auto* train = app.add_subcommand("train", "Train one model on the toy task");
  add_common(train, true);
  auto* report = app.add_subcommand("report", "Print tables from rank-exp CSVs in --out");
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "siggate: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (rank->parsed()) return cmd_rank_exp(opt, out);
    if (grad->parsed()) return cmd_grad_check(opt, out);
    if (ablate->parsed()) return cmd_ablate(opt, out);
    if (lr->parsed()) return cmd_lr_sweep(opt, out);
    if (diag->parsed()) return cmd_diagnose(opt, out);
    if (count->parsed()) return cmd_param_count(opt, out, err);
    if (train->parsed()) return cmd_train(opt, out);
    if (report->parsed()) return cmd_report(opt, out);
  } catch (const std::exception& e) {
    err << "siggate: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace siggate::cli
