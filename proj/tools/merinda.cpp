// merinda: data generation, model recovery, evaluation and FPGA cost estimation.

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "merinda/config.hpp"
#include "merinda/dynamics.hpp"
#include "merinda/fpga_cost.hpp"
#include "merinda/training.hpp"

#ifndef MERINDA_VERSION
#define MERINDA_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace merinda;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kDiverged = 4 };

std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = std::strtoll(epoch, nullptr, 10);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct Manifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs, outputs;
  json settings = json::object();

  void write(const std::string& path) const {
    json j;
    j["schema"] = "merinda-manifest-v1";
    j["command"] = command;
    j["config_path"] = config_path.empty() ? json(nullptr) : json(config_path);
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["artifact_version"] = MERINDA_VERSION;
    j["timestamp"] = timestamp();
    j["settings"] = settings;
    write_file(path, j.dump(2) + "\n");
  }
};

std::vector<double> parse_vector(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::istringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_double(item, flag, 0, flag));
  return out;
}

const DynamicalSystem& resolve_system(SystemRegistry& registry, const std::string& ref) {
  if (registry.contains(ref)) return registry.at(ref);
  if (fs::exists(ref)) {
    DynamicalSystem sys = load_system_config(ref);
    const std::string name = sys.name;
    registry.add(std::move(sys));
    return registry.at(name);
  }
  return registry.at(ref);  // throws NotFoundError
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string system = "lotka_volterra";
  std::vector<std::string> system_configs;
  std::string y0;
  double dt = 0.01;
  Index steps = 1000;
  double sigma = 0;
  std::uint64_t seed = 0;
  std::string input = "zero";
  std::string out;
  std::string method = "rk4";
  double identifiability_tol = -1;
};

int cmd_generate(const GenerateArgs& a) {
  SystemRegistry registry = builtin_systems(a.system_configs);
  const DynamicalSystem& sys = resolve_system(registry, a.system);
  Eigen::VectorXd y0 = Eigen::VectorXd::Ones(sys.n());
  if (!a.y0.empty()) {
    const auto v = parse_vector(a.y0, "--y0");
    if (static_cast<Index>(v.size()) != sys.n())
      throw ContractError("--y0: expected " + std::to_string(sys.n()) + " values for system '" +
                          sys.name + "'");
    y0 = Eigen::Map<const Eigen::VectorXd>(v.data(), sys.n());
  }
  const InputSignal input = parse_input_signal(a.input, sys.m());
  const RkMethod method = parse_rk_method(a.method);
  Trajectory traj = simulate(sys, y0, input, a.dt, a.steps, method);
  traj = add_noise(traj, a.sigma, a.seed);
  ensure_parent(a.out);
  write_file(a.out, format_trajectory_csv(traj));

  if (a.identifiability_tol >= 0) {
    const double horizon = a.dt * static_cast<double>(a.steps);
    const auto rep = identifiability_check(sys, y0, input, horizon, a.identifiability_tol, a.dt);
    std::cerr << "identifiability over " << rep.horizon << " s (tol " << a.identifiability_tol
              << "):\n";
    for (std::size_t i = 0; i < rep.coefficients.size(); ++i) {
      const auto [row, col] = rep.coefficients[i];
      const bool flagged = std::find(rep.flagged.begin(), rep.flagged.end(),
                                     static_cast<Index>(i)) != rep.flagged.end();
      std::cerr << "  dy" << row + 1 << "/dt  " << sys.library.term_name(col) << "  "
                << rep.sensitivity[i] << (flagged ? "  FLAGGED" : "") << "\n";
    }
  }

  Manifest m;
  m.command = "generate";
  m.seed = a.seed;
  m.outputs = {a.out};
  m.settings = {{"system", sys.name}, {"y0", std::vector<double>(y0.data(), y0.data() + y0.size())},
                {"dt", a.dt},         {"steps", a.steps},
                {"sigma", a.sigma},   {"input", a.input},
                {"method", a.method}};
  m.write(a.out + ".manifest.json");
  std::cout << "wrote " << a.out << " (" << traj.samples() << " samples, n=" << traj.n()
            << ", m=" << traj.m() << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct RecoverArgs {
  std::string data, config, out;
  std::string truth;
  std::string holdout;
  std::vector<std::string> system_configs;
  std::uint64_t seed = 0;
  bool seed_given = false;
  Index epochs = 0;
  Index log_every = 100;
};

void print_report(const std::string& label, const EvalReport& r) {
  std::cout << label << ": reconstruction_mse="
            << (r.diverged ? std::string("inf") : format_decimal(r.reconstruction_mse));
  if (r.coeff_max_abs_err)
    std::cout << " coeff_max_abs_err=" << *r.coeff_max_abs_err
              << " support_precision=" << *r.support_precision
              << " support_recall=" << *r.support_recall;
  std::cout << " diverged=" << (r.diverged ? "true" : "false") << "\n";
}

int cmd_recover(const RecoverArgs& a) {
  TrainConfig cfg = TrainConfig::load(a.config);
  if (a.seed_given) cfg.seed = a.seed;
  if (a.epochs > 0) cfg.epochs = a.epochs;
  cfg.validate();
  const Trajectory traj = load_trajectory_csv(a.data);

  std::optional<DynamicalSystem> truth;
  if (!a.truth.empty()) {
    SystemRegistry registry = builtin_systems(a.system_configs);
    truth = resolve_system(registry, a.truth);
  }

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  write_file((dir / "config.txt").string(), cfg.echo());

  RecoveredModel rec;
  try {
    rec = train(cfg, traj, [&](Index epoch, double loss, Index active) {
      if (a.log_every > 0 && ((epoch + 1) % a.log_every == 0 || epoch == 0))
        std::cerr << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << loss << " active "
                  << active << "\n";
    });
  } catch (const TrainingHalted& e) {
    write_file((dir / "diagnostics.json").string(), e.diagnostics());
    throw;
  }

  write_file((dir / "loss.csv").string(), loss_csv(rec.history));
  write_file((dir / "checkpoint.json").string(), checkpoint_json(rec));
  const EvalReport report = evaluate(rec, traj, truth ? &*truth : nullptr);
  write_file((dir / "eval.json").string(), eval_report_json(report));

  Manifest m;
  m.command = "recover";
  m.config_path = a.config;
  m.seed = cfg.seed;
  m.inputs = {a.data};
  m.outputs = {"config.txt", "loss.csv", "checkpoint.json", "eval.json"};
  if (!a.holdout.empty()) {
    const Trajectory held = load_trajectory_csv(a.holdout);
    const EvalReport hr = evaluate(rec, held, truth ? &*truth : nullptr);
    write_file((dir / "eval_holdout.json").string(), eval_report_json(hr));
    m.inputs.push_back(a.holdout);
    m.outputs.push_back("eval_holdout.json");
    print_report("holdout", hr);
  }
  m.settings = {{"config", cfg.echo()}, {"truth", a.truth}};
  m.write((dir / "manifest.json").string());

  std::cout << "recovered model (best epoch " << rec.best_epoch + 1 << ", loss " << rec.best_loss
            << "):\n";
  const auto& lib = rec.model.library();
  for (const auto& e : rec.model.support())
    std::cout << "  dy" << e.row + 1 << "/dt  " << std::setw(12) << rec.model.theta()(e.row, e.col)
              << "  " << lib.term_name(e.col) << "\n";
  print_report("train", report);
  return report.diverged ? kDiverged : kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, truth, out;
  std::vector<std::string> system_configs;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const RecoveredModel rec = load_checkpoint(a.checkpoint);
  const Trajectory traj = load_trajectory_csv(a.data);
  std::optional<DynamicalSystem> truth;
  if (!a.truth.empty()) {
    SystemRegistry registry = builtin_systems(a.system_configs);
    truth = resolve_system(registry, a.truth);
  }
  const EvalReport report = evaluate(rec, traj, truth ? &*truth : nullptr);
  const std::string text = eval_report_json(report);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    ensure_parent(a.out);
    write_file(a.out, text);
    Manifest m;
    m.command = "eval";
    m.seed = a.seed;
    m.inputs = {a.checkpoint, a.data};
    m.outputs = {a.out};
    m.settings = {{"truth", a.truth}};
    m.write(a.out + ".manifest.json");
    print_report("eval", report);
  }
  return report.diverged ? kDiverged : kOk;
}

// ---------------------------------------------------------------------------

struct FpgaArgs {
  std::string calibration;
  Index anchor_dim = 150;
  double anchor_time = 11.84;
  Index hidden = 0;
  Index dim = 30;
  std::string dims = "20..150";
  std::string strategy = "pipeline_unroll";
  Index ii = 1;
  Index unroll = fpga::kDefaultUnroll;
  bool no_partition = false;
  Index dep_distance = 1;
  bool check_hazards = false;
  Index overhead = 0;
  std::string fit_dims;
  std::string json_out;
  bool speedup = false;
  std::uint64_t seed = 0;
};

fpga::CalibrationParams fpga_params(const FpgaArgs& a, std::vector<std::string>& inputs) {
  std::vector<fpga::TableRow> rows;
  if (a.calibration.empty()) {
    rows = fpga::default_table();
  } else {
    rows = fpga::load_table_csv(a.calibration);
    inputs.push_back(a.calibration);
  }
  if (!a.fit_dims.empty()) {
    const auto keep = fpga::parse_dims(a.fit_dims);
    std::vector<fpga::TableRow> subset;
    for (const auto& r : rows)
      if (std::find(keep.begin(), keep.end(), r.d) != keep.end()) subset.push_back(r);
    rows = subset;
  }
  return fpga::calibrate(rows, {a.anchor_dim, a.anchor_time}, a.hidden);
}

fpga::OptimizationConfig fpga_opt(const FpgaArgs& a, fpga::Strategy s) {
  fpga::OptimizationConfig opt;
  opt.strategy = s;
  opt.ii = a.ii;
  opt.unroll = a.unroll;
  opt.partition = !a.no_partition;
  opt.check_hazards = a.check_hazards;
  opt.overhead = a.overhead;
  opt.validate();
  return opt;
}

std::vector<fpga::Strategy> fpga_strategies(const std::string& text) {
  if (text == "all") return {std::begin(fpga::kAllStrategies), std::end(fpga::kAllStrategies)};
  return {fpga::parse_strategy(text)};
}

void fpga_manifest(const FpgaArgs& a, const std::string& sub, const std::vector<std::string>& inputs) {
  if (a.json_out.empty()) return;
  Manifest m;
  m.command = "fpga " + sub;
  m.seed = a.seed;
  m.inputs = inputs;
  m.outputs = {a.json_out};
  m.settings = {{"anchor_dim", a.anchor_dim}, {"anchor_time", a.anchor_time},
                {"hidden", a.hidden},         {"strategy", a.strategy},
                {"ii", a.ii},                 {"unroll", a.unroll},
                {"partition", !a.no_partition}, {"dep_distance", a.dep_distance},
                {"check_hazards", a.check_hazards}, {"overhead", a.overhead},
                {"fit_dims", a.fit_dims}};
  if (sub == "estimate") m.settings["dim"] = a.dim;
  if (sub == "sweep") m.settings["dims"] = a.dims;
  m.write(a.json_out + ".manifest.json");
}

int cmd_fpga_estimate(const FpgaArgs& a) {
  std::vector<std::string> inputs;
  const auto params = fpga_params(a, inputs);
  fpga::GraphOptions go;
  go.dep_distance = a.dep_distance;
  const auto graph = fpga::build_kernel_graph(a.dim, a.hidden > 0 ? a.hidden : a.dim, go);
  std::vector<fpga::CostReport> reports;
  for (auto s : fpga_strategies(a.strategy)) reports.push_back(fpga::estimate(graph, fpga_opt(a, s), params));
  std::cout << fpga::format_cost_table(reports);
  if (!a.json_out.empty()) {
    ensure_parent(a.json_out);
    write_file(a.json_out, fpga::cost_reports_json(reports));
  }
  fpga_manifest(a, "estimate", inputs);
  return kOk;
}

int cmd_fpga_calibrate(const FpgaArgs& a) {
  std::vector<std::string> inputs;
  const auto params = fpga_params(a, inputs);
  std::cout << fpga::format_calibration(params);
  if (!a.json_out.empty()) {
    ensure_parent(a.json_out);
    write_file(a.json_out, fpga::calibration_json(params));
  }
  fpga_manifest(a, "calibrate", inputs);
  return kOk;
}

int cmd_fpga_sweep(const FpgaArgs& a) {
  std::vector<std::string> inputs;
  const auto params = fpga_params(a, inputs);
  const auto dims = fpga::parse_dims(a.dims);
  fpga::GraphOptions go;
  go.dep_distance = a.dep_distance;
  std::vector<fpga::CostReport> reports;
  for (auto s : fpga_strategies(a.strategy)) {
    const auto opt = fpga_opt(a, s);
    for (Index d : dims)
      reports.push_back(fpga::estimate(fpga::build_kernel_graph(d, a.hidden > 0 ? a.hidden : d, go),
                                       opt, params));
  }
  std::cout << fpga::format_cost_table(reports);
  if (a.speedup) std::cout << "\n" << fpga::format_speedup_table(fpga::speedup_report(dims, params, a.hidden));
  if (!a.json_out.empty()) {
    ensure_parent(a.json_out);
    write_file(a.json_out, fpga::cost_reports_json(reports));
  }
  fpga_manifest(a, "sweep", inputs);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MERINDA model recovery toolkit and FPGA pipeline cost model"};
  app.set_version_flag("--version", MERINDA_VERSION);
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Simulate a system and write a trajectory CSV");
  generate->add_option("--system", gen.system, "Registry name or system config path")
      ->capture_default_str();
  generate->add_option("--system-config", gen.system_configs, "Extra system config files");
  generate->add_option("--y0", gen.y0, "Initial state, comma separated (default all ones)");
  generate->add_option("--dt", gen.dt, "Sample interval")->check(CLI::PositiveNumber)->capture_default_str();
  generate->add_option("--steps", gen.steps, "Integration steps (samples - 1)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  generate->add_option("--sigma", gen.sigma, "Gaussian noise standard deviation")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  generate->add_option("--seed", gen.seed, "Noise seed")->capture_default_str();
  generate->add_option("--input", gen.input, "Input signal: zero | const:a[,b..] | sin:amp,omega | step:t0,amp")
      ->capture_default_str();
  generate->add_option("--method", gen.method, "Integrator: rk4 | rk2")->capture_default_str();
  generate->add_option("--identifiability-tol", gen.identifiability_tol,
                       "Also report coefficient sensitivities, flagging those below this tolerance");
  generate->add_option("--out", gen.out, "Output CSV path")->required();

  RecoverArgs rec;
  auto* recover = app.add_subcommand("recover", "Train the recovery network and evaluate it");
  recover->add_option("--data", rec.data, "Trajectory CSV")->required();
  recover->add_option("--config", rec.config, "Training config file")->required();
  recover->add_option("--out", rec.out, "Run directory")->required();
  recover->add_option("--system", rec.truth, "Ground-truth system for coefficient metrics");
  recover->add_option("--system-config", rec.system_configs, "Extra system config files");
  recover->add_option("--holdout", rec.holdout, "Held-out trajectory CSV to evaluate as well");
  auto* rec_seed = recover->add_option("--seed", rec.seed, "Override the config seed");
  recover->add_option("--epochs", rec.epochs, "Override the config epoch count");
  recover->add_option("--log-every", rec.log_every, "Progress interval in epochs (0 = silent)")
      ->capture_default_str();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against a trajectory");
  eval->add_option("--checkpoint", ev.checkpoint, "checkpoint.json from recover")->required();
  eval->add_option("--data", ev.data, "Trajectory CSV")->required();
  eval->add_option("--system", ev.truth, "Ground-truth system for coefficient metrics");
  eval->add_option("--system-config", ev.system_configs, "Extra system config files");
  eval->add_option("--out", ev.out, "EvalReport JSON path (stdout when omitted)");
  eval->add_option("--seed", ev.seed, "Recorded in the manifest");

  FpgaArgs fa;
  auto* fpga_cmd = app.add_subcommand("fpga", "FPGA pipeline cost model");
  fpga_cmd->require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--calibration", fa.calibration,
                    "Calibration CSV d,cycles,lut,dsp,bram_kb,fpga_s (default: bundled table)");
    sub->add_option("--fit-dims", fa.fit_dims, "Calibrate on these table rows only, e.g. 20,60,100");
    sub->add_option("--anchor-dim", fa.anchor_dim, "Dimension of the unoptimized runtime anchor")
        ->capture_default_str();
    sub->add_option("--anchor-time", fa.anchor_time,
                    "Unoptimized runtime in seconds at the anchor (0 disables)")
        ->capture_default_str();
    sub->add_option("--hidden", fa.hidden, "GRU hidden size (0 = same as d)")->capture_default_str();
    sub->add_option("--json", fa.json_out, "Write the JSON report here");
    sub->add_option("--seed", fa.seed, "Recorded in the manifest");
  };
  auto scheduling = [&](CLI::App* sub) {
    sub->add_option("--strategy", fa.strategy, "none | unroll | pipeline_unroll | all")
        ->capture_default_str();
    sub->add_option("--ii", fa.ii, "Initiation interval (1-3)")->check(CLI::Range(1, 3))->capture_default_str();
    sub->add_option("--unroll", fa.unroll, "Unroll factor")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_flag("--no-partition", fa.no_partition, "Disable complete array partitioning");
    sub->add_option("--dep-distance", fa.dep_distance, "Carried dependency distance of chained nests")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    sub->add_flag("--check-hazards", fa.check_hazards, "Reject II below a dependency distance");
    sub->add_option("--overhead", fa.overhead, "Extra cycles per kernel")->capture_default_str();
  };
  auto* f_est = fpga_cmd->add_subcommand("estimate", "Cost report for one dimension");
  common(f_est);
  scheduling(f_est);
  f_est->add_option("--dim", fa.dim, "Model dimension d")->check(CLI::PositiveNumber)->capture_default_str();
  auto* f_cal = fpga_cmd->add_subcommand("calibrate", "Fit the cost model and print residuals");
  common(f_cal);
  auto* f_sweep = fpga_cmd->add_subcommand("sweep", "Cost reports over a range of dimensions");
  common(f_sweep);
  scheduling(f_sweep);
  f_sweep->add_option("--dims", fa.dims, "Range a..b[:step] or list a,b,c")->capture_default_str();
  f_sweep->add_flag("--speedup", fa.speedup, "Also print none vs pipeline_unroll times and ratio");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*recover) {
      rec.seed_given = rec_seed->count() > 0;
      return cmd_recover(rec);
    }
    if (*eval) return cmd_eval(ev);
    if (*f_est) return cmd_fpga_estimate(fa);
    if (*f_cal) return cmd_fpga_calibrate(fa);
    if (*f_sweep) return cmd_fpga_sweep(fa);
  } catch (const DivergenceError& e) {
    std::cerr << "error: diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const TrainingHalted& e) {
    std::cerr << "error: training halted: " << e.what() << "\n";
    return kDiverged;
  } catch (const ParseError& e) {
    std::cerr << "error: parse: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return kData;
  } catch (const CalibrationError& e) {
    std::cerr << "error: calibration: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
