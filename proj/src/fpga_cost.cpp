#include "merinda/fpga_cost.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/QR>
#include <json.hpp>

#include "merinda/config.hpp"
#include "merinda_bundled.hpp"

namespace merinda::fpga {

using json = nlohmann::ordered_json;

Strategy parse_strategy(const std::string& text) {
  if (text == "none") return Strategy::none;
  if (text == "unroll") return Strategy::unroll;
  if (text == "pipeline_unroll" || text == "pipeline") return Strategy::pipeline_unroll;
  throw ContractError("unknown strategy '" + text + "' (none, unroll, pipeline_unroll)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::unroll: return "unroll";
    case Strategy::pipeline_unroll: return "pipeline_unroll";
  }
  return "?";
}

Index LoopNest::trip_product() const {
  return std::accumulate(trips.begin(), trips.end(), Index{1}, std::multiplies<>());
}

void LoopNest::validate() const {
  if (trips.empty()) throw ContractError("nest '" + name + "' has no loops");
  for (Index t : trips)
    if (t < 1) throw ContractError("nest '" + name + "': trip counts must be >= 1");
  if (dep_distance < 0) throw ContractError("nest '" + name + "': negative dependency distance");
  if (depth < 1 || epilogue < 0) throw ContractError("nest '" + name + "': invalid latency");
}

void OptimizationConfig::validate() const {
  if (strategy != Strategy::none && (ii < 1 || ii > 3))
    throw ContractError("II must be 1, 2 or 3");
  if (unroll < 1) throw ContractError("unroll factor must be >= 1");
  if (strategy == Strategy::pipeline_unroll && !partition)
    throw ContractError("pipeline_unroll requires complete array partitioning");
  if (overhead < 0) throw ContractError("overhead must be >= 0");
}

Index KernelGraph::mac_count(Phase phase) const {
  Index total = 0;
  for (const auto& nest : nests)
    if (nest.phase == phase) total += nest.mac_count();
  return total;
}

KernelGraph build_kernel_graph(Index d, Index H, const GraphOptions& options) {
  if (d < 1 || H < 1) throw ContractError("kernel graph needs d >= 1 and H >= 1");
  if (options.steps < 1 || options.library < 0 || options.dep_distance < 0)
    throw ContractError("kernel graph: invalid options");
  KernelGraph g;
  g.d = d;
  g.hidden = H;
  g.library = options.library > 0 ? options.library : d + 1;
  g.steps = options.steps;
  const Index dep = options.dep_distance, act = kActivationDepth - kMacDepth;
  const std::vector<Index> matvec = {H, H + d};

  auto add = [&](std::string name, std::vector<Index> trips, LoopBody body, Index epilogue,
                 bool reduction, Index distance, Phase phase, bool recurrent) {
    LoopNest nest;
    nest.name = std::move(name);
    nest.trips = std::move(trips);
    nest.body = body;
    nest.epilogue = epilogue;
    nest.reduction = reduction;
    nest.dep_distance = distance;
    nest.phase = phase;
    nest.recurrent = recurrent;
    g.nests.push_back(std::move(nest));
  };
  // z and r gates share one pass over concat(h_prev, x).
  add("gates", matvec, {2, 2, 3, 0}, act, true, 0, Phase::forward, true);
  add("reset_apply", {H}, {1, 0, 2, 1}, 0, false, dep, Phase::forward, true);
  add("candidate", matvec, {1, 1, 2, 0}, act, true, dep, Phase::forward, true);
  add("candidate_backward", matvec, {2, 1, 3, 1}, act, true, dep, Phase::backward, true);
  add("reset_apply_backward", {H}, {2, 0, 3, 2}, 0, false, dep, Phase::backward, true);
  add("gates_backward", matvec, {4, 2, 5, 2}, act, true, dep, Phase::backward, true);
  add("head", {d, g.library, H}, {1, 0, 2, 0}, 0, true, 0, Phase::head, false);
  add("head_backward", {d, g.library, H}, {2, 0, 3, 1}, 0, true, dep, Phase::head, false);
  add("loss", {d * g.steps}, {1, 0, 2, 0}, 0, true, dep, Phase::loss, false);
  return g;
}

namespace {

Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

Index ceil_log2(Index x) {
  Index levels = 0;
  for (Index v = 1; v < x; v *= 2) ++levels;
  return levels;
}

}  // namespace

Index nest_latency(const LoopNest& nest, const OptimizationConfig& opt) {
  nest.validate();
  const Index outer = nest.trips.front();
  const Index inner = nest.trip_product() / outer;

  switch (opt.strategy) {
    case Strategy::none:
      return outer * (inner * nest.depth + nest.epilogue);

    case Strategy::unroll: {
      // Innermost loop split into chunks of u; a reduction chunk adds one
      // adder per extra lane. Without partitioning only two ports feed a chunk.
      const Index u = opt.partition ? opt.unroll : std::min<Index>(opt.unroll, 2);
      const Index T = nest.trips.back();
      const Index repeats = nest.trips.size() == 1 ? 1 : nest.trip_product() / T;
      const Index lanes = std::min(u, T);
      const Index chunk = nest.depth + (nest.reduction ? (lanes - 1) * kAddLatency : 0);
      return repeats * ceil_div(T, u) * chunk + outer * nest.epilogue;
    }

    case Strategy::pipeline_unroll: {
      if (opt.check_hazards && opt.ii < nest.dep_distance)
        throw InfeasibleIIError("nest '" + nest.name + "': II=" + std::to_string(opt.ii) +
                                " is below its dependency distance " +
                                std::to_string(nest.dep_distance));
      const Index ii = std::max(opt.ii, nest.dep_distance);
      const Index tree = nest.reduction && inner > 1 ? ceil_log2(inner) * kAddLatency : 0;
      return nest.depth + tree + nest.epilogue + (outer - 1) * ii;
    }
  }
  return 0;
}

Index estimate_cycles(const KernelGraph& graph, const OptimizationConfig& opt) {
  opt.validate();
  Index total = opt.overhead;
  for (const auto& nest : graph.nests) total += nest_latency(nest, opt);
  return total;
}

Index peak_concurrent_macs(const KernelGraph& graph, const OptimizationConfig& opt) {
  Index peak = 0;
  for (const auto& nest : graph.nests) {
    if (!nest.recurrent) continue;
    Index lanes = 1;
    if (opt.strategy == Strategy::unroll)
      lanes = std::min(opt.partition ? opt.unroll : std::min<Index>(opt.unroll, 2),
                       nest.trips.back());
    else if (opt.strategy == Strategy::pipeline_unroll)
      lanes = nest.trip_product() / nest.trips.front();
    peak = std::max(peak, lanes * nest.body.mac);
  }
  return peak;
}

// ---------------------------------------------------------------------------
// Table input
// ---------------------------------------------------------------------------

std::vector<TableRow> parse_table_csv(const std::string& text, const std::string& source) {
  static const std::vector<std::string> header = {"d", "cycles", "lut", "dsp", "bram_kb", "fpga_s"};
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<TableRow> rows;
  bool seen_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(trim(f));
    if (!seen_header) {
      if (fields != header)
        throw ParseError(source, lineno, "header", "expected d,cycles,lut,dsp,bram_kb,fpga_s");
      seen_header = true;
      continue;
    }
    if (fields.size() != header.size())
      throw ParseError(source, lineno, "row",
                       "expected 6 fields, got " + std::to_string(fields.size()));
    TableRow r;
    r.d = parse_int(fields[0], source, lineno, "d");
    r.cycles = parse_double(fields[1], source, lineno, "cycles");
    r.lut = parse_double(fields[2], source, lineno, "lut");
    r.dsp = parse_double(fields[3], source, lineno, "dsp");
    r.bram_kb = parse_double(fields[4], source, lineno, "bram_kb");
    r.fpga_s = parse_double(fields[5], source, lineno, "fpga_s");
    if (r.d < 1) throw ParseError(source, lineno, "d", "must be >= 1");
    if (!(r.cycles > 0)) throw ParseError(source, lineno, "cycles", "must be > 0");
    if (!(r.fpga_s > 0)) throw ParseError(source, lineno, "fpga_s", "must be > 0");
    rows.push_back(r);
  }
  if (!seen_header) throw ParseError(source, 1, "header", "empty file");
  return rows;
}

std::vector<TableRow> load_table_csv(const std::string& path) {
  return parse_table_csv(read_file(path), path);
}

std::vector<TableRow> default_table() {
  return parse_table_csv(bundled::kFpgaCalibration, "data/fpga_calibration.csv");
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

namespace {

// Least squares with a rank check on the design matrix.
Eigen::VectorXd fit(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const std::string& what) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (A.rows() < A.cols() || qr.rank() < A.cols())
    throw CalibrationError("degenerate " + what + " fit: singular normal equations");
  return qr.solve(b);
}

double snap_integer(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-6 ? r : v;
}

Index graph_hidden(Index d, Index hidden) { return hidden > 0 ? hidden : d; }

double structural_ratio(const KernelGraph& graph, const OptimizationConfig& opt) {
  OptimizationConfig ref;
  ref.unroll = opt.unroll;
  return static_cast<double>(estimate_cycles(graph, opt) - opt.overhead) /
         static_cast<double>(estimate_cycles(graph, ref));
}

}  // namespace

CalibrationParams calibrate(const std::vector<TableRow>& rows, const Anchor& anchor,
                            Index hidden) {
  if (rows.size() < 3)
    throw CalibrationError("calibration needs at least 3 rows, got " + std::to_string(rows.size()));
  const Index R = static_cast<Index>(rows.size());
  CalibrationParams p;
  p.anchor = anchor;

  Eigen::VectorXd kappas(R);
  for (Index i = 0; i < R; ++i) kappas(i) = rows[i].fpga_s / rows[i].cycles;
  p.kappa = kappas.mean();
  p.kappa_spread = (kappas.maxCoeff() - kappas.minCoeff()) / p.kappa;

  Eigen::MatrixXd A(R, 3);
  Eigen::VectorXd c(R);
  for (Index i = 0; i < R; ++i) {
    const double d = static_cast<double>(rows[i].d);
    A.row(i) << 1.0, d, d * d;
    c(i) = rows[i].cycles;
  }
  const Eigen::VectorXd q = fit(A, c, "cycle");
  p.cycle_c0 = q(0), p.cycle_c1 = q(1), p.cycle_c2 = q(2);

  // BRAM: rows with d >= 40, or every row when fewer than two qualify.
  std::vector<const TableRow*> bram_rows;
  for (const auto& r : rows)
    if (r.d >= 40) bram_rows.push_back(&r);
  if (bram_rows.size() < 2) {
    bram_rows.clear();
    for (const auto& r : rows) bram_rows.push_back(&r);
  }
  {
    Eigen::MatrixXd B(static_cast<Index>(bram_rows.size()), 2);
    Eigen::VectorXd b(B.rows());
    for (Index i = 0; i < B.rows(); ++i) {
      B.row(i) << 1.0, static_cast<double>(bram_rows[i]->d);
      b(i) = bram_rows[i]->bram_kb;
    }
    const Eigen::VectorXd w = fit(B, b, "BRAM");
    p.bram_intercept = snap_integer(w(0));
    p.bram_slope = snap_integer(w(1));
    p.bram_exact = std::all_of(bram_rows.begin(), bram_rows.end(), [&](const TableRow* r) {
      return p.bram_intercept + p.bram_slope * static_cast<double>(r->d) == r->bram_kb;
    });
  }

  // DSP vs peak concurrent MACs of the pipelined kernel; LUT vs estimated DSP.
  const OptimizationConfig ref;
  Eigen::MatrixXd F(R, 2);
  Eigen::VectorXd dsp(R), lut(R);
  for (Index i = 0; i < R; ++i) {
    const auto g = build_kernel_graph(rows[i].d, graph_hidden(rows[i].d, hidden));
    F.row(i) << 1.0, static_cast<double>(peak_concurrent_macs(g, ref));
    dsp(i) = rows[i].dsp;
    lut(i) = rows[i].lut;
  }
  const Eigen::VectorXd wd = fit(F, dsp, "DSP");
  p.dsp_intercept = wd(0), p.dsp_slope = wd(1);
  Eigen::MatrixXd G(R, 2);
  G.col(0).setOnes();
  G.col(1) = F * wd;
  const Eigen::VectorXd wl = fit(G, lut, "LUT");
  p.lut_intercept = wl(0), p.lut_dsp = wl(1);

  // Unoptimized runtime anchor sets how strongly structure scales cycles.
  p.gamma = 1.0;
  if (anchor.seconds > 0) {
    if (anchor.d < 1) throw CalibrationError("anchor dimension must be >= 1");
    const auto g = build_kernel_graph(anchor.d, graph_hidden(anchor.d, hidden));
    OptimizationConfig none;
    none.strategy = Strategy::none;
    const double r = structural_ratio(g, none);
    const double base = p.base_cycles(static_cast<double>(anchor.d));
    if (!(base > 0) || !(r > 1)) throw CalibrationError("anchor cannot be matched");
    p.gamma = (anchor.seconds / p.kappa / base - 1) / (r - 1);
  }

  for (Index i = 0; i < R; ++i) {
    const auto& row = rows[i];
    const double d = static_cast<double>(row.d);
    RowResidual res;
    res.d = row.d;
    res.cycles_rel = (p.base_cycles(d) - row.cycles) / row.cycles;
    res.kappa_rel = kappas(i) / p.kappa - 1;
    res.bram_abs = p.bram_intercept + p.bram_slope * d - row.bram_kb;
    const double dsp_est = G(i, 1);
    res.dsp_rel = (dsp_est - row.dsp) / row.dsp;
    res.lut_rel = (p.lut_intercept + p.lut_dsp * dsp_est - row.lut) / row.lut;
    p.residuals.push_back(res);
  }
  return p;
}

double calibrated_cycles(const KernelGraph& graph, const OptimizationConfig& opt,
                         const CalibrationParams& params) {
  const double r = structural_ratio(graph, opt);
  return params.base_cycles(static_cast<double>(graph.d)) * (1 + params.gamma * (r - 1)) +
         static_cast<double>(opt.overhead);
}

Resources estimate_resources(const KernelGraph& graph, const OptimizationConfig& opt,
                             const CalibrationParams& params) {
  opt.validate();
  Resources r;
  const double dsp =
      params.dsp_intercept + params.dsp_slope * static_cast<double>(peak_concurrent_macs(graph, opt));
  r.dsp = std::max<std::int64_t>(0, std::llround(dsp));
  r.lut = std::max<std::int64_t>(0, std::llround(params.lut_intercept + params.lut_dsp * dsp));
  r.bram_kb = params.bram_intercept + params.bram_slope * static_cast<double>(graph.d);
  return r;
}

CostReport estimate(const KernelGraph& graph, const OptimizationConfig& opt,
                    const CalibrationParams& params) {
  CostReport report;
  report.d = graph.d;
  report.strategy = opt.strategy;
  report.ii = opt.strategy == Strategy::none ? 0 : opt.ii;
  report.cycles = std::max<std::int64_t>(1, std::llround(calibrated_cycles(graph, opt, params)));
  const Resources res = estimate_resources(graph, opt, params);
  report.lut = res.lut;
  report.dsp = res.dsp;
  report.bram_kb = res.bram_kb;
  report.time_s = static_cast<double>(report.cycles) * params.kappa;
  report.feasible = report.lut <= kDeviceLuts;
  return report;
}

std::vector<SpeedupRow> speedup_report(const std::vector<Index>& dims,
                                       const CalibrationParams& params, Index hidden) {
  std::vector<SpeedupRow> out;
  OptimizationConfig none, optimized;
  none.strategy = Strategy::none;
  for (Index d : dims) {
    const auto g = build_kernel_graph(d, graph_hidden(d, hidden));
    SpeedupRow row;
    row.d = d;
    row.time_none = calibrated_cycles(g, none, params) * params.kappa;
    row.time_optimized = calibrated_cycles(g, optimized, params) * params.kappa;
    row.ratio = row.time_none / row.time_optimized;
    out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::vector<Index> parse_dims(const std::string& text) {
  const std::string range = trim(text);
  std::vector<Index> dims;
  if (const auto dots = range.find(".."); dots != std::string::npos) {
    const auto colon = range.find(':', dots);
    const Index lo = parse_int(range.substr(0, dots), "--dims", 0, "start");
    const Index hi = parse_int(range.substr(dots + 2, colon == std::string::npos ? std::string::npos
                                                                                : colon - dots - 2),
                               "--dims", 0, "end");
    const Index step =
        colon == std::string::npos ? 10 : parse_int(range.substr(colon + 1), "--dims", 0, "step");
    if (lo < 1 || hi < lo || step < 1) throw ContractError("--dims: invalid range '" + range + "'");
    for (Index d = lo; d <= hi; d += step) dims.push_back(d);
    if (dims.back() != hi) dims.push_back(hi);
  } else {
    std::istringstream ss(range);
    for (std::string item; std::getline(ss, item, ',');) {
      const Index d = parse_int(item, "--dims", 0, "dimension");
      if (d < 1) throw ContractError("--dims: dimensions must be >= 1");
      dims.push_back(d);
    }
  }
  if (dims.empty()) throw ContractError("--dims: no dimensions");
  return dims;
}

std::string format_cost_table(const std::vector<CostReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "d" << std::setw(17) << "strategy" << std::right
     << std::setw(4) << "ii" << std::setw(12) << "cycles" << std::setw(11) << "lut"
     << std::setw(8) << "dsp" << std::setw(10) << "bram_kb" << std::setw(11) << "time_s"
     << std::setw(10) << "feasible" << "\n";
  for (const auto& r : reports) {
    os << std::left << std::setw(6) << r.d << std::setw(17) << to_string(r.strategy) << std::right
       << std::setw(4) << (r.strategy == Strategy::none ? std::string("-") : std::to_string(r.ii))
       << std::setw(12) << r.cycles << std::setw(11) << r.lut << std::setw(8) << r.dsp
       << std::setw(10) << std::fixed << std::setprecision(1) << r.bram_kb << std::setw(11)
       << std::setprecision(4) << r.time_s << std::setw(10) << (r.feasible ? "yes" : "no*")
       << "\n";
  }
  if (std::any_of(reports.begin(), reports.end(), [](const CostReport& r) { return !r.feasible; }))
    os << "* LUT estimate exceeds the " << kDeviceLuts
       << "-LUT device; synthesis reports are known to over-estimate utilization.\n";
  return os.str();
}

std::string cost_reports_json(const std::vector<CostReport>& reports) {
  json j;
  j["schema"] = kCostReportSchema;
  json arr = json::array();
  for (const auto& r : reports) {
    json e;
    e["d"] = r.d;
    e["strategy"] = to_string(r.strategy);
    e["ii"] = r.strategy == Strategy::none ? json(nullptr) : json(r.ii);
    e["cycles"] = r.cycles;
    e["lut"] = r.lut;
    e["dsp"] = r.dsp;
    e["bram_kb"] = r.bram_kb;
    e["time_s"] = r.time_s;
    e["feasible"] = r.feasible;
    arr.push_back(std::move(e));
  }
  j["reports"] = std::move(arr);
  return j.dump(2) + "\n";
}

std::string format_speedup_table(const std::vector<SpeedupRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "d" << std::right << std::setw(12) << "none_s"
     << std::setw(12) << "pipeline_s" << std::setw(9) << "ratio" << "\n";
  for (const auto& r : rows)
    os << std::left << std::setw(6) << r.d << std::right << std::fixed << std::setprecision(4)
       << std::setw(12) << r.time_none << std::setw(12) << r.time_optimized << std::setprecision(2)
       << std::setw(9) << r.ratio << "\n";
  return os.str();
}

std::string format_calibration(const CalibrationParams& p) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "kappa          " << p.kappa << " s/cycle (spread " << p.kappa_spread * 100 << "%)\n"
     << "cycles(d)      " << p.cycle_c0 << " + " << p.cycle_c1 << " d + " << p.cycle_c2 << " d^2\n"
     << "gamma          " << p.gamma << " (anchor d=" << p.anchor.d << ", " << p.anchor.seconds
     << " s)\n"
     << "bram_kb(d)     " << p.bram_intercept << " + " << p.bram_slope << " d"
     << (p.bram_exact ? " (exact)" : " (approximate)") << "\n"
     << "dsp(macs)      " << p.dsp_intercept << " + " << p.dsp_slope << " macs\n"
     << "lut(dsp)       " << p.lut_intercept << " + " << p.lut_dsp << " dsp\n\n";
  os << std::left << std::setw(6) << "d" << std::right << std::setw(11) << "cycles%"
     << std::setw(11) << "kappa%" << std::setw(10) << "bram" << std::setw(10) << "dsp%"
     << std::setw(10) << "lut%" << "\n";
  for (const auto& r : p.residuals)
    os << std::left << std::setw(6) << r.d << std::right << std::fixed << std::setprecision(2)
       << std::setw(11) << r.cycles_rel * 100 << std::setw(11) << r.kappa_rel * 100
       << std::setw(10) << r.bram_abs << std::setw(10) << r.dsp_rel * 100 << std::setw(10)
       << r.lut_rel * 100 << "\n";
  return os.str();
}

std::string calibration_json(const CalibrationParams& p) {
  json j;
  j["schema"] = "merinda-calibration-v1";
  j["kappa"] = p.kappa;
  j["kappa_spread"] = p.kappa_spread;
  j["cycle_model"] = {p.cycle_c0, p.cycle_c1, p.cycle_c2};
  j["gamma"] = p.gamma;
  j["anchor"] = {{"d", p.anchor.d}, {"seconds", p.anchor.seconds}};
  j["bram"] = {{"intercept", p.bram_intercept}, {"slope", p.bram_slope}, {"exact", p.bram_exact}};
  j["dsp"] = {{"intercept", p.dsp_intercept}, {"slope", p.dsp_slope}};
  j["lut"] = {{"intercept", p.lut_intercept}, {"dsp", p.lut_dsp}};
  json res = json::array();
  for (const auto& r : p.residuals)
    res.push_back({{"d", r.d},
                   {"cycles_rel", r.cycles_rel},
                   {"kappa_rel", r.kappa_rel},
                   {"bram_abs", r.bram_abs},
                   {"dsp_rel", r.dsp_rel},
                   {"lut_rel", r.lut_rel}});
  j["residuals"] = std::move(res);
  return j.dump(2) + "\n";
}

}  // namespace merinda::fpga
