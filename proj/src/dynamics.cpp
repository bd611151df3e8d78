#include "merinda/dynamics.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "merinda/config.hpp"
#include "merinda_bundled.hpp"

namespace merinda {

void Trajectory::validate() const {
  const Index N = states.rows();
  if (times.size() != N || inputs.rows() != N)
    throw ContractError("trajectory: times, states and inputs must have the same row count");
  if (!(dt > 0)) throw ContractError("trajectory: dt must be positive");
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (Index i = 0; i + 1 < N; ++i) {
    const double step = times(i + 1) - times(i);
    if (std::abs(step - dt) > 1e-12 * dt + 4 * eps * std::abs(times(i + 1)))
      throw ContractError("trajectory: non-uniform spacing at sample " + std::to_string(i + 1));
  }
}

InputSignal zero_input(Index m) {
  return [m](double) { return Eigen::VectorXd::Zero(m); };
}

InputSignal parse_input_signal(const std::string& text, Index m) {
  const std::string desc = trim(text);
  if (desc.empty() || desc == "zero") return zero_input(m);
  const auto colon = desc.find(':');
  const std::string kind = desc.substr(0, colon);
  std::vector<double> args;
  if (colon != std::string::npos) {
    std::istringstream ss(desc.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) args.push_back(parse_double(item, "input signal", 0, kind));
  }
  if (kind == "const") {
    if (args.size() == 1) args.assign(static_cast<std::size_t>(m), args[0]);
    if (static_cast<Index>(args.size()) != m)
      throw ContractError("const input needs 1 or " + std::to_string(m) + " values");
    const Eigen::VectorXd value = Eigen::Map<const Eigen::VectorXd>(args.data(), m);
    return [value](double) { return value; };
  }
  if (kind == "sin" && args.size() == 2) {
    const double amp = args[0], omega = args[1];
    return [m, amp, omega](double t) {
      return Eigen::VectorXd::Constant(m, amp * std::sin(omega * t)).eval();
    };
  }
  if (kind == "step" && args.size() == 2) {
    const double t0 = args[0], amp = args[1];
    return [m, t0, amp](double t) { return Eigen::VectorXd::Constant(m, t >= t0 ? amp : 0.0).eval(); };
  }
  throw ContractError("unrecognized input signal '" + desc + "'");
}

Trajectory simulate(const DynamicalSystem& system, const Eigen::VectorXd& y0,
                    const InputSignal& input, double dt, Index steps, RkMethod method) {
  if (!(dt > 0)) throw ContractError("simulate: dt must be positive");
  if (steps < 1) throw ContractError("simulate: steps must be >= 1");
  if (y0.size() != system.n()) throw ContractError("simulate: y0 has wrong dimension");
  if (!y0.allFinite()) throw ContractError("simulate: y0 must be finite");

  Trajectory traj;
  traj.dt = dt;
  traj.times.resize(steps + 1);
  traj.inputs.resize(steps + 1, system.m());
  for (Index i = 0; i <= steps; ++i) {
    traj.times(i) = static_cast<double>(i) * dt;
    if (system.m() > 0) {
      const Eigen::VectorXd u = input(traj.times(i));
      if (u.size() != system.m()) throw ContractError("simulate: input signal has wrong dimension");
      traj.inputs.row(i) = u.transpose();
    }
  }
  traj.states = solve(system.model(), y0, traj.inputs, dt, steps, method).Y;
  return traj;
}

Trajectory add_noise(const Trajectory& traj, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0)) throw ContractError("add_noise: sigma must be >= 0");
  Trajectory out = traj;
  if (sigma == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  // Row-major draw order so the stream layout is independent of storage order.
  for (Index i = 0; i < out.states.rows(); ++i)
    for (Index j = 0; j < out.states.cols(); ++j) out.states(i, j) += noise(rng);
  return out;
}

// ---------------------------------------------------------------------------

DynamicalSystem parse_system_config(const std::string& text, const std::string& source) {
  const KeyValueConfig cfg = KeyValueConfig::parse(text, source);
  cfg.reject_unknown({"name", "description", "n", "m", "M"});
  DynamicalSystem sys;
  sys.name = cfg.get_string("name");
  sys.description = cfg.get_string("description", "");
  const auto n = cfg.get_int("n");
  const auto m = cfg.get_int("m", 0);
  const auto order = cfg.get_int("M");
  if (n < 1) throw ParseError(source, cfg.entries().at("n").line, "n", "must be >= 1");
  if (m < 0) throw ParseError(source, cfg.entries().at("m").line, "m", "must be >= 0");
  if (order < 0) throw ParseError(source, cfg.entries().at("M").line, "M", "must be >= 0");
  sys.library = build_library(n, m, order);
  sys.theta_true = Eigen::MatrixXd::Zero(n, sys.library.size());

  const auto& rows = cfg.table("terms");
  if (rows.empty()) throw ParseError(source, 0, "terms", "missing [terms] table");
  for (const auto& row : rows) {
    std::istringstream ls(row.text);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    const std::size_t expected = static_cast<std::size_t>(2 + n + m);
    if (fields.size() != expected)
      throw ParseError(source, row.line, "terms",
                       "expected row_index, " + std::to_string(n + m) +
                           " exponents and a coefficient");
    const auto r = parse_int(fields[0], source, row.line, "row_index");
    if (r < 0 || r >= n) throw ParseError(source, row.line, "row_index", "out of range");
    Eigen::VectorXi e(n + m);
    for (Index v = 0; v < n + m; ++v) {
      const auto ev = parse_int(fields[static_cast<std::size_t>(v + 1)], source, row.line,
                                "exponent_vector");
      if (ev < 0) throw ParseError(source, row.line, "exponent_vector", "negative exponent");
      e(v) = static_cast<int>(ev);
    }
    if (e.sum() > order)
      throw ParseError(source, row.line, "exponent_vector", "degree exceeds M");
    const double c = parse_double(fields.back(), source, row.line, "coefficient");
    const Index col = sys.library.find(e);
    if (sys.theta_true(r, col) != 0) throw ParseError(source, row.line, "terms", "duplicate term");
    sys.theta_true(r, col) = c;
  }
  return sys;
}

DynamicalSystem load_system_config(const std::string& path) {
  return parse_system_config(read_file(path), path);
}

std::string format_system_config(const DynamicalSystem& system) {
  std::ostringstream os;
  os << "name = " << system.name << "\n";
  if (!system.description.empty()) os << "description = " << system.description << "\n";
  os << "n = " << system.n() << "\nm = " << system.m() << "\nM = " << system.library.order()
     << "\n\n[terms]\n";
  for (Index i = 0; i < system.theta_true.rows(); ++i)
    for (Index j = 0; j < system.theta_true.cols(); ++j) {
      if (system.theta_true(i, j) == 0) continue;
      os << i << " ";
      for (Index v = 0; v < system.library.vars(); ++v) os << ' ' << system.library.exponents()(j, v);
      os << "  " << format_decimal(system.theta_true(i, j)) << "\n";
    }
  return os.str();
}

void SystemRegistry::add(DynamicalSystem system) {
  const std::string name = system.name;
  systems_[name] = std::move(system);
}

const DynamicalSystem& SystemRegistry::at(const std::string& name) const {
  const auto it = systems_.find(name);
  if (it == systems_.end()) throw NotFoundError("unknown system '" + name + "'");
  return it->second;
}

std::vector<std::string> SystemRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, sys] : systems_) out.push_back(name);
  return out;
}

const std::map<std::string, std::string>& bundled_system_configs() {
  static const std::map<std::string, std::string> configs = {
      {"lotka_volterra", bundled::kLotkaVolterra},
      {"lorenz", bundled::kLorenz},
  };
  return configs;
}

SystemRegistry builtin_systems(const std::vector<std::string>& extra_configs) {
  SystemRegistry registry;
  for (const auto& [name, text] : bundled_system_configs())
    registry.add(parse_system_config(text, "systems/" + name + ".sys"));
  for (const auto& path : extra_configs) registry.add(load_system_config(path));
  return registry;
}

// ---------------------------------------------------------------------------

IdentifiabilityReport identifiability_check(const DynamicalSystem& system, const Eigen::VectorXd& y0,
                                            const InputSignal& input, double horizon, double tol,
                                            double dt) {
  if (!(horizon > 0)) throw ContractError("identifiability_check: horizon must be positive");
  if (!(tol >= 0)) throw ContractError("identifiability_check: tol must be >= 0");
  const Index steps = std::max<Index>(1, static_cast<Index>(std::ceil(horizon / dt - 1e-9)));

  IdentifiabilityReport report;
  report.horizon = static_cast<double>(steps) * dt;
  report.coefficients = system.model().support();
  for (std::size_t i = 0; i < report.coefficients.size(); ++i) {
    const auto [row, col] = report.coefficients[i];
    const double theta = system.theta_true(row, col);
    const double h = kSensitivityStep * std::max(1.0, std::abs(theta));
    DynamicalSystem plus = system, minus = system;
    plus.theta_true(row, col) = theta + h;
    minus.theta_true(row, col) = theta - h;
    double sens = 0;
    bool indeterminate = false;
    try {
      const Trajectory tp = simulate(plus, y0, input, dt, steps);
      const Trajectory tm = simulate(minus, y0, input, dt, steps);
      sens = (tp.states - tm.states).norm() / (2 * h) /
             std::sqrt(static_cast<double>(tp.states.rows()));
    } catch (const DivergenceError&) {
      indeterminate = true;
    }
    report.sensitivity.push_back(sens);
    const Index idx = static_cast<Index>(i);
    if (indeterminate) {
      report.indeterminate.push_back(idx);
      report.flagged.push_back(idx);
    } else if (sens < tol) {
      report.flagged.push_back(idx);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

std::string format_trajectory_csv(const Trajectory& traj) {
  std::string out = "t";
  for (Index i = 0; i < traj.n(); ++i) out += ",y" + std::to_string(i + 1);
  for (Index i = 0; i < traj.m(); ++i) out += ",u" + std::to_string(i + 1);
  out += '\n';
  for (Index r = 0; r < traj.samples(); ++r) {
    out += format_decimal(traj.times(r));
    for (Index i = 0; i < traj.n(); ++i) out += ',' + format_decimal(traj.states(r, i));
    for (Index i = 0; i < traj.m(); ++i) out += ',' + format_decimal(traj.inputs(r, i));
    out += '\n';
  }
  return out;
}

Trajectory parse_trajectory_csv(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(source, 1, "header", "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    for (std::string f; std::getline(hs, f, ',');) header.push_back(trim(f));
  }
  if (header.empty() || header[0] != "t")
    throw ParseError(source, 1, "header", "first column must be 't'");
  Index n = 0, m = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (m == 0 && header[c] == "y" + std::to_string(n + 1)) {
      ++n;
    } else if (header[c] == "u" + std::to_string(m + 1)) {
      ++m;
    } else {
      throw ParseError(source, 1, "header", "unexpected column '" + header[c] + "'");
    }
  }
  if (n == 0) throw ParseError(source, 1, "header", "no state columns");

  const std::size_t width = static_cast<std::size_t>(1 + n + m);
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<double> values;
    std::istringstream ls(line);
    std::size_t col = 0;
    for (std::string f; std::getline(ls, f, ','); ++col) {
      const std::string field = col < header.size() ? header[col] : "extra";
      values.push_back(parse_double(f, source, lineno, field));
    }
    if (values.size() != width)
      throw ParseError(source, lineno, "row",
                       "expected " + std::to_string(width) + " fields, got " +
                           std::to_string(values.size()));
    rows.push_back(std::move(values));
  }
  if (rows.size() < 2) throw ParseError(source, lineno, "rows", "need at least two samples");

  Trajectory traj;
  const Index N = static_cast<Index>(rows.size());
  traj.times.resize(N);
  traj.states.resize(N, n);
  traj.inputs.resize(N, m);
  for (Index r = 0; r < N; ++r) {
    const auto& v = rows[static_cast<std::size_t>(r)];
    traj.times(r) = v[0];
    for (Index i = 0; i < n; ++i) traj.states(r, i) = v[static_cast<std::size_t>(1 + i)];
    for (Index i = 0; i < m; ++i) traj.inputs(r, i) = v[static_cast<std::size_t>(1 + n + i)];
  }
  traj.dt = (traj.times(N - 1) - traj.times(0)) / static_cast<double>(N - 1);
  try {
    traj.validate();
  } catch (const ContractError& e) {
    throw ParseError(source, 0, "t", e.what());
  }
  return traj;
}

Trajectory load_trajectory_csv(const std::string& path) {
  return parse_trajectory_csv(read_file(path), path);
}

}  // namespace merinda
