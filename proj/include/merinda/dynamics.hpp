#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "merinda/solver.hpp"
#include "merinda/term_library.hpp"

namespace merinda {

// dX/dt = theta_true * phi(X, U) over a polynomial term library.
struct DynamicalSystem {
  std::string name;
  std::string description;
  TermLibrary library;
  Eigen::MatrixXd theta_true;  // n x library size

  Index n() const { return library.n(); }
  Index m() const { return library.m(); }
  SparseModel<double> model() const { return SparseModel<double>::from_dense(library, theta_true); }
};

// Uniformly sampled states and inputs.
struct Trajectory {
  Eigen::VectorXd times;
  Eigen::MatrixXd states;  // N x n
  Eigen::MatrixXd inputs;  // N x m
  double dt = 0;

  Index samples() const { return states.rows(); }
  Index n() const { return states.cols(); }
  Index m() const { return inputs.cols(); }

  // Throws ContractError when the shape or spacing invariants fail.
  void validate() const;
};

using InputSignal = std::function<Eigen::VectorXd(double)>;

// u(t) = 0 in m dimensions.
InputSignal zero_input(Index m);

// Parses "zero", "const:a,b,...", "sin:amplitude,omega" or "step:t0,amplitude".
// Scalar forms apply to every input channel.
InputSignal parse_input_signal(const std::string& text, Index m);

// steps + 1 samples at spacing dt, integrated with one RK step per sample
// and the input held at its sampled value over each step.
Trajectory simulate(const DynamicalSystem& system, const Eigen::VectorXd& y0,
                    const InputSignal& input, double dt, Index steps,
                    RkMethod method = RkMethod::rk4);

// i.i.d. N(0, sigma^2) added to every state entry.
Trajectory add_noise(const Trajectory& traj, double sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// System config files
// ---------------------------------------------------------------------------

// Text format:
//   name = lorenz
//   n = 3
//   m = 0
//   M = 2
//   description = ...
//   [terms]
//   # row  exponent_vector  coefficient
//   0  1 0 0  -10
DynamicalSystem parse_system_config(const std::string& text, const std::string& source);
DynamicalSystem load_system_config(const std::string& path);
std::string format_system_config(const DynamicalSystem& system);

class SystemRegistry {
 public:
  void add(DynamicalSystem system);
  const DynamicalSystem& at(const std::string& name) const;
  bool contains(const std::string& name) const { return systems_.count(name) != 0; }
  std::vector<std::string> names() const;

 private:
  std::map<std::string, DynamicalSystem> systems_;
};

// Lotka-Volterra and Lorenz from the bundled config files, plus every system
// in `extra_configs` (e.g. user-transcribed f8_crusader, pathogenic_attack).
SystemRegistry builtin_systems(const std::vector<std::string>& extra_configs = {});

// Bundled config text by name ("lotka_volterra", "lorenz").
const std::map<std::string, std::string>& bundled_system_configs();

// ---------------------------------------------------------------------------
// Identifiability
// ---------------------------------------------------------------------------

struct IdentifiabilityReport {
  std::vector<SupportEntry> coefficients;  // active coefficient i -> (row, col)
  std::vector<double> sensitivity;         // RMS over samples of ||dY/dtheta_i||
  double horizon = 0;
  std::vector<Index> flagged;        // sensitivity < tol, or indeterminate
  std::vector<Index> indeterminate;  // a perturbed trajectory diverged
};

// Relative central-difference step used for coefficient sensitivities.
inline constexpr double kSensitivityStep = 1e-4;

// Central finite-difference sensitivity of the whole trajectory to each
// active coefficient, step 1e-4 * max(1, |theta_i|).
IdentifiabilityReport identifiability_check(const DynamicalSystem& system, const Eigen::VectorXd& y0,
                                            const InputSignal& input, double horizon, double tol,
                                            double dt = 0.01);

// ---------------------------------------------------------------------------
// Trajectory CSV: header t,y1..yn[,u1..um]
// ---------------------------------------------------------------------------

std::string format_trajectory_csv(const Trajectory& traj);
Trajectory parse_trajectory_csv(const std::string& text, const std::string& source);
Trajectory load_trajectory_csv(const std::string& path);

}  // namespace merinda
