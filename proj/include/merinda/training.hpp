#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "merinda/config.hpp"
#include "merinda/dynamics.hpp"
#include "merinda/nn.hpp"

namespace merinda {

struct TrainConfig {
  Index batch_size = 8;  // S_B
  Index window = 20;     // k
  Index stride = 0;      // 0 means non-overlapping (stride = window)
  Index epochs = 1500;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index order = 3;    // M
  Index support = 4;  // p
  Index hidden = 16;  // H
  std::vector<Index> dense_hidden = {32};
  std::uint64_t seed = 0;
  double dt = 0;  // 0 takes the sample interval from the data
  Index solve_steps = 1;
  RkMethod method = RkMethod::rk4;
  bool standardize = false;
  // Coefficients fed to SOLVE: the batch mean of the network outputs, or each
  // window's own output.
  enum class Pooling { batch, window } pooling = Pooling::batch;
  // Dense phase with the full library active, then a linear shrink of the
  // active set down to `support`.
  Index warmup_epochs = 0;
  Index prune_epochs = 0;
  // Ranking used to pick the active set during training: raw coefficient
  // magnitude, or magnitude times the RMS of the term over the data.
  enum class Selection { magnitude, scaled } selection = Selection::magnitude;
  // Optional dimension checks against the data (-1 = unchecked).
  Index state_dim = -1;
  Index input_dim = -1;

  void validate() const;
  Index effective_stride() const { return stride > 0 ? stride : window; }
  // Active support size during `epoch` (0-based) for a library of `full` entries.
  Index support_at(Index epoch, Index full) const;

  static TrainConfig from_config(const KeyValueConfig& cfg);
  static TrainConfig load(const std::string& path);
  // key = value text accepted by from_config, every field included.
  std::string echo() const;
};

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

// Window start indices for stride `stride` and length `k`.
std::vector<Index> window_starts(Index samples, Index k, Index stride);

struct Batch {
  std::vector<Index> starts;               // absolute start sample of each window
  std::vector<Eigen::MatrixXd> windows;    // each (n+m) x k
  std::array<Index, 3> shape() const {
    return {static_cast<Index>(windows.size()), windows.empty() ? 0 : windows[0].rows(),
            windows.empty() ? 0 : windows[0].cols()};
  }
};

// Non-overlapping windows (unless `stride` < k) shuffled by `seed` and grouped
// into batches of S_B; a short final group is dropped. Throws DataError when
// the trajectory is shorter than k.
std::vector<Batch> make_batches(const Trajectory& traj, Index S_B, Index k, std::uint64_t seed,
                                Index stride = 0);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(Index size, double lr, double beta1, double beta2, double epsilon);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  Index steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  Eigen::VectorXd m_, v_;
  Index t_ = 0;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Standardization {
  bool enabled = false;
  Eigen::VectorXd mean;   // n+m
  Eigen::VectorXd scale;  // n+m
};

struct RecoveredModel {
  SparseModel<double> model;
  Eigen::VectorXd shifts;
  std::vector<double> history;  // mean batch loss per epoch
  Index best_epoch = -1;
  double best_loss = 0;
  TrainConfig config;
  Network<double> network;
  Standardization standardization;
};

class TrainingHalted : public Error {
 public:
  TrainingHalted(const std::string& what, std::string diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  // JSON text: epoch, batch, loss history.
  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

using EpochCallback = std::function<void(Index epoch, double loss, Index active)>;

RecoveredModel train(const TrainConfig& config, const Trajectory& traj,
                     const EpochCallback& on_epoch = {});

// Per-window network outputs averaged over every window of `traj`.
struct AveragedOutput {
  Eigen::MatrixXd theta;
  Eigen::VectorXd shifts;
};
AveragedOutput average_output(const Network<double>& net, const Trajectory& traj, Index k,
                              Index stride, const Standardization& standardization);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
  double reconstruction_mse = 0;
  std::optional<double> coeff_max_abs_err;
  std::optional<double> support_precision;
  std::optional<double> support_recall;
  bool diverged = false;
};

// Re-simulates `model` from traj's first state with shifted inputs. Precision
// is 0 for an empty recovered support.
EvalReport evaluate(const SparseModel<double>& model, const Eigen::VectorXd& shifts,
                    const Trajectory& traj, const DynamicalSystem* truth,
                    Index solve_steps = 1, RkMethod method = RkMethod::rk4);
EvalReport evaluate(const RecoveredModel& recovered, const Trajectory& traj,
                    const DynamicalSystem* truth);

inline constexpr const char* kEvalReportSchema = "merinda-eval-report-v1";

std::string eval_report_json(const EvalReport& report);
std::string loss_csv(const std::vector<double>& history);

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "merinda-checkpoint-v1";

std::string checkpoint_json(const RecoveredModel& recovered);
RecoveredModel parse_checkpoint(const std::string& text, const std::string& source);
RecoveredModel load_checkpoint(const std::string& path);

}  // namespace merinda
