#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "merinda/errors.hpp"
#include "merinda/term_library.hpp"

namespace merinda::fpga {

// Latency constants of the scheduling model, in cycles.
inline constexpr Index kMacDepth = 4;         // pipeline depth of a multiply-accumulate body
inline constexpr Index kActivationDepth = 8;  // MAC body followed by sigmoid/tanh
inline constexpr Index kAddLatency = 2;       // one adder level of a reduction chain
inline constexpr Index kDefaultUnroll = 8;

// Device capacity (LUTs, flip-flops).
inline constexpr std::int64_t kDeviceLuts = 252000;
inline constexpr std::int64_t kDeviceFlipFlops = 504000;

enum class Strategy { none, unroll, pipeline_unroll };
Strategy parse_strategy(const std::string& text);
std::string to_string(Strategy s);
inline constexpr Strategy kAllStrategies[] = {Strategy::none, Strategy::unroll,
                                              Strategy::pipeline_unroll};

enum class Phase { forward, backward, head, loss };

// Operation counts per innermost iteration; activations per outer iteration.
struct LoopBody {
  Index mac = 0;
  Index activation = 0;
  Index mem_read = 0;
  Index mem_write = 0;
};

struct LoopNest {
  std::string name;
  std::vector<Index> trips;  // outer -> inner
  LoopBody body;
  Index depth = kMacDepth;  // latency of one innermost iteration
  Index epilogue = 0;       // extra latency per outer iteration (activation)
  bool reduction = false;   // innermost loop accumulates into one value
  Index dep_distance = 0;   // carried dependency distance on the outer loop, 0 = none
  Phase phase = Phase::forward;
  bool recurrent = false;   // part of the GRU cell (forward or backward)

  Index trip_product() const;
  Index mac_count() const { return trip_product() * body.mac; }
  void validate() const;
};

struct OptimizationConfig {
  Strategy strategy = Strategy::pipeline_unroll;
  Index ii = 1;  // initiation interval, 1..3; ignored for none
  Index unroll = kDefaultUnroll;
  bool partition = true;  // complete array partitioning
  bool check_hazards = false;
  Index overhead = 0;  // cycles added once per graph

  // Throws ContractError on an invalid combination.
  void validate() const;
};

struct KernelGraph {
  Index d = 0;
  Index hidden = 0;
  Index library = 0;
  Index steps = 1;
  std::vector<LoopNest> nests;

  Index mac_count(Phase phase) const;
};

struct GraphOptions {
  Index library = 0;      // head columns; 0 means d + 1 (first-order library)
  Index steps = 1;        // samples covered by the loss nest
  Index dep_distance = 1;  // distance carried by the chained GRU nests
};

// GRU forward (gates, reset-apply, candidate), mirrored backward nests, the
// dense head with its backward pass, and the loss.
KernelGraph build_kernel_graph(Index d, Index H, const GraphOptions& options = {});

// Structural latency of one nest / the whole graph.
Index nest_latency(const LoopNest& nest, const OptimizationConfig& opt);
Index estimate_cycles(const KernelGraph& graph, const OptimizationConfig& opt);

// Largest number of MACs issued in one cycle by any recurrent nest.
Index peak_concurrent_macs(const KernelGraph& graph, const OptimizationConfig& opt);

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

struct TableRow {
  Index d = 0;
  double cycles = 0;
  double lut = 0;
  double dsp = 0;
  double bram_kb = 0;
  double fpga_s = 0;
};

std::vector<TableRow> parse_table_csv(const std::string& text, const std::string& source);
std::vector<TableRow> load_table_csv(const std::string& path);
// The bundled measurement table.
std::vector<TableRow> default_table();

struct Anchor {
  Index d = 150;
  double seconds = 11.84;  // unoptimized runtime at d
};

struct RowResidual {
  Index d = 0;
  double cycles_rel = 0;  // (predicted - measured) / measured
  double kappa_rel = 0;
  double bram_abs = 0;
  double dsp_rel = 0;
  double lut_rel = 0;
};

struct CalibrationParams {
  double kappa = 0;  // seconds per reported cycle
  double kappa_spread = 0;  // (max - min) / mean over rows
  double cycle_c0 = 0, cycle_c1 = 0, cycle_c2 = 0;  // quadratic in d
  double gamma = 0;  // sensitivity of cycles to the structural latency ratio
  double bram_intercept = 0, bram_slope = 0;
  bool bram_exact = false;
  double dsp_intercept = 0, dsp_slope = 0;  // vs peak concurrent MACs
  double lut_intercept = 0, lut_dsp = 0;  // vs estimated DSP
  Anchor anchor;
  std::vector<RowResidual> residuals;

  double base_cycles(double d) const { return cycle_c0 + d * (cycle_c1 + d * cycle_c2); }
};

// Fits every model on `rows` (at least 3 with distinct d). BRAM uses the rows
// with d >= 40 when there are at least two of them. Throws CalibrationError.
CalibrationParams calibrate(const std::vector<TableRow>& rows, const Anchor& anchor = {},
                            Index hidden = 0);

struct CostReport {
  Index d = 0;
  Strategy strategy = Strategy::pipeline_unroll;
  Index ii = 1;
  std::int64_t cycles = 0;
  std::int64_t lut = 0;
  std::int64_t dsp = 0;
  double bram_kb = 0;
  double time_s = 0;
  bool feasible = true;
};

// Table-scale cycles: the base quadratic scaled by the structural latency of
// `opt` relative to pipeline_unroll at II = 1.
double calibrated_cycles(const KernelGraph& graph, const OptimizationConfig& opt,
                         const CalibrationParams& params);

struct Resources {
  std::int64_t lut = 0;
  std::int64_t dsp = 0;
  double bram_kb = 0;
};
Resources estimate_resources(const KernelGraph& graph, const OptimizationConfig& opt,
                             const CalibrationParams& params);

CostReport estimate(const KernelGraph& graph, const OptimizationConfig& opt,
                    const CalibrationParams& params);

struct SpeedupRow {
  Index d = 0;
  double time_none = 0;
  double time_optimized = 0;
  double ratio = 0;
};
// H = 0 means H = d for each dimension.
std::vector<SpeedupRow> speedup_report(const std::vector<Index>& dims,
                                       const CalibrationParams& params, Index hidden = 0);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline constexpr const char* kCostReportSchema = "merinda-cost-report-v1";

// "20..150" (step 10), "20..150:5" or "20,30,40".
std::vector<Index> parse_dims(const std::string& text);

std::string format_cost_table(const std::vector<CostReport>& reports);
std::string cost_reports_json(const std::vector<CostReport>& reports);
std::string format_speedup_table(const std::vector<SpeedupRow>& rows);
std::string format_calibration(const CalibrationParams& params);
std::string calibration_json(const CalibrationParams& params);

}  // namespace merinda::fpga
