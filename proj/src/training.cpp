#include "merinda/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace merinda {

using json = nlohmann::ordered_json;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError("train config: " + what);
}

// Group shuffled window indices into full batches of S_B.
std::vector<std::vector<Index>> shuffled_groups(Index count, Index S_B, std::uint64_t seed) {
  std::vector<Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> groups;
  for (Index b = 0; b + S_B <= count; b += S_B)
    groups.emplace_back(order.begin() + b, order.begin() + b + S_B);
  return groups;
}

Standardization make_standardization(const Trajectory& traj, bool enabled) {
  const Index D = traj.n() + traj.m();
  Standardization s;
  s.enabled = enabled;
  s.mean = Eigen::VectorXd::Zero(D);
  s.scale = Eigen::VectorXd::Ones(D);
  if (!enabled) return s;
  Eigen::MatrixXd data(traj.samples(), D);
  data << traj.states, traj.inputs;
  s.mean = data.colwise().mean().transpose();
  for (Index j = 0; j < D; ++j) {
    const double sd = std::sqrt((data.col(j).array() - s.mean(j)).square().mean());
    s.scale(j) = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

WindowData<double> build_window(const Trajectory& traj, Index start, Index k,
                                 const Standardization& s) {
  WindowData<double> w;
  w.Y = traj.states.middleRows(start, k);
  w.U = traj.inputs.middleRows(start, k);
  w.sequence.resize(k, traj.n() + traj.m());
  w.sequence << w.Y, w.U;
  if (s.enabled)
    w.sequence = ((w.sequence.rowwise() - s.mean.transpose()).array().rowwise() /
                  s.scale.transpose().array())
                     .matrix();
  return w;
}

std::uint64_t epoch_seed(std::uint64_t seed, Index epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
}

std::string halt_diagnostics(Index epoch, Index batch, const std::vector<double>& history) {
  json j;
  j["schema"] = "merinda-diagnostics-v1";
  j["epoch"] = epoch;
  j["batch"] = batch;
  j["history"] = history;
  return j.dump(2) + "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(window >= 2, "window must be >= 2");
  require(stride >= 0, "stride must be >= 0");
  require(epochs >= 1, "epochs must be >= 1");
  require(learning_rate >= 0 && std::isfinite(learning_rate), "learning_rate must be >= 0");
  require(beta1 >= 0 && beta1 < 1, "beta1 must lie in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, "beta2 must lie in [0, 1)");
  require(epsilon > 0, "epsilon must be > 0");
  require(order >= 0, "order must be >= 0");
  require(support >= 1, "support must be >= 1");
  require(hidden >= 1, "hidden must be >= 1");
  for (Index w : dense_hidden) require(w >= 1, "dense_hidden widths must be >= 1");
  require(dt >= 0, "dt must be >= 0");
  require(solve_steps >= 1, "solve_steps must be >= 1");
  require(warmup_epochs >= 0 && prune_epochs >= 0, "warmup_epochs and prune_epochs must be >= 0");
}

Index TrainConfig::support_at(Index epoch, Index full) const {
  const Index target = std::min(support, full);
  if (epoch < warmup_epochs) return full;
  const Index e = epoch - warmup_epochs;
  if (e >= prune_epochs) return target;
  const double frac = static_cast<double>(e + 1) / static_cast<double>(prune_epochs);
  return full - static_cast<Index>(std::llround(frac * static_cast<double>(full - target)));
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  cfg.reject_unknown({"batch_size", "window", "stride", "epochs", "learning_rate", "beta1",
                      "beta2", "epsilon", "order", "support", "hidden", "dense_hidden", "seed",
                      "dt", "solve_steps", "method", "standardize", "warmup_epochs",
                      "prune_epochs", "state_dim", "input_dim", "pooling",
                      "selection"});
  TrainConfig c;
  c.batch_size = cfg.get_int("batch_size", c.batch_size);
  c.window = cfg.get_int("window", c.window);
  c.stride = cfg.get_int("stride", c.stride);
  c.epochs = cfg.get_int("epochs", c.epochs);
  c.learning_rate = cfg.get_double("learning_rate", c.learning_rate);
  c.beta1 = cfg.get_double("beta1", c.beta1);
  c.beta2 = cfg.get_double("beta2", c.beta2);
  c.epsilon = cfg.get_double("epsilon", c.epsilon);
  c.order = cfg.get_int("order", c.order);
  c.support = cfg.get_int("support", c.support);
  c.hidden = cfg.get_int("hidden", c.hidden);
  {
    std::vector<std::int64_t> fallback(c.dense_hidden.begin(), c.dense_hidden.end());
    const auto widths = cfg.get_int_list("dense_hidden", fallback);
    c.dense_hidden.assign(widths.begin(), widths.end());
  }
  const auto seed = cfg.get_int("seed", 0);
  if (seed < 0) throw ParseError(cfg.source(), cfg.entries().at("seed").line, "seed", "must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.dt = cfg.get_double("dt", c.dt);
  c.solve_steps = cfg.get_int("solve_steps", c.solve_steps);
  if (cfg.has("method")) {
    try {
      c.method = parse_rk_method(cfg.get_string("method"));
    } catch (const ContractError& e) {
      throw ParseError(cfg.source(), cfg.entries().at("method").line, "method", e.what());
    }
  }
  c.standardize = cfg.get_bool("standardize", c.standardize);
  if (cfg.has("pooling")) {
    const std::string mode = cfg.get_string("pooling");
    if (mode == "batch")
      c.pooling = Pooling::batch;
    else if (mode == "window")
      c.pooling = Pooling::window;
    else
      throw ParseError(cfg.source(), cfg.entries().at("pooling").line, "pooling",
                       "expected 'batch' or 'window'");
  }
  if (cfg.has("selection")) {
    const std::string v = cfg.get_string("selection");
    if (v == "magnitude")
      c.selection = Selection::magnitude;
    else if (v == "scaled")
      c.selection = Selection::scaled;
    else
      throw ParseError(cfg.source(), cfg.entries().at("selection").line, "selection",
                       "expected 'magnitude' or 'scaled'");
  }
  c.warmup_epochs = cfg.get_int("warmup_epochs", c.warmup_epochs);
  c.prune_epochs = cfg.get_int("prune_epochs", c.prune_epochs);
  c.state_dim = cfg.get_int("state_dim", c.state_dim);
  c.input_dim = cfg.get_int("input_dim", c.input_dim);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  return from_config(KeyValueConfig::load(path));
}

std::string TrainConfig::echo() const {
  std::ostringstream os;
  os << "batch_size = " << batch_size << "\n"
     << "window = " << window << "\n"
     << "stride = " << stride << "\n"
     << "epochs = " << epochs << "\n"
     << "learning_rate = " << format_decimal(learning_rate) << "\n"
     << "beta1 = " << format_decimal(beta1) << "\n"
     << "beta2 = " << format_decimal(beta2) << "\n"
     << "epsilon = " << format_decimal(epsilon) << "\n"
     << "order = " << order << "\n"
     << "support = " << support << "\n"
     << "hidden = " << hidden << "\n"
     << "dense_hidden = ";
  for (std::size_t i = 0; i < dense_hidden.size(); ++i) os << (i ? "," : "") << dense_hidden[i];
  os << "\n"
     << "seed = " << seed << "\n"
     << "dt = " << format_decimal(dt) << "\n"
     << "solve_steps = " << solve_steps << "\n"
     << "method = " << to_string(method) << "\n"
     << "standardize = " << (standardize ? "true" : "false") << "\n"
     << "pooling = " << (pooling == Pooling::batch ? "batch" : "window") << "\n"
     << "selection = " << (selection == Selection::magnitude ? "magnitude" : "scaled") << "\n"
     << "warmup_epochs = " << warmup_epochs << "\n"
     << "prune_epochs = " << prune_epochs << "\n"
     << "state_dim = " << state_dim << "\n"
     << "input_dim = " << input_dim << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<Index> window_starts(Index samples, Index k, Index stride) {
  if (k < 1) throw ContractError("window length must be >= 1");
  if (samples < k)
    throw DataError("insufficient data: " + std::to_string(samples) + " samples < window " +
                    std::to_string(k));
  const Index step = stride > 0 ? stride : k;
  std::vector<Index> starts;
  for (Index s = 0; s + k <= samples; s += step) starts.push_back(s);
  return starts;
}

std::vector<Batch> make_batches(const Trajectory& traj, Index S_B, Index k, std::uint64_t seed,
                                Index stride) {
  if (S_B < 1) throw ContractError("make_batches: S_B must be >= 1");
  const std::vector<Index> starts = window_starts(traj.samples(), k, stride);
  std::vector<Batch> batches;
  for (const auto& group : shuffled_groups(static_cast<Index>(starts.size()), S_B, seed)) {
    Batch b;
    for (Index w : group) {
      const Index s = starts[static_cast<std::size_t>(w)];
      b.starts.push_back(s);
      Eigen::MatrixXd x(traj.n() + traj.m(), k);
      x << traj.states.middleRows(s, k).transpose(), traj.inputs.middleRows(s, k).transpose();
      b.windows.push_back(std::move(x));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(Index size, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon),
      m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw ContractError("Adam: size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1 - beta1_) * grad;
  v_ = beta2_ * v_ + (1 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

AveragedOutput average_output(const Network<double>& net, const Trajectory& traj, Index k,
                              Index stride, const Standardization& standardization) {
  const std::vector<Index> starts = window_starts(traj.samples(), k, stride);
  AveragedOutput out;
  out.theta = Eigen::MatrixXd::Zero(net.dense.rows, net.dense.cols);
  out.shifts = Eigen::VectorXd::Zero(net.dense.shifts);
  for (Index s : starts) {
    const auto w = build_window(traj, s, k, standardization);
    const auto fwd = network_forward(net, w.sequence);
    out.theta += fwd.dense.theta_raw;
    out.shifts += fwd.dense.shifts;
  }
  out.theta /= static_cast<double>(starts.size());
  out.shifts /= static_cast<double>(starts.size());
  return out;
}

RecoveredModel train(const TrainConfig& config, const Trajectory& traj,
                     const EpochCallback& on_epoch) {
  config.validate();
  traj.validate();
  const Index n = traj.n(), m = traj.m();
  if (config.state_dim >= 0 && config.state_dim != n)
    throw ContractError("state_dim: config " + std::to_string(config.state_dim) + ", data " +
                        std::to_string(n));
  if (config.input_dim >= 0 && config.input_dim != m)
    throw ContractError("input_dim: config " + std::to_string(config.input_dim) + ", data " +
                        std::to_string(m));
  if (config.dt > 0 && std::abs(config.dt - traj.dt) > 1e-9 * config.dt)
    throw ContractError("dt: config " + format_decimal(config.dt) + ", data " +
                        format_decimal(traj.dt));

  PipelineSettings settings{build_library(n, m, config.order), traj.dt, config.solve_steps,
                            config.method};
  const Index L = settings.library.size();
  const Index full = n * L;
  if (config.support > full)
    throw ContractError("support: " + std::to_string(config.support) + " exceeds n * library size " +
                        std::to_string(full));

  RecoveredModel result;
  result.config = config;
  result.standardization = make_standardization(traj, config.standardize);

  std::mt19937_64 rng(config.seed);
  Network<double> net;
  net.gru = GruParams<double>::random(config.hidden, n + m, rng);
  net.dense = DenseParams<double>::random(config.hidden, config.dense_hidden, n, L, m, rng);

  const Index k = config.window, stride = config.effective_stride();
  const std::vector<Index> starts = window_starts(traj.samples(), k, stride);
  std::vector<WindowData<double>> windows;
  for (Index s : starts) windows.push_back(build_window(traj, s, k, result.standardization));
  if (static_cast<Index>(windows.size()) < config.batch_size)
    throw DataError("insufficient data: " + std::to_string(windows.size()) +
                    " windows < batch_size " + std::to_string(config.batch_size));

  // Columns weighted by the RMS of each term over the data when ranking.
  Eigen::VectorXd term_rms = Eigen::VectorXd::Ones(L);
  if (config.selection == TrainConfig::Selection::scaled) {
    term_rms.setZero();
    for (Index t = 0; t < traj.samples(); ++t)
      term_rms += evaluate(settings.library, traj.states.row(t).transpose(),
                           traj.inputs.row(t).transpose())
                      .cwiseAbs2();
    term_rms = (term_rms / static_cast<double>(traj.samples())).cwiseSqrt();
  }
  auto ranking = [&](const Eigen::MatrixXd& theta) -> Eigen::MatrixXd {
    return theta * term_rms.asDiagonal();
  };

  Adam adam(net.parameter_count(), config.learning_rate, config.beta1, config.beta2,
            config.epsilon);
  const Index target_phase = config.warmup_epochs + config.prune_epochs;
  Network<double> best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  Index best_epoch = -1;

  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    const Index active = config.support_at(epoch, full);
    const auto avg = average_output(net, traj, k, stride, result.standardization);
    const Eigen::MatrixXd mask = sparsify(ranking(avg.theta), active).mask;

    const auto groups =
        shuffled_groups(static_cast<Index>(windows.size()), config.batch_size,
                        epoch_seed(config.seed, epoch));
    double epoch_loss = 0;
    for (std::size_t b = 0; b < groups.size(); ++b) {
      double batch_loss = 0;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.parameter_count());
      if (config.pooling == TrainConfig::Pooling::batch) {
        std::vector<const WindowData<double>*> members;
        for (Index w : groups[b]) members.push_back(&windows[static_cast<std::size_t>(w)]);
        const auto res = pipeline_pooled(net, members, mask, settings, true);
        batch_loss = res.loss;
        grad = res.grad.pack();
      } else {
        for (Index w : groups[b]) {
          const auto res =
              pipeline_window(net, windows[static_cast<std::size_t>(w)], mask, settings, true);
          batch_loss += res.loss;
          grad += res.grad.pack();
        }
        const double scale = 1.0 / static_cast<double>(groups[b].size());
        batch_loss *= scale;
        grad *= scale;
      }
      epoch_loss += batch_loss;

      Eigen::VectorXd params = net.pack();
      adam.step(params, grad);
      if (!params.allFinite()) {
        std::vector<double> hist = result.history;
        hist.push_back(epoch_loss / static_cast<double>(b + 1));
        throw TrainingHalted("non-finite parameters after update (epoch " +
                                 std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1) +
                                 ")",
                             halt_diagnostics(epoch + 1, static_cast<Index>(b + 1), hist));
      }
      net.unpack(params);
    }
    epoch_loss /= static_cast<double>(groups.size());
    result.history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss, active);

    if (epoch >= target_phase && epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best_epoch = epoch;
      best = net;
    }
  }
  if (best_epoch < 0) {
    best = net;
    best_epoch = config.epochs - 1;
    best_loss = result.history.back();
  }

  result.network = best;
  result.best_epoch = best_epoch;
  result.best_loss = best_loss;
  const auto avg = average_output(best, traj, k, stride, result.standardization);
  const auto sel = sparsify(ranking(avg.theta), std::min(config.support, full));
  result.model = SparseModel<double>(settings.library, apply_mask(avg.theta, sel.mask),
                                     sel.entries());
  result.shifts = avg.shifts;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate(const SparseModel<double>& model, const Eigen::VectorXd& shifts,
                    const Trajectory& traj, const DynamicalSystem* truth, Index solve_steps,
                    RkMethod method) {
  traj.validate();
  const Index n = model.n(), m = model.m(), N = traj.samples(), ss = solve_steps;
  if (traj.n() != n || traj.m() != m)
    throw ContractError("evaluate: trajectory has n=" + std::to_string(traj.n()) +
                        ", m=" + std::to_string(traj.m()) + "; model has n=" + std::to_string(n) +
                        ", m=" + std::to_string(m));
  if (shifts.size() != m) throw ContractError("evaluate: shifts size != m");
  if (ss < 1) throw ContractError("evaluate: solve_steps must be >= 1");

  EvalReport report;
  const Eigen::MatrixXd shifted = apply_shifts<double>(traj.inputs, shifts);
  const Index sub_steps = (N - 1) * ss;
  Eigen::MatrixXd U_sub(m > 0 ? sub_steps + 1 : 0, m);
  for (Index r = 0; r < U_sub.rows(); ++r) U_sub.row(r) = shifted.row(std::min(r / ss, N - 1));
  try {
    const auto sol = solve(model, Eigen::VectorXd(traj.states.row(0).transpose()), U_sub,
                           traj.dt / static_cast<double>(ss), sub_steps, method);
    Eigen::MatrixXd Y_est(N, n);
    for (Index t = 0; t < N; ++t) Y_est.row(t) = sol.Y.row(t * ss);
    report.reconstruction_mse = ode_loss<double>(traj.states, Y_est);
  } catch (const DivergenceError&) {
    report.diverged = true;
    report.reconstruction_mse = std::numeric_limits<double>::infinity();
  }

  if (truth) {
    if (truth->n() != n || truth->m() != m)
      throw ContractError("evaluate: ground-truth system dimensions differ from the model");
    const TermLibrary common =
        build_library(n, m, std::max(truth->library.order(), model.library().order()));
    const auto rec = reindex(model, common);
    const auto ref = reindex(truth->model(), common);
    std::vector<SupportEntry> a = rec.support(), b = ref.support(), both, any;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(any));
    double err = 0;
    for (const auto& e : any)
      err = std::max(err, std::abs(rec.theta()(e.row, e.col) - ref.theta()(e.row, e.col)));
    report.coeff_max_abs_err = err;
    const double hits = static_cast<double>(both.size());
    report.support_precision = a.empty() ? 0.0 : hits / static_cast<double>(a.size());
    report.support_recall = b.empty() ? 1.0 : hits / static_cast<double>(b.size());
  }
  return report;
}

EvalReport evaluate(const RecoveredModel& recovered, const Trajectory& traj,
                    const DynamicalSystem* truth) {
  return evaluate(recovered.model, recovered.shifts, traj, truth, recovered.config.solve_steps,
                  recovered.config.method);
}

std::string eval_report_json(const EvalReport& report) {
  json j;
  j["schema"] = kEvalReportSchema;
  if (std::isfinite(report.reconstruction_mse))
    j["reconstruction_mse"] = report.reconstruction_mse;
  else
    j["reconstruction_mse"] = nullptr;
  auto optional = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  j["coeff_max_abs_err"] = optional(report.coeff_max_abs_err);
  j["support_precision"] = optional(report.support_precision);
  j["support_recall"] = optional(report.support_recall);
  j["diverged"] = report.diverged;
  return j.dump(2) + "\n";
}

std::string loss_csv(const std::vector<double>& history) {
  std::string out = "epoch,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    out += std::to_string(i + 1) + "," + format_decimal(history[i]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

json matrix_json(const Eigen::MatrixXd& A) {
  json rows = json::array();
  for (Index i = 0; i < A.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

struct CheckpointReader {
  const std::string& source;

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ParseError(source, 0, field, what);
  }

  const json& at(const json& j, const std::string& key, const std::string& path) const {
    if (!j.is_object() || !j.contains(key)) fail(path + key, "missing");
    return j.at(key);
  }

  Eigen::MatrixXd matrix(const json& j, Index rows, Index cols, const std::string& field) const {
    if (!j.is_array() || static_cast<Index>(j.size()) != rows) fail(field, "wrong row count");
    Eigen::MatrixXd A(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      const json& row = j[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Index>(row.size()) != cols) fail(field, "wrong column count");
      for (Index c = 0; c < cols; ++c) {
        const json& v = row[static_cast<std::size_t>(c)];
        if (!v.is_number()) fail(field, "non-numeric entry");
        A(i, c) = v.get<double>();
      }
    }
    return A;
  }

  Eigen::VectorXd vector(const json& j, Index size, const std::string& field) const {
    if (!j.is_array() || static_cast<Index>(j.size()) != size) fail(field, "wrong length");
    Eigen::VectorXd v(size);
    for (Index i = 0; i < size; ++i) {
      const json& e = j[static_cast<std::size_t>(i)];
      if (!e.is_number()) fail(field, "non-numeric entry");
      v(i) = e.get<double>();
    }
    return v;
  }

  Index count(const json& j, const std::string& field) const {
    if (!j.is_number_integer() || j.get<std::int64_t>() < 0) fail(field, "expected a count");
    return j.get<Index>();
  }
};

}  // namespace

std::string checkpoint_json(const RecoveredModel& r) {
  const TermLibrary& lib = r.model.library();
  json j;
  j["format"] = kCheckpointFormat;
  j["dims"] = {{"n", lib.n()},           {"m", lib.m()},        {"M", lib.order()},
               {"H", r.network.gru.hidden}, {"p", r.model.p()}, {"q", r.shifts.size()}};
  j["dense_hidden"] = r.config.dense_hidden;
  j["library"] = {{"order_version", kLibraryOrderVersion}, {"index_map", export_index_map(lib)}};
  j["standardization"] = {{"enabled", r.standardization.enabled},
                          {"mean", vector_json(r.standardization.mean)},
                          {"scale", vector_json(r.standardization.scale)}};
  j["config"] = r.config.echo();
  j["gru"] = {{"Wz", matrix_json(r.network.gru.Wz)},
              {"Wr", matrix_json(r.network.gru.Wr)},
              {"Wa", matrix_json(r.network.gru.Wa)},
              {"bias_z", vector_json(r.network.gru.bias_z)},
              {"bias_r", vector_json(r.network.gru.bias_r)},
              {"bias_c", vector_json(r.network.gru.bias_c)}};
  json layers = json::array();
  for (Index l = 0; l < r.network.dense.layers(); ++l)
    layers.push_back({{"weights", matrix_json(r.network.dense.weights[static_cast<std::size_t>(l)])},
                      {"biases", vector_json(r.network.dense.biases[static_cast<std::size_t>(l)])}});
  j["dense"] = std::move(layers);
  json support = json::array();
  for (const auto& e : r.model.support()) support.push_back({e.row, e.col});
  j["recovered"] = {{"theta", matrix_json(r.model.theta())},
                    {"support", std::move(support)},
                    {"shifts", vector_json(r.shifts)}};
  j["history"] = r.history;
  j["best_epoch"] = r.best_epoch;
  j["best_loss"] = r.best_loss;
  return j.dump(2) + "\n";
}

RecoveredModel parse_checkpoint(const std::string& text, const std::string& source) {
  const CheckpointReader rd{source};
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source, 0, "json", e.what());
  }
  if (!j.is_object() || !j.contains("format") || j["format"] != kCheckpointFormat)
    rd.fail("format", std::string("expected ") + kCheckpointFormat);

  const json& dims = rd.at(j, "dims", "");
  const Index n = rd.count(rd.at(dims, "n", "dims."), "dims.n");
  const Index m = rd.count(rd.at(dims, "m", "dims."), "dims.m");
  const Index M = rd.count(rd.at(dims, "M", "dims."), "dims.M");
  const Index H = rd.count(rd.at(dims, "H", "dims."), "dims.H");
  const Index p = rd.count(rd.at(dims, "p", "dims."), "dims.p");
  const Index q = rd.count(rd.at(dims, "q", "dims."), "dims.q");
  if (n < 1 || H < 1 || q != m) rd.fail("dims", "inconsistent dimensions");

  RecoveredModel r;
  try {
    r.config = TrainConfig::from_config(
        KeyValueConfig::parse(rd.at(j, "config", "").get<std::string>(), source + ":config"));
  } catch (const json::exception& e) {
    rd.fail("config", e.what());
  }
  const TermLibrary lib = build_library(n, m, M);
  const json& libj = rd.at(j, "library", "");
  if (rd.at(libj, "order_version", "library.") != kLibraryOrderVersion)
    rd.fail("library.order_version", "unsupported library ordering");
  if (rd.at(libj, "index_map", "library.") != export_index_map(lib))
    rd.fail("library.index_map", "does not match the rebuilt library");
  const Index L = lib.size(), D = n + m;

  const json& sj = rd.at(j, "standardization", "");
  r.standardization.enabled = rd.at(sj, "enabled", "standardization.").get<bool>();
  r.standardization.mean = rd.vector(rd.at(sj, "mean", "standardization."), D, "standardization.mean");
  r.standardization.scale =
      rd.vector(rd.at(sj, "scale", "standardization."), D, "standardization.scale");

  const json& g = rd.at(j, "gru", "");
  auto& gru = r.network.gru;
  gru = GruParams<double>::zeros(H, D);
  gru.Wz = rd.matrix(rd.at(g, "Wz", "gru."), H, H + D, "gru.Wz");
  gru.Wr = rd.matrix(rd.at(g, "Wr", "gru."), H, H + D, "gru.Wr");
  gru.Wa = rd.matrix(rd.at(g, "Wa", "gru."), H, H + D, "gru.Wa");
  gru.bias_z = rd.vector(rd.at(g, "bias_z", "gru."), H, "gru.bias_z");
  gru.bias_r = rd.vector(rd.at(g, "bias_r", "gru."), H, "gru.bias_r");
  gru.bias_c = rd.vector(rd.at(g, "bias_c", "gru."), H, "gru.bias_c");

  std::vector<Index> widths;
  for (const auto& w : rd.at(j, "dense_hidden", "")) widths.push_back(rd.count(w, "dense_hidden"));
  auto& dense = r.network.dense;
  dense = DenseParams<double>::zeros(H, widths, n, L, m);
  const json& layers = rd.at(j, "dense", "");
  if (!layers.is_array() || static_cast<Index>(layers.size()) != dense.layers())
    rd.fail("dense", "wrong layer count");
  for (Index l = 0; l < dense.layers(); ++l) {
    const auto sl = static_cast<std::size_t>(l);
    const std::string field = "dense[" + std::to_string(l) + "]";
    dense.weights[sl] = rd.matrix(rd.at(layers[sl], "weights", field + "."), dense.weights[sl].rows(),
                                  dense.weights[sl].cols(), field + ".weights");
    dense.biases[sl] =
        rd.vector(rd.at(layers[sl], "biases", field + "."), dense.biases[sl].size(), field + ".biases");
  }

  const json& rec = rd.at(j, "recovered", "");
  const Eigen::MatrixXd theta = rd.matrix(rd.at(rec, "theta", "recovered."), n, L, "recovered.theta");
  std::vector<SupportEntry> support;
  for (const auto& e : rd.at(rec, "support", "recovered.")) {
    if (!e.is_array() || e.size() != 2) rd.fail("recovered.support", "expected [row, col] pairs");
    const Index row = rd.count(e[0], "recovered.support"), col = rd.count(e[1], "recovered.support");
    if (row >= n || col >= L) rd.fail("recovered.support", "index out of range");
    support.push_back({row, col});
  }
  if (static_cast<Index>(support.size()) != p) rd.fail("dims.p", "does not match support size");
  try {
    r.model = SparseModel<double>(lib, theta, support);
  } catch (const ContractError& e) {
    rd.fail("recovered", e.what());
  }
  r.shifts = rd.vector(rd.at(rec, "shifts", "recovered."), m, "recovered.shifts");
  for (const auto& v : rd.at(j, "history", "")) {
    if (!v.is_number()) rd.fail("history", "non-numeric entry");
    r.history.push_back(v.get<double>());
  }
  r.best_epoch = rd.at(j, "best_epoch", "").get<Index>();
  r.best_loss = rd.at(j, "best_loss", "").get<double>();
  return r;
}

RecoveredModel load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path), path);
}

}  // namespace merinda
