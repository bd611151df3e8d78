#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "merinda/errors.hpp"
#include "merinda/training.hpp"

using namespace merinda;

namespace {

const DynamicalSystem& lotka_volterra() {
  static const DynamicalSystem sys = builtin_systems().at("lotka_volterra");
  return sys;
}

Trajectory lv_data(Index steps = 1000) {
  return simulate(lotka_volterra(), Eigen::Vector2d(1, 1), zero_input(0), 0.01, steps);
}

// Trajectory of N samples with one input channel.
Trajectory ramp(Index N) {
  Trajectory t;
  t.dt = 0.1;
  t.times.resize(N);
  t.states.resize(N, 2);
  t.inputs.resize(N, 1);
  for (Index i = 0; i < N; ++i) {
    t.times(i) = 0.1 * static_cast<double>(i);
    t.states.row(i) << static_cast<double>(i), -static_cast<double>(i);
    t.inputs(i, 0) = 0.5 * static_cast<double>(i);
  }
  return t;
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.window = 10;
  c.epochs = 5;
  c.order = 2;
  c.support = 4;
  c.hidden = 4;
  c.dense_hidden = {8};
  c.learning_rate = 1e-3;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("batch counts follow the drop-remainder rule") {
  const auto full = make_batches(ramp(100), 5, 10, 1);
  REQUIRE(full.size() == 2);
  for (const auto& b : full) {
    const auto shape = b.shape();
    CHECK(shape[0] == 5);
    CHECK(shape[1] == 3);
    CHECK(shape[2] == 10);
  }
  CHECK(make_batches(ramp(95), 5, 10, 1).size() == 1);
  CHECK_THROWS_AS(make_batches(ramp(5), 1, 10, 1), DataError);
}

TEST_CASE("windows carry their start index and are deterministic") {
  const Trajectory t = ramp(100);
  const auto a = make_batches(t, 5, 10, 42);
  const auto b = make_batches(t, 5, 10, 42);
  std::vector<Index> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].starts == b[i].starts);
    for (std::size_t w = 0; w < a[i].windows.size(); ++w) {
      const Index s = a[i].starts[w];
      CHECK(s % 10 == 0);
      seen.push_back(s);
      for (Index c = 0; c < 10; ++c) {
        CHECK(a[i].windows[w](0, c) == t.states(s + c, 0));
        CHECK(a[i].windows[w](1, c) == t.states(s + c, 1));
        CHECK(a[i].windows[w](2, c) == t.inputs(s + c, 0));
      }
    }
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
  CHECK(window_starts(25, 10, 5) == std::vector<Index>{0, 5, 10, 15});
}

TEST_CASE("Adam first step moves by the learning rate") {
  Adam adam(3, 0.1, 0.9, 0.999, 1e-8);
  Eigen::VectorXd x = Eigen::Vector3d(1, 2, 3);
  adam.step(x, Eigen::Vector3d(0.5, -2, 0));
  CHECK(x(0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(x(1) == doctest::Approx(2.1).epsilon(1e-6));
  CHECK(x(2) == 3.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("support schedule") {
  TrainConfig c;
  c.support = 4;
  c.warmup_epochs = 2;
  c.prune_epochs = 4;
  CHECK(c.support_at(0, 20) == 20);
  CHECK(c.support_at(1, 20) == 20);
  CHECK(c.support_at(2, 20) == 16);
  CHECK(c.support_at(5, 20) == 4);
  CHECK(c.support_at(50, 20) == 4);
  c.warmup_epochs = c.prune_epochs = 0;
  CHECK(c.support_at(0, 20) == 4);
  CHECK(c.support_at(0, 3) == 3);
}

TEST_CASE("config parsing, echo and validation") {
  const auto cfg = TrainConfig::from_config(KeyValueConfig::parse(
      "batch_size = 2\nwindow = 5\nepochs = 3\nlearning_rate = 0.01\ndense_hidden = 8,4\n"
      "pooling = window\nselection = scaled\n",
      "t.cfg"));
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.dense_hidden == std::vector<Index>{8, 4});
  CHECK(cfg.pooling == TrainConfig::Pooling::window);
  const auto again = TrainConfig::from_config(KeyValueConfig::parse(cfg.echo(), "echo"));
  CHECK(again.echo() == cfg.echo());

  CHECK_THROWS_AS(TrainConfig::from_config(KeyValueConfig::parse("colour = red\n", "x")), ParseError);
  CHECK_THROWS_AS(TrainConfig::from_config(KeyValueConfig::parse("window = 1\n", "x")), ContractError);
  CHECK_THROWS_AS(TrainConfig::from_config(KeyValueConfig::parse("epochs = 0\n", "x")), ContractError);
  CHECK_THROWS_AS(TrainConfig::from_config(KeyValueConfig::parse("learning_rate = -1\n", "x")),
                  ContractError);
}

TEST_CASE("one epoch at zero learning rate leaves the network untouched") {
  const Trajectory data = lv_data(200);
  TrainConfig c = small_config();
  c.epochs = 1;
  c.learning_rate = 0;
  c.batch_size = 20;  // every window in one batch
  const auto result = train(c, data);
  REQUIRE(result.history.size() == 1);

  // Same initialization, evaluated independently.
  std::mt19937_64 rng(c.seed);
  const TermLibrary lib = build_library(2, 0, c.order);
  Network<double> net;
  net.gru = GruParams<double>::random(c.hidden, 2, rng);
  net.dense = DenseParams<double>::random(c.hidden, c.dense_hidden, 2, lib.size(), 0, rng);
  CHECK(result.network.pack() == net.pack());

  const auto avg = average_output(net, data, c.window, 0, result.standardization);
  const Eigen::MatrixXd mask = sparsify(avg.theta, c.support).mask;
  std::vector<WindowData<double>> windows;
  for (Index s : window_starts(data.samples(), c.window, 0)) {
    WindowData<double> w;
    w.Y = data.states.middleRows(s, c.window);
    w.U = data.inputs.middleRows(s, c.window);
    w.sequence = w.Y;
    windows.push_back(w);
  }
  std::vector<const WindowData<double>*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  const auto initial = pipeline_pooled(net, ptrs, mask, {lib, data.dt, 1, RkMethod::rk4}, false);
  CHECK(result.history[0] == doctest::Approx(initial.loss).epsilon(1e-12));
}

TEST_CASE("training is deterministic") {
  const Trajectory data = lv_data(400);
  for (auto pooling : {TrainConfig::Pooling::batch, TrainConfig::Pooling::window}) {
    TrainConfig c = small_config();
    c.pooling = pooling;
    c.warmup_epochs = 2;
    c.prune_epochs = 2;
    c.epochs = 6;
    const auto a = train(c, data);
    const auto b = train(c, data);
    CHECK(a.history == b.history);
    CHECK(a.model.theta() == b.model.theta());
    CHECK(a.shifts == b.shifts);
    CHECK(checkpoint_json(a) == checkpoint_json(b));
    CHECK(a.history.size() == 6);
    for (double loss : a.history) CHECK(loss >= 0);
    CHECK(a.model.p() == c.support);
  }
}

TEST_CASE("dimension and data errors") {
  const Trajectory data = lv_data(100);
  TrainConfig c = small_config();
  c.state_dim = 3;
  CHECK_THROWS_AS(train(c, data), ContractError);
  c = small_config();
  c.input_dim = 1;
  CHECK_THROWS_AS(train(c, data), ContractError);
  c = small_config();
  c.dt = 0.02;
  CHECK_THROWS_AS(train(c, data), ContractError);
  c = small_config();
  c.batch_size = 50;
  CHECK_THROWS_AS(train(c, data), DataError);
  c = small_config();
  c.support = 100;
  CHECK_THROWS_AS(train(c, data), ContractError);
}

TEST_CASE("non-finite parameters halt training with diagnostics") {
  TrainConfig c = small_config();
  c.learning_rate = 1e308;
  c.epochs = 3;
  try {
    train(c, lv_data(400));
    FAIL("expected TrainingHalted");
  } catch (const TrainingHalted& e) {
    CHECK(e.diagnostics().find("\"epoch\"") != std::string::npos);
    CHECK(e.diagnostics().find("\"batch\"") != std::string::npos);
    CHECK(e.diagnostics().find("\"history\"") != std::string::npos);
  }
}

TEST_CASE("evaluating the true model") {
  const Trajectory data = lv_data();
  const auto& lv = lotka_volterra();
  const auto report = evaluate(lv.model(), Eigen::VectorXd(0), data, &lv);
  CHECK(report.reconstruction_mse <= 1e-6);
  CHECK(*report.support_precision == 1.0);
  CHECK(*report.support_recall == 1.0);
  CHECK(*report.coeff_max_abs_err == 0.0);
  CHECK_FALSE(report.diverged);

  // Model over a larger library still matches.
  const auto cubic = reindex(lv.model(), build_library(2, 0, 3));
  const auto r3 = evaluate(cubic, Eigen::VectorXd(0), data, &lv);
  CHECK(r3.reconstruction_mse <= 1e-6);
  CHECK(*r3.support_recall == 1.0);
}

TEST_CASE("evaluating the zero model") {
  const Trajectory data = lv_data(300);
  const auto& lv = lotka_volterra();
  const auto zero = SparseModel<double>::from_dense(lv.library, Eigen::MatrixXd::Zero(2, lv.library.size()));
  const auto report = evaluate(zero, Eigen::VectorXd(0), data, &lv);
  double sum = 0;
  for (Index t = 0; t < data.samples(); ++t)
    for (Index j = 0; j < 2; ++j) sum += std::pow(data.states(t, j) - data.states(0, j), 2);
  CHECK(report.reconstruction_mse == doctest::Approx(sum / static_cast<double>(data.states.size())).epsilon(1e-12));
  CHECK(*report.support_precision == 0.0);
  CHECK(*report.support_recall == 0.0);

  const auto no_truth = evaluate(zero, Eigen::VectorXd(0), data, nullptr);
  CHECK_FALSE(no_truth.coeff_max_abs_err.has_value());
  CHECK(eval_report_json(no_truth).find("\"support_recall\": null") != std::string::npos);
}

TEST_CASE("a diverging model is reported, not thrown") {
  const Trajectory data = lv_data(300);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(2, 6);
  theta(0, 3) = 5.0;  // x1' = 5 x1^2 blows up
  const auto model = SparseModel<double>::from_dense(build_library(2, 0, 2), theta);
  const auto report = evaluate(model, Eigen::VectorXd(0), data, nullptr);
  CHECK(report.diverged);
  CHECK(std::isinf(report.reconstruction_mse));
  CHECK(eval_report_json(report).find("\"reconstruction_mse\": null") != std::string::npos);
  CHECK_THROWS_AS(evaluate(model, Eigen::VectorXd(0), ramp(20), nullptr), ContractError);
}

TEST_CASE("checkpoint round trip") {
  TrainConfig c = small_config();
  c.standardize = true;
  const auto trained = train(c, lv_data(300));
  const std::string text = checkpoint_json(trained);
  const auto back = parse_checkpoint(text, "ckpt.json");
  CHECK(back.model.theta() == trained.model.theta());
  CHECK(back.model.support() == trained.model.support());
  CHECK(back.network.pack() == trained.network.pack());
  CHECK(back.history == trained.history);
  CHECK(back.standardization.mean == trained.standardization.mean);
  CHECK(checkpoint_json(back) == text);
  CHECK(text.find(kCheckpointFormat) != std::string::npos);

  CHECK_THROWS_AS(parse_checkpoint("{}", "empty.json"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint("not json", "bad.json"), ParseError);
  std::string wrong = text;
  wrong.replace(wrong.find(kCheckpointFormat), std::string(kCheckpointFormat).size(), "other-v9");
  CHECK_THROWS_AS(parse_checkpoint(wrong, "v.json"), ParseError);
}

TEST_CASE("loss CSV") {
  CHECK(loss_csv({0.5, 0.25}) == "epoch,loss\n1,0.5\n2,0.25\n");
}

TEST_CASE("desk-scale loss decreases tenfold") {
  const auto base = TrainConfig::load(MERINDA_SOURCE_DIR "/configs/lotka_volterra_desk.cfg");
  const Trajectory data = lv_data();
  std::vector<double> first, best;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig c = base;
    c.seed = seed;
    const auto r = train(c, data);
    first.push_back(r.history.front());
    best.push_back(*std::min_element(r.history.begin(), r.history.end()));
  }
  std::sort(first.begin(), first.end());
  std::sort(best.begin(), best.end());
  CHECK(best[2] * 10 <= first[2]);
}
