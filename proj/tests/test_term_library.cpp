#include <doctest.h>

#include <random>
#include <set>

#include "merinda/errors.hpp"
#include "merinda/term_library.hpp"
#include "test_support.hpp"

using namespace merinda;
using merinda::testing::pascal;

namespace {

// Brute force: every exponent vector in [0, order]^vars with total <= order.
std::set<std::vector<int>> enumerate_terms(Index vars, Index order) {
  std::set<std::vector<int>> out;
  std::vector<int> e(static_cast<std::size_t>(vars), 0);
  while (true) {
    int total = 0;
    for (int v : e) total += v;
    if (total <= order) out.insert(e);
    std::size_t i = 0;
    while (i < e.size() && ++e[i] > order) e[i++] = 0;
    if (i == e.size()) break;
  }
  return out;
}

}  // namespace

TEST_CASE("library size follows C(n+m+M, M)") {
  for (Index vars = 1; vars <= 6; ++vars)
    for (Index order = 0; order <= 5; ++order) {
      const Index expected = pascal(vars + order, order);
      CHECK(monomial_count(vars, order) == expected);
      CHECK(build_library(vars, 0, order).size() == expected);
    }
  CHECK(build_library(2, 0, 3).size() == 10);
  CHECK(build_library(3, 0, 2).size() == 10);
  CHECK(build_library(2, 1, 2).size() == 10);
}

TEST_CASE("library terms are exactly the monomials up to the order") {
  for (auto [n, m, order] : {std::tuple<Index, Index, Index>{2, 1, 2}, {3, 0, 3}, {1, 2, 4}}) {
    const TermLibrary lib = build_library(n, m, order);
    std::set<std::vector<int>> got;
    for (Index j = 0; j < lib.size(); ++j) {
      const Eigen::VectorXi e = lib.term(j);
      got.insert(std::vector<int>(e.data(), e.data() + e.size()));
    }
    CHECK(got == enumerate_terms(n + m, order));
    CHECK(static_cast<Index>(got.size()) == lib.size());
  }
}

TEST_CASE("graded lexicographic order") {
  const TermLibrary lib = build_library(2, 0, 2);
  const int expected[6][2] = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
  REQUIRE(lib.size() == 6);
  for (Index j = 0; j < 6; ++j) {
    CHECK(lib.exponents()(j, 0) == expected[j][0]);
    CHECK(lib.exponents()(j, 1) == expected[j][1]);
  }
  // Total degree never decreases.
  const TermLibrary big = build_library(3, 1, 4);
  for (Index j = 1; j < big.size(); ++j)
    CHECK(big.exponents().row(j).sum() >= big.exponents().row(j - 1).sum());
}

TEST_CASE("library construction is deterministic") {
  CHECK(build_library(3, 2, 3).exponents() == build_library(3, 2, 3).exponents());
}

TEST_CASE("capacity limit") {
  CHECK_THROWS_AS(build_library(30, 0, 10), CapacityError);
  CHECK_THROWS_AS(build_library(0, 0, 2), ContractError);
  CHECK_THROWS_AS(build_library(2, 0, -1), ContractError);
}

TEST_CASE("feature evaluation examples") {
  const TermLibrary lib = build_library(2, 0, 2);
  const Eigen::VectorXd u(0);
  Eigen::VectorXd phi = evaluate(lib, Eigen::Vector2d(2, 3), u);
  Eigen::VectorXd expected(6);
  expected << 1, 2, 3, 4, 6, 9;
  CHECK(phi == expected);

  phi = evaluate(lib, Eigen::Vector2d(0, 0), u);
  expected << 1, 0, 0, 0, 0, 0;
  CHECK(phi == expected);
}

TEST_CASE("a unit variable drops out of every feature") {
  const TermLibrary lib = build_library(3, 0, 3);
  const Eigen::Vector3d y(1.0, -0.7, 1.3);
  const Eigen::VectorXd phi = evaluate(lib, y, Eigen::VectorXd(0));
  for (Index j = 0; j < lib.size(); ++j) {
    const Eigen::VectorXi e = lib.term(j);
    CHECK(phi(j) == doctest::Approx(std::pow(-0.7, e(1)) * std::pow(1.3, e(2))).epsilon(1e-14));
  }
}

TEST_CASE("jacobian examples") {
  const TermLibrary lib = build_library(2, 0, 2);
  const Eigen::MatrixXd J = evaluate_jacobian(lib, Eigen::Vector2d(3, 5), Eigen::VectorXd(0));
  CHECK(J.rows() == 6);
  CHECK(J.cols() == 2);
  CHECK(J.row(0).isZero());
  CHECK(J(3, 0) == 6.0);   // d(x1^2)/dx1
  CHECK(J(4, 0) == 5.0);   // d(x1 x2)/dx1
  CHECK(J(4, 1) == 3.0);   // d(x1 x2)/dx2
  CHECK(J(5, 0) == 0.0);
}

TEST_CASE("jacobian matches central differences at random points") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-2, 2);
  for (auto [n, m, order] : {std::tuple<Index, Index, Index>{2, 0, 3}, {3, 1, 2}, {1, 1, 4}}) {
    const TermLibrary lib = build_library(n, m, order);
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd y(n), u(m);
      for (Index i = 0; i < n; ++i) y(i) = dist(rng);
      for (Index i = 0; i < m; ++i) u(i) = dist(rng);
      const Eigen::MatrixXd J = evaluate_jacobian(lib, y, u);
      for (Index v = 0; v < n; ++v) {
        const double h = 1e-6 * std::max(1.0, std::abs(y(v)));
        Eigen::VectorXd up = y, down = y;
        up(v) += h;
        down(v) -= h;
        const Eigen::VectorXd fd = (evaluate(lib, up, u) - evaluate(lib, down, u)) / (2 * h);
        for (Index j = 0; j < lib.size(); ++j)
          CHECK(std::abs(J(j, v) - fd(j)) <= 1e-6 * std::max(1.0, std::abs(fd(j))));
      }
    }
  }
}

TEST_CASE("rhs of the predator-prey model") {
  const TermLibrary lib = build_library(2, 0, 2);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(2, 6);
  theta(0, 1) = 1.0;
  theta(0, 4) = -0.5;
  theta(1, 2) = -1.0;
  theta(1, 4) = 0.5;
  const auto model = SparseModel<double>::from_dense(lib, theta);
  CHECK(model.p() == 4);
  const Eigen::VectorXd f = rhs(model, Eigen::Vector2d(1, 1), Eigen::VectorXd(0));
  CHECK(f(0) == 0.5);
  CHECK(f(1) == -0.5);

  // Every other coefficient is zero: a zero model gives a zero derivative.
  const auto zero = SparseModel<double>::from_dense(lib, Eigen::MatrixXd::Zero(2, 6));
  CHECK(zero.p() == 0);
  CHECK(rhs(zero, Eigen::Vector2d(4, -2), Eigen::VectorXd(0)).isZero());
}

TEST_CASE("rhs equals the dense product over the support") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1, 1);
  const TermLibrary lib = build_library(3, 1, 2);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(3, lib.size());
    for (int e = 0; e < 5; ++e)
      theta(static_cast<Index>(rng() % 3), static_cast<Index>(rng() % lib.size())) = dist(rng);
    const auto model = SparseModel<double>::from_dense(lib, theta);
    Eigen::Vector3d y(dist(rng), dist(rng), dist(rng));
    Eigen::VectorXd u(1);
    u << dist(rng);
    const Eigen::VectorXd phi = evaluate(lib, y, u);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3);
    for (const auto& e : model.support()) sum(e.row) += theta(e.row, e.col) * phi(e.col);
    CHECK((rhs(model, y, u) - sum).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("structural zeros and explicit support") {
  const TermLibrary lib = build_library(1, 0, 2);
  Eigen::MatrixXd theta(1, 3);
  theta << 1e-13, 2.0, 0.0;
  const auto model = SparseModel<double>::from_dense(lib, theta);
  CHECK(model.p() == 1);
  CHECK(model.theta()(0, 0) == 0.0);

  // A zero value may sit inside an explicit support.
  Eigen::MatrixXd zero_inside(1, 3);
  zero_inside << 0.0, 2.0, 0.0;
  const SparseModel<double> explicit_model(lib, zero_inside, {{0, 0}, {0, 1}});
  CHECK(explicit_model.p() == 2);
  CHECK_THROWS_AS(SparseModel<double>(lib, zero_inside, {{0, 0}}), ContractError);
  CHECK_THROWS_AS(SparseModel<double>(lib, Eigen::MatrixXd::Zero(2, 3), {}), ContractError);
}

TEST_CASE("index map round trip") {
  const TermLibrary lib = build_library(2, 1, 3);
  const std::string text = export_index_map(lib);
  CHECK(parse_index_map(text, lib.vars()) == lib.exponents());
  CHECK_THROWS_AS(parse_index_map(text, lib.vars() + 1), ParseError);
}

TEST_CASE("term lookup and reindexing") {
  const TermLibrary small = build_library(2, 0, 2);
  const TermLibrary big = build_library(2, 0, 3);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(2, small.size());
  theta(0, 4) = 1.5;
  theta(1, 3) = -2.0;
  const auto model = SparseModel<double>::from_dense(small, theta);
  const auto moved = reindex(model, big);
  const Eigen::Vector2d y(0.3, -1.1);
  CHECK((rhs(model, y, Eigen::VectorXd(0)) - rhs(moved, y, Eigen::VectorXd(0))).norm() == 0.0);
  CHECK(big.find(small.term(4)) >= 0);

  Eigen::MatrixXd cubic = Eigen::MatrixXd::Zero(2, big.size());
  cubic(0, big.size() - 1) = 1.0;
  CHECK_THROWS_AS(reindex(SparseModel<double>::from_dense(big, cubic), small), ContractError);
}
