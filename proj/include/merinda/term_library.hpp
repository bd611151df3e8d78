#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "merinda/errors.hpp"

namespace merinda {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Upper bound on materialized library size.
inline constexpr Index kMaxLibraryTerms = Index{1} << 22;

// Version tag of the enumeration order; written into checkpoints and index maps.
inline constexpr const char* kLibraryOrderVersion = "graded-lex-v1";

// Number of monomials of total degree <= order in `vars` variables, i.e.
// C(order + vars, vars). Throws CapacityError on overflow.
Index monomial_count(Index vars, Index order);

// Polynomial term basis over n state variables followed by m input variables.
// Terms are in graded-lexicographic order: grouped by total degree, constant
// first, and within a degree the exponent of the earlier variable decreases.
class TermLibrary {
 public:
  TermLibrary() = default;
  TermLibrary(Index n, Index m, Index order);

  Index n() const { return n_; }
  Index m() const { return m_; }
  Index order() const { return order_; }
  Index vars() const { return n_ + m_; }
  Index size() const { return exponents_.rows(); }

  // size() x vars(), row j holds the exponents of term j.
  const Eigen::MatrixXi& exponents() const { return exponents_; }
  Eigen::VectorXi term(Index j) const { return exponents_.row(j).transpose(); }

  // Index of the term with the given exponent vector, or -1.
  Index find(const Eigen::VectorXi& exponents) const;

  // "1", "x1", "x1^2*u1", ...
  std::string term_name(Index j) const;

  bool operator==(const TermLibrary& other) const {
    return n_ == other.n_ && m_ == other.m_ && order_ == other.order_;
  }

 private:
  Index n_ = 0;
  Index m_ = 0;
  Index order_ = 0;
  Eigen::MatrixXi exponents_;
};

inline TermLibrary build_library(Index n, Index m, Index order) { return {n, m, order}; }

// Text export of the index map, one line per term:
//   index  e_1 ... e_{n+m}  monomial
std::string export_index_map(const TermLibrary& lib);

// Reads an index map written by export_index_map back into an exponent table.
Eigen::MatrixXi parse_index_map(const std::string& text, Index vars);

namespace detail {

// powers(v, e) = x_v^e for e in [0, order].
template <typename Scalar, typename Derived>
MatrixX<Scalar> power_table(const Eigen::MatrixBase<Derived>& x, Index order) {
  MatrixX<Scalar> powers(x.size(), order + 1);
  for (Index v = 0; v < x.size(); ++v) {
    powers(v, 0) = Scalar(1);
    for (Index e = 1; e <= order; ++e) powers(v, e) = powers(v, e - 1) * x(v);
  }
  return powers;
}

template <typename Scalar, typename DerivedY, typename DerivedU>
VectorX<Scalar> stack_variables(const TermLibrary& lib, const Eigen::MatrixBase<DerivedY>& y,
                                const Eigen::MatrixBase<DerivedU>& u) {
  if (y.size() != lib.n() || u.size() != lib.m())
    throw ContractError("library expects " + std::to_string(lib.n()) + " states and " +
                        std::to_string(lib.m()) + " inputs");
  VectorX<Scalar> x(lib.vars());
  x.head(lib.n()) = y.template cast<Scalar>();
  x.tail(lib.m()) = u.template cast<Scalar>();
  return x;
}

}  // namespace detail

// Feature vector phi(y, u); phi[0] = 1 and 0^0 = 1.
template <typename Scalar = double, typename DerivedY, typename DerivedU>
VectorX<Scalar> evaluate(const TermLibrary& lib, const Eigen::MatrixBase<DerivedY>& y,
                         const Eigen::MatrixBase<DerivedU>& u) {
  const VectorX<Scalar> x = detail::stack_variables<Scalar>(lib, y, u);
  const MatrixX<Scalar> powers = detail::power_table<Scalar>(x, lib.order());
  const auto& ex = lib.exponents();
  VectorX<Scalar> phi(lib.size());
  for (Index j = 0; j < lib.size(); ++j) {
    Scalar value(1);
    for (Index v = 0; v < lib.vars(); ++v) value *= powers(v, ex(j, v));
    phi(j) = value;
  }
  return phi;
}

// d phi_j / d x_v over all n + m variables: size() x vars().
template <typename Scalar = double, typename DerivedY, typename DerivedU>
MatrixX<Scalar> evaluate_jacobian_full(const TermLibrary& lib,
                                       const Eigen::MatrixBase<DerivedY>& y,
                                       const Eigen::MatrixBase<DerivedU>& u) {
  const VectorX<Scalar> x = detail::stack_variables<Scalar>(lib, y, u);
  const MatrixX<Scalar> powers = detail::power_table<Scalar>(x, lib.order());
  const auto& ex = lib.exponents();
  MatrixX<Scalar> jac = MatrixX<Scalar>::Zero(lib.size(), lib.vars());
  for (Index j = 0; j < lib.size(); ++j) {
    for (Index v = 0; v < lib.vars(); ++v) {
      const int e = ex(j, v);
      if (e == 0) continue;
      Scalar value = Scalar(e) * powers(v, e - 1);
      for (Index w = 0; w < lib.vars(); ++w)
        if (w != v) value *= powers(w, ex(j, w));
      jac(j, v) = value;
    }
  }
  return jac;
}

// d phi_j / d y_i over the state variables only: size() x n.
template <typename Scalar = double, typename DerivedY, typename DerivedU>
MatrixX<Scalar> evaluate_jacobian(const TermLibrary& lib, const Eigen::MatrixBase<DerivedY>& y,
                                  const Eigen::MatrixBase<DerivedU>& u) {
  return evaluate_jacobian_full<Scalar>(lib, y, u).leftCols(lib.n());
}

// A coefficient matrix over a library with an explicit support.
struct SupportEntry {
  Index row;
  Index col;
  bool operator==(const SupportEntry&) const = default;
  auto operator<=>(const SupportEntry&) const = default;
};

// Entries at or below this magnitude are structural zeros.
inline constexpr double kStructuralZero = 1e-12;

template <typename Scalar>
class SparseModel {
 public:
  SparseModel() = default;

  // Extracts the support from the nonzero pattern of `theta`; entries with
  // magnitude <= kStructuralZero are set to exactly zero.
  static SparseModel from_dense(TermLibrary lib, MatrixX<Scalar> theta) {
    check_shape(lib, theta);
    std::vector<SupportEntry> support;
    for (Index i = 0; i < theta.rows(); ++i)
      for (Index j = 0; j < theta.cols(); ++j) {
        if (std::abs(theta(i, j)) > Scalar(kStructuralZero))
          support.push_back({i, j});
        else
          theta(i, j) = Scalar(0);
      }
    return SparseModel(std::move(lib), std::move(theta), std::move(support));
  }

  // Explicit support. Entries may be zero inside the support; entries outside
  // it must already be zero.
  SparseModel(TermLibrary lib, MatrixX<Scalar> theta, std::vector<SupportEntry> support)
      : lib_(std::move(lib)), theta_(std::move(theta)), support_(std::move(support)) {
    check_shape(lib_, theta_);
    std::sort(support_.begin(), support_.end());
    support_.erase(std::unique(support_.begin(), support_.end()), support_.end());
    MatrixX<Scalar> outside = theta_;
    for (const auto& e : support_) {
      if (e.row < 0 || e.row >= theta_.rows() || e.col < 0 || e.col >= theta_.cols())
        throw ContractError("support entry outside coefficient matrix");
      outside(e.row, e.col) = Scalar(0);
    }
    if (outside.cwiseAbs().maxCoeff() != Scalar(0))
      throw ContractError("nonzero coefficient outside the declared support");
  }

  const TermLibrary& library() const { return lib_; }
  const MatrixX<Scalar>& theta() const { return theta_; }
  const std::vector<SupportEntry>& support() const { return support_; }
  Index p() const { return static_cast<Index>(support_.size()); }
  Index n() const { return lib_.n(); }
  Index m() const { return lib_.m(); }

  // 1 on the support, 0 elsewhere.
  MatrixX<Scalar> mask() const {
    MatrixX<Scalar> mask = MatrixX<Scalar>::Zero(theta_.rows(), theta_.cols());
    for (const auto& e : support_) mask(e.row, e.col) = Scalar(1);
    return mask;
  }

 private:
  static void check_shape(const TermLibrary& lib, const MatrixX<Scalar>& theta) {
    if (theta.rows() != lib.n() || theta.cols() != lib.size())
      throw ContractError("coefficient matrix must be " + std::to_string(lib.n()) + " x " +
                          std::to_string(lib.size()));
  }

  TermLibrary lib_;
  MatrixX<Scalar> theta_;
  std::vector<SupportEntry> support_;
};

// theta * phi(y, u)
template <typename Scalar, typename DerivedY, typename DerivedU>
VectorX<Scalar> rhs(const SparseModel<Scalar>& model, const Eigen::MatrixBase<DerivedY>& y,
                    const Eigen::MatrixBase<DerivedU>& u) {
  return model.theta() * evaluate<Scalar>(model.library(), y, u);
}

// Re-expresses `model` over `target`, matching terms by exponent vector.
// Throws ContractError if an active term has no counterpart.
SparseModel<double> reindex(const SparseModel<double>& model, const TermLibrary& target);

}  // namespace merinda
