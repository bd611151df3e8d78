#include "merinda/term_library.hpp"

#include <limits>
#include <sstream>

namespace merinda {

Index monomial_count(Index vars, Index order) {
  if (vars < 0 || order < 0) throw ContractError("monomial_count: negative argument");
  // C(order + vars, vars) built incrementally as C(order + i, i), each step exact.
  unsigned __int128 count = 1;
  for (Index i = 1; i <= vars; ++i) {
    count = count * static_cast<unsigned __int128>(order + i) / static_cast<unsigned __int128>(i);
    if (count > static_cast<unsigned __int128>(std::numeric_limits<Index>::max()))
      throw CapacityError("term library size exceeds the platform index range");
  }
  return static_cast<Index>(count);
}

namespace {

// Appends every exponent vector over vars[first..] with total degree `degree`,
// earlier variables taking the larger exponents first.
void enumerate_degree(Index first, int degree, Eigen::VectorXi& current,
                      std::vector<Eigen::VectorXi>& out) {
  const Index vars = current.size();
  if (first == vars - 1) {
    current(first) = degree;
    out.push_back(current);
    current(first) = 0;
    return;
  }
  for (int e = degree; e >= 0; --e) {
    current(first) = e;
    enumerate_degree(first + 1, degree - e, current, out);
  }
  current(first) = 0;
}

}  // namespace

TermLibrary::TermLibrary(Index n, Index m, Index order) : n_(n), m_(m), order_(order) {
  if (n < 1) throw ContractError("term library needs n >= 1");
  if (m < 0 || order < 0) throw ContractError("term library needs m >= 0 and order >= 0");
  const Index count = monomial_count(n + m, order);
  if (count > kMaxLibraryTerms)
    throw CapacityError("term library with " + std::to_string(count) +
                        " terms exceeds the supported maximum");

  std::vector<Eigen::VectorXi> terms;
  terms.reserve(static_cast<std::size_t>(count));
  Eigen::VectorXi current = Eigen::VectorXi::Zero(n + m);
  for (int degree = 0; degree <= order; ++degree) enumerate_degree(0, degree, current, terms);

  exponents_.resize(static_cast<Index>(terms.size()), n + m);
  for (Index j = 0; j < exponents_.rows(); ++j) exponents_.row(j) = terms[j].transpose();
}

Index TermLibrary::find(const Eigen::VectorXi& exponents) const {
  if (exponents.size() != vars()) return -1;
  for (Index j = 0; j < size(); ++j)
    if (exponents_.row(j).transpose() == exponents) return j;
  return -1;
}

std::string TermLibrary::term_name(Index j) const {
  std::string name;
  for (Index v = 0; v < vars(); ++v) {
    const int e = exponents_(j, v);
    if (e == 0) continue;
    if (!name.empty()) name += '*';
    name += (v < n_ ? "x" + std::to_string(v + 1) : "u" + std::to_string(v - n_ + 1));
    if (e > 1) name += '^' + std::to_string(e);
  }
  return name.empty() ? "1" : name;
}

std::string export_index_map(const TermLibrary& lib) {
  std::ostringstream os;
  os << "# " << kLibraryOrderVersion << " n=" << lib.n() << " m=" << lib.m()
     << " order=" << lib.order() << "\n";
  for (Index j = 0; j < lib.size(); ++j) {
    os << j << " ";
    for (Index v = 0; v < lib.vars(); ++v) os << ' ' << lib.exponents()(j, v);
    os << "  " << lib.term_name(j) << "\n";
  }
  return os.str();
}

Eigen::MatrixXi parse_index_map(const std::string& text, Index vars) {
  std::istringstream is(text);
  std::string line;
  std::vector<Eigen::VectorXi> rows;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Index index = 0;
    if (!(ls >> index) || index != static_cast<Index>(rows.size()))
      throw ParseError("index map", lineno, "index", "expected index " + std::to_string(rows.size()));
    Eigen::VectorXi e(vars);
    for (Index v = 0; v < vars; ++v)
      if (!(ls >> e(v))) throw ParseError("index map", lineno, "exponent_vector", "too few exponents");
    rows.push_back(e);
  }
  Eigen::MatrixXi out(static_cast<Index>(rows.size()), vars);
  for (Index j = 0; j < out.rows(); ++j) out.row(j) = rows[j].transpose();
  return out;
}

SparseModel<double> reindex(const SparseModel<double>& model, const TermLibrary& target) {
  if (target.n() != model.n() || target.m() != model.m())
    throw ContractError("reindex: variable counts differ");
  MatrixX<double> theta = MatrixX<double>::Zero(target.n(), target.size());
  std::vector<SupportEntry> support;
  for (const auto& e : model.support()) {
    const Index col = target.find(model.library().term(e.col));
    if (col < 0)
      throw ContractError("term " + model.library().term_name(e.col) +
                          " is not in the target library");
    theta(e.row, col) = model.theta()(e.row, e.col);
    support.push_back({e.row, col});
  }
  return {target, std::move(theta), std::move(support)};
}

}  // namespace merinda
