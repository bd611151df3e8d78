#include "merinda/solver.hpp"

namespace merinda {

RkMethod parse_rk_method(const std::string& name) {
  if (name == "rk4") return RkMethod::rk4;
  if (name == "rk2") return RkMethod::rk2;
  throw ContractError("unknown Runge-Kutta method '" + name + "' (expected rk4 or rk2)");
}

std::string to_string(RkMethod method) { return method == RkMethod::rk4 ? "rk4" : "rk2"; }

}  // namespace merinda
