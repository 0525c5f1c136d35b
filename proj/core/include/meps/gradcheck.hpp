#pragma once

#include <functional>
#include <span>
#include <vector>

namespace meps {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(p + eps e_i) - f(p - eps e_i)) / (2 eps), per coordinate.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> params, double eps);

/// ||a - b|| / max(||a||, ||b||), zero when both vectors vanish.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace meps
