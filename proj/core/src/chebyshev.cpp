#include "hmix/chebyshev.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "hmix/error.hpp"

namespace hmix {

const char* to_string(ConstraintKind kind) { return kind == ConstraintKind::median ? "median" : "mean"; }

ConstraintKind constraint_kind_from_string(const std::string& name) {
  if (name == "median") return ConstraintKind::median;
  if (name == "mean") return ConstraintKind::mean;
  throw ConfigError("unknown quantile constraint '" + name + "' (expected median or mean)");
}

std::vector<double> chebyshev_roots(int d) {
  if (d <= 0) throw ConfigError("Chebyshev degree must be positive");
  std::vector<double> roots(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) roots[static_cast<std::size_t>(k)] = std::cos(std::numbers::pi * (k + 0.5) / d);
  return roots;
}

double chebyshev_T(int k, double z) {
  if (k < 0) throw ConfigError("Chebyshev index must be non-negative");
  if (k == 0) return 1.0;
  double prev = 1.0;
  double cur = z;
  for (int i = 1; i < k; ++i) {
    const double next = 2.0 * z * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

std::vector<double> dct_coefficients(std::span<const double> values) {
  const std::size_t d = values.size();
  if (d == 0) throw DataError("dct_coefficients: empty input");
  std::vector<double> c(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      s += values[k] * std::cos(static_cast<double>(i) * std::numbers::pi * (static_cast<double>(k) + 0.5) /
                                static_cast<double>(d));
    }
    c[i] = s;
  }
  return c;
}

std::vector<double> integrate_coefficients(std::span<const double> raw) {
  const std::size_t d = raw.size();
  if (d < 2) throw ConfigError("integrate_coefficients needs d >= 2");
  std::vector<double> C(d, 0.0);
  for (std::size_t k = 1; k + 1 < d; ++k) C[k] = (raw[k - 1] - raw[k + 1]) / (4.0 * static_cast<double>(k));
  C[d - 1] = raw[d - 2] / (4.0 * static_cast<double>(d - 1));
  return C;
}

double constrain_c0(double point_forecast, std::span<const double> coeffs, ConstraintKind kind) {
  double s = 0.0;
  switch (kind) {
    case ConstraintKind::median:
      for (std::size_t k = 2; k < coeffs.size(); k += 2) s += ((k / 2) % 2 == 0 ? 1.0 : -1.0) * coeffs[k];
      return 2.0 * point_forecast - 2.0 * s;
    case ConstraintKind::mean:
      for (std::size_t k = 1; k < coeffs.size(); k += 2) {
        const double kk = static_cast<double>(k);
        s += coeffs[k] / (kk * kk - 4.0);
      }
      return 2.0 * point_forecast - 4.0 * s;
  }
  throw ConfigError("unknown constraint kind");
}

double chebyshev_series(std::span<const double> coeffs, double z) {
  // Clenshaw recurrence; coeffs[0] enters with weight 1/2.
  double b1 = 0.0;
  double b2 = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 1;) {
    const double b0 = 2.0 * z * b1 - b2 + coeffs[k];
    b2 = b1;
    b1 = b0;
  }
  const double c0 = coeffs.empty() ? 0.0 : coeffs[0];
  return z * b1 - b2 + 0.5 * c0;
}

double eval_quantile(double c0, std::span<const double> coeffs, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DataError("quantile level outside [0, 1]");
  std::vector<double> full(coeffs.begin(), coeffs.end());
  if (full.empty()) full.push_back(0.0);
  full[0] = c0;
  return chebyshev_series(full, 2.0 * tau - 1.0);
}

std::vector<double> antiderivative_coefficients(std::span<const double> values_at_roots) {
  const std::size_t d = values_at_roots.size();
  std::vector<double> raw = dct_coefficients(values_at_roots);
  // The interpolant is sum' a_k T_k with a_k = (2/d) c_k; folding the extra 2
  // of the integration formula gives the 4/d factor.
  for (double& c : raw) c *= 4.0 / static_cast<double>(d);
  return integrate_coefficients(raw);
}

std::vector<double> quantile_weights(int d, double tau, ConstraintKind kind) {
  if (d < 2) throw ConfigError("quantile generator needs d >= 2");
  const auto n = static_cast<std::size_t>(d);
  std::vector<double> w(n, 0.0);
  std::vector<double> unit(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    unit.assign(n, 0.0);
    unit[j] = 1.0;
    const auto C = antiderivative_coefficients(unit);
    w[j] = eval_quantile(constrain_c0(0.0, C, kind), C, tau);
  }
  return w;
}

}  // namespace hmix
