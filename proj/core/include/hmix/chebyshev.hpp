#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hmix {

enum class ConstraintKind { median, mean };

const char* to_string(ConstraintKind kind);
ConstraintKind constraint_kind_from_string(const std::string& name);

/// t_k = cos(pi (k + 1/2) / d), k = 0..d-1; strictly decreasing.
std::vector<double> chebyshev_roots(int d);

/// T_k(z) by the three-term recurrence.
double chebyshev_T(int k, double z);

/// c_i = sum_k values[k] cos(i pi (k + 1/2) / d), by direct summation.
std::vector<double> dct_coefficients(std::span<const double> values);

/// Coefficients of the integrated series. Entry k holds C_k for k = 1..d-1;
/// entry 0 is left at zero for constrain_c0 to fill.
///   C_k     = (c_{k-1} - c_{k+1}) / (4k),   0 < k < d-1
///   C_{d-1} = c_{d-2} / (4(d-1))
std::vector<double> integrate_coefficients(std::span<const double> raw);

/// C_0 pinning the assembled curve to the point forecast.
///   median: C_0 = 2y - 2 sum_{even k>0} (-1)^{k/2} C_k     (so q(0.5) = y)
///   mean:   C_0 = 2y - 4 sum_{odd k} C_k / (k^2 - 4)
/// Reads C[1..]; C[0] is ignored.
double constrain_c0(double point_forecast, std::span<const double> coeffs, ConstraintKind kind);

/// Phi(z) = C_0 / 2 + sum_{k>=1} C_k T_k(z) with z = 2 tau - 1.
double eval_quantile(double c0, std::span<const double> coeffs, double tau);

/// Chebyshev series value at z (Clenshaw), halving the constant term.
double chebyshev_series(std::span<const double> coeffs, double z);

/// Integrated coefficients of the values sampled at the d roots, rescaled so
/// that the assembled series is the antiderivative in z of the interpolant.
/// Entry 0 is zero.
std::vector<double> antiderivative_coefficients(std::span<const double> values_at_roots);

/// Linear map from integrand values at the roots to q(tau) - point forecast,
/// for a fixed tau and constraint. q(tau) = y + sum_j w[j] values[j].
std::vector<double> quantile_weights(int d, double tau, ConstraintKind kind);

}  // namespace hmix
