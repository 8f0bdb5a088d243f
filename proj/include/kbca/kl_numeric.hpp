#pragma once

#include <cmath>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "kbca/errors.hpp"

namespace kbca {

/// KL(Weibull(k, lambda) || Gamma(alpha, rate beta)) by adaptive
/// quadrature, with no reference to the closed form. Substituting
/// u = (x / lambda)^k turns the Weibull expectation into
/// integral_0^inf e^{-u} (log q - log p)(x(u)) du, a smooth decaying
/// integrand that exp-sinh quadrature handles including the integrable
/// log singularity at u = 0.
inline double kl_weibull_gamma_numeric(double k, double lam, double alpha, double beta) {
    if (!(k > 0.0) || !(lam > 0.0) || !(alpha > 0.0) || !(beta > 0.0))
        throw NumericError("kl_weibull_gamma_numeric: parameters must be strictly positive");
    const double log_k = std::log(k);
    const double log_lam = std::log(lam);
    const double lg_alpha = std::lgamma(alpha);
    const double log_beta = std::log(beta);
    auto integrand = [&](double u) {
        double log_u = std::log(u);
        double log_x = log_lam + log_u / k;
        double log_q = log_k - log_lam + (k - 1.0) / k * log_u - u;
        double x = std::exp(log_x);
        double log_p = alpha * log_beta + (alpha - 1.0) * log_x - beta * x - lg_alpha;
        return std::exp(-u) * (log_q - log_p);
    };
    boost::math::quadrature::exp_sinh<double> integrator;
    double err = 0.0;
    double kl = integrator.integrate(integrand, 1e-12, &err);
    return kl;
}

} // namespace kbca
