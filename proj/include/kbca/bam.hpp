#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "kbca/config.hpp"
#include "kbca/rng.hpp"
#include "kbca/tape.hpp"
#include "kbca/tensor.hpp"

namespace kbca {

/// Euler-Mascheroni constant.
inline constexpr double kEulerGamma = 0.5772156649015329;

/// Floor added to attention weights before deriving the Weibull scale,
/// keeping log(lambda) finite for near-zero weights.
inline constexpr double kLambdaFloor = 1e-8;

namespace detail {

/// Terms of the closed-form KL(Weibull(k, lambda) || Gamma(alpha, beta)).
/// The mask exists so the selfcheck mutation test can knock out a single
/// term and confirm the integration-oracle grid catches it.
enum KlTerm : unsigned {
    kKlGammaAlphaOverK = 1u << 0, // gamma*alpha/k
    kKlAlphaLogLambda = 1u << 1,  // -alpha*log(lambda)
    kKlLogK = 1u << 2,            // +log(k)
    kKlBetaLambdaGamma = 1u << 3, // +beta*lambda*Gamma(1+1/k)
    kKlMinusGamma = 1u << 4,      // -gamma
    kKlMinusOne = 1u << 5,        // -1
    kKlAlphaLogBeta = 1u << 6,    // -alpha*log(beta)
    kKlLogGammaAlpha = 1u << 7,   // +log(Gamma(alpha))
    kKlAllTerms = 0xFFu,
};

inline double kl_pointwise(double k, double lam, double alpha, double beta,
                           unsigned mask = kKlAllTerms) {
    if (!(k > 0.0) || !(lam > 0.0) || !(alpha > 0.0) || !(beta > 0.0))
        throw NumericError("kl_weibull_gamma: parameters must be strictly positive");
    double v = 0.0;
    if (mask & kKlGammaAlphaOverK) v += kEulerGamma * alpha / k;
    if (mask & kKlAlphaLogLambda) v -= alpha * std::log(lam);
    if (mask & kKlLogK) v += std::log(k);
    if (mask & kKlBetaLambdaGamma) v += beta * lam * std::tgamma(1.0 + 1.0 / k);
    if (mask & kKlMinusGamma) v -= kEulerGamma;
    if (mask & kKlMinusOne) v -= 1.0;
    if (mask & kKlAlphaLogBeta) v -= alpha * std::log(beta);
    if (mask & kKlLogGammaAlpha) v += std::lgamma(alpha);
    return v;
}

} // namespace detail

/// Closed-form KL for a single (k, lambda, alpha, beta) point.
inline double kl_weibull_gamma_scalar(double k, double lam, double alpha, double beta,
                                      unsigned term_mask = detail::kKlAllTerms) {
    return detail::kl_pointwise(k, lam, alpha, beta, term_mask);
}

/// Row-stochastic knowledge prior: P = row-softmax of the outer product
/// of softened query and key intensities. The query-side intensity acts
/// as a per-row temperature over the key-side intensities.
inline Tensor prior_map(const std::vector<double>& i_q_soft, const std::vector<double>& i_k_soft) {
    std::size_t nq = i_q_soft.size(), nk = i_k_soft.size();
    if (nq == 0 || nk == 0) throw ShapeError("prior_map: empty intensity vector");
    Tensor p({nq, nk});
    for (std::size_t q = 0; q < nq; ++q) {
        double mx = -1e300;
        for (std::size_t c = 0; c < nk; ++c) {
            p(q, c) = i_q_soft[q] * i_k_soft[c];
            mx = std::max(mx, p(q, c));
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < nk; ++c) {
            p(q, c) = std::exp(p(q, c) - mx);
            sum += p(q, c);
        }
        for (std::size_t c = 0; c < nk; ++c) p(q, c) /= sum;
    }
    return p;
}

/// Gamma prior concentration from a prior map: alpha = alpha_scale * n_k * P.
/// The n_k factor makes a uniform P yield alpha == alpha_scale regardless
/// of sequence length.
inline Tensor gamma_alpha(const Tensor& prior, double alpha_scale) {
    if (!(alpha_scale > 0.0)) throw ConfigError("gamma_alpha: alpha_scale must be > 0");
    Tensor out = prior;
    double s = alpha_scale * static_cast<double>(prior.cols());
    for (auto& x : out.data()) x *= s;
    return out;
}

inline Var gamma_alpha(Var prior, double alpha_scale) {
    if (!(alpha_scale > 0.0)) throw ConfigError("gamma_alpha: alpha_scale must be > 0");
    return scale(prior, alpha_scale * static_cast<double>(prior.tape->value(prior).cols()));
}

/// Uniform(0,1) draws shaped like `shape`, clamped away from {0, 1}.
inline Tensor draw_uniform_noise(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor eps(shape);
    for (auto& x : eps.data()) x = rng.uniform_clamped();
    return eps;
}

/// Reparameterized Weibull draw: S = lambda * (-log(1 - eps))^(1/k).
/// With eps fixed, S is a deterministic differentiable function of lambda.
inline Var sample_weibull(Var lam, double k, const Tensor& eps) {
    const Tensor& lv = lam.tape->value(lam);
    require_same_shape(lv, eps, "sample_weibull");
    Tensor factor = eps;
    for (auto& x : factor.data()) x = std::pow(-std::log(1.0 - x), 1.0 / k);
    return mul_const(lam, factor);
}

inline Var sample_weibull(Var lam, double k, Rng& rng) {
    return sample_weibull(lam, k, draw_uniform_noise(lam.tape->value(lam).shape(), rng));
}

/// Plain (off-tape) draw for Monte-Carlo checks.
inline double sample_weibull_scalar(double lam, double k, Rng& rng) {
    double eps = rng.uniform_clamped();
    return lam * std::pow(-std::log(1.0 - eps), 1.0 / k);
}

/// Weibull scale chosen so the posterior mean equals the deterministic
/// attention weight: lambda = (M + floor) / Gamma(1 + 1/k).
inline Var weibull_lambda(Var att_map, double k) {
    return scale(add_scalar(att_map, kLambdaFloor), 1.0 / std::tgamma(1.0 + 1.0 / k));
}

/// Stochastic attention map. Training draws a reparameterized Weibull
/// sample per weight and renormalizes each row; inference substitutes the
/// posterior expectation lambda * Gamma(1 + 1/k) = M + floor, so the
/// deterministic map is recovered up to the floor.
inline Var bam_attention(Var att_map, Mode mode, double k, Rng* rng,
                         const Tensor* frozen_eps = nullptr) {
    if (mode == Mode::Infer) return row_normalize(add_scalar(att_map, kLambdaFloor));
    Var lam = weibull_lambda(att_map, k);
    Var s = frozen_eps ? sample_weibull(lam, k, *frozen_eps) : sample_weibull(lam, k, *rng);
    return row_normalize(s);
}

/// Mean over entries of the closed-form KL(Weibull(k, lambda_ij) ||
/// Gamma(alpha_ij, beta)), differentiable in both lambda and alpha.
inline Var kl_weibull_gamma(Var lam, Var alpha, double k, double beta,
                            unsigned term_mask = detail::kKlAllTerms) {
    Tape& t = *lam.tape;
    const Tensor &lv = t.value(lam), &av = t.value(alpha);
    require_same_shape(lv, av, "kl_weibull_gamma");
    std::size_t n = lv.numel();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        sum += detail::kl_pointwise(k, lv[i], av[i], beta, term_mask);
    Tensor out({1, 1}, {sum / static_cast<double>(n)});
    bool need = detail::rg(lam) || detail::rg(alpha);
    double gamma_1k = std::tgamma(1.0 + 1.0 / k);
    return t.push(std::move(out), need,
                  [lam, alpha, k, beta, gamma_1k, n, term_mask](Tape& tp, const Tensor& g) {
                      const Tensor &lv2 = tp.value(lam), &av2 = tp.value(alpha);
                      double gn = g[0] / static_cast<double>(n);
                      if (tp.requires_grad(lam)) {
                          Tensor& gl = tp.grad_mut(lam);
                          for (std::size_t i = 0; i < gl.numel(); ++i) {
                              double d = 0.0;
                              if (term_mask & detail::kKlAlphaLogLambda) d -= av2[i] / lv2[i];
                              if (term_mask & detail::kKlBetaLambdaGamma) d += beta * gamma_1k;
                              gl[i] += gn * d;
                          }
                      }
                      if (tp.requires_grad(alpha)) {
                          Tensor& ga = tp.grad_mut(alpha);
                          for (std::size_t i = 0; i < ga.numel(); ++i) {
                              double d = 0.0;
                              if (term_mask & detail::kKlGammaAlphaOverK) d += kEulerGamma / k;
                              if (term_mask & detail::kKlAlphaLogLambda) d -= std::log(lv2[i]);
                              if (term_mask & detail::kKlAlphaLogBeta) d -= std::log(beta);
                              if (term_mask & detail::kKlLogGammaAlpha)
                                  d += boost::math::digamma(av2[i]);
                              ga[i] += gn * d;
                          }
                      }
                  });
}

} // namespace kbca
