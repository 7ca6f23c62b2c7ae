// Copyright 2026 The Memba Authors
// SPDX-License-Identifier: Apache-2.0
//
// Numerical verification of the gated-output expansion
//
//   E[L(y (*) g(u))] = L(y (*) g(u_mean)) + R(y, u_mean) + O(||eps||^3)
//   R = grad L . (1/2 y (*) g''(u_mean) (*) sigma^2)
//       + 1/2 sum_i (y_i g'(u_mean_i))^2 H_ii sigma_i^2
//   R_quadratic <= (gamma/2) * lambda_max * eps^2,
//       gamma = sum_i (y_i g'_i)^2 sigma_i^2 / eps^2,  eps^2 = sum_i sigma_i^2
//
// Membrane fluctuations are independent per dimension, zero mean, variance
// sigma_i^2, truncated so u_mean + eps <= v_th and re-centered. The Monte
// Carlo estimate subtracts an exactly-integrable quadratic control variate,
// so the O(||eps||^3) residual stays measurable down to tiny scales.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "memba/random.hpp"
#include "memba/tensor.hpp"

namespace memba {

// ---------------------------------------------------------------------------
// Gate functions (applied element-wise to the membrane)
// ---------------------------------------------------------------------------

enum class GateKind { silu, identity };

struct Gate {
  GateKind kind = GateKind::silu;

  double g(double u) const {
    if (kind == GateKind::identity) return u;
    double s = 1.0 / (1.0 + std::exp(-u));
    return u * s;
  }
  double g1(double u) const {
    if (kind == GateKind::identity) return 1.0;
    double s = 1.0 / (1.0 + std::exp(-u));
    return s * (1.0 + u * (1.0 - s));
  }
  double g2(double u) const {
    if (kind == GateKind::identity) return 0.0;
    double s = 1.0 / (1.0 + std::exp(-u));
    return s * (1.0 - s) * (2.0 + u * (1.0 - 2.0 * s));
  }
};

// ---------------------------------------------------------------------------
// Loss models with exact gradient and Hessian (small output dims)
// ---------------------------------------------------------------------------

struct LossModel {
  virtual ~LossModel() = default;
  virtual double value(const Eigen::VectorXd& v) const = 0;
  virtual Eigen::VectorXd grad(const Eigen::VectorXd& v) const = 0;
  virtual Eigen::MatrixXd hessian(const Eigen::VectorXd& v) const = 0;
};

// L(v) = 1/2 (v - t)' M (v - t), M symmetric PSD.
struct QuadraticLoss final : LossModel {
  Eigen::MatrixXd m;
  Eigen::VectorXd target;
  QuadraticLoss(Eigen::MatrixXd m_in, Eigen::VectorXd t) : m(std::move(m_in)), target(std::move(t)) {}
  double value(const Eigen::VectorXd& v) const override {
    Eigen::VectorXd d = v - target;
    return 0.5 * d.dot(m * d);
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& v) const override { return m * (v - target); }
  Eigen::MatrixXd hessian(const Eigen::VectorXd&) const override { return m; }
};

// L(v) = logsumexp(v) - v_target; Hessian = diag(p) - p p'.
struct SoftmaxCrossEntropyLoss final : LossModel {
  std::int64_t target_class;
  explicit SoftmaxCrossEntropyLoss(std::int64_t t) : target_class(t) {}
  Eigen::VectorXd softmax(const Eigen::VectorXd& v) const {
    Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp();
    return e / e.sum();
  }
  double value(const Eigen::VectorXd& v) const override {
    double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum()) - v(target_class);
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& v) const override {
    Eigen::VectorXd p = softmax(v);
    p(target_class) -= 1.0;
    return p;
  }
  Eigen::MatrixXd hessian(const Eigen::VectorXd& v) const override {
    Eigen::VectorXd p = softmax(v);
    return Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
  }
};

// ---------------------------------------------------------------------------
// Truncated, re-centered, variance-calibrated fluctuation laws
// ---------------------------------------------------------------------------

enum class FluctuationLaw { truncated_gaussian, truncated_uniform };

// One dimension's law: upper-truncated at `bound` (= v_th - u_mean_i, >= 0),
// re-centered to zero mean, pre-truncation scale calibrated so the final
// variance equals sigma^2 exactly. Central moments are analytic.
struct TruncatedLaw {
  FluctuationLaw law = FluctuationLaw::truncated_gaussian;
  double sigma = 0.0;   // target standard deviation
  double bound = 0.0;   // truncation point relative to the mean membrane
  double pre_scale = 0.0;
  double offset = 0.0;  // E[z] before re-centering
  double var = 0.0, mu3 = 0.0, mu4 = 0.0;

  static double norm_pdf(double x) { return 0.3989422804014326779 * std::exp(-0.5 * x * x); }
  static double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

  // Raw moments of N(0,1) truncated to (-inf, beta].
  static void std_trunc_moments(double beta, double& m1, double& m2, double& m3, double& m4) {
    if (beta > 40.0) {  // truncation numerically inactive
      m1 = 0.0;
      m2 = 1.0;
      m3 = 0.0;
      m4 = 3.0;
      return;
    }
    double lam = norm_pdf(beta) / norm_cdf(beta);
    m1 = -lam;
    m2 = 1.0 - beta * lam;
    m3 = -lam * (beta * beta + 2.0);
    m4 = 3.0 - lam * (3.0 * beta + beta * beta * beta);
  }

  static void central_from_raw(double m1, double m2, double m3, double m4, double& var,
                               double& mu3, double& mu4) {
    var = m2 - m1 * m1;
    mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1;
    mu4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1 * m1 * m1 * m1;
  }

  static TruncatedLaw calibrate(FluctuationLaw kind, double sigma, double bound) {
    require(bound >= 0.0, "TruncatedLaw: mean membrane must not exceed the threshold");
    TruncatedLaw t;
    t.law = kind;
    t.sigma = sigma;
    t.bound = bound;
    if (sigma <= 0.0) return t;  // degenerate: eps == 0
    if (kind == FluctuationLaw::truncated_gaussian) {
      auto var_of = [&](double s) {
        double m1, m2, m3, m4, v, q3, q4;
        std_trunc_moments(bound / s, m1, m2, m3, m4);
        central_from_raw(m1, m2, m3, m4, v, q3, q4);
        return s * s * v;
      };
      double lo = sigma, hi = sigma / std::sqrt(1.0 - 2.0 / 3.14159265358979323846) + 1e-12;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (var_of(mid) < sigma * sigma ? lo : hi) = mid;
      }
      t.pre_scale = 0.5 * (lo + hi);
      double m1, m2, m3, m4;
      std_trunc_moments(bound / t.pre_scale, m1, m2, m3, m4);
      double s = t.pre_scale;
      central_from_raw(s * m1, s * s * m2, s * s * s * m3, s * s * s * s * m4, t.var, t.mu3,
                       t.mu4);
      t.offset = s * m1;
    } else {
      // Uniform on [-a, min(a, bound)] stays uniform; symmetric about its center.
      double a_untrunc = std::sqrt(3.0) * sigma;
      double a = bound >= a_untrunc ? a_untrunc : 2.0 * std::sqrt(3.0) * sigma - bound;
      double top = std::min(a, bound);
      double w = a + top;
      t.pre_scale = a;
      t.offset = 0.5 * (top - a);
      t.var = w * w / 12.0;
      t.mu3 = 0.0;
      t.mu4 = w * w * w * w / 80.0;
    }
    return t;
  }

  double sample(Rng& rng) const {
    if (sigma <= 0.0) return 0.0;
    if (law == FluctuationLaw::truncated_gaussian) {
      double beta = bound / pre_scale;
      double g;
      do {
        g = rng.normal();
      } while (g > beta);
      return pre_scale * g - offset;
    }
    double top = std::min(pre_scale, bound);
    double z = rng.uniform(-pre_scale, top);
    return z - offset;
  }
};

// ---------------------------------------------------------------------------
// Theorem verification
// ---------------------------------------------------------------------------

struct TheoremInstance {
  Eigen::VectorXd y;       // block outputs
  Eigen::VectorXd u_bar;   // mean membrane, <= v_th
  double v_th = 1.0;
  Gate gate;
  std::shared_ptr<LossModel> loss;
};

struct TheoremScaleResult {
  double scale = 0.0;
  double empirical_expected_loss = 0.0;
  double r_term = 0.0;
  double residual = 0.0;
  double mc_stderr = 0.0;
  double gamma = 0.0;
  double lambda_max = 0.0;
  double eps_sq = 0.0;
  double bound_margin = 0.0;     // (gamma/2) lambda_max eps^2 + |grad slack| - R
  double grad_term = 0.0;        // the lower-order slack term of R
};

struct TheoremReport {
  std::vector<double> epsilon_scales;
  double reference_loss = 0.0;  // L(y (*) g(u_bar))
  std::vector<TheoremScaleResult> per_scale;
  double residual_slope = 0.0;  // log-log fit of |residual| vs scale
  bool slope_valid = false;
};

// sigma_i = scale * (|u_bar_i| + 0.1): relative scale with a floor.
inline std::vector<double> fluctuation_sigmas(const Eigen::VectorXd& u_bar, double scale) {
  std::vector<double> s(static_cast<std::size_t>(u_bar.size()));
  for (Eigen::Index i = 0; i < u_bar.size(); ++i)
    s[static_cast<std::size_t>(i)] = scale * (std::abs(u_bar(i)) + 0.1);
  return s;
}

inline TheoremReport theorem_check(const TheoremInstance& inst, const std::vector<double>& scales,
                                   std::int64_t samples, std::uint64_t seed,
                                   FluctuationLaw law = FluctuationLaw::truncated_gaussian) {
  require(static_cast<bool>(inst.loss), "theorem_check: loss model required");
  require(samples >= 100, "theorem_check: at least 100 Monte-Carlo samples required");
  require(inst.y.size() == inst.u_bar.size(), "theorem_check: y and u_bar sizes differ");
  const Eigen::Index d = inst.y.size();
  for (Eigen::Index i = 0; i < d; ++i)
    require(inst.u_bar(i) <= inst.v_th, "theorem_check: mean membrane exceeds threshold");

  TheoremReport rep;
  rep.epsilon_scales = scales;

  // Reference point y* = y (*) g(u_bar) and its exact local model.
  Eigen::VectorXd gu(d), g1(d), g2v(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    gu(i) = inst.gate.g(inst.u_bar(i));
    g1(i) = inst.gate.g1(inst.u_bar(i));
    g2v(i) = inst.gate.g2(inst.u_bar(i));
  }
  Eigen::VectorXd y_star = inst.y.cwiseProduct(gu);
  rep.reference_loss = inst.loss->value(y_star);
  Eigen::VectorXd grad = inst.loss->grad(y_star);
  Eigen::MatrixXd hess = inst.loss->hessian(y_star);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
  double lambda_max = eig.eigenvalues().maxCoeff();

  std::uint64_t scale_stream = 0;
  for (double scale : scales) {
    TheoremScaleResult res;
    res.scale = scale;
    res.lambda_max = lambda_max;
    auto sigmas = fluctuation_sigmas(inst.u_bar, scale);
    std::vector<TruncatedLaw> laws;
    laws.reserve(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i)
      laws.push_back(TruncatedLaw::calibrate(law, sigmas[static_cast<std::size_t>(i)],
                                             inst.v_th - inst.u_bar(i)));

    // Closed-form pieces.
    double eps_sq = 0.0, gamma_num = 0.0;
    Eigen::VectorXd mean_dy = Eigen::VectorXd::Zero(d);  // E[quadratic-model delta y]
    double quad_expect = 0.0;                            // E[dy' H dy] under the model
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto& tl = laws[static_cast<std::size_t>(i)];
      double yg1 = inst.y(i) * g1(i);
      double yg2 = inst.y(i) * g2v(i);
      eps_sq += tl.var;
      gamma_num += yg1 * yg1 * tl.var;
      mean_dy(i) = 0.5 * yg2 * tl.var;
      quad_expect += hess(i, i) * (yg1 * yg1 * tl.var + yg1 * yg2 * tl.mu3 +
                                   0.25 * yg2 * yg2 * tl.mu4);
      for (Eigen::Index j = 0; j < d; ++j)
        if (j != i) quad_expect += hess(i, j) * mean_dy_pending(yg2, tl.var) * 0.0;  // see below
    }
    // Off-diagonal: E[dy_i dy_j] = E[dy_i] E[dy_j] by independence.
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        if (i != j) quad_expect += hess(i, j) * mean_dy(i) * mean_dy(j);

    res.eps_sq = eps_sq;
    res.gamma = eps_sq > 0 ? gamma_num / eps_sq : 0.0;

    // R per the closed form: gradient term plus diagonal quadratic term.
    double grad_term = 0.0, quad_term = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto& tl = laws[static_cast<std::size_t>(i)];
      grad_term += grad(i) * 0.5 * inst.y(i) * g2v(i) * tl.var;
      double yg1 = inst.y(i) * g1(i);
      quad_term += 0.5 * yg1 * yg1 * hess(i, i) * tl.var;
    }
    res.grad_term = grad_term;
    res.r_term = grad_term + quad_term;

    // E[Q] for the control variate Q = L* + grad.dy + 1/2 dy'H dy.
    double e_q = rep.reference_loss + grad.dot(mean_dy) + 0.5 * quad_expect;

    // Monte Carlo over the residual integrand L(y (*) g(u+eps)) - Q(eps).
    Rng rng(seed, 0x7Eu + scale_stream++, 0);
    double acc = 0.0, acc_sq = 0.0;
    Eigen::VectorXd eps(d), yhat(d), dy(d);
    for (std::int64_t s = 0; s < samples; ++s) {
      for (Eigen::Index i = 0; i < d; ++i) eps(i) = laws[static_cast<std::size_t>(i)].sample(rng);
      for (Eigen::Index i = 0; i < d; ++i) {
        yhat(i) = inst.y(i) * inst.gate.g(inst.u_bar(i) + eps(i));
        dy(i) = inst.y(i) * (g1(i) * eps(i) + 0.5 * g2v(i) * eps(i) * eps(i));
      }
      double q = rep.reference_loss + grad.dot(dy) + 0.5 * dy.dot(hess * dy);
      double v = inst.loss->value(yhat) - q;
      acc += v;
      acc_sq += v * v;
    }
    double mean_lq = acc / static_cast<double>(samples);
    double var_lq =
        std::max(0.0, acc_sq / static_cast<double>(samples) - mean_lq * mean_lq);
    res.mc_stderr = std::sqrt(var_lq / static_cast<double>(samples));
    res.empirical_expected_loss = mean_lq + e_q;
    res.residual = res.empirical_expected_loss - rep.reference_loss - res.r_term;

    // Bound: the quadratic part of R obeys (gamma/2) lambda_max eps^2; the
    // gradient term is lower-order slack.
    double bound = 0.5 * res.gamma * lambda_max * eps_sq;
    res.bound_margin = bound + std::abs(grad_term) - res.r_term;
    rep.per_scale.push_back(res);
  }

  // Log-log slope of |residual| against scale.
  std::vector<double> xs, ys;
  for (const auto& r : rep.per_scale)
    if (r.scale > 0 && std::abs(r.residual) > 0) {
      xs.push_back(std::log(r.scale));
      ys.push_back(std::log(std::abs(r.residual)));
    }
  if (xs.size() >= 2) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      num += (xs[i] - mx) * (ys[i] - my);
      den += (xs[i] - mx) * (xs[i] - mx);
    }
    if (den > 0) {
      rep.residual_slope = num / den;
      rep.slope_valid = std::isfinite(rep.residual_slope);
    }
  }
  return rep;
}

// The bound holds when every scale's margin is nonnegative (up to roundoff).
inline bool r_bound_check(const TheoremReport& rep, double tol = 1e-12) {
  for (const auto& r : rep.per_scale)
    if (r.bound_margin < -tol * std::max(1.0, std::abs(r.r_term))) return false;
  return true;
}

// Randomized small instances. A fraction of membrane dimensions sit exactly
// at the threshold, where the boundedness constraint makes fluctuations
// one-sided; that skew is what renders the cubic remainder measurable.
inline TheoremInstance random_theorem_instance(std::int64_t dim, Rng& rng, bool saturate_some,
                                               bool quadratic_loss) {
  TheoremInstance inst;
  inst.v_th = 1.0;
  inst.y.resize(dim);
  inst.u_bar.resize(dim);
  for (std::int64_t i = 0; i < dim; ++i) {
    double mag = rng.uniform(0.4, 1.4);
    inst.y(i) = rng.uniform() < 0.5 ? -mag : mag;
    bool saturated = saturate_some && (i == 0 || rng.uniform() < 0.5);
    inst.u_bar(i) = saturated ? inst.v_th : rng.uniform(0.1, 0.8) * inst.v_th;
  }
  inst.gate.kind = GateKind::silu;
  if (quadratic_loss) {
    Eigen::MatrixXd a(dim, dim);
    for (std::int64_t i = 0; i < dim; ++i)
      for (std::int64_t j = 0; j < dim; ++j) a(i, j) = rng.normal();
    Eigen::MatrixXd m = a.transpose() * a / static_cast<double>(dim) +
                        0.2 * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::VectorXd t(dim);
    for (std::int64_t i = 0; i < dim; ++i) t(i) = rng.normal();
    inst.loss = std::make_shared<QuadraticLoss>(m, t);
  } else {
    inst.loss = std::make_shared<SoftmaxCrossEntropyLoss>(rng.uniform_int(0, dim - 1));
  }
  return inst;
}

}  // namespace memba
