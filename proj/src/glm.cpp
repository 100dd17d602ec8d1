#include "svyacd/glm.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <limits>

#include "svyacd/errors.hpp"
#include "svyacd/mathutil.hpp"

namespace svyacd {

namespace {

constexpr int kMaxIterLogistic = 100;
constexpr int kMaxIterBeta = 200;
constexpr double kScoreTol = 1e-8;
constexpr double kRelTol = 1e-8;
constexpr double kSeparationBound = 30.0;  // expit saturates numerically past this
constexpr double kPhiCap = 1e8;

std::string column_label(int j, const std::vector<std::string>& names) {
  if (j == 0) return "(intercept)";
  if (!names.empty() && j - 1 < static_cast<int>(names.size())) return names[j - 1];
  return "x" + std::to_string(j);
}

void check_dims(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                const Eigen::VectorXd& w, const char* who) {
  if (x.rows() != y.size() || w.size() != y.size()) {
    throw DataError(std::string(who) + ": x, response and weights must have equal row counts");
  }
  if (y.size() == 0) throw DataError(std::string(who) + ": empty input");
  for (int i = 0; i < w.size(); ++i) {
    if (!(w[i] >= 0.0) || !std::isfinite(w[i])) {
      throw DataError(std::string(who) + ": weights must be nonnegative and finite");
    }
  }
}

// Column-pivoted QR of the sqrt(w)-scaled design; throws when rank deficient.
Eigen::ColPivHouseholderQR<Eigen::MatrixXd> weighted_qr(
    const Eigen::MatrixXd& x1, const Eigen::VectorXd& w,
    const std::vector<std::string>& names, const char* who) {
  Eigen::MatrixXd xs = w.array().sqrt().matrix().asDiagonal() * x1;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  const int rank = static_cast<int>(qr.rank());
  if (rank < x1.cols()) {
    const auto& perm = qr.colsPermutation().indices();
    std::vector<std::string> offenders;
    for (int k = rank; k < x1.cols(); ++k) {
      offenders.push_back(column_label(perm[k], names));
    }
    std::string msg = std::string(who) + ": weighted design matrix is rank deficient; "
                      "collinear columns:";
    for (const auto& c : offenders) msg += " " + c;
    throw RankDeficientError(msg, offenders);
  }
  return qr;
}

// Per-column score tolerance, scale free in the weights and covariates.
Eigen::VectorXd score_scales(const Eigen::MatrixXd& x1) {
  Eigen::VectorXd s(x1.cols());
  for (int j = 0; j < x1.cols(); ++j) {
    s[j] = std::max(1.0, x1.col(j).cwiseAbs().maxCoeff());
  }
  return s;
}

double weighted_logistic_loglik(const Eigen::MatrixXd& x1, const Eigen::VectorXd& t,
                                const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = x1 * beta;
  double ll = 0.0;
  for (int i = 0; i < t.size(); ++i) {
    ll += w[i] * (t[i] * eta[i] - log1pexp(eta[i]));
  }
  return ll;
}

double beta_glm_loglik(const Eigen::MatrixXd& x1, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& w, const Eigen::VectorXd& beta,
                       double phi) {
  const Eigen::VectorXd eta = x1 * beta;
  double ll = 0.0;
  for (int i = 0; i < u.size(); ++i) {
    const double mu = clamp_unit_open(expit(eta[i]));
    const double t1 = mu * phi;
    const double t2 = (1.0 - mu) * phi;
    ll += w[i] * (std::lgamma(phi) - std::lgamma(t1) - std::lgamma(t2) +
                  (t1 - 1.0) * std::log(u[i]) + (t2 - 1.0) * std::log1p(-u[i]));
  }
  return ll;
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::GaussianIdentity: return "gaussian-identity";
    case Family::BinomialLogit: return "binomial-logit";
    case Family::BetaLogit: return "beta-logit";
  }
  return "?";
}

Eigen::MatrixXd add_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd x1(x.rows(), x.cols() + 1);
  x1.col(0).setOnes();
  x1.rightCols(x.cols()) = x;
  return x1;
}

Eigen::VectorXd expit_linpred(const Eigen::MatrixXd& x1, const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = x1 * beta;
  for (int i = 0; i < eta.size(); ++i) eta[i] = expit(eta[i]);
  return eta;
}

GlmFit fit_wls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
               const Eigen::VectorXd& w, const std::vector<std::string>& names) {
  check_dims(x, y, w, "fit_wls");
  const double sw = w.sum();
  if (!(sw > 0.0)) throw DataError("fit_wls: all weights are zero");

  const Eigen::MatrixXd x1 = add_intercept(x);
  auto qr = weighted_qr(x1, w, names, "fit_wls");
  const Eigen::VectorXd ys = w.array().sqrt() * y.array();
  GlmFit fit;
  fit.family = Family::GaussianIdentity;
  fit.coef = qr.solve(ys);
  fit.converged = true;
  fit.iterations = 1;
  fit.fit_weights = w;

  const Eigen::VectorXd resid = y - x1 * fit.coef;
  const double rss = (w.array() * resid.array().square()).sum();
  const double denom = sw - static_cast<double>(x1.cols());
  fit.dispersion_or_precision =
      denom > 0.0 ? rss / denom : std::numeric_limits<double>::quiet_NaN();
  return fit;
}

GlmFit fit_weighted_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                             const Eigen::VectorXd& w,
                             const std::vector<std::string>& names) {
  check_dims(x, t, w, "fit_weighted_logistic");
  double w1 = 0.0, w0 = 0.0;
  for (int i = 0; i < t.size(); ++i) {
    if (t[i] == 1.0) {
      w1 += w[i];
    } else if (t[i] == 0.0) {
      w0 += w[i];
    } else {
      throw DataError("fit_weighted_logistic: response must be 0 or 1 (row " +
                      std::to_string(i) + ")");
    }
  }
  if (!(w1 > 0.0) || !(w0 > 0.0)) {
    throw DataError("fit_weighted_logistic: both response classes need positive total weight");
  }

  const Eigen::MatrixXd x1 = add_intercept(x);
  weighted_qr(x1, w, names, "fit_weighted_logistic");  // rank check only
  const double sw = w.sum();
  const Eigen::VectorXd scales = score_scales(x1);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x1.cols());
  double ll = weighted_logistic_loglik(x1, t, w, beta);

  auto score_ok = [&](const Eigen::VectorXd& s) {
    for (int j = 0; j < s.size(); ++j) {
      if (std::abs(s[j]) > kScoreTol * sw * scales[j]) return false;
    }
    return true;
  };

  for (int iter = 1; iter <= kMaxIterLogistic; ++iter) {
    const Eigen::VectorXd eta = x1 * beta;
    Eigen::VectorXd p(eta.size()), ww(eta.size()), z(eta.size());
    for (int i = 0; i < eta.size(); ++i) {
      p[i] = expit(eta[i]);
      const double v = std::max(p[i] * (1.0 - p[i]), 1e-10);
      ww[i] = w[i] * v;
      z[i] = eta[i] + (t[i] - p[i]) / v;
    }
    Eigen::MatrixXd xs = ww.array().sqrt().matrix().asDiagonal() * x1;
    Eigen::VectorXd zs = ww.array().sqrt() * z.array();
    const Eigen::VectorXd proposal = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(xs).solve(zs);
    Eigen::VectorXd delta = proposal - beta;

    double lambda = 1.0;
    Eigen::VectorXd cand = beta + delta;
    double ll_cand = weighted_logistic_loglik(x1, t, w, cand);
    int halvings = 0;
    while (ll_cand < ll && halvings < 40) {
      lambda *= 0.5;
      cand = beta + lambda * delta;
      ll_cand = weighted_logistic_loglik(x1, t, w, cand);
      ++halvings;
    }
    const double rel_change = (cand - beta).cwiseAbs().maxCoeff() /
                              (1.0 + cand.cwiseAbs().maxCoeff());
    beta = cand;
    ll = ll_cand;

    const Eigen::VectorXd score =
        x1.transpose() * (w.array() * (t - expit_linpred(x1, beta)).array()).matrix();
    const bool ok = score_ok(score);
    if (ok && rel_change < kRelTol) {
      GlmFit fit;
      fit.family = Family::BinomialLogit;
      fit.coef = beta;
      fit.converged = true;
      fit.iterations = iter;
      fit.dispersion_or_precision = 1.0;
      fit.fit_weights = w;
      return fit;
    }
    if (!ok && beta.cwiseAbs().maxCoeff() > kSeparationBound) {
      throw SeparationError(
          "fit_weighted_logistic: complete or quasi-complete separation detected "
          "(|coef| exceeds " + std::to_string(kSeparationBound) +
          " on the logit scale with a non-vanishing score)");
    }
  }
  throw ConvergenceError("fit_weighted_logistic: no convergence after " +
                         std::to_string(kMaxIterLogistic) + " iterations",
                         beta);
}

GlmFit fit_beta_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& u,
                    const Eigen::VectorXd& w, const std::vector<std::string>& names) {
  check_dims(x, u, w, "fit_beta_glm");
  for (int i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0 && u[i] < 1.0)) {
      throw DataError("fit_beta_glm: responses must lie strictly inside (0,1); "
                      "clamp to [eps, 1-eps] before fitting (row " +
                      std::to_string(i) + " has " + std::to_string(u[i]) + ")");
    }
  }
  const double sw = w.sum();
  if (!(sw > 0.0)) throw DataError("fit_beta_glm: all weights are zero");

  const Eigen::MatrixXd x1 = add_intercept(x);
  const Eigen::VectorXd scales = score_scales(x1);
  const int p = static_cast<int>(x1.cols());

  // Start from a linear fit on the logit scale plus a moment estimate of phi.
  Eigen::VectorXd ustar(u.size());
  for (int i = 0; i < u.size(); ++i) ustar[i] = logit(u[i]);
  auto qr = weighted_qr(x1, w, names, "fit_beta_glm");
  Eigen::VectorXd beta = qr.solve((w.array().sqrt() * ustar.array()).matrix());

  Eigen::VectorXd mu = expit_linpred(x1, beta);
  double v = 0.0, mvar = 0.0;
  for (int i = 0; i < u.size(); ++i) {
    const double m = clamp_unit_open(mu[i], 1e-6);
    v += w[i] * (u[i] - m) * (u[i] - m);
    mvar += w[i] * m * (1.0 - m);
  }
  v /= sw;
  mvar /= sw;
  double phi = std::clamp(mvar / std::max(v, 1e-14) - 1.0, 0.1, kPhiCap);

  double ll = beta_glm_loglik(x1, u, w, beta, phi);
  double uscale = 1.0;
  for (int i = 0; i < u.size(); ++i) {
    uscale = std::max(uscale, std::abs(std::log(u[i])) + std::abs(std::log1p(-u[i])));
  }

  for (int iter = 1; iter <= kMaxIterBeta; ++iter) {
    // Analytic score and expected information in (beta, phi).
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p + 1);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(p + 1, p + 1);
    mu = expit_linpred(x1, beta);
    const double dg_phi = boost::math::digamma(phi);
    const double tg_phi = boost::math::trigamma(phi);
    for (int i = 0; i < u.size(); ++i) {
      const double m = clamp_unit_open(mu[i]);
      const double t1 = m * phi, t2 = (1.0 - m) * phi;
      const double dmu = m * (1.0 - m);
      const double mustar = boost::math::digamma(t1) - boost::math::digamma(t2);
      const double r = logit(u[i]) - mustar;
      const double tg1 = boost::math::trigamma(t1), tg2 = boost::math::trigamma(t2);

      g.head(p) += (w[i] * phi * r * dmu) * x1.row(i).transpose();
      g[p] += w[i] * (dg_phi - m * boost::math::digamma(t1) -
                      (1.0 - m) * boost::math::digamma(t2) +
                      m * std::log(u[i]) + (1.0 - m) * std::log1p(-u[i]));

      const double kbb = w[i] * phi * phi * (tg1 + tg2) * dmu * dmu;
      K.topLeftCorner(p, p) += kbb * (x1.row(i).transpose() * x1.row(i));
      const double kbp = w[i] * phi * (m * tg1 - (1.0 - m) * tg2) * dmu;
      K.block(0, p, p, 1) += kbp * x1.row(i).transpose();
      K(p, p) += w[i] * (m * m * tg1 + (1.0 - m) * (1.0 - m) * tg2 - tg_phi);
    }
    K.block(p, 0, 1, p) = K.block(0, p, p, 1).transpose();

    const bool at_cap = phi >= kPhiCap;
    bool ok = true;
    for (int j = 0; j < p; ++j) {
      if (std::abs(g[j]) > kScoreTol * sw * scales[j] * std::max(1.0, phi)) ok = false;
    }
    const bool phi_ok = at_cap || std::abs(g[p]) <= kScoreTol * sw * uscale;

    Eigen::VectorXd step = K.ldlt().solve(g);
    if (!step.allFinite()) {
      Eigen::MatrixXd Kr = K + 1e-8 * K.diagonal().maxCoeff() *
                                    Eigen::MatrixXd::Identity(p + 1, p + 1);
      step = Kr.ldlt().solve(g);
    }
    if (at_cap) step[p] = std::min(step[p], 0.0);

    double lambda = 1.0;
    Eigen::VectorXd beta_cand = beta + step.head(p);
    double phi_cand = std::min(phi + step[p], kPhiCap);
    while (phi_cand <= 0.0) {
      lambda *= 0.5;
      phi_cand = std::min(phi + lambda * step[p], kPhiCap);
      beta_cand = beta + lambda * step.head(p);
    }
    double ll_cand = beta_glm_loglik(x1, u, w, beta_cand, phi_cand);
    int halvings = 0;
    while (ll_cand < ll && halvings < 40) {
      lambda *= 0.5;
      beta_cand = beta + lambda * step.head(p);
      phi_cand = std::min(phi + lambda * step[p], kPhiCap);
      ll_cand = beta_glm_loglik(x1, u, w, beta_cand, phi_cand);
      ++halvings;
    }
    const double rel_change =
        std::max((beta_cand - beta).cwiseAbs().maxCoeff() /
                     (1.0 + beta_cand.cwiseAbs().maxCoeff()),
                 std::abs(phi_cand - phi) / (1.0 + phi_cand));
    beta = beta_cand;
    phi = phi_cand;
    ll = ll_cand;

    if (ok && phi_ok && rel_change < kRelTol) {
      GlmFit fit;
      fit.family = Family::BetaLogit;
      fit.coef = beta;
      fit.converged = true;
      fit.iterations = iter;
      fit.dispersion_or_precision = phi;
      fit.fit_weights = w;
      return fit;
    }
  }
  Eigen::VectorXd last(p + 1);
  last.head(p) = beta;
  last[p] = phi;
  throw ConvergenceError("fit_beta_glm: no convergence after " +
                         std::to_string(kMaxIterBeta) + " iterations",
                         last);
}

Eigen::VectorXd predict_mean(const GlmFit& fit, const Eigen::MatrixXd& newx) {
  if (newx.cols() + 1 != fit.coef.size()) {
    throw DataError("predict_mean: covariate count does not match fit (" +
                    std::to_string(newx.cols()) + " columns vs " +
                    std::to_string(fit.coef.size() - 1) + " slopes)");
  }
  const Eigen::MatrixXd x1 = add_intercept(newx);
  if (fit.family == Family::GaussianIdentity) {
    return x1 * fit.coef;
  }
  Eigen::VectorXd p = expit_linpred(x1, fit.coef);
  for (int i = 0; i < p.size(); ++i) p[i] = clamp_unit_open(p[i], 1e-16);
  return p;
}

Eigen::MatrixXd wls_score_rows(const Eigen::MatrixXd& x1, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd r = (w.array() * (y - x1 * beta).array()).matrix();
  return x1.array().colwise() * r.array();
}

Eigen::MatrixXd logistic_score_rows(const Eigen::MatrixXd& x1, const Eigen::VectorXd& t,
                                    const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd r = (w.array() * (t - expit_linpred(x1, beta)).array()).matrix();
  return x1.array().colwise() * r.array();
}

Eigen::MatrixXd beta_glm_score_rows(const Eigen::MatrixXd& x1, const Eigen::VectorXd& u,
                                    const Eigen::VectorXd& w, const Eigen::VectorXd& beta,
                                    double phi) {
  const int n = static_cast<int>(x1.rows());
  const int p = static_cast<int>(x1.cols());
  Eigen::MatrixXd out(n, p + 1);
  const Eigen::VectorXd mu = expit_linpred(x1, beta);
  const double dg_phi = boost::math::digamma(phi);
  for (int i = 0; i < n; ++i) {
    const double m = clamp_unit_open(mu[i]);
    const double t1 = m * phi, t2 = (1.0 - m) * phi;
    const double mustar = boost::math::digamma(t1) - boost::math::digamma(t2);
    const double r = logit(u[i]) - mustar;
    out.row(i).head(p) = (w[i] * phi * r * m * (1.0 - m)) * x1.row(i);
    out(i, p) = w[i] * (dg_phi - m * boost::math::digamma(t1) -
                        (1.0 - m) * boost::math::digamma(t2) +
                        m * std::log(u[i]) + (1.0 - m) * std::log1p(-u[i]));
  }
  return out;
}

}  // namespace svyacd
