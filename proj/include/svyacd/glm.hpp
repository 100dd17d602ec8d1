#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace svyacd {

enum class Family { GaussianIdentity, BinomialLogit, BetaLogit };

std::string family_name(Family f);

/// A fitted weighted generalized linear model. `coef` has the intercept
/// first, followed by one slope per covariate column.
struct GlmFit {
  Family family = Family::GaussianIdentity;
  Eigen::VectorXd coef;
  bool converged = false;
  int iterations = 0;
  // Residual variance for gaussian fits, precision phi for beta fits, 1 for
  // logistic fits.
  double dispersion_or_precision = 1.0;
  Eigen::VectorXd fit_weights;
};

/// Weighted least squares of y on [1, x] via column-pivoted QR.
///
/// Throws RankDeficientError (naming the collinear columns) when the
/// weighted design loses rank, and DataError for all-zero weights.
GlmFit fit_wls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
               const Eigen::VectorXd& w,
               const std::vector<std::string>& names = {});

/// Weighted logistic regression of a 0/1 response on [1, x], solved by IRLS
/// with step-halving. Declares separation when the coefficient sup-norm
/// exceeds 30 on the logit scale while the score has not met tolerance.
GlmFit fit_weighted_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                             const Eigen::VectorXd& w,
                             const std::vector<std::string>& names = {});

/// Beta regression with logit mean link and constant precision, fit by
/// Fisher scoring with step-halving on the weighted log likelihood.
/// Responses must lie strictly inside (0,1); clamp beforehand.
GlmFit fit_beta_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& u,
                    const Eigen::VectorXd& w,
                    const std::vector<std::string>& names = {});

/// Mean predictions on new covariate rows (without an intercept column):
/// x'beta for the identity link, expit(x'beta) for logit links.
Eigen::VectorXd predict_mean(const GlmFit& fit, const Eigen::MatrixXd& newx);

// --- score contributions ---------------------------------------------------
// Per-observation estimating-equation rows at an arbitrary parameter value.
// These back both the fitters' convergence checks and the stacked
// M-estimation systems, so the two can never drift apart. `x1` carries the
// intercept column.

Eigen::MatrixXd wls_score_rows(const Eigen::MatrixXd& x1, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& w, const Eigen::VectorXd& beta);

Eigen::MatrixXd logistic_score_rows(const Eigen::MatrixXd& x1,
                                    const Eigen::VectorXd& t,
                                    const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& beta);

// Columns: d/d(beta) then d/d(phi).
Eigen::MatrixXd beta_glm_score_rows(const Eigen::MatrixXd& x1,
                                    const Eigen::VectorXd& u,
                                    const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& beta, double phi);

/// Prepends an intercept column.
Eigen::MatrixXd add_intercept(const Eigen::MatrixXd& x);

/// expit(x1 * beta) rowwise.
Eigen::VectorXd expit_linpred(const Eigen::MatrixXd& x1, const Eigen::VectorXd& beta);

}  // namespace svyacd
