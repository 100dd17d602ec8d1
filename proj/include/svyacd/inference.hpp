#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "svyacd/design.hpp"
#include "svyacd/estimators.hpp"

namespace svyacd {

/// A stacked system of unbiased estimating equations. `psi` evaluates the
/// n x m matrix of per-observation contributions at an arbitrary parameter
/// vector; the row sums vanish at the fitted `theta`.
struct EstimatingSystem {
  Eigen::VectorXd theta;
  std::vector<std::string> labels;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> psi;
  int n_rows = 0;
  int acd_index = -1;

  int size() const { return static_cast<int>(theta.size()); }

  // Evaluates psi and checks the output shape.
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& at) const;
};

/// Stacks the model and estimand equations for a proposed method (OM, IPW1
/// or IPW2): propensity scores, outcome-model scores (OM), the weight-model
/// scores when selection is Modeled, the mu(a) equations and the ACD
/// contrast. Known-mode design probabilities are held fixed.
EstimatingSystem stack_system(const Dataset& data, const PropensityPair& prop,
                              const SelectionModel& sel, const OmSpec& om_spec,
                              const AcdEstimate& estimates);

/// M = -d(mean psi)/d(theta) by coordinatewise central differences with
/// step h_j = cbrt(eps) * max(1, |theta_j|).
Eigen::MatrixXd numeric_jacobian(const EstimatingSystem& system,
                                 const Eigen::VectorXd& theta);

struct VarianceEstimate {
  Eigen::MatrixXd vcov;
  Eigen::VectorXd se;
  VarianceMode mode = VarianceMode::IID;
};

/// Empirical sandwich covariance of theta from influence functions
/// phi_i = M^{-1} psi_i, scaled so that V = n^{-2} sum phi phi'. With a
/// survey design, PSU totals are contrasted within strata.
VarianceEstimate sandwich_variance(const EstimatingSystem& system,
                                   const Eigen::VectorXd& theta,
                                   const SurveyDesign* design = nullptr,
                                   LonelyPsuPolicy policy = LonelyPsuPolicy::Error);

/// estimate +/- z_{1-level/2} * se.
std::pair<double, double> wald_ci(double estimate, double se, double level);

}  // namespace svyacd
