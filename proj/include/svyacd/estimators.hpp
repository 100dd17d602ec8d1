#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "svyacd/dataset.hpp"
#include "svyacd/design.hpp"
#include "svyacd/glm.hpp"
#include "svyacd/selection.hpp"

namespace svyacd {

// Proposed estimators (OM, IPW1, IPW2) plus the comparison approaches.
// The enum order of the comparison tags follows the usual approach numbering
// (simple regression, multiple regression, IPTW, survey-weighted regression,
// IPTW regression, combined weights, survey-weighted-propensity combined
// weights, naive g-computation).
enum class Method {
  OM,
  IPW1,
  IPW2,
  SLR,
  MR,
  IPTW_HT,
  SVY_MR,
  IPTW_MR,
  IPTW_SVY_MR,
  WIPTW_SVY_MR,
  NAIVE_G,
  ORACLE,
};

std::string method_name(Method m);
Method method_from_string(const std::string& tag);

/// Outcome-model specification for OM and NAIVE_G: separate per-group fits
/// (equivalent to a fully interacted model) or a single additive fit in
/// (A, X) for sensitivity replication.
struct OmSpec {
  enum class Form { Interacted, Additive };
  Form form = Form::Interacted;
  std::vector<int> covariate_cols;  // empty = all covariates
};

/// The two propensity fits: within-sample Pr(A=1|S=1,X) (unweighted) and
/// population Pr(A=1|X) (selection-weighted).
struct PropensityPair {
  GlmFit e_sample;
  GlmFit e_pop;
  Eigen::VectorXd p_sample;  // fitted Pr(A=1|S=1,X=x_i)
  Eigen::VectorXd p_pop;     // fitted Pr(A=1|X=x_i)
  std::vector<int> covariate_cols;
};

PropensityPair fit_propensity_pair(const Dataset& data,
                                   std::vector<int> covariate_cols = {});

struct Diagnostics {
  int clamped_selection = 0;
  int clamped_propensity = 0;
  int trimmed_weights = 0;
  double ess_group1 = 0.0;
  double ess_group0 = 0.0;
};

struct AcdEstimate {
  Method method = Method::OM;
  std::string label;  // stable method tag, e.g. "OM" or "OM_ADDITIVE"
  std::optional<double> mu1, mu0;
  double acd = 0.0;
  std::optional<double> se, ci_low, ci_high;
  Diagnostics diag;
  std::optional<std::string> error;  // set when a battery run failed
};

struct EstimatorOptions {
  // Error out when more than this fraction of rows had probabilities clamped.
  double max_clamp_fraction = 0.05;
  // Optional symmetric percentile trimming of inverse-probability factors.
  std::optional<double> trim_percentile;
  double propensity_clamp = 1e-6;
};

struct InferenceOptions {
  bool enabled = false;
  VarianceMode mode = VarianceMode::IID;
  LonelyPsuPolicy lonely_psu = LonelyPsuPolicy::Error;
  double alpha = 0.05;
  const SurveyDesign* design = nullptr;  // required for StratifiedCluster
};

/// Per-group outcome fits shared by OM and NAIVE_G.
struct OutcomeFits {
  OmSpec spec;
  GlmFit g1, g0;   // interacted form
  GlmFit g_add;    // additive form
  Eigen::VectorXd pred1, pred0;  // ghat_a(x_i) over all rows
};

OutcomeFits fit_outcome_models(const Dataset& data, const OmSpec& spec);

/// mu(a) under one of the proposed formulas.
double estimate_mu(Method method, int a, const Dataset& data,
                   const PropensityPair& prop, const SelectionModel& sel,
                   const OmSpec& om_spec, const EstimatorOptions& opts = {});

/// ACD point estimate, optionally with design-correct SE and Wald CI.
AcdEstimate estimate_acd(Method method, const Dataset& data,
                         const PropensityPair& prop, const SelectionModel& sel,
                         const OmSpec& om_spec, const EstimatorOptions& opts = {},
                         const InferenceOptions& inference = {});

/// Runs the requested comparison approaches (any non-proposed tags).
std::vector<AcdEstimate> comparison_estimators(
    const std::vector<Method>& which, const Dataset& data,
    const PropensityPair& prop, const SelectionModel& sel, const OmSpec& om_spec,
    const EstimatorOptions& opts = {}, const InferenceOptions& inference = {});

// --- summand kernels --------------------------------------------------------
// Per-row contributions whose sample mean is mu(a); shared between the point
// estimators and the stacked estimating equations.

Eigen::VectorXd om_summands(const Eigen::VectorXd& ghat_a, const Eigen::VectorXd& pi_x,
                            double pi_bar);

Eigen::VectorXd ipw1_summands(int a, const Eigen::VectorXd& y, const Eigen::VectorXi& group,
                              const Eigen::VectorXd& e_pop_a, const Eigen::VectorXd& pi_a,
                              double pi_bar);

Eigen::VectorXd ipw2_summands(int a, const Eigen::VectorXd& y, const Eigen::VectorXi& group,
                              const Eigen::VectorXd& e_sample_a, const Eigen::VectorXd& pi_x,
                              double pi_bar);

/// Full analysis battery: fits shared models once, then runs every requested
/// method tag (the proposed tags plus comparison tags, and the "OM_ADDITIVE"
/// alias). Per-method failures are captured on the returned estimates.
struct BatterySpec {
  std::vector<std::string> methods;
  OmSpec om;
  std::vector<int> propensity_cols;
  SelectionMode selection_mode = SelectionMode::Known;
  SelectionOptions selection;
  EstimatorOptions estimator;
  InferenceOptions inference;
};

std::vector<AcdEstimate> run_battery(const Dataset& data, const BatterySpec& spec);

}  // namespace svyacd
