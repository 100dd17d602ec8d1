#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "svyacd/dataset.hpp"
#include "svyacd/glm.hpp"

namespace svyacd {

enum class SelectionMode { Known, Modeled };

struct SelectionOptions {
  // Covariate columns of the dataset entering the weight model; empty means
  // all columns. The design is [1, A, X_sel] plus optional A:X interactions.
  std::vector<int> covariate_cols;
  bool group_interaction = false;

  // Overall Pr(S=1); defaults to n/N when the dataset carries pop_size.
  std::optional<double> pi_bar_override;

  // Per-row Pr(S=1 | A=1-a_i, X=x_i) when the design's probability function
  // is known exactly; bypasses the beta-fit counterfactual in Known mode.
  std::optional<Eigen::VectorXd> counterfactual_pi;

  // Probabilities are clamped to [clamp_lo, 1] after evaluation.
  double clamp_lo = 1e-6;
};

/// Pr(S=1|X=x) by marginalizing the group out of the selection probability:
/// pi1*ew1 + pi0*(1-ew1).
double marginal_selection_prob(double pi1, double pi0, double ew1);

/// All selection probabilities needed by the estimators, evaluated on the
/// dataset rows. Immutable once built.
struct SelectionModel {
  SelectionMode mode = SelectionMode::Known;
  double pi_bar = 1.0;

  Eigen::VectorXd pi_obs;  // Pr(S=1 | A=a_i, X=x_i)
  Eigen::VectorXd pi_cf;   // Pr(S=1 | A=1-a_i, X=x_i)
  Eigen::VectorXd pi_x;    // Pr(S=1 | X=x_i)

  // Weight model backing the counterfactual (always fit) and its designs at
  // both group levels, for estimating-equation reconstruction.
  GlmFit beta_fit;
  Eigen::MatrixXd design_a1;  // selection design with the group column at 1
  Eigen::MatrixXd design_a0;

  int clamped_rows = 0;
  double clamp_lo = 1e-6;

  Eigen::VectorXd pi_a(int a, const Eigen::VectorXi& group) const {
    Eigen::VectorXd out(group.size());
    for (int i = 0; i < group.size(); ++i) {
      out[i] = group[i] == a ? pi_obs[i] : pi_cf[i];
    }
    return out;
  }
};

/// Builds the selection model. `pop_propensity` holds the survey-weighted
/// propensity Pr(A=1|X=x_i) per row, used to marginalize the group out of
/// Pr(S=1|A,X).
SelectionModel build_selection_model(const Dataset& data, SelectionMode mode,
                                     const SelectionOptions& options,
                                     const Eigen::VectorXd& pop_propensity);

}  // namespace svyacd
