#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

namespace svyacd {

/// One analysis-ready sample: outcome, binary group, covariates, sample
/// selection weights (omega = 1/Pr(S=1|A,X)) and optional survey design
/// labels. Rows are sampled units (S = 1 for every row).
struct Dataset {
  Eigen::VectorXd y;           // outcome
  Eigen::VectorXi a;           // group indicator, 0/1
  Eigen::MatrixXd x;           // n x p covariates
  std::vector<std::string> x_names;
  Eigen::VectorXd sel_weight;  // positive selection weights
  std::vector<std::string> stratum_id;  // empty or length n
  std::vector<std::string> psu_id;      // empty or length n
  std::optional<long long> pop_size;    // super-population size N

  // True when a weight column was bound; otherwise sel_weight is all ones.
  bool has_sel_weight = true;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(x.cols()); }

  bool has_design() const { return !psu_id.empty(); }

  // Checks every structural invariant; throws DataError with context.
  void validate() const;
};

}  // namespace svyacd
