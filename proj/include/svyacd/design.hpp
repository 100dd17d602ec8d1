#pragma once

#include <string>
#include <vector>

namespace svyacd {

struct Dataset;

enum class VarianceMode { IID, StratifiedCluster };

enum class LonelyPsuPolicy { Error, CenterAtGrandMean, CollapseStrata };

/// Stratum/PSU membership for linearized variance estimation.
struct SurveyDesign {
  // membership[i] = (stratum index, psu index within stratum)
  std::vector<std::pair<int, int>> membership;
  std::vector<std::string> stratum_labels;
  std::vector<int> psus_per_stratum;

  int n_strata() const { return static_cast<int>(psus_per_stratum.size()); }
};

/// Maps the dataset's stratum/PSU labels to indices. Every row must carry
/// both labels; strata with a single PSU are handled by the variance step
/// according to the configured lonely-PSU policy.
SurveyDesign build_survey_design(const Dataset& data);

}  // namespace svyacd
