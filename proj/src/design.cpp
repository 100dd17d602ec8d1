#include "svyacd/design.hpp"

#include <map>

#include "svyacd/dataset.hpp"
#include "svyacd/errors.hpp"

namespace svyacd {

SurveyDesign build_survey_design(const Dataset& data) {
  if (data.psu_id.empty() || data.stratum_id.empty()) {
    throw DataError("build_survey_design: stratum and PSU labels are required");
  }
  SurveyDesign design;
  design.membership.resize(data.n());

  std::map<std::string, int> stratum_index;
  std::vector<std::map<std::string, int>> psu_index;
  for (int i = 0; i < data.n(); ++i) {
    auto [sit, fresh] = stratum_index.try_emplace(
        data.stratum_id[i], static_cast<int>(stratum_index.size()));
    if (fresh) {
      psu_index.emplace_back();
      design.stratum_labels.push_back(data.stratum_id[i]);
      design.psus_per_stratum.push_back(0);
    }
    const int k = sit->second;
    auto [pit, fresh_psu] = psu_index[k].try_emplace(
        data.psu_id[i], static_cast<int>(psu_index[k].size()));
    if (fresh_psu) ++design.psus_per_stratum[k];
    design.membership[i] = {k, pit->second};
  }
  return design;
}

}  // namespace svyacd
