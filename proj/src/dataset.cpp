#include "svyacd/dataset.hpp"

#include <cmath>
#include <set>

#include "svyacd/errors.hpp"

namespace svyacd {

void Dataset::validate() const {
  const int nobs = n();
  if (nobs == 0) throw DataError("dataset is empty");
  if (a.size() != nobs || sel_weight.size() != nobs || x.rows() != nobs) {
    throw DataError("dataset columns have inconsistent lengths");
  }
  if (!x_names.empty() && static_cast<int>(x_names.size()) != p()) {
    throw DataError("covariate name list does not match covariate count");
  }

  int n1 = 0, n0 = 0;
  for (int i = 0; i < nobs; ++i) {
    if (a[i] == 1) {
      ++n1;
    } else if (a[i] == 0) {
      ++n0;
    } else {
      throw DataError("group indicator must be 0 or 1 (row " +
                      std::to_string(i) + " has " + std::to_string(a[i]) + ")");
    }
    if (!(sel_weight[i] > 0.0) || !std::isfinite(sel_weight[i])) {
      throw DataError("selection weight must be positive and finite (row " +
                      std::to_string(i) + ")");
    }
    if (!std::isfinite(y[i])) {
      throw DataError("non-finite outcome value (row " + std::to_string(i) + ")");
    }
  }
  if (n1 < 2 || n0 < 2) {
    throw DataError("each group must appear at least twice (group 1: " +
                    std::to_string(n1) + ", group 0: " + std::to_string(n0) + ")");
  }
  if (!x.allFinite()) {
    for (int i = 0; i < nobs; ++i) {
      for (int j = 0; j < p(); ++j) {
        if (!std::isfinite(x(i, j))) {
          throw DataError("non-finite covariate value (row " + std::to_string(i) +
                          ", column " + std::to_string(j) + ")");
        }
      }
    }
  }

  if (!psu_id.empty()) {
    if (stratum_id.empty()) {
      throw DataError("PSU labels require stratum labels");
    }
    if (psu_id.size() != static_cast<size_t>(nobs) ||
        stratum_id.size() != static_cast<size_t>(nobs)) {
      throw DataError("design label lengths do not match row count");
    }
    for (int i = 0; i < nobs; ++i) {
      if (psu_id[i].empty() || stratum_id[i].empty()) {
        throw DataError("empty design label (row " + std::to_string(i) + ")");
      }
    }
  } else if (!stratum_id.empty() &&
             stratum_id.size() != static_cast<size_t>(nobs)) {
    throw DataError("stratum label length does not match row count");
  }

  if (pop_size && *pop_size <= 0) {
    throw DataError("population size must be positive");
  }
}

}  // namespace svyacd
