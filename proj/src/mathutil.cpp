#include "svyacd/mathutil.hpp"

#include <boost/math/distributions/normal.hpp>

#include "svyacd/errors.hpp"

namespace svyacd {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error("normal_quantile: p must lie in (0,1)");
  }
  static const boost::math::normal_distribution<double> kStdNormal(0.0, 1.0);
  return boost::math::quantile(kStdNormal, p);
}

}  // namespace svyacd
