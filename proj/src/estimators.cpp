#include "svyacd/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>

#include "svyacd/errors.hpp"
#include "svyacd/inference.hpp"
#include "svyacd/mathutil.hpp"

namespace svyacd {

namespace {

constexpr double kDefaultPropensityClamp = 1e-6;

const std::map<std::string, Method>& method_table() {
  static const std::map<std::string, Method> table = {
      {"OM", Method::OM},
      {"IPW1", Method::IPW1},
      {"IPW2", Method::IPW2},
      {"SLR", Method::SLR},
      {"MR", Method::MR},
      {"IPTW_HT", Method::IPTW_HT},
      {"SVY_MR", Method::SVY_MR},
      {"IPTW_MR", Method::IPTW_MR},
      {"IPTW_SVY_MR", Method::IPTW_SVY_MR},
      {"WIPTW_SVY_MR", Method::WIPTW_SVY_MR},
      {"NAIVE_G", Method::NAIVE_G},
      {"ORACLE", Method::ORACLE},
  };
  return table;
}

std::vector<int> resolve_cols(int p, const std::vector<int>& cols, const char* who) {
  if (cols.empty()) {
    std::vector<int> all(p);
    for (int j = 0; j < p; ++j) all[j] = j;
    return all;
  }
  for (int j : cols) {
    if (j < 0 || j >= p) {
      throw ConfigError(std::string(who) + ": covariate column index " +
                        std::to_string(j) + " out of range");
    }
  }
  return cols;
}

Eigen::MatrixXd subset_cols(const Eigen::MatrixXd& x, const std::vector<int>& cols) {
  Eigen::MatrixXd out(x.rows(), cols.size());
  for (size_t j = 0; j < cols.size(); ++j) out.col(j) = x.col(cols[j]);
  return out;
}

std::vector<std::string> covariate_names(const Dataset& data, const std::vector<int>& cols) {
  std::vector<std::string> names;
  for (int j : cols) {
    names.push_back(data.x_names.empty() ? "x" + std::to_string(j + 1)
                                         : data.x_names[j]);
  }
  return names;
}

double clamp_propensity(double p, double pc, int* clamped) {
  const double c = std::clamp(p, pc, 1.0 - pc);
  if (c != p && clamped) ++(*clamped);
  return c;
}

// Pr(A=a | ...) per row from fitted Pr(A=1 | ...), clamped away from 0/1.
Eigen::VectorXd group_level_propensity(const Eigen::VectorXd& p1, int a, double pc,
                                       int* clamped) {
  Eigen::VectorXd out(p1.size());
  for (int i = 0; i < p1.size(); ++i) {
    out[i] = clamp_propensity(a == 1 ? p1[i] : 1.0 - p1[i], pc, clamped);
  }
  return out;
}

double effective_sample_size(const Eigen::VectorXd& w) {
  const double s = w.sum();
  const double s2 = w.squaredNorm();
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

void check_clamp_fraction(int clamped, int n, const EstimatorOptions& opts,
                          const char* method) {
  if (static_cast<double>(clamped) > opts.max_clamp_fraction * n) {
    throw DataError(std::string(method) + ": positivity diagnostics failed; " +
                    std::to_string(clamped) + " of " + std::to_string(n) +
                    " probability evaluations were clamped (max fraction " +
                    std::to_string(opts.max_clamp_fraction) + ")");
  }
}

// Symmetric percentile winsorization; returns the number of capped entries.
int winsorize(Eigen::VectorXd& values, const std::vector<int>& rows, double q) {
  if (rows.empty()) return 0;
  std::vector<double> sorted;
  sorted.reserve(rows.size());
  for (int i : rows) sorted.push_back(values[i]);
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double prob) {
    const double idx = prob * (sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(idx));
    const size_t hi = static_cast<size_t>(std::ceil(idx));
    return sorted[lo] + (idx - lo) * (sorted[hi] - sorted[lo]);
  };
  const double lo = quantile(q), hi = quantile(1.0 - q);
  int capped = 0;
  for (int i : rows) {
    const double c = std::clamp(values[i], lo, hi);
    if (c != values[i]) ++capped;
    values[i] = c;
  }
  return capped;
}

// --- comparison machinery ---------------------------------------------------

Eigen::VectorXd ipt_weights(const Eigen::VectorXd& p1, const Eigen::VectorXi& a,
                            double pc, int* clamped) {
  Eigen::VectorXd w(a.size());
  for (int i = 0; i < a.size(); ++i) {
    const double e = clamp_propensity(a[i] == 1 ? p1[i] : 1.0 - p1[i], pc, clamped);
    w[i] = 1.0 / e;
  }
  return w;
}

struct RegressionSystem {
  Eigen::MatrixXd design;  // without intercept; group column first
  Eigen::VectorXd weights;
  std::vector<std::string> names;
};

RegressionSystem comparison_regression(Method m, const Dataset& data,
                                       const PropensityPair* prop,
                                       const std::vector<int>& om_cols,
                                       const EstimatorOptions& opts,
                                       Diagnostics* diag) {
  RegressionSystem reg;
  const int n = data.n();
  const Eigen::VectorXd ad = data.a.cast<double>();
  if (m == Method::SLR) {
    reg.design = ad;
    reg.names = {"a"};
  } else {
    const Eigen::MatrixXd xo = subset_cols(data.x, om_cols);
    reg.design.resize(n, 1 + xo.cols());
    reg.design.col(0) = ad;
    reg.design.rightCols(xo.cols()) = xo;
    reg.names = {"a"};
    for (const auto& nm : covariate_names(data, om_cols)) reg.names.push_back(nm);
  }

  int clamped = 0;
  switch (m) {
    case Method::SLR:
    case Method::MR:
      reg.weights = Eigen::VectorXd::Ones(n);
      break;
    case Method::SVY_MR:
      reg.weights = data.sel_weight;
      break;
    case Method::IPTW_MR:
      reg.weights = ipt_weights(prop->p_sample, data.a, opts.propensity_clamp, &clamped);
      break;
    case Method::IPTW_SVY_MR:
      reg.weights = ipt_weights(prop->p_sample, data.a, opts.propensity_clamp, &clamped)
                        .cwiseProduct(data.sel_weight);
      break;
    case Method::WIPTW_SVY_MR:
      reg.weights = ipt_weights(prop->p_pop, data.a, opts.propensity_clamp, &clamped)
                        .cwiseProduct(data.sel_weight);
      break;
    default:
      throw Error("comparison_regression: not a regression approach");
  }
  if (diag) diag->clamped_propensity += clamped;
  return reg;
}

// theta = [regression coefficients; acd], acd extracted from the group slope.
EstimatingSystem regression_system(const RegressionSystem& reg, const Dataset& data,
                                   const GlmFit& fit, double acd) {
  EstimatingSystem sys;
  const Eigen::MatrixXd x1 = add_intercept(reg.design);
  const int q = static_cast<int>(x1.cols());
  sys.theta.resize(q + 1);
  sys.theta.head(q) = fit.coef;
  sys.theta[q] = acd;
  sys.labels = {"b:(intercept)"};
  for (const auto& nm : reg.names) sys.labels.push_back("b:" + nm);
  sys.labels.push_back("acd");
  sys.acd_index = q;
  sys.n_rows = data.n();
  const Eigen::VectorXd y = data.y;
  const Eigen::VectorXd w = reg.weights;
  sys.psi = [x1, y, w, q](const Eigen::VectorXd& theta) {
    Eigen::MatrixXd out(x1.rows(), q + 1);
    out.leftCols(q) = wls_score_rows(x1, y, w, theta.head(q));
    out.col(q).setConstant(theta[1] - theta[q]);
    return out;
  };
  return sys;
}

}  // namespace

std::string method_name(Method m) {
  for (const auto& [name, method] : method_table()) {
    if (method == m) return name;
  }
  return "?";
}

Method method_from_string(const std::string& tag) {
  auto it = method_table().find(tag);
  if (it == method_table().end()) {
    std::string known;
    for (const auto& [name, method] : method_table()) known += " " + name;
    throw ConfigError("unknown method tag '" + tag + "'; known tags:" + known);
  }
  return it->second;
}

PropensityPair fit_propensity_pair(const Dataset& data, std::vector<int> covariate_cols) {
  PropensityPair pair;
  pair.covariate_cols = resolve_cols(data.p(), covariate_cols, "fit_propensity_pair");
  const Eigen::MatrixXd xp = subset_cols(data.x, pair.covariate_cols);
  const auto names = covariate_names(data, pair.covariate_cols);
  const Eigen::VectorXd ad = data.a.cast<double>();
  pair.e_sample = fit_weighted_logistic(xp, ad, Eigen::VectorXd::Ones(data.n()), names);
  pair.e_pop = fit_weighted_logistic(xp, ad, data.sel_weight, names);
  pair.p_sample = predict_mean(pair.e_sample, xp);
  pair.p_pop = predict_mean(pair.e_pop, xp);
  return pair;
}

OutcomeFits fit_outcome_models(const Dataset& data, const OmSpec& spec) {
  OutcomeFits fits;
  fits.spec = spec;
  fits.spec.covariate_cols = resolve_cols(data.p(), spec.covariate_cols, "fit_outcome_models");
  const Eigen::MatrixXd xo = subset_cols(data.x, fits.spec.covariate_cols);
  const auto names = covariate_names(data, fits.spec.covariate_cols);

  if (spec.form == OmSpec::Form::Interacted) {
    for (int g = 0; g <= 1; ++g) {
      std::vector<int> rows;
      for (int i = 0; i < data.n(); ++i) {
        if (data.a[i] == g) rows.push_back(i);
      }
      Eigen::MatrixXd xg(rows.size(), xo.cols());
      Eigen::VectorXd yg(rows.size());
      for (size_t r = 0; r < rows.size(); ++r) {
        xg.row(r) = xo.row(rows[r]);
        yg[r] = data.y[rows[r]];
      }
      GlmFit fit = fit_wls(xg, yg, Eigen::VectorXd::Ones(rows.size()), names);
      (g == 1 ? fits.g1 : fits.g0) = std::move(fit);
    }
    fits.pred1 = predict_mean(fits.g1, xo);
    fits.pred0 = predict_mean(fits.g0, xo);
  } else {
    Eigen::MatrixXd design(data.n(), 1 + xo.cols());
    design.col(0) = data.a.cast<double>();
    design.rightCols(xo.cols()) = xo;
    std::vector<std::string> dnames{"a"};
    dnames.insert(dnames.end(), names.begin(), names.end());
    fits.g_add = fit_wls(design, data.y, Eigen::VectorXd::Ones(data.n()), dnames);
    Eigen::MatrixXd d1 = design, d0 = design;
    d1.col(0).setOnes();
    d0.col(0).setZero();
    fits.pred1 = predict_mean(fits.g_add, d1);
    fits.pred0 = predict_mean(fits.g_add, d0);
  }
  return fits;
}

Eigen::VectorXd om_summands(const Eigen::VectorXd& ghat_a, const Eigen::VectorXd& pi_x,
                            double pi_bar) {
  return (ghat_a.array() * (pi_bar / pi_x.array())).matrix();
}

Eigen::VectorXd ipw1_summands(int a, const Eigen::VectorXd& y, const Eigen::VectorXi& group,
                              const Eigen::VectorXd& e_pop_a, const Eigen::VectorXd& pi_a,
                              double pi_bar) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(y.size());
  for (int i = 0; i < y.size(); ++i) {
    if (group[i] == a) s[i] = y[i] * pi_bar / (e_pop_a[i] * pi_a[i]);
  }
  return s;
}

Eigen::VectorXd ipw2_summands(int a, const Eigen::VectorXd& y, const Eigen::VectorXi& group,
                              const Eigen::VectorXd& e_sample_a, const Eigen::VectorXd& pi_x,
                              double pi_bar) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(y.size());
  for (int i = 0; i < y.size(); ++i) {
    if (group[i] == a) s[i] = y[i] * pi_bar / (e_sample_a[i] * pi_x[i]);
  }
  return s;
}

namespace {

// mu(a) plus diagnostics for one proposed method, reusing prefit outcome
// models when available.
double proposed_mu(Method method, int a, const Dataset& data, const PropensityPair& prop,
                   const SelectionModel& sel, const OutcomeFits* om_fits,
                   const EstimatorOptions& opts, Diagnostics* diag) {
  const int n = data.n();
  int clamped_prop = 0;
  Eigen::VectorXd s;
  Eigen::VectorXd weight_factor;  // inverse-probability factor, for ESS/trimming
  std::vector<int> active_rows;

  switch (method) {
    case Method::OM: {
      s = om_summands(a == 1 ? om_fits->pred1 : om_fits->pred0, sel.pi_x, sel.pi_bar);
      weight_factor = (sel.pi_bar / sel.pi_x.array()).matrix();
      for (int i = 0; i < n; ++i) active_rows.push_back(i);
      break;
    }
    case Method::IPW1: {
      const Eigen::VectorXd e =
          group_level_propensity(prop.p_pop, a, opts.propensity_clamp, &clamped_prop);
      const Eigen::VectorXd pia = sel.pi_a(a, data.a);
      weight_factor = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) {
        if (data.a[i] == a) {
          weight_factor[i] = sel.pi_bar / (e[i] * pia[i]);
          active_rows.push_back(i);
        }
      }
      break;
    }
    case Method::IPW2: {
      const Eigen::VectorXd e =
          group_level_propensity(prop.p_sample, a, opts.propensity_clamp, &clamped_prop);
      weight_factor = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) {
        if (data.a[i] == a) {
          weight_factor[i] = sel.pi_bar / (e[i] * sel.pi_x[i]);
          active_rows.push_back(i);
        }
      }
      break;
    }
    default:
      throw Error("proposed_mu: not a proposed method");
  }

  check_clamp_fraction(sel.clamped_rows + clamped_prop, n, opts, method_name(method).c_str());

  int trimmed = 0;
  if (opts.trim_percentile) {
    trimmed = winsorize(weight_factor, active_rows, *opts.trim_percentile);
  }
  if (method != Method::OM) {
    s = Eigen::VectorXd::Zero(n);
    for (int i : active_rows) s[i] = data.y[i] * weight_factor[i];
  } else if (trimmed > 0) {
    const Eigen::VectorXd& pred = a == 1 ? om_fits->pred1 : om_fits->pred0;
    s = pred.cwiseProduct(weight_factor);
  }

  if (diag) {
    diag->clamped_selection = sel.clamped_rows;
    diag->clamped_propensity += clamped_prop;
    diag->trimmed_weights += trimmed;
    Eigen::VectorXd wf(active_rows.size());
    for (size_t r = 0; r < active_rows.size(); ++r) wf[r] = weight_factor[active_rows[r]];
    (a == 1 ? diag->ess_group1 : diag->ess_group0) = effective_sample_size(wf);
  }
  return s.mean();
}

AcdEstimate comparison_estimate(Method m, const Dataset& data, const PropensityPair* prop,
                                const SelectionModel* sel, const OmSpec& om_spec,
                                const OutcomeFits* om_fits, const EstimatorOptions& opts,
                                const InferenceOptions& inference) {
  AcdEstimate est;
  est.method = m;
  est.label = method_name(m);
  const int n = data.n();
  const auto om_cols = resolve_cols(data.p(), om_spec.covariate_cols, "comparison_estimators");

  EstimatingSystem sys;
  switch (m) {
    case Method::SLR:
    case Method::MR:
    case Method::SVY_MR:
    case Method::IPTW_MR:
    case Method::IPTW_SVY_MR:
    case Method::WIPTW_SVY_MR: {
      RegressionSystem reg = comparison_regression(m, data, prop, om_cols, opts, &est.diag);
      GlmFit fit = fit_wls(reg.design, data.y, reg.weights, reg.names);
      est.acd = fit.coef[1];
      sys = regression_system(reg, data, fit, est.acd);
      break;
    }
    case Method::IPTW_HT: {
      // Horvitz-Thompson inverse probability of treatment weighting with the
      // within-sample propensity: divisor n, unnormalized weights.
      int clamped = 0;
      const Eigen::VectorXd e1 =
          group_level_propensity(prop->p_sample, 1, opts.propensity_clamp, &clamped);
      const Eigen::VectorXd e0 =
          group_level_propensity(prop->p_sample, 0, opts.propensity_clamp, &clamped);
      est.diag.clamped_propensity = clamped;
      Eigen::VectorXd s1 = Eigen::VectorXd::Zero(n), s0 = Eigen::VectorXd::Zero(n);
      Eigen::VectorXd w1 = Eigen::VectorXd::Zero(n), w0 = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) {
        if (data.a[i] == 1) {
          s1[i] = data.y[i] / e1[i];
          w1[i] = 1.0 / e1[i];
        } else {
          s0[i] = data.y[i] / e0[i];
          w0[i] = 1.0 / e0[i];
        }
      }
      est.mu1 = s1.mean();
      est.mu0 = s0.mean();
      est.acd = *est.mu1 - *est.mu0;
      est.diag.ess_group1 = effective_sample_size(w1);
      est.diag.ess_group0 = effective_sample_size(w0);

      sys.theta.resize(3);
      sys.theta << *est.mu1, *est.mu0, est.acd;
      sys.labels = {"mu1", "mu0", "acd"};
      sys.acd_index = 2;
      sys.n_rows = n;
      sys.psi = [s1, s0](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd out(s1.size(), 3);
        out.col(0) = s1.array() - theta[0];
        out.col(1) = s0.array() - theta[1];
        out.col(2).setConstant(theta[0] - theta[1] - theta[2]);
        return out;
      };
      break;
    }
    case Method::NAIVE_G: {
      // Survey-weighted average of the predicted group contrast.
      const Eigen::VectorXd omega = data.sel_weight;
      const double sw = omega.sum();
      est.mu1 = (omega.array() * om_fits->pred1.array()).sum() / sw;
      est.mu0 = (omega.array() * om_fits->pred0.array()).sum() / sw;
      est.acd = *est.mu1 - *est.mu0;

      if (om_fits->spec.form == OmSpec::Form::Interacted) {
        const Eigen::MatrixXd xo1 = add_intercept(subset_cols(data.x, om_cols));
        const int q = static_cast<int>(xo1.cols());
        sys.theta.resize(2 * q + 1);
        sys.theta.head(q) = om_fits->g1.coef;
        sys.theta.segment(q, q) = om_fits->g0.coef;
        sys.theta[2 * q] = est.acd;
        for (int g = 1; g >= 0; --g) {
          sys.labels.push_back("om" + std::to_string(g) + ":(intercept)");
          for (const auto& nm : covariate_names(data, om_cols)) {
            sys.labels.push_back("om" + std::to_string(g) + ":" + nm);
          }
        }
        sys.labels.push_back("acd");
        sys.acd_index = 2 * q;
        sys.n_rows = n;
        const Eigen::VectorXd y = data.y;
        const Eigen::VectorXi a = data.a;
        sys.psi = [xo1, y, a, omega, q](const Eigen::VectorXd& theta) {
          const int nn = static_cast<int>(xo1.rows());
          Eigen::MatrixXd out(nn, 2 * q + 1);
          Eigen::VectorXd w1 = Eigen::VectorXd::Zero(nn), w0 = Eigen::VectorXd::Zero(nn);
          for (int i = 0; i < nn; ++i) (a[i] == 1 ? w1[i] : w0[i]) = 1.0;
          out.leftCols(q) = wls_score_rows(xo1, y, w1, theta.head(q));
          out.middleCols(q, q) = wls_score_rows(xo1, y, w0, theta.segment(q, q));
          const Eigen::VectorXd delta =
              xo1 * theta.head(q) - xo1 * theta.segment(q, q);
          out.col(2 * q) = omega.array() * (delta.array() - theta[2 * q]);
          return out;
        };
      } else {
        // Additive form: the contrast is the group slope itself.
        const Eigen::MatrixXd design = [&] {
          Eigen::MatrixXd d(n, 1 + om_cols.size());
          d.col(0) = data.a.cast<double>();
          d.rightCols(om_cols.size()) = subset_cols(data.x, om_cols);
          return d;
        }();
        const Eigen::MatrixXd x1 = add_intercept(design);
        const int q = static_cast<int>(x1.cols());
        sys.theta.resize(q + 1);
        sys.theta.head(q) = om_fits->g_add.coef;
        sys.theta[q] = est.acd;
        sys.labels = {"om:(intercept)", "om:a"};
        for (const auto& nm : covariate_names(data, om_cols)) sys.labels.push_back("om:" + nm);
        sys.labels.push_back("acd");
        sys.acd_index = q;
        sys.n_rows = n;
        const Eigen::VectorXd y = data.y;
        sys.psi = [x1, y, q](const Eigen::VectorXd& theta) {
          Eigen::MatrixXd out(x1.rows(), q + 1);
          out.leftCols(q) =
              wls_score_rows(x1, y, Eigen::VectorXd::Ones(x1.rows()), theta.head(q));
          out.col(q).setConstant(theta[1] - theta[q]);
          return out;
        };
      }
      break;
    }
    case Method::ORACLE: {
      // Survey-weighted regression on the full interacted outcome form; the
      // contrast standardizes the interaction at the weighted covariate mean.
      const Eigen::MatrixXd xo = subset_cols(data.x, om_cols);
      const int p = static_cast<int>(xo.cols());
      Eigen::MatrixXd design(n, 1 + 2 * p);
      design.col(0) = data.a.cast<double>();
      design.middleCols(1, p) = xo;
      for (int j = 0; j < p; ++j) {
        design.col(1 + p + j) = design.col(0).cwiseProduct(xo.col(j));
      }
      std::vector<std::string> names{"a"};
      for (const auto& nm : covariate_names(data, om_cols)) names.push_back(nm);
      for (const auto& nm : covariate_names(data, om_cols)) names.push_back("a:" + nm);
      GlmFit fit = fit_wls(design, data.y, data.sel_weight, names);

      const Eigen::VectorXd omega = data.sel_weight;
      const double sw = omega.sum();
      Eigen::VectorXd xbar(p);
      for (int j = 0; j < p; ++j) xbar[j] = (omega.array() * xo.col(j).array()).sum() / sw;
      // coef layout: (intercept), a, x..., a:x...
      est.acd = fit.coef[1];
      for (int j = 0; j < p; ++j) est.acd += fit.coef[2 + p + j] * xbar[j];

      const Eigen::MatrixXd x1 = add_intercept(design);
      const int q = static_cast<int>(x1.cols());
      sys.theta.resize(q + p + 1);
      sys.theta.head(q) = fit.coef;
      sys.theta.segment(q, p) = xbar;
      sys.theta[q + p] = est.acd;
      sys.labels = {"b:(intercept)"};
      for (const auto& nm : names) sys.labels.push_back("b:" + nm);
      for (const auto& nm : covariate_names(data, om_cols)) sys.labels.push_back("mean:" + nm);
      sys.labels.push_back("acd");
      sys.acd_index = q + p;
      sys.n_rows = n;
      const Eigen::VectorXd y = data.y;
      sys.psi = [x1, xo, y, omega, q, p](const Eigen::VectorXd& theta) {
        const int nn = static_cast<int>(x1.rows());
        Eigen::MatrixXd out(nn, q + p + 1);
        out.leftCols(q) = wls_score_rows(x1, y, omega, theta.head(q));
        for (int j = 0; j < p; ++j) {
          out.col(q + j) = omega.array() * (xo.col(j).array() - theta[q + j]);
        }
        double acd = theta[1];
        for (int j = 0; j < p; ++j) acd += theta[2 + p + j] * theta[q + j];
        out.col(q + p).setConstant(acd - theta[q + p]);
        return out;
      };
      break;
    }
    default:
      throw Error("comparison_estimate: " + method_name(m) + " is not a comparison approach");
  }

  if (inference.enabled) {
    const VarianceEstimate ve = sandwich_variance(
        sys, sys.theta,
        inference.mode == VarianceMode::StratifiedCluster ? inference.design : nullptr,
        inference.lonely_psu);
    est.se = ve.se[sys.acd_index];
    auto [lo, hi] = wald_ci(est.acd, *est.se, inference.alpha);
    est.ci_low = lo;
    est.ci_high = hi;
  }
  return est;
}

bool is_proposed(Method m) {
  return m == Method::OM || m == Method::IPW1 || m == Method::IPW2;
}

AcdEstimate proposed_estimate(Method m, const Dataset& data, const PropensityPair& prop,
                              const SelectionModel& sel, const OmSpec& om_spec,
                              const OutcomeFits* om_fits, const EstimatorOptions& opts,
                              const InferenceOptions& inference) {
  if (opts.trim_percentile && inference.enabled) {
    throw ConfigError("weight trimming is a point-estimate diagnostic; disable "
                      "inference or trimming");
  }
  AcdEstimate est;
  est.method = m;
  est.label = method_name(m);
  est.mu1 = proposed_mu(m, 1, data, prop, sel, om_fits, opts, &est.diag);
  est.mu0 = proposed_mu(m, 0, data, prop, sel, om_fits, opts, &est.diag);
  est.acd = *est.mu1 - *est.mu0;

  if (inference.enabled) {
    OmSpec spec = om_fits ? om_fits->spec : om_spec;
    const EstimatingSystem sys = stack_system(data, prop, sel, spec, est);
    const VarianceEstimate ve = sandwich_variance(
        sys, sys.theta,
        inference.mode == VarianceMode::StratifiedCluster ? inference.design : nullptr,
        inference.lonely_psu);
    est.se = ve.se[sys.acd_index];
    auto [lo, hi] = wald_ci(est.acd, *est.se, inference.alpha);
    est.ci_low = lo;
    est.ci_high = hi;
  }
  return est;
}

}  // namespace

double estimate_mu(Method method, int a, const Dataset& data, const PropensityPair& prop,
                   const SelectionModel& sel, const OmSpec& om_spec,
                   const EstimatorOptions& opts) {
  if (a != 0 && a != 1) throw ConfigError("estimate_mu: group level must be 0 or 1");
  if (!is_proposed(method)) {
    throw ConfigError("estimate_mu: " + method_name(method) +
                      " does not define group means via the proposed formulas");
  }
  OutcomeFits fits;
  const OutcomeFits* fits_ptr = nullptr;
  if (method == Method::OM) {
    fits = fit_outcome_models(data, om_spec);
    fits_ptr = &fits;
  }
  return proposed_mu(method, a, data, prop, sel, fits_ptr, opts, nullptr);
}

AcdEstimate estimate_acd(Method method, const Dataset& data, const PropensityPair& prop,
                         const SelectionModel& sel, const OmSpec& om_spec,
                         const EstimatorOptions& opts, const InferenceOptions& inference) {
  if (is_proposed(method)) {
    OutcomeFits fits;
    const OutcomeFits* fits_ptr = nullptr;
    if (method == Method::OM) {
      fits = fit_outcome_models(data, om_spec);
      fits_ptr = &fits;
    }
    return proposed_estimate(method, data, prop, sel, om_spec, fits_ptr, opts, inference);
  }
  OutcomeFits fits;
  const OutcomeFits* fits_ptr = nullptr;
  if (method == Method::NAIVE_G) {
    fits = fit_outcome_models(data, om_spec);
    fits_ptr = &fits;
  }
  return comparison_estimate(method, data, &prop, &sel, om_spec, fits_ptr, opts, inference);
}

std::vector<AcdEstimate> comparison_estimators(const std::vector<Method>& which,
                                               const Dataset& data,
                                               const PropensityPair& prop,
                                               const SelectionModel& sel,
                                               const OmSpec& om_spec,
                                               const EstimatorOptions& opts,
                                               const InferenceOptions& inference) {
  std::vector<AcdEstimate> out;
  for (Method m : which) {
    if (is_proposed(m)) {
      out.push_back(estimate_acd(m, data, prop, sel, om_spec, opts, inference));
    } else {
      OutcomeFits fits;
      const OutcomeFits* fits_ptr = nullptr;
      if (m == Method::NAIVE_G) {
        fits = fit_outcome_models(data, om_spec);
        fits_ptr = &fits;
      }
      out.push_back(comparison_estimate(m, data, &prop, &sel, om_spec, fits_ptr, opts, inference));
    }
  }
  return out;
}

std::vector<AcdEstimate> run_battery(const Dataset& data, const BatterySpec& spec) {
  data.validate();

  // Methods that need no fitted propensity or selection model keep working
  // when those stages fail; the failure is attributed per method.
  std::optional<PropensityPair> prop;
  std::optional<SelectionModel> sel;
  std::string stage_error;
  try {
    prop = fit_propensity_pair(data, spec.propensity_cols);
    sel = build_selection_model(data, spec.selection_mode, spec.selection, prop->p_pop);
  } catch (const std::exception& e) {
    stage_error = e.what();
  }

  SurveyDesign design;
  InferenceOptions inference = spec.inference;
  if (inference.enabled && inference.mode == VarianceMode::StratifiedCluster &&
      inference.design == nullptr) {
    design = build_survey_design(data);
    inference.design = &design;
  }

  std::optional<OutcomeFits> om_interacted, om_additive;
  auto interacted_fits = [&]() -> const OutcomeFits* {
    if (!om_interacted) {
      OmSpec s = spec.om;
      s.form = OmSpec::Form::Interacted;
      om_interacted = fit_outcome_models(data, s);
    }
    return &*om_interacted;
  };
  auto additive_fits = [&]() -> const OutcomeFits* {
    if (!om_additive) {
      OmSpec s = spec.om;
      s.form = OmSpec::Form::Additive;
      om_additive = fit_outcome_models(data, s);
    }
    return &*om_additive;
  };

  std::vector<AcdEstimate> out;
  for (const std::string& tag : spec.methods) {
    Method m;
    bool force_additive = false;
    if (tag == "OM_ADDITIVE") {
      m = Method::OM;
      force_additive = true;
    } else {
      m = method_from_string(tag);
    }
    AcdEstimate est;
    est.label = tag;
    est.method = m;
    try {
      const bool needs_prop = is_proposed(m) || m == Method::IPTW_HT ||
                              m == Method::IPTW_MR || m == Method::IPTW_SVY_MR ||
                              m == Method::WIPTW_SVY_MR;
      const bool needs_sel = is_proposed(m);
      if ((needs_prop && !prop) || (needs_sel && !sel)) {
        throw Error("model stage failed: " + stage_error);
      }
      const OutcomeFits* fits = nullptr;
      if (m == Method::OM) {
        const bool additive = force_additive || spec.om.form == OmSpec::Form::Additive;
        fits = additive ? additive_fits() : interacted_fits();
      } else if (m == Method::NAIVE_G) {
        fits = spec.om.form == OmSpec::Form::Additive ? additive_fits() : interacted_fits();
      }
      if (is_proposed(m)) {
        est = proposed_estimate(m, data, *prop, *sel, spec.om, fits, spec.estimator, inference);
      } else {
        est = comparison_estimate(m, data, prop ? &*prop : nullptr, sel ? &*sel : nullptr,
                                  spec.om, fits, spec.estimator, inference);
      }
      est.label = tag;
    } catch (const std::exception& e) {
      est.error = e.what();
      est.acd = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(std::move(est));
  }
  return out;
}

}  // namespace svyacd
