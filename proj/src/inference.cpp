#include "svyacd/inference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "svyacd/errors.hpp"
#include "svyacd/mathutil.hpp"

namespace svyacd {

namespace {

constexpr double kPropensityClamp = 1e-6;
constexpr double kMaxCondition = 1e12;

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

Eigen::VectorXd clamp_probs(Eigen::VectorXd p, double lo, double hi) {
  for (int i = 0; i < p.size(); ++i) p[i] = std::clamp(p[i], lo, hi);
  return p;
}

// Everything the stacked psi evaluator needs, captured by value.
struct ProposedContext {
  Method method = Method::OM;
  bool modeled = false;
  OmSpec::Form om_form = OmSpec::Form::Interacted;
  int n = 0;

  Eigen::VectorXd y;
  Eigen::VectorXi a;
  Eigen::VectorXd a_dbl;
  Eigen::VectorXd sel_w;
  Eigen::VectorXd ones;
  double pi_bar = 1.0;
  double clamp_lo = 1e-6;

  Eigen::MatrixXd xp1;  // propensity design, intercept included

  // OM outcome designs (intercept included).
  Eigen::MatrixXd xo1;          // interacted: [1, X]
  Eigen::MatrixXd xo1_add_obs;  // additive: [1, a, X] at observed a
  Eigen::MatrixXd xo1_add_a1, xo1_add_a0;

  // Known-mode fixed selection probabilities at both group levels.
  Eigen::VectorXd pi1_fixed, pi0_fixed;

  // Modeled-mode weight model pieces.
  Eigen::MatrixXd xs1_obs, xs1_a1, xs1_a0;
  Eigen::VectorXd u;

  // theta layout
  int off_esamp = -1, off_epop = -1, off_g1 = -1, off_g0 = -1, off_gadd = -1;
  int off_sel = -1, idx_mu1 = -1, idx_mu0 = -1, idx_acd = -1;
  int pp = 0, po = 0, ps = 0;

  Eigen::MatrixXd operator()(const Eigen::VectorXd& theta) const {
    const int m = static_cast<int>(theta.size());
    Eigen::MatrixXd psi(n, m);

    const Eigen::VectorXd beta_pop = theta.segment(off_epop, pp);
    const Eigen::VectorXd p_pop = expit_linpred(xp1, beta_pop);
    psi.middleCols(off_epop, pp) = logistic_score_rows(xp1, a_dbl, sel_w, beta_pop);

    Eigen::VectorXd p_samp;
    if (method == Method::IPW2) {
      const Eigen::VectorXd beta_samp = theta.segment(off_esamp, pp);
      p_samp = expit_linpred(xp1, beta_samp);
      psi.middleCols(off_esamp, pp) = logistic_score_rows(xp1, a_dbl, ones, beta_samp);
    }

    Eigen::VectorXd pi1, pi0;
    if (modeled) {
      const Eigen::VectorXd beta_sel = theta.segment(off_sel, ps);
      const double phi = theta[off_sel + ps];
      psi.middleCols(off_sel, ps + 1) =
          beta_glm_score_rows(xs1_obs, u, ones, beta_sel, phi);
      pi1 = clamp_probs(expit_linpred(xs1_a1, beta_sel), clamp_lo, 1.0);
      pi0 = clamp_probs(expit_linpred(xs1_a0, beta_sel), clamp_lo, 1.0);
    } else {
      pi1 = pi1_fixed;
      pi0 = pi0_fixed;
    }
    const Eigen::VectorXd pi_x =
        (pi1.array() * p_pop.array() + pi0.array() * (1.0 - p_pop.array())).matrix();

    Eigen::VectorXd s1, s0;
    switch (method) {
      case Method::OM: {
        Eigen::VectorXd pred1, pred0;
        if (om_form == OmSpec::Form::Interacted) {
          const Eigen::VectorXd g1 = theta.segment(off_g1, po);
          const Eigen::VectorXd g0 = theta.segment(off_g0, po);
          Eigen::VectorXd w1 = Eigen::VectorXd::Zero(n), w0 = Eigen::VectorXd::Zero(n);
          for (int i = 0; i < n; ++i) (a[i] == 1 ? w1[i] : w0[i]) = 1.0;
          psi.middleCols(off_g1, po) = wls_score_rows(xo1, y, w1, g1);
          psi.middleCols(off_g0, po) = wls_score_rows(xo1, y, w0, g0);
          pred1 = xo1 * g1;
          pred0 = xo1 * g0;
        } else {
          const Eigen::VectorXd g = theta.segment(off_gadd, po);
          psi.middleCols(off_gadd, po) = wls_score_rows(xo1_add_obs, y, ones, g);
          pred1 = xo1_add_a1 * g;
          pred0 = xo1_add_a0 * g;
        }
        s1 = om_summands(pred1, pi_x, pi_bar);
        s0 = om_summands(pred0, pi_x, pi_bar);
        break;
      }
      case Method::IPW1: {
        const Eigen::VectorXd e1 =
            clamp_probs(p_pop, kPropensityClamp, 1.0 - kPropensityClamp);
        const Eigen::VectorXd e0 = clamp_probs(
            (1.0 - p_pop.array()).matrix(), kPropensityClamp, 1.0 - kPropensityClamp);
        s1 = ipw1_summands(1, y, a, e1, pi1, pi_bar);
        s0 = ipw1_summands(0, y, a, e0, pi0, pi_bar);
        break;
      }
      case Method::IPW2: {
        const Eigen::VectorXd e1 =
            clamp_probs(p_samp, kPropensityClamp, 1.0 - kPropensityClamp);
        const Eigen::VectorXd e0 = clamp_probs(
            (1.0 - p_samp.array()).matrix(), kPropensityClamp, 1.0 - kPropensityClamp);
        s1 = ipw2_summands(1, y, a, e1, pi_x, pi_bar);
        s0 = ipw2_summands(0, y, a, e0, pi_x, pi_bar);
        break;
      }
      default:
        throw Error("stacked psi: unsupported method");
    }

    psi.col(idx_mu1) = s1.array() - theta[idx_mu1];
    psi.col(idx_mu0) = s0.array() - theta[idx_mu0];
    psi.col(idx_acd).setConstant(theta[idx_mu1] - theta[idx_mu0] - theta[idx_acd]);
    return psi;
  }
};

}  // namespace

Eigen::MatrixXd EstimatingSystem::evaluate(const Eigen::VectorXd& at) const {
  if (at.size() != theta.size()) {
    throw Error("EstimatingSystem: parameter vector has length " +
                std::to_string(at.size()) + ", expected " + std::to_string(theta.size()));
  }
  Eigen::MatrixXd out = psi(at);
  if (out.rows() != n_rows || out.cols() != theta.size()) {
    throw Error("EstimatingSystem: psi returned " + std::to_string(out.rows()) + "x" +
                std::to_string(out.cols()) + ", expected " + std::to_string(n_rows) +
                "x" + std::to_string(theta.size()));
  }
  return out;
}

EstimatingSystem stack_system(const Dataset& data, const PropensityPair& prop,
                              const SelectionModel& sel, const OmSpec& om_spec,
                              const AcdEstimate& estimates) {
  const Method method = estimates.method;
  if (method != Method::OM && method != Method::IPW1 && method != Method::IPW2) {
    throw ConfigError("stack_system: only the proposed methods (OM, IPW1, IPW2) "
                      "stack the full estimating system");
  }
  if (!estimates.mu1 || !estimates.mu0) {
    throw ConfigError("stack_system: estimates must carry mu(1) and mu(0)");
  }

  ProposedContext ctx;
  ctx.method = method;
  ctx.modeled = sel.mode == SelectionMode::Modeled;
  ctx.n = data.n();
  ctx.y = data.y;
  ctx.a = data.a;
  ctx.a_dbl = data.a.cast<double>();
  ctx.sel_w = data.sel_weight;
  ctx.ones = Eigen::VectorXd::Ones(data.n());
  ctx.pi_bar = sel.pi_bar;
  ctx.clamp_lo = sel.clamp_lo;
  ctx.xp1 = add_intercept(subset_cols(data.x, prop.covariate_cols));
  ctx.pp = static_cast<int>(ctx.xp1.cols());

  EstimatingSystem sys;
  std::vector<std::string>& labels = sys.labels;
  const auto prop_names = covariate_names(data, prop.covariate_cols);
  int off = 0;

  Eigen::VectorXd theta(0);
  auto append = [&theta](const Eigen::VectorXd& block) {
    Eigen::VectorXd next(theta.size() + block.size());
    next << theta, block;
    theta = next;
  };

  if (method == Method::IPW2) {
    ctx.off_esamp = off;
    append(prop.e_sample.coef);
    labels.push_back("e_samp:(intercept)");
    for (const auto& nm : prop_names) labels.push_back("e_samp:" + nm);
    off += ctx.pp;
  }
  ctx.off_epop = off;
  append(prop.e_pop.coef);
  labels.push_back("e_pop:(intercept)");
  for (const auto& nm : prop_names) labels.push_back("e_pop:" + nm);
  off += ctx.pp;

  OutcomeFits om_fits;
  if (method == Method::OM) {
    om_fits = fit_outcome_models(data, om_spec);
    ctx.om_form = om_fits.spec.form;
    const Eigen::MatrixXd xo = subset_cols(data.x, om_fits.spec.covariate_cols);
    const auto om_names = covariate_names(data, om_fits.spec.covariate_cols);
    if (ctx.om_form == OmSpec::Form::Interacted) {
      ctx.xo1 = add_intercept(xo);
      ctx.po = static_cast<int>(ctx.xo1.cols());
      ctx.off_g1 = off;
      append(om_fits.g1.coef);
      labels.push_back("om1:(intercept)");
      for (const auto& nm : om_names) labels.push_back("om1:" + nm);
      off += ctx.po;
      ctx.off_g0 = off;
      append(om_fits.g0.coef);
      labels.push_back("om0:(intercept)");
      for (const auto& nm : om_names) labels.push_back("om0:" + nm);
      off += ctx.po;
    } else {
      Eigen::MatrixXd design(data.n(), 1 + xo.cols());
      design.col(0) = ctx.a_dbl;
      design.rightCols(xo.cols()) = xo;
      ctx.xo1_add_obs = add_intercept(design);
      ctx.xo1_add_a1 = ctx.xo1_add_obs;
      ctx.xo1_add_a1.col(1).setOnes();
      ctx.xo1_add_a0 = ctx.xo1_add_obs;
      ctx.xo1_add_a0.col(1).setZero();
      ctx.po = static_cast<int>(ctx.xo1_add_obs.cols());
      ctx.off_gadd = off;
      append(om_fits.g_add.coef);
      labels.push_back("om:(intercept)");
      labels.push_back("om:a");
      for (const auto& nm : om_names) labels.push_back("om:" + nm);
      off += ctx.po;
    }
  }

  if (ctx.modeled) {
    ctx.xs1_a1 = add_intercept(sel.design_a1);
    ctx.xs1_a0 = add_intercept(sel.design_a0);
    ctx.xs1_obs = ctx.xs1_a1;
    for (int i = 0; i < data.n(); ++i) {
      if (data.a[i] == 0) ctx.xs1_obs.row(i) = ctx.xs1_a0.row(i);
    }
    ctx.u.resize(data.n());
    for (int i = 0; i < data.n(); ++i) {
      ctx.u[i] = std::clamp(1.0 / data.sel_weight[i], sel.clamp_lo, 1.0 - 1e-6);
    }
    ctx.ps = static_cast<int>(ctx.xs1_obs.cols());
    ctx.off_sel = off;
    Eigen::VectorXd sel_block(ctx.ps + 1);
    sel_block.head(ctx.ps) = sel.beta_fit.coef;
    sel_block[ctx.ps] = sel.beta_fit.dispersion_or_precision;
    append(sel_block);
    labels.push_back("sel:(intercept)");
    for (int j = 0; j < ctx.ps - 1; ++j) labels.push_back("sel:z" + std::to_string(j + 1));
    labels.push_back("sel:phi");
    off += ctx.ps + 1;
  } else {
    ctx.pi1_fixed = sel.pi_a(1, data.a);
    ctx.pi0_fixed = sel.pi_a(0, data.a);
  }

  ctx.idx_mu1 = off;
  ctx.idx_mu0 = off + 1;
  ctx.idx_acd = off + 2;
  Eigen::VectorXd tail(3);
  tail << *estimates.mu1, *estimates.mu0, estimates.acd;
  append(tail);
  labels.push_back("mu1");
  labels.push_back("mu0");
  labels.push_back("acd");

  sys.theta = theta;
  sys.n_rows = data.n();
  sys.acd_index = ctx.idx_acd;
  sys.psi = ctx;
  if (static_cast<int>(sys.labels.size()) != sys.theta.size()) {
    throw Error("stack_system: label/parameter length mismatch");
  }
  return sys;
}

Eigen::MatrixXd numeric_jacobian(const EstimatingSystem& system, const Eigen::VectorXd& theta) {
  const int m = static_cast<int>(theta.size());
  const double croot = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd jac(m, m);
  for (int j = 0; j < m; ++j) {
    const double h = croot * std::max(1.0, std::abs(theta[j]));
    Eigen::VectorXd up = theta, dn = theta;
    up[j] += h;
    dn[j] -= h;
    const Eigen::VectorXd fu = system.evaluate(up).colwise().mean();
    const Eigen::VectorXd fd = system.evaluate(dn).colwise().mean();
    jac.col(j) = (fu - fd) / (2.0 * h);
  }
  Eigen::MatrixXd M = -jac;
  if (!M.allFinite()) {
    throw Error("numeric_jacobian: non-finite derivative entries");
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smin = sv[m - 1], smax = sv[0];
  if (!(smin > 0.0) || smax / smin > kMaxCondition) {
    const Eigen::VectorXd v = svd.matrixV().col(m - 1).cwiseAbs();
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int i, int k) { return v[i] > v[k]; });
    std::vector<std::string> blocks;
    std::string msg = "numeric_jacobian: estimating-equation Jacobian is singular "
                      "(condition number > 1e12); nearly dependent parameters:";
    for (int i = 0; i < std::min(3, m); ++i) {
      if (v[order[i]] < 0.1 * v[order[0]]) break;
      blocks.push_back(system.labels.empty() ? "theta[" + std::to_string(order[i]) + "]"
                                             : system.labels[order[i]]);
      msg += " " + blocks.back();
    }
    throw SingularSystemError(msg, blocks);
  }
  return M;
}

VarianceEstimate sandwich_variance(const EstimatingSystem& system, const Eigen::VectorXd& theta,
                                   const SurveyDesign* design, LonelyPsuPolicy policy) {
  const int m = static_cast<int>(theta.size());
  const int n = system.n_rows;
  const Eigen::MatrixXd M = numeric_jacobian(system, theta);
  const Eigen::MatrixXd psi = system.evaluate(theta);
  // phi_i = M^{-1} psi_i, stored as rows.
  const Eigen::MatrixXd phi = M.partialPivLu().solve(psi.transpose()).transpose();

  VarianceEstimate out;
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n));

  if (design == nullptr) {
    out.mode = VarianceMode::IID;
    out.vcov = scale * (phi.transpose() * phi);
  } else {
    out.mode = VarianceMode::StratifiedCluster;
    if (static_cast<int>(design->membership.size()) != n) {
      throw DataError("sandwich_variance: design membership does not match row count");
    }
    const int K = design->n_strata();

    // PSU totals of the influence contributions.
    std::vector<std::vector<Eigen::RowVectorXd>> totals(K);
    for (int k = 0; k < K; ++k) {
      totals[k].assign(design->psus_per_stratum[k], Eigen::RowVectorXd::Zero(m));
    }
    for (int i = 0; i < n; ++i) {
      const auto [k, j] = design->membership[i];
      totals[k][j] += phi.row(i);
    }

    // Resolve lonely strata per policy.
    std::vector<int> lonely;
    for (int k = 0; k < K; ++k) {
      if (design->psus_per_stratum[k] < 2) lonely.push_back(k);
    }
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);

    if (!lonely.empty() && policy == LonelyPsuPolicy::Error) {
      std::string msg = "sandwich_variance: strata with a single PSU:";
      for (int k : lonely) msg += " " + design->stratum_labels[k];
      throw LonelyPsuError(msg + " (set a lonely-PSU policy to proceed)");
    }

    if (policy == LonelyPsuPolicy::CollapseStrata && !lonely.empty()) {
      std::vector<Eigen::RowVectorXd> merged;
      for (int k : lonely) merged.push_back(totals[k][0]);
      if (merged.size() < 2) {
        throw LonelyPsuError("sandwich_variance: cannot collapse a single lonely "
                             "stratum; no variance contrast available");
      }
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(m);
      for (const auto& t : merged) mean += t;
      mean /= static_cast<double>(merged.size());
      const double J = static_cast<double>(merged.size());
      for (const auto& t : merged) {
        const Eigen::RowVectorXd d = t - mean;
        acc += (J / (J - 1.0)) * d.transpose() * d;
      }
    }

    Eigen::RowVectorXd grand = Eigen::RowVectorXd::Zero(m);
    int n_psu_total = 0;
    if (policy == LonelyPsuPolicy::CenterAtGrandMean) {
      for (int k = 0; k < K; ++k) {
        for (const auto& t : totals[k]) {
          grand += t;
          ++n_psu_total;
        }
      }
      grand /= static_cast<double>(n_psu_total);
    }

    for (int k = 0; k < K; ++k) {
      const double J = static_cast<double>(design->psus_per_stratum[k]);
      if (J < 2) {
        if (policy == LonelyPsuPolicy::CenterAtGrandMean) {
          const Eigen::RowVectorXd d = totals[k][0] - grand;
          acc += d.transpose() * d;
        }
        continue;  // collapsed strata already accumulated
      }
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(m);
      for (const auto& t : totals[k]) mean += t;
      mean /= J;
      for (const auto& t : totals[k]) {
        const Eigen::RowVectorXd d = t - mean;
        acc += (J / (J - 1.0)) * d.transpose() * d;
      }
    }
    out.vcov = scale * acc;
  }

  out.vcov = ((out.vcov + out.vcov.transpose()) / 2.0).eval();
  out.se = out.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

std::pair<double, double> wald_ci(double estimate, double se, double level) {
  if (!(se >= 0.0)) throw Error("wald_ci: standard error must be nonnegative");
  if (!(level > 0.0 && level < 1.0)) throw Error("wald_ci: level must lie in (0,1)");
  const double z = normal_quantile(1.0 - level / 2.0);
  return {estimate - z * se, estimate + z * se};
}

}  // namespace svyacd
