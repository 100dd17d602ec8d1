#include "svyacd/selection.hpp"

#include <cmath>
#include <string>

#include "svyacd/errors.hpp"
#include "svyacd/mathutil.hpp"

namespace svyacd {

namespace {

std::vector<int> resolve_cols(const Dataset& data, const std::vector<int>& cols) {
  if (cols.empty()) {
    std::vector<int> all(data.p());
    for (int j = 0; j < data.p(); ++j) all[j] = j;
    return all;
  }
  for (int j : cols) {
    if (j < 0 || j >= data.p()) {
      throw ConfigError("selection covariate column index " + std::to_string(j) +
                        " out of range");
    }
  }
  return cols;
}

// Selection design without intercept: [A, X_sel, (A*X_sel)] with the group
// column forced to `a`.
Eigen::MatrixXd selection_design(const Dataset& data, const std::vector<int>& cols,
                                 bool interaction, int a) {
  const int n = data.n();
  const int p = static_cast<int>(cols.size());
  Eigen::MatrixXd d(n, 1 + p + (interaction ? p : 0));
  d.col(0).setConstant(static_cast<double>(a));
  for (int j = 0; j < p; ++j) d.col(1 + j) = data.x.col(cols[j]);
  if (interaction) {
    for (int j = 0; j < p; ++j) d.col(1 + p + j) = a * data.x.col(cols[j]);
  }
  return d;
}

std::vector<std::string> selection_names(const Dataset& data, const std::vector<int>& cols,
                                         bool interaction) {
  std::vector<std::string> names{"a"};
  auto col_name = [&](int j) {
    return data.x_names.empty() ? "x" + std::to_string(j + 1) : data.x_names[j];
  };
  for (int j : cols) names.push_back(col_name(j));
  if (interaction) {
    for (int j : cols) names.push_back("a:" + col_name(j));
  }
  return names;
}

}  // namespace

double marginal_selection_prob(double pi1, double pi0, double ew1) {
  if (!(pi1 > 0.0 && pi1 <= 1.0) || !(pi0 > 0.0 && pi0 <= 1.0)) {
    throw DataError("marginal_selection_prob: selection probabilities must lie in (0,1]");
  }
  if (!(ew1 >= 0.0 && ew1 <= 1.0)) {
    throw DataError("marginal_selection_prob: propensity must lie in [0,1]");
  }
  return pi1 * ew1 + pi0 * (1.0 - ew1);
}

SelectionModel build_selection_model(const Dataset& data, SelectionMode mode,
                                     const SelectionOptions& options,
                                     const Eigen::VectorXd& pop_propensity) {
  const int n = data.n();
  if (pop_propensity.size() != n) {
    throw DataError("build_selection_model: propensity vector length mismatch");
  }
  if (mode == SelectionMode::Known && !data.has_sel_weight) {
    throw DataError("build_selection_model: Known mode requires selection weights");
  }

  SelectionModel model;
  model.mode = mode;
  model.clamp_lo = options.clamp_lo;

  if (options.pi_bar_override) {
    model.pi_bar = *options.pi_bar_override;
  } else if (data.pop_size) {
    model.pi_bar = static_cast<double>(n) / static_cast<double>(*data.pop_size);
  } else {
    throw ConfigError("build_selection_model: overall selection probability is "
                      "undetermined; supply pop_size or a pi_bar override");
  }
  if (!(model.pi_bar > 0.0 && model.pi_bar <= 1.0)) {
    throw ConfigError("build_selection_model: Pr(S=1) must lie in (0,1], got " +
                      std::to_string(model.pi_bar));
  }

  const auto cols = resolve_cols(data, options.covariate_cols);

  // Model the observed selection probabilities u = 1/omega with a beta GLM on
  // (A, X). Design weights only reveal pi at the observed (a_i, x_i), so the
  // counterfactual group level comes from this fit even in Known mode.
  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) {
    u[i] = std::clamp(1.0 / data.sel_weight[i], options.clamp_lo, 1.0 - 1e-6);
  }
  const Eigen::MatrixXd obs_design =
      [&] {
        Eigen::MatrixXd d = selection_design(data, cols, options.group_interaction, 1);
        for (int i = 0; i < n; ++i) {
          if (data.a[i] == 0) {
            d(i, 0) = 0.0;
            if (options.group_interaction) {
              d.row(i).tail(cols.size()).setZero();
            }
          }
        }
        return d;
      }();
  model.beta_fit = fit_beta_glm(obs_design, u, Eigen::VectorXd::Ones(n),
                                selection_names(data, cols, options.group_interaction));

  model.design_a1 = selection_design(data, cols, options.group_interaction, 1);
  model.design_a0 = selection_design(data, cols, options.group_interaction, 0);
  const Eigen::VectorXd fitted_a1 = predict_mean(model.beta_fit, model.design_a1);
  const Eigen::VectorXd fitted_a0 = predict_mean(model.beta_fit, model.design_a0);

  model.pi_obs.resize(n);
  model.pi_cf.resize(n);
  model.pi_x.resize(n);
  int clamped = 0;
  auto clamp_count = [&](double p) {
    const double c = std::clamp(p, options.clamp_lo, 1.0);
    if (c != p) ++clamped;
    return c;
  };
  for (int i = 0; i < n; ++i) {
    const double fitted_obs = data.a[i] == 1 ? fitted_a1[i] : fitted_a0[i];
    const double fitted_cf = data.a[i] == 1 ? fitted_a0[i] : fitted_a1[i];
    double obs = mode == SelectionMode::Known ? 1.0 / data.sel_weight[i] : fitted_obs;
    double cf = fitted_cf;
    if (mode == SelectionMode::Known && options.counterfactual_pi) {
      if (options.counterfactual_pi->size() != n) {
        throw ConfigError("build_selection_model: counterfactual_pi length mismatch");
      }
      cf = (*options.counterfactual_pi)[i];
    }
    model.pi_obs[i] = clamp_count(obs);
    model.pi_cf[i] = clamp_count(cf);
    const double pi1 = data.a[i] == 1 ? model.pi_obs[i] : model.pi_cf[i];
    const double pi0 = data.a[i] == 0 ? model.pi_obs[i] : model.pi_cf[i];
    model.pi_x[i] = marginal_selection_prob(pi1, pi0, pop_propensity[i]);
  }
  model.clamped_rows = clamped;
  return model;
}

}  // namespace svyacd
