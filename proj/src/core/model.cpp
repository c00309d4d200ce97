#include "core/model.hpp"

#include <algorithm>
#include <cmath>

namespace sparsepost {

bool cholesky_in_place(Matrix& A, double rel_tol) {
  const int k = static_cast<int>(A.rows());
  double scale = 0.0;
  for (int i = 0; i < k; ++i) scale = std::max(scale, A(i, i));
  if (!(scale > 0.0)) return k == 0;
  const double floor = rel_tol * scale;
  for (int j = 0; j < k; ++j) {
    double d = A(j, j);
    for (int l = 0; l < j; ++l) d -= A(j, l) * A(j, l);
    if (!(d > floor)) return false;
    d = std::sqrt(d);
    A(j, j) = d;
    for (int i = j + 1; i < k; ++i) {
      double s = A(i, j);
      for (int l = 0; l < j; ++l) s -= A(i, l) * A(j, l);
      A(i, j) = s / d;
    }
  }
  return true;
}

namespace {

// Per-vector beta-binomial mass for a layer with `total` slots and `count`
// active: log B(a+count, b+total-count) - log B(a,b).
double layer_mass(double a, double b, int count, int total) {
  return log_beta(a + count, b + total - count) - log_beta(a, b);
}

// Delta of layer_mass when count -> count+1 (one slot flips on).
double layer_add_delta(double a, double b, int count, int total) {
  // log B(a+c+1, b+t-c-1) - log B(a+c, b+t-c) = log(a+c) - log(b+t-c-1)
  return std::log(a + count) - std::log(b + total - count - 1);
}

}  // namespace

double log_prior_indicators(const PriorSpec& spec, const IndicatorState& state) {
  spec.validate(state.p());
  state.check_consistency(spec);
  const int p = state.p();
  const int q = state.q();
  const Hyperparameters& h = spec.hyper;
  double lp = 0.0;
  switch (spec.kind) {
    case PriorKind::Basic:
      for (int t = 0; t < q; ++t) lp += layer_mass(h.a_omega, h.b_omega, state.z_count_trait(t), p);
      break;
    case PriorKind::Unadjusted:
      for (int v = 0; v < p; ++v) lp += layer_mass(h.av(v), h.bv(v), state.row_count(v), q);
      break;
    case PriorKind::AcrossTraits: {
      lp += layer_mass(h.a_w, h.b_w, state.w_count(), p);
      for (int v = 0; v < p; ++v) {
        if ((*state.W)(v)) lp += layer_mass(h.av(v), h.bv(v), state.row_count(v), q);
      }
      break;
    }
    case PriorKind::AcrossSites: {
      const GroupMap& gm = *spec.groups;
      const int r = gm.n_groups();
      for (int t = 0; t < q; ++t) {
        lp += layer_mass(h.a_g, h.b_g, state.g_count_trait(t), r);
        for (int g = 0; g < r; ++g) {
          const int pg = gm.group_size(g);
          if ((*state.G)(g, t) && pg > 1) {
            int s = 0;
            for (int v : gm.members[g]) s += state.Z(v, t);
            lp += layer_mass(h.ag(g), h.bg(g), s, pg);
          }
        }
      }
      break;
    }
  }
  return lp;
}

double prior_flip_delta(const PriorSpec& spec, const IndicatorState& state, int v, int t) {
  const int p = state.p();
  const int q = state.q();
  if (v < 0 || v >= p || t < 0 || t >= q) throw_validation("prior_flip_delta: index out of range");
  const Hyperparameters& h = spec.hyper;
  const bool removing = state.Z(v, t) != 0;
  double delta = 0.0;
  switch (spec.kind) {
    case PriorKind::Basic: {
      const int k = state.z_count_trait(t) - (removing ? 1 : 0);  // count with (v,t) off
      delta = layer_add_delta(h.a_omega, h.b_omega, k, p);
      break;
    }
    case PriorKind::Unadjusted: {
      const int s = state.row_count(v) - (removing ? 1 : 0);
      delta = layer_add_delta(h.av(v), h.bv(v), s, q);
      break;
    }
    case PriorKind::AcrossTraits: {
      if (!state.W || (*state.W)(v) == 0) {
        throw_validation("prior_flip_delta: flip targets a row with W_v = 0");
      }
      const int s = state.row_count(v) - (removing ? 1 : 0);
      delta = layer_add_delta(h.av(v), h.bv(v), s, q);
      break;
    }
    case PriorKind::AcrossSites: {
      const GroupMap& gm = *spec.groups;
      const int g = gm.group_of[v];
      if (!state.G || (*state.G)(g, t) == 0) {
        throw_validation("prior_flip_delta: flip targets an inactive group");
      }
      const int pg = gm.group_size(g);
      if (pg == 1) throw_validation("prior_flip_delta: indicator in an active singleton group is pinned");
      int s = 0;
      for (int u : gm.members[g]) s += state.Z(u, t);
      if (removing) s -= 1;
      delta = layer_add_delta(h.ag(g), h.bg(g), s, pg);
      break;
    }
  }
  return removing ? -delta : delta;
}

std::vector<int> active_set(const BinaryMatrix& Z, int t) {
  std::vector<int> idx;
  for (int v = 0; v < Z.rows(); ++v) {
    if (Z(v, t)) idx.push_back(v);
  }
  return idx;
}

namespace {

TraitLikelihood finish(double n, double yty, double proj, double det_term,
                       const Hyperparameters& h) {
  TraitLikelihood out;
  out.s_squared = std::max(0.0, yty - proj);
  out.log_det_term = det_term;
  out.log_lik = -(0.5 * n + h.alpha_rho) * std::log(h.lambda_rho + 0.5 * out.s_squared) + det_term;
  return out;
}

}  // namespace

TraitLikelihood log_marginal_likelihood_trait(const Matrix& X, const Vector& y,
                                              const std::vector<int>& active, double tau,
                                              const Hyperparameters& hyper) {
  const int n = static_cast<int>(X.rows());
  const int k = static_cast<int>(active.size());
  if (y.size() != n) throw_validation("log_marginal_likelihood_trait: y length mismatch");
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw_validation("log_marginal_likelihood_trait: tau must be positive");
  }
  const double yty = y.squaredNorm();
  if (k == 0) return finish(n, yty, 0.0, 0.0, hyper);

  Matrix Xz(n, k);
  for (int j = 0; j < k; ++j) {
    if (active[j] < 0 || active[j] >= X.cols()) {
      throw_validation("log_marginal_likelihood_trait: active index out of range");
    }
    Xz.col(j) = X.col(active[j]);
  }
  Vector c = Xz.transpose() * y;  // X_Z'y

  if (hyper.covariance == CovarianceForm::GPrior) {
    if (k >= n) {
      throw_numeric("infeasible model: |Z| >= n has zero mass under the g-prior");
    }
    Matrix A = Xz.transpose() * Xz;
    if (!cholesky_in_place(A, kPivotRelTol)) {
      throw_numeric("singular design: X_Z is rank deficient under the g-prior");
    }
    // proj = c'(X_Z'X_Z)^{-1}c via the factor; shrink by n tau^2/(n tau^2 + 1).
    Vector w = A.template triangularView<Eigen::Lower>().solve(c);
    const double nt2 = static_cast<double>(n) * tau * tau;
    const double proj = (nt2 / (nt2 + 1.0)) * w.squaredNorm();
    const double det_term = -0.5 * k * std::log1p(nt2);
    return finish(n, yty, proj, det_term, hyper);
  }

  // Identity slab: Omega^{-1} = X_Z'X_Z + I/tau^2.
  Matrix A = Xz.transpose() * Xz;
  A.diagonal().array() += 1.0 / (tau * tau);
  if (!cholesky_in_place(A, kPivotRelTol)) {
    throw_numeric("singular precision: X_Z'X_Z + I/tau^2 failed to factor");
  }
  Vector w = A.template triangularView<Eigen::Lower>().solve(c);
  const double proj = w.squaredNorm();
  double half_logdet_prec = 0.0;  // (1/2) logdet(Omega^{-1})
  for (int j = 0; j < k; ++j) half_logdet_prec += std::log(A(j, j));
  const double det_term = -half_logdet_prec - k * std::log(tau);
  return finish(n, yty, proj, det_term, hyper);
}

TraitLikelihood log_marginal_likelihood_generic(const Matrix& X, const Vector& y,
                                                const std::vector<int>& active, double tau,
                                                const Hyperparameters& hyper,
                                                const Matrix& sigma) {
  const int n = static_cast<int>(X.rows());
  const int k = static_cast<int>(active.size());
  const double yty = y.squaredNorm();
  if (k == 0) return finish(n, yty, 0.0, 0.0, hyper);
  if (sigma.rows() != k || sigma.cols() != k) {
    throw_validation("log_marginal_likelihood_generic: Sigma shape mismatch");
  }
  Matrix Xz(n, k);
  for (int j = 0; j < k; ++j) Xz.col(j) = X.col(active[j]);
  Vector c = Xz.transpose() * y;

  Matrix sigma_chol = sigma;
  if (!cholesky_in_place(sigma_chol, kPivotRelTol)) {
    throw_numeric("singular slab covariance");
  }
  double half_logdet_sigma = 0.0;
  for (int j = 0; j < k; ++j) half_logdet_sigma += std::log(sigma_chol(j, j));

  // Omega^{-1} = X_Z'X_Z + Sigma^{-1}/tau^2, with Sigma^{-1} from its factor.
  Matrix sigma_inv = Matrix::Identity(k, k);
  sigma_chol.template triangularView<Eigen::Lower>().solveInPlace(sigma_inv);
  sigma_chol.template triangularView<Eigen::Lower>().transpose().solveInPlace(sigma_inv);
  Matrix A = Xz.transpose() * Xz + sigma_inv / (tau * tau);
  if (!cholesky_in_place(A, kPivotRelTol)) {
    throw_numeric("singular precision matrix in generic evaluation");
  }
  Vector w = A.template triangularView<Eigen::Lower>().solve(c);
  const double proj = w.squaredNorm();
  double half_logdet_prec = 0.0;
  for (int j = 0; j < k; ++j) half_logdet_prec += std::log(A(j, j));
  const double det_term = -half_logdet_prec - k * std::log(tau) - half_logdet_sigma;
  return finish(n, yty, proj, det_term, hyper);
}

ModelEvaluation log_joint_posterior(const PriorSpec& spec, const IndicatorState& state,
                                    const DataSet& data) {
  if (state.p() != data.p() || state.q() != data.q()) {
    throw_validation("log_joint_posterior: state/data shape mismatch");
  }
  ModelEvaluation ev;
  ev.log_prior = log_prior_indicators(spec, state);
  const int q = data.q();
  ev.log_lik.resize(q);
  ev.s_squared.resize(q);
  ev.log_det_term.resize(q);
  for (int t = 0; t < q; ++t) {
    TraitLikelihood tl = log_marginal_likelihood_trait(data.X, data.Y.col(t),
                                                       active_set(state.Z, t), state.tau,
                                                       spec.hyper);
    ev.log_lik(t) = tl.log_lik;
    ev.s_squared(t) = tl.s_squared;
    ev.log_det_term(t) = tl.log_det_term;
  }
  ev.log_posterior = ev.log_prior + ev.log_lik.sum();
  return ev;
}

double flip_log_odds(const PriorSpec& spec, const IndicatorState& state, int v, int t,
                     const DataSet& data) {
  if (state.p() != data.p() || state.q() != data.q()) {
    throw_validation("flip_log_odds: state/data shape mismatch");
  }
  const double dprior = prior_flip_delta(spec, state, v, t);
  std::vector<int> cur = active_set(state.Z, t);
  std::vector<int> flipped = cur;
  if (state.Z(v, t)) {
    flipped.erase(std::find(flipped.begin(), flipped.end(), v));
  } else {
    flipped.push_back(v);
  }
  const Vector y = data.Y.col(t);
  const double ll_cur =
      log_marginal_likelihood_trait(data.X, y, cur, state.tau, spec.hyper).log_lik;
  const double ll_new =
      log_marginal_likelihood_trait(data.X, y, flipped, state.tau, spec.hyper).log_lik;
  return dprior + (ll_new - ll_cur);
}

}  // namespace sparsepost
