#pragma once

// Collapsed posterior over (Z, tau): structured indicator priors and the
// marginal likelihood with the precision and effect sizes integrated out.
// Everything is computed in log space.

#include "core/types.hpp"

namespace sparsepost {

// In-place lower Cholesky of the SPD matrix stored in A (lower triangle read,
// lower triangle written).  Returns false when a pivot falls below
// rel_tol * max diagonal, signalling (near-)collinearity.
bool cholesky_in_place(Matrix& A, double rel_tol);

// Relative pivot tolerance used to flag collinear active sets.
inline constexpr double kPivotRelTol = 1e-10;

// Log prior mass of the indicator configuration (tau excluded: its prior is
// constant on the support and drops from all ratios).  Throws invalid-state
// on hierarchy violations.
double log_prior_indicators(const PriorSpec& spec, const IndicatorState& state);

// Change in log prior from flipping Z(v,t), given the current state.  Throws
// when the flip is illegal under the hierarchy (inactive W row / inactive or
// singleton group).
double prior_flip_delta(const PriorSpec& spec, const IndicatorState& state, int v, int t);

struct TraitLikelihood {
  double log_lik = 0.0;      // log marginal likelihood, constants dropped
  double s_squared = 0.0;    // S^2 = y'y - y'X_Z Omega_Z X_Z'y
  double log_det_term = 0.0; // (1/2)logdet(Omega) - |Z|log(tau) - (1/2)logdet(Sigma)
};

// Marginal likelihood of one trait given the active variant set.  `active`
// holds the column indices with Z_vt = 1 (any order).
TraitLikelihood log_marginal_likelihood_trait(const Matrix& X, const Vector& y,
                                              const std::vector<int>& active, double tau,
                                              const Hyperparameters& hyper);

// Generic evaluation with an explicit slab covariance Sigma (|Z| x |Z|); used
// by the Identity path internally and as the dense reference route for the
// g-prior closed form.
TraitLikelihood log_marginal_likelihood_generic(const Matrix& X, const Vector& y,
                                                const std::vector<int>& active, double tau,
                                                const Hyperparameters& hyper,
                                                const Matrix& sigma);

std::vector<int> active_set(const BinaryMatrix& Z, int t);

struct ModelEvaluation {
  double log_prior = 0.0;
  Vector log_lik;       // per trait
  Vector s_squared;     // per trait
  Vector log_det_term;  // per trait
  double log_posterior = 0.0;
};

ModelEvaluation log_joint_posterior(const PriorSpec& spec, const IndicatorState& state,
                                    const DataSet& data);

// Log posterior odds of flipping Z(v,t): prior delta plus the likelihood
// change of trait t alone.  The other q-1 traits are untouched.
double flip_log_odds(const PriorSpec& spec, const IndicatorState& state, int v, int t,
                     const DataSet& data);

}  // namespace sparsepost
