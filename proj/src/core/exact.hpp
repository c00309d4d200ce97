#pragma once

// Exhaustive posterior evaluation at fixed tau: every configuration with
// |Z| < max_size is scored, normalized by log-sum-exp, and exposed for exact
// inclusion probabilities, MAP lookup and greedy confidence sets.  Also hosts
// the closed-form approximations to conditional inclusion expectations used
// for fast screening on (near-)orthogonal designs.

#include "core/cholesky.hpp"
#include "core/model.hpp"
#include "core/types.hpp"

namespace sparsepost {

struct EnumerationEntry {
  std::uint64_t mask = 0;  // bit v set <=> variant v active
  double log_posterior = 0.0;
  double probability = 0.0;
};

struct EnumerationTable {
  std::vector<EnumerationEntry> entries;  // probability-descending
  double log_normalizer = 0.0;
  int p = 0;
  int max_size = 0;  // configurations satisfy |Z| < max_size
  double tau = 0.0;
};

// Feasible configuration count sum_{k < max_size} C(p, k); refuses to start
// above kEnumerationBudget.
double enumeration_count(int p, int max_size);
inline constexpr double kEnumerationBudget = 1e8;

// Single-trait enumeration under the Basic prior at fixed tau.  Workers
// partition the space by leading variant; the result is deterministic and
// independent of n_threads.
EnumerationTable enumerate_posterior(const Matrix& X, const Vector& y,
                                     const Hyperparameters& hyper, double tau, int max_size,
                                     int n_threads = 1);

// Exact marginal inclusion probabilities from a table.
Vector exact_pips(const EnumerationTable& table);

// Highest-probability configuration.
EnumerationEntry map_configuration(const EnumerationTable& table);

struct ConfidenceSet {
  std::vector<int> variants;  // in greedy insertion order
  double attained = 0.0;      // P(S): total probability supported within S
  std::vector<double> path;   // P(S) after each insertion
};

// Greedy confidence set: grow S by the variant that maximizes the probability
// that the causal configuration is supported within S, until it reaches
// `threshold`.
ConfidenceSet confidence_set(const EnumerationTable& table, double threshold);

// ---------------------------------------------------------------------------
// Closed-form conditional-expectation approximations (orthogonal-design
// regime, weak effects, n large).  eta is the marginal correlation
// x_v'y / sqrt(n y'y).  Values of eta^2 at or above 1 are clamped to
// 1 - 1e-12 and flagged.
// ---------------------------------------------------------------------------

struct ApproxResult {
  double value = 0.0;
  bool eta_clamped = false;
};

// Single-layer prior: E[Z_v | Z_rest, tau, y] with z_rest = |Z_[-v]|.
ApproxResult approx_pip_basic(double tau, int n, int p, double a_omega, double b_omega,
                              int z_rest, double eta);

// Within an active row (AcrossTraits Z level): s_rest = |Z^v_[-t]|.
ApproxResult approx_pip_within_row(double tau, int n, int q, double a_v, double b_v,
                                   int s_rest, double eta);

// Row relevance (AcrossTraits W level): etas holds eta_vt for each trait.
ApproxResult approx_pip_row(double tau, int n, int p, double a_w, double b_w, int w_rest,
                            double a_v, double b_v, const std::vector<double>& etas);

// Group relevance (AcrossSites G level): etas holds eta_v for the group's
// variants; a singleton group uses the forced-inclusion form.
ApproxResult approx_pip_group(double tau, int n, int r, double a_gtop, double b_gtop,
                              int g_rest, double a_g, double b_g,
                              const std::vector<double>& etas);

}  // namespace sparsepost
