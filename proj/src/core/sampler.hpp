#pragma once

// Metropolis-within-Gibbs over (Z, tau) and the upper indicator layers.  Each
// iteration alternates one truncated-normal tau update with one indicator
// update; indicator proposals depend on the prior:
//
//   * single layer (Basic/Unadjusted): flip one entry of Z,
//   * AcrossTraits: delta in {-1,0,+1} moves W rows (activate with a
//     beta-binomial row draw / deactivate / flip within an active row),
//   * AcrossSites: the same scheme on per-trait group indicators, with
//     singleton groups pinned to Z_v = 1 while active.
//
// Likelihood deltas come from incremental Cholesky updates under the g-prior
// and from fresh factorizations under the identity slab.  Chains accumulate
// running sums only; no draws are stored unless tracing is on.

#include <array>
#include <map>
#include <optional>

#include "core/cholesky.hpp"
#include "core/model.hpp"
#include "core/types.hpp"

namespace sparsepost {

struct ChainInit {
  enum class Kind { Empty, Full, TopCorrelated };
  Kind kind = Kind::Empty;
  int top_j = 10;  // J for TopCorrelated

  static ChainInit empty() { return {Kind::Empty, 0}; }
  static ChainInit full() { return {Kind::Full, 0}; }
  static ChainInit top(int j) { return {Kind::TopCorrelated, j}; }
};

struct SamplerConfig {
  int n_chains = 4;
  std::int64_t burn_in = 10000;
  std::int64_t n_samples = 500000;
  std::uint64_t seed = 0;

  double pi_plus = 0.5;        // single-layer add probability
  double pi_zero_star = 0.5;   // two-layer: update within the lower layer
  double pi_plus_star = 0.25;  // two-layer: activate
  double pi_minus_star = 0.25; // two-layer: deactivate

  std::optional<double> tau_fixed;  // freeze tau (e.g. to match enumeration)
  double delta_threshold = 0.05;    // convergence cut on per-entry spread

  std::vector<ChainInit> chain_inits;  // empty -> Empty/Full/Top(J)/Top(2J)...
  int top_j = 10;

  std::int64_t trace_every = 0;     // 0 = no trace
  std::int64_t validate_every = 0;  // re-check state invariants every k steps
  bool freeze_indicators = false;   // diagnostic: sample tau only
  int n_threads = 0;                // 0 = one thread per chain

  void validate() const;
  std::vector<ChainInit> resolved_inits() const;
};

// ---------------------------------------------------------------------------
// Elementary proposal pieces (exposed for direct testing).
// ---------------------------------------------------------------------------

struct TauProposal {
  double tau_new = 0.0;
  double log_q_ratio = 0.0;  // log q(tau|tau_new) - log q(tau_new|tau)
};

// Truncated-normal random walk on (tau_lo, tau_hi) with sd (tau_hi-tau_lo)/4,
// drawn by inverse CDF; the Hastings ratio carries both truncation
// normalizers.
TauProposal propose_tau(double tau, const Hyperparameters& hyper, RngStream& rng);

struct Move {
  enum class Kind {
    Flip,         // single-layer flip of Z(v,t)
    WithinRow,    // AcrossTraits delta=0: flip Z(v,t) inside an active row
    RowAdd,       // AcrossTraits delta=+1: W_v on, row drawn
    RowRemove,    // AcrossTraits delta=-1: W_v off, row zeroed
    WithinGroup,  // AcrossSites delta=0: flip Z(v,t) inside an active group
    GroupAdd,     // AcrossSites delta=+1: G_gt on, members drawn
    GroupRemove,  // AcrossSites delta=-1: G_gt off, members zeroed
    NoOp,         // AcrossSites corner: delta=0 drawn with no eligible group
  };
  Kind kind = Kind::Flip;
  int v = -1;
  int t = -1;
  int g = -1;
  bool add = false;                // Flip/WithinRow/WithinGroup direction
  std::vector<int> row_traits;     // RowAdd: drawn; RowRemove: previously on
  std::vector<int> group_members;  // GroupAdd: drawn; GroupRemove: previously on
  double log_q_ratio = 0.0;
};

const char* to_string(Move::Kind k);

// Draw one indicator move from the current state.
Move propose_indicators(const PriorSpec& spec, const IndicatorState& state,
                        const SamplerConfig& config, RngStream& rng);

// Apply a move in place (indicators only; tau untouched).
void apply_move(IndicatorState& state, const Move& move, const PriorSpec& spec);

// Log prior change of a move, evaluated on the pre-move state.
double move_prior_delta(const PriorSpec& spec, const IndicatorState& state, const Move& move);

// Accept with probability min(1, exp(log_posterior_delta + log_q_ratio)).
bool mh_accept(double log_posterior_delta, double log_q_ratio, RngStream& rng);

// ---------------------------------------------------------------------------
// Chains and the chain ensemble.
// ---------------------------------------------------------------------------

struct AcceptanceStats {
  std::int64_t proposed = 0;
  std::int64_t accepted = 0;
  double rate() const { return proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0; }
};

struct TracePoint {
  std::int64_t iteration = 0;
  double tau = 0.0;
  int z_count = 0;
  double log_posterior = 0.0;
};

struct ChainResult {
  Matrix z_bar;                    // p x q within-chain average
  std::optional<Vector> w_bar;     // AcrossTraits
  std::optional<Matrix> g_bar;     // AcrossSites (r x q)
  double tau_mean = 0.0;
  double tau_sq_mean = 0.0;
  std::int64_t n_samples = 0;
  std::map<std::string, AcceptanceStats> acceptance;
  std::vector<TracePoint> trace;
};

ChainResult run_chain(const DataSet& data, const PriorSpec& spec, const SamplerConfig& config,
                      int chain_index);

struct PosteriorSummary {
  Matrix z_bar;                        // pooled p x q
  std::vector<Matrix> z_bar_chain;
  Matrix delta_z;                      // per-entry max-min across chains
  double convergence_fraction = 0.0;   // share of delta_z entries below threshold
  bool converged = false;              // convergence_fraction >= 0.95

  std::optional<Vector> w_bar;
  std::optional<Vector> delta_w;
  std::optional<Matrix> g_bar;
  std::optional<Matrix> delta_g;

  double tau_mean = 0.0;
  double tau_var = 0.0;
  std::map<std::string, AcceptanceStats> acceptance;
  int n_chains = 0;
  std::int64_t n_samples_per_chain = 0;
};

inline constexpr double kConvergedFraction = 0.95;

PosteriorSummary run_ensemble(const DataSet& data, const PriorSpec& spec,
                              const SamplerConfig& config);

}  // namespace sparsepost
