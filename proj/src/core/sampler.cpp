#include "core/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

namespace sparsepost {

void SamplerConfig::validate() const {
  if (n_chains < 1) throw_validation("SamplerConfig: n_chains must be >= 1");
  if (burn_in < 0) throw_validation("SamplerConfig: burn_in must be >= 0");
  if (n_samples < 1) throw_validation("SamplerConfig: n_samples must be >= 1");
  if (!(pi_plus > 0.0 && pi_plus < 1.0)) throw_validation("SamplerConfig: pi_plus must lie in (0,1)");
  const double s = pi_zero_star + pi_plus_star + pi_minus_star;
  if (std::fabs(s - 1.0) > 1e-9) {
    throw_validation("SamplerConfig: pi_zero_star + pi_plus_star + pi_minus_star must equal 1");
  }
  for (double x : {pi_zero_star, pi_plus_star, pi_minus_star}) {
    if (!(x > 0.0 && x < 1.0)) throw_validation("SamplerConfig: move probabilities must lie in (0,1)");
  }
  if (top_j < 1) throw_validation("SamplerConfig: top_j must be >= 1");
  if (trace_every < 0 || validate_every < 0) {
    throw_validation("SamplerConfig: trace/validate intervals must be >= 0");
  }
  if (n_threads < 0) throw_validation("SamplerConfig: n_threads must be >= 0");
}

std::vector<ChainInit> SamplerConfig::resolved_inits() const {
  std::vector<ChainInit> inits(n_chains);
  for (int c = 0; c < n_chains; ++c) {
    if (!chain_inits.empty()) {
      inits[c] = chain_inits[c % chain_inits.size()];
    } else if (c == 0) {
      inits[c] = ChainInit::empty();
    } else if (c == 1) {
      inits[c] = ChainInit::full();
    } else {
      inits[c] = ChainInit::top(top_j * (c - 1));
    }
  }
  return inits;
}

// ---------------------------------------------------------------------------
// tau proposal.
// ---------------------------------------------------------------------------

TauProposal propose_tau(double tau, const Hyperparameters& hyper, RngStream& rng) {
  const double lo = hyper.tau_lo, hi = hyper.tau_hi;
  if (!(tau > lo && tau < hi)) throw_validation("propose_tau: tau outside prior support");
  const double sigma = (hi - lo) / 4.0;
  const double phi_a = normal_cdf((lo - tau) / sigma);
  const double phi_b = normal_cdf((hi - tau) / sigma);
  const double u = rng.uniform_pos();
  double tau_new = tau + sigma * normal_quantile(phi_a + u * (phi_b - phi_a));
  // The inverse-CDF draw lands strictly inside the support; clamp fp spill.
  tau_new = std::min(std::max(tau_new, std::nextafter(lo, hi)), std::nextafter(hi, lo));
  const double phi_a2 = normal_cdf((lo - tau_new) / sigma);
  const double phi_b2 = normal_cdf((hi - tau_new) / sigma);
  TauProposal out;
  out.tau_new = tau_new;
  // Gaussian kernels cancel; only the truncation normalizers survive.
  out.log_q_ratio = std::log(phi_b - phi_a) - std::log(phi_b2 - phi_a2);
  return out;
}

// ---------------------------------------------------------------------------
// Proposal mass tables.
// ---------------------------------------------------------------------------

namespace {

// Single-layer flip mass from a state with `count` of N cells active.  At the
// boundary states only one direction exists and the cell is uniform over N.
double flip_log_q(int count, int N, bool add, double pi_plus) {
  if (count == 0 || count == N) return -std::log(static_cast<double>(N));
  if (add) return std::log(pi_plus) - std::log(static_cast<double>(N - count));
  return std::log1p(-pi_plus) - std::log(static_cast<double>(count));
}

// AcrossTraits W-layer mass (excluding the row draw).
double w_log_q_add(int w, int p, const SamplerConfig& c) {
  if (w == 0) return -std::log(static_cast<double>(p));
  return std::log(c.pi_plus_star) - std::log(static_cast<double>(p - w));
}

double w_log_q_remove(int w, int p, const SamplerConfig& c) {
  if (w == p) {
    return std::log(c.pi_minus_star) - std::log1p(-c.pi_plus_star) -
           std::log(static_cast<double>(p));
  }
  return std::log(c.pi_minus_star) - std::log(static_cast<double>(w));
}

// AcrossSites G-layer masses for one trait; gstar counts active groups with
// more than one member (the only targets of delta = 0 flips) in the state the
// mass is evaluated at.
double g_log_q_add(int g, int gstar, int r, const SamplerConfig& c) {
  if (g == 0) return -std::log(static_cast<double>(r));
  if (gstar > 0) return std::log(c.pi_plus_star) - std::log(static_cast<double>(r - g));
  return std::log(c.pi_plus_star) - std::log1p(-c.pi_zero_star) -
         std::log(static_cast<double>(r - g));
}

double g_log_q_remove(int g, int gstar, int r, const SamplerConfig& c) {
  if (g == r) {
    return std::log(c.pi_minus_star) - std::log1p(-c.pi_plus_star) -
           std::log(static_cast<double>(r));
  }
  if (gstar > 0) return std::log(c.pi_minus_star) - std::log(static_cast<double>(g));
  return std::log(c.pi_minus_star) - std::log1p(-c.pi_zero_star) -
         std::log(static_cast<double>(g));
}

// Probability of one specific subset of size s out of m under the collapsed
// Beta-Bernoulli layer: log B(a+s, b+m-s) - log B(a,b).
double bb_vector_mass(double a, double b, int s, int m) {
  return log_beta(a + s, b + m - s) - log_beta(a, b);
}

// Draw a subset size from the beta-binomial over 0..m.
int draw_bb_size(double a, double b, int m, RngStream& rng) {
  std::vector<double> logw(m + 1);
  double max_log = -std::numeric_limits<double>::infinity();
  for (int s = 0; s <= m; ++s) {
    logw[s] = bb_vector_mass(a, b, s, m) + log_choose(m, s);
    max_log = std::max(max_log, logw[s]);
  }
  std::vector<double> w(m + 1);
  for (int s = 0; s <= m; ++s) w[s] = std::exp(logw[s] - max_log);
  return static_cast<int>(rng.categorical(w));
}

// Uniformly pick s distinct values out of 0..m-1 (partial Fisher-Yates).
std::vector<int> draw_subset(int m, int s, RngStream& rng) {
  std::vector<int> pool(m);
  for (int i = 0; i < m; ++i) pool[i] = i;
  for (int i = 0; i < s; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(m - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(s);
  std::sort(pool.begin(), pool.end());
  return pool;
}

Move propose_single_layer(const IndicatorState& state, const SamplerConfig& cfg,
                          RngStream& rng) {
  const int p = state.p(), q = state.q();
  const int N = p * q;
  const int nz = state.z_count();
  Move mv;
  mv.kind = Move::Kind::Flip;
  const bool add = (nz == 0) ? true : (nz == N ? false : rng.uniform() < cfg.pi_plus);
  mv.add = add;
  std::int64_t pick = rng.uniform_int(add ? N - nz : nz);
  for (int t = 0; t < q && mv.v < 0; ++t) {
    for (int v = 0; v < p; ++v) {
      if ((state.Z(v, t) == 0) == add && pick-- == 0) {
        mv.v = v;
        mv.t = t;
        break;
      }
    }
  }
  const int nz_new = add ? nz + 1 : nz - 1;
  mv.log_q_ratio =
      flip_log_q(nz_new, N, !add, cfg.pi_plus) - flip_log_q(nz, N, add, cfg.pi_plus);
  return mv;
}

enum class Delta { Remove = 0, Within = 1, Add = 2 };

// Draw delta from {-1, 0, +1} with unavailable directions masked out; the
// remaining masses renormalize exactly as the literal proposal tables do.
Delta draw_delta(bool can_remove, bool can_within, bool can_add, const SamplerConfig& cfg,
                 RngStream& rng) {
  std::vector<double> w(3, 0.0);
  if (can_remove) w[0] = cfg.pi_minus_star;
  if (can_within) w[1] = cfg.pi_zero_star;
  if (can_add) w[2] = cfg.pi_plus_star;
  return static_cast<Delta>(rng.categorical(w));
}

Move propose_across_traits(const PriorSpec& spec, const IndicatorState& state,
                           const SamplerConfig& cfg, RngStream& rng) {
  const int p = state.p(), q = state.q();
  const int w = state.w_count();
  const Hyperparameters& h = spec.hyper;
  Move mv;
  // delta = 0 is available whenever any row is active.
  const Delta d = draw_delta(w > 0, w > 0, w < p, cfg, rng);
  if (d == Delta::Add) {
    std::int64_t pick = rng.uniform_int(p - w);
    for (int v = 0; v < p; ++v) {
      if ((*state.W)(v) == 0 && pick-- == 0) {
        mv.v = v;
        break;
      }
    }
    mv.kind = Move::Kind::RowAdd;
    const int s = draw_bb_size(h.av(mv.v), h.bv(mv.v), q, rng);
    mv.row_traits = draw_subset(q, s, rng);
    const double log_q_fwd =
        w_log_q_add(w, p, cfg) + bb_vector_mass(h.av(mv.v), h.bv(mv.v), s, q);
    mv.log_q_ratio = w_log_q_remove(w + 1, p, cfg) - log_q_fwd;
  } else if (d == Delta::Remove) {
    std::int64_t pick = rng.uniform_int(w);
    for (int v = 0; v < p; ++v) {
      if ((*state.W)(v) == 1 && pick-- == 0) {
        mv.v = v;
        break;
      }
    }
    mv.kind = Move::Kind::RowRemove;
    for (int t = 0; t < q; ++t) {
      if (state.Z(mv.v, t)) mv.row_traits.push_back(t);
    }
    const int s = static_cast<int>(mv.row_traits.size());
    const double log_q_rev =
        w_log_q_add(w - 1, p, cfg) + bb_vector_mass(h.av(mv.v), h.bv(mv.v), s, q);
    mv.log_q_ratio = log_q_rev - w_log_q_remove(w, p, cfg);
  } else {
    // Flip one entry inside a uniformly chosen active row.  The delta = 0 and
    // row-choice masses are identical in both directions and cancel.
    std::int64_t pick = rng.uniform_int(w);
    for (int v = 0; v < p; ++v) {
      if ((*state.W)(v) == 1 && pick-- == 0) {
        mv.v = v;
        break;
      }
    }
    mv.kind = Move::Kind::WithinRow;
    const int s = state.row_count(mv.v);
    const bool add = (s == 0) ? true : (s == q ? false : rng.uniform() < cfg.pi_plus);
    mv.add = add;
    std::int64_t tpick = rng.uniform_int(add ? q - s : s);
    for (int t = 0; t < q; ++t) {
      if ((state.Z(mv.v, t) == 0) == add && tpick-- == 0) {
        mv.t = t;
        break;
      }
    }
    const int s_new = add ? s + 1 : s - 1;
    mv.log_q_ratio =
        flip_log_q(s_new, q, !add, cfg.pi_plus) - flip_log_q(s, q, add, cfg.pi_plus);
  }
  return mv;
}

Move propose_across_sites(const PriorSpec& spec, const IndicatorState& state,
                          const SamplerConfig& cfg, RngStream& rng) {
  const GroupMap& gm = *spec.groups;
  const int q = state.q();
  const int r = gm.n_groups();
  const Hyperparameters& h = spec.hyper;
  Move mv;
  // The trait is uniform in both directions and cancels from the ratio.
  const int t = static_cast<int>(rng.uniform_int(q));
  mv.t = t;
  const int g = state.g_count_trait(t);
  int gstar = 0;
  for (int gg = 0; gg < r; ++gg) {
    if ((*state.G)(gg, t) && gm.group_size(gg) > 1) ++gstar;
  }
  // The literal table keeps the delta = 0 slot open whenever |G| = r even with
  // no multi-member group active; that draw is a self-transition.
  const bool within_slot = (g == r) ? g > 0 : gstar > 0;
  const Delta d = draw_delta(g > 0, within_slot, g < r, cfg, rng);
  if (d == Delta::Within && gstar == 0) {
    mv.kind = Move::Kind::NoOp;
    return mv;
  }
  if (d == Delta::Add) {
    std::int64_t pick = rng.uniform_int(r - g);
    for (int gg = 0; gg < r; ++gg) {
      if ((*state.G)(gg, t) == 0 && pick-- == 0) {
        mv.g = gg;
        break;
      }
    }
    mv.kind = Move::Kind::GroupAdd;
    const int pg = gm.group_size(mv.g);
    double log_q0 = 0.0;
    if (pg == 1) {
      mv.group_members.push_back(gm.members[mv.g][0]);  // forced Z_v = 1
    } else {
      const int s = draw_bb_size(h.ag(mv.g), h.bg(mv.g), pg, rng);
      for (int j : draw_subset(pg, s, rng)) mv.group_members.push_back(gm.members[mv.g][j]);
      log_q0 = bb_vector_mass(h.ag(mv.g), h.bg(mv.g),
                              static_cast<int>(mv.group_members.size()), pg);
    }
    const int gstar_new = gstar + (pg > 1 ? 1 : 0);
    mv.log_q_ratio =
        g_log_q_remove(g + 1, gstar_new, r, cfg) - (g_log_q_add(g, gstar, r, cfg) + log_q0);
  } else if (d == Delta::Remove) {
    std::int64_t pick = rng.uniform_int(g);
    for (int gg = 0; gg < r; ++gg) {
      if ((*state.G)(gg, t) == 1 && pick-- == 0) {
        mv.g = gg;
        break;
      }
    }
    mv.kind = Move::Kind::GroupRemove;
    const int pg = gm.group_size(mv.g);
    for (int v : gm.members[mv.g]) {
      if (state.Z(v, t)) mv.group_members.push_back(v);
    }
    double log_q0_rev = 0.0;
    if (pg > 1) {
      log_q0_rev = bb_vector_mass(h.ag(mv.g), h.bg(mv.g),
                                  static_cast<int>(mv.group_members.size()), pg);
    }
    const int gstar_new = gstar - (pg > 1 ? 1 : 0);
    mv.log_q_ratio = (g_log_q_add(g - 1, gstar_new, r, cfg) + log_q0_rev) -
                     g_log_q_remove(g, gstar, r, cfg);
  } else {
    std::int64_t pick = rng.uniform_int(gstar);
    for (int gg = 0; gg < r; ++gg) {
      if ((*state.G)(gg, t) && gm.group_size(gg) > 1 && pick-- == 0) {
        mv.g = gg;
        break;
      }
    }
    mv.kind = Move::Kind::WithinGroup;
    const int pg = gm.group_size(mv.g);
    int s = 0;
    for (int v : gm.members[mv.g]) s += state.Z(v, t) ? 1 : 0;
    const bool add = (s == 0) ? true : (s == pg ? false : rng.uniform() < cfg.pi_plus);
    mv.add = add;
    std::int64_t vpick = rng.uniform_int(add ? pg - s : s);
    for (int v : gm.members[mv.g]) {
      if ((state.Z(v, t) == 0) == add && vpick-- == 0) {
        mv.v = v;
        break;
      }
    }
    const int s_new = add ? s + 1 : s - 1;
    mv.log_q_ratio =
        flip_log_q(s_new, pg, !add, cfg.pi_plus) - flip_log_q(s, pg, add, cfg.pi_plus);
  }
  return mv;
}

}  // namespace

const char* to_string(Move::Kind k) {
  switch (k) {
    case Move::Kind::Flip: return "flip";
    case Move::Kind::WithinRow: return "within_row";
    case Move::Kind::RowAdd: return "row_add";
    case Move::Kind::RowRemove: return "row_remove";
    case Move::Kind::WithinGroup: return "within_group";
    case Move::Kind::GroupAdd: return "group_add";
    case Move::Kind::GroupRemove: return "group_remove";
    case Move::Kind::NoOp: return "noop";
  }
  return "?";
}

Move propose_indicators(const PriorSpec& spec, const IndicatorState& state,
                        const SamplerConfig& config, RngStream& rng) {
  if (state.p() <= 0 || state.q() <= 0) throw_validation("propose_indicators: empty state");
  switch (spec.kind) {
    case PriorKind::Basic:
    case PriorKind::Unadjusted:
      return propose_single_layer(state, config, rng);
    case PriorKind::AcrossTraits:
      return propose_across_traits(spec, state, config, rng);
    case PriorKind::AcrossSites:
      return propose_across_sites(spec, state, config, rng);
  }
  throw_validation("propose_indicators: unknown prior kind");
}

void apply_move(IndicatorState& state, const Move& move, const PriorSpec& spec) {
  switch (move.kind) {
    case Move::Kind::NoOp:
      return;
    case Move::Kind::Flip:
    case Move::Kind::WithinRow:
    case Move::Kind::WithinGroup:
      state.Z(move.v, move.t) = move.add ? 1 : 0;
      return;
    case Move::Kind::RowAdd:
      (*state.W)(move.v) = 1;
      for (int t : move.row_traits) state.Z(move.v, t) = 1;
      return;
    case Move::Kind::RowRemove:
      (*state.W)(move.v) = 0;
      for (int t = 0; t < state.q(); ++t) state.Z(move.v, t) = 0;
      return;
    case Move::Kind::GroupAdd:
      (*state.G)(move.g, move.t) = 1;
      for (int v : move.group_members) state.Z(v, move.t) = 1;
      return;
    case Move::Kind::GroupRemove:
      (*state.G)(move.g, move.t) = 0;
      for (int v : spec.groups->members[move.g]) state.Z(v, move.t) = 0;
      return;
  }
}

double move_prior_delta(const PriorSpec& spec, const IndicatorState& state, const Move& move) {
  const Hyperparameters& h = spec.hyper;
  const int p = state.p(), q = state.q();
  // Log mass change of activating one more element in an exchangeable
  // Beta-Bernoulli layer over `total` slots with `count` currently active.
  auto add_delta = [](double a, double b, int count, int total) {
    return std::log(a + count) - std::log(b + total - count - 1);
  };
  switch (move.kind) {
    case Move::Kind::NoOp:
      return 0.0;
    case Move::Kind::Flip:
    case Move::Kind::WithinRow:
    case Move::Kind::WithinGroup:
      return prior_flip_delta(spec, state, move.v, move.t);
    case Move::Kind::RowAdd: {
      const int w = state.w_count();
      const int s = static_cast<int>(move.row_traits.size());
      return add_delta(h.a_w, h.b_w, w, p) + bb_vector_mass(h.av(move.v), h.bv(move.v), s, q);
    }
    case Move::Kind::RowRemove: {
      const int w = state.w_count();
      const int s = state.row_count(move.v);
      return -add_delta(h.a_w, h.b_w, w - 1, p) -
             bb_vector_mass(h.av(move.v), h.bv(move.v), s, q);
    }
    case Move::Kind::GroupAdd: {
      const int r = spec.groups->n_groups();
      const int g = state.g_count_trait(move.t);
      const int pg = spec.groups->group_size(move.g);
      double d = add_delta(h.a_g, h.b_g, g, r);
      if (pg > 1) {
        d += bb_vector_mass(h.ag(move.g), h.bg(move.g),
                            static_cast<int>(move.group_members.size()), pg);
      }
      return d;
    }
    case Move::Kind::GroupRemove: {
      const int r = spec.groups->n_groups();
      const int g = state.g_count_trait(move.t);
      const int pg = spec.groups->group_size(move.g);
      int s = 0;
      for (int v : spec.groups->members[move.g]) s += state.Z(v, move.t) ? 1 : 0;
      double d = -add_delta(h.a_g, h.b_g, g - 1, r);
      if (pg > 1) d -= bb_vector_mass(h.ag(move.g), h.bg(move.g), s, pg);
      return d;
    }
  }
  throw_validation("move_prior_delta: unknown move kind");
}

bool mh_accept(double log_posterior_delta, double log_q_ratio, RngStream& rng) {
  const double log_r = log_posterior_delta + log_q_ratio;
  if (std::isnan(log_r)) throw_numeric("mh_accept: NaN acceptance ratio");
  if (log_r >= 0.0) return true;
  return std::log(rng.uniform_pos()) < log_r;
}

// ---------------------------------------------------------------------------
// Chain runner.
// ---------------------------------------------------------------------------

namespace {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct SharedPrecompute {
  Matrix gram;  // X'X
  Matrix xty;   // p x q
  Vector yty;   // per-trait y'y
  int n = 0, p = 0, q = 0;

  explicit SharedPrecompute(const DataSet& data)
      : gram(data.X.transpose() * data.X),
        xty(data.X.transpose() * data.Y),
        yty(data.Y.colwise().squaredNorm()),
        n(data.n()),
        p(data.p()),
        q(data.q()) {}
};

class ChainRunner {
 public:
  ChainRunner(const PriorSpec& spec, const SamplerConfig& cfg, int chain_index,
              const SharedPrecompute& shared)
      : spec_(spec),
        cfg_(cfg),
        chain_(chain_index),
        sh_(shared),
        rng_(cfg.seed, static_cast<std::uint64_t>(chain_index)),
        gprior_(spec.hyper.covariance == CovarianceForm::GPrior) {}

  ChainResult run();

 private:
  void init_state();
  // Marginal log likelihood from the engine's (tau-free) projection.
  double ll_from_proj(int t, int k, double proj_raw, double tau) const;
  // Fresh evaluation of trait t at the given active set; false on a singular
  // or infeasible configuration (zero posterior mass).
  bool ll_active_fresh(int t, const std::vector<int>& act, double tau, double* out) const;
  std::vector<int> current_active(int t) const;

  void do_tau_move();
  void do_z_move(std::int64_t iter);
  void validate_invariants() const;

  void settle_z(int v, int t, std::int64_t iter);
  void settle_w(int v, std::int64_t iter);
  void settle_g(int g, int t, std::int64_t iter);
  void settle_move(const Move& mv, std::int64_t iter);
  void stamp_move(const Move& mv, std::int64_t iter);

  const PriorSpec& spec_;
  const SamplerConfig& cfg_;
  int chain_;
  const SharedPrecompute& sh_;
  RngStream rng_;
  bool gprior_;

  IndicatorState state_;
  std::vector<Vector> xty_cols_;          // per-trait c = X'y_t for the engines
  std::vector<ActiveSetChol> engines_;    // g-prior path
  std::vector<std::vector<int>> active_;  // identity path
  std::vector<double> cur_ll_;

  std::int64_t burn_ = 0, total_ = 0;
  CountMatrix z_dwell_, z_on_;
  CountMatrix w_dwell_, w_on_;  // p x 1 when present
  CountMatrix g_dwell_, g_on_;  // r x q when present
  double tau_sum_ = 0.0, tau_sq_sum_ = 0.0;
  std::map<std::string, AcceptanceStats> acc_;
  std::vector<TracePoint> trace_;
};

void ChainRunner::init_state() {
  const int p = sh_.p, q = sh_.q;
  double tau0;
  if (cfg_.tau_fixed) {
    tau0 = *cfg_.tau_fixed;
    if (!(tau0 > spec_.hyper.tau_lo && tau0 < spec_.hyper.tau_hi)) {
      throw_validation("sampler: tau_fixed lies outside the prior support");
    }
  } else {
    tau0 = spec_.hyper.tau_lo + (spec_.hyper.tau_hi - spec_.hyper.tau_lo) * rng_.uniform_pos();
  }

  const ChainInit init = cfg_.resolved_inits()[chain_];
  switch (init.kind) {
    case ChainInit::Kind::Empty:
      state_ = IndicatorState::empty(p, q, spec_, tau0);
      break;
    case ChainInit::Kind::Full:
      state_ = IndicatorState::full(p, q, spec_, tau0);
      break;
    case ChainInit::Kind::TopCorrelated: {
      state_ = IndicatorState::empty(p, q, spec_, tau0);
      const int J = std::min(init.top_j, p);
      std::vector<int> order(p);
      for (int t = 0; t < q; ++t) {
        for (int v = 0; v < p; ++v) order[v] = v;
        std::partial_sort(order.begin(), order.begin() + J, order.end(), [&](int a, int b) {
          return std::fabs(sh_.xty(a, t)) > std::fabs(sh_.xty(b, t));
        });
        for (int j = 0; j < J; ++j) state_.Z(order[j], t) = 1;
      }
      if (state_.W) {
        for (int v = 0; v < p; ++v) (*state_.W)(v) = state_.row_count(v) > 0 ? 1 : 0;
      }
      if (state_.G) {
        // Activate exactly the groups that received a variant; singleton
        // consistency holds because activation follows the variants.
        const GroupMap& gm = *spec_.groups;
        for (int t = 0; t < q; ++t) {
          for (int g = 0; g < gm.n_groups(); ++g) {
            int on = 0;
            for (int v : gm.members[g]) on += state_.Z(v, t) ? 1 : 0;
            (*state_.G)(g, t) = on > 0 ? 1 : 0;
          }
        }
      }
      break;
    }
  }
  state_.check_consistency(spec_);

  xty_cols_.resize(q);
  for (int t = 0; t < q; ++t) xty_cols_[t] = sh_.xty.col(t);
  cur_ll_.assign(q, 0.0);
  if (gprior_) {
    engines_.resize(q);
    for (int t = 0; t < q; ++t) {
      const std::vector<int> act = active_set(state_.Z, t);
      if (static_cast<int>(act.size()) >= sh_.n) {
        throw_numeric("sampler: initial configuration has |Z| >= n under the g-prior");
      }
      engines_[t].init(&sh_.gram, &xty_cols_[t], kPivotRelTol);
      engines_[t].reset(act);
      cur_ll_[t] = ll_from_proj(t, engines_[t].size(), engines_[t].proj(), state_.tau);
    }
  } else {
    active_.resize(q);
    for (int t = 0; t < q; ++t) {
      active_[t] = active_set(state_.Z, t);
      if (!ll_active_fresh(t, active_[t], state_.tau, &cur_ll_[t])) {
        throw_numeric("sampler: initial configuration is singular");
      }
    }
  }
}

double ChainRunner::ll_from_proj(int t, int k, double proj_raw, double tau) const {
  const Hyperparameters& h = spec_.hyper;
  const double nt2 = static_cast<double>(sh_.n) * tau * tau;
  const double s2 = std::max(0.0, sh_.yty(t) - (nt2 / (nt2 + 1.0)) * proj_raw);
  return -(0.5 * sh_.n + h.alpha_rho) * std::log(h.lambda_rho + 0.5 * s2) -
         0.5 * k * std::log1p(nt2);
}

bool ChainRunner::ll_active_fresh(int t, const std::vector<int>& act, double tau,
                                  double* out) const {
  const Hyperparameters& h = spec_.hyper;
  const int k = static_cast<int>(act.size());
  const double yty = sh_.yty(t);
  const double scale = -(0.5 * sh_.n + h.alpha_rho);
  if (k == 0) {
    *out = scale * std::log(h.lambda_rho + 0.5 * yty);
    return true;
  }
  Matrix A(k, k);
  Vector c(k);
  for (int i = 0; i < k; ++i) {
    c(i) = sh_.xty(act[i], t);
    for (int j = 0; j <= i; ++j) A(i, j) = A(j, i) = sh_.gram(act[i], act[j]);
  }
  if (gprior_) {
    if (k >= sh_.n) return false;
    if (!cholesky_in_place(A, kPivotRelTol)) return false;
    const Vector w = A.triangularView<Eigen::Lower>().solve(c);
    const double nt2 = static_cast<double>(sh_.n) * tau * tau;
    const double s2 = std::max(0.0, yty - (nt2 / (nt2 + 1.0)) * w.squaredNorm());
    *out = scale * std::log(h.lambda_rho + 0.5 * s2) - 0.5 * k * std::log1p(nt2);
    return true;
  }
  A.diagonal().array() += 1.0 / (tau * tau);
  if (!cholesky_in_place(A, kPivotRelTol)) return false;
  const Vector w = A.triangularView<Eigen::Lower>().solve(c);
  const double s2 = std::max(0.0, yty - w.squaredNorm());
  double half_logdet = 0.0;
  for (int j = 0; j < k; ++j) half_logdet += std::log(A(j, j));
  *out = scale * std::log(h.lambda_rho + 0.5 * s2) - half_logdet - k * std::log(tau);
  return true;
}

std::vector<int> ChainRunner::current_active(int t) const {
  return gprior_ ? engines_[t].active() : active_[t];
}

void ChainRunner::do_tau_move() {
  AcceptanceStats& st = acc_["tau"];
  ++st.proposed;
  const TauProposal tp = propose_tau(state_.tau, spec_.hyper, rng_);
  std::vector<double> ll_new(sh_.q);
  double dll = 0.0;
  for (int t = 0; t < sh_.q; ++t) {
    if (gprior_) {
      ll_new[t] = ll_from_proj(t, engines_[t].size(), engines_[t].proj(), tp.tau_new);
    } else if (!ll_active_fresh(t, active_[t], tp.tau_new, &ll_new[t])) {
      return;  // zero-mass corner; cannot occur for an SPD precision
    }
    dll += ll_new[t] - cur_ll_[t];
  }
  if (!mh_accept(dll, tp.log_q_ratio, rng_)) return;
  ++st.accepted;
  state_.tau = tp.tau_new;
  for (int t = 0; t < sh_.q; ++t) cur_ll_[t] = ll_new[t];
}

void ChainRunner::settle_z(int v, int t, std::int64_t iter) {
  if (state_.Z(v, t)) {
    z_dwell_(v, t) += std::max<std::int64_t>(0, iter - std::max(z_on_(v, t), burn_));
  }
}

void ChainRunner::settle_w(int v, std::int64_t iter) {
  if ((*state_.W)(v)) {
    w_dwell_(v, 0) += std::max<std::int64_t>(0, iter - std::max(w_on_(v, 0), burn_));
  }
}

void ChainRunner::settle_g(int g, int t, std::int64_t iter) {
  if ((*state_.G)(g, t)) {
    g_dwell_(g, t) += std::max<std::int64_t>(0, iter - std::max(g_on_(g, t), burn_));
  }
}

void ChainRunner::settle_move(const Move& mv, std::int64_t iter) {
  switch (mv.kind) {
    case Move::Kind::NoOp:
      return;
    case Move::Kind::Flip:
    case Move::Kind::WithinRow:
    case Move::Kind::WithinGroup:
      settle_z(mv.v, mv.t, iter);
      return;
    case Move::Kind::RowAdd:
    case Move::Kind::RowRemove:
      settle_w(mv.v, iter);
      for (int t : mv.row_traits) settle_z(mv.v, t, iter);
      return;
    case Move::Kind::GroupAdd:
    case Move::Kind::GroupRemove:
      settle_g(mv.g, mv.t, iter);
      for (int v : mv.group_members) settle_z(v, mv.t, iter);
      return;
  }
}

void ChainRunner::stamp_move(const Move& mv, std::int64_t iter) {
  auto stamp_z = [&](int v, int t) {
    if (state_.Z(v, t)) z_on_(v, t) = iter;
  };
  switch (mv.kind) {
    case Move::Kind::NoOp:
      return;
    case Move::Kind::Flip:
    case Move::Kind::WithinRow:
    case Move::Kind::WithinGroup:
      stamp_z(mv.v, mv.t);
      return;
    case Move::Kind::RowAdd:
    case Move::Kind::RowRemove:
      if ((*state_.W)(mv.v)) w_on_(mv.v, 0) = iter;
      for (int t : mv.row_traits) stamp_z(mv.v, t);
      return;
    case Move::Kind::GroupAdd:
    case Move::Kind::GroupRemove:
      if ((*state_.G)(mv.g, mv.t)) g_on_(mv.g, mv.t) = iter;
      for (int v : mv.group_members) stamp_z(v, mv.t);
      return;
  }
}

void ChainRunner::do_z_move(std::int64_t iter) {
  Move mv = propose_indicators(spec_, state_, cfg_, rng_);
  AcceptanceStats& st = acc_[to_string(mv.kind)];
  ++st.proposed;
  if (mv.kind == Move::Kind::NoOp) {
    ++st.accepted;  // self-transition
    return;
  }

  struct PendingTrait {
    int t = -1;
    double ll_new = 0.0;
    int flip_v = -1;  // >= 0: single add/remove, committed incrementally
    bool flip_add = false;
    std::vector<int> new_active;  // multi-entry changes / identity path
  };
  std::vector<PendingTrait> pend;
  bool feasible = true;

  auto plan_single = [&](int t, int v, bool add) {
    PendingTrait pt;
    pt.t = t;
    pt.flip_v = v;
    pt.flip_add = add;
    if (gprior_) {
      const ActiveSetChol& eng = engines_[t];
      if (add) {
        if (eng.size() + 1 >= sh_.n) {
          feasible = false;
          return pt;
        }
        double proj_new = 0.0;
        if (!eng.peek_add(v, &proj_new)) {
          feasible = false;
          return pt;
        }
        pt.ll_new = ll_from_proj(t, eng.size() + 1, proj_new, state_.tau);
      } else {
        const double proj_new = eng.peek_remove(eng.position_of(v));
        pt.ll_new = ll_from_proj(t, eng.size() - 1, proj_new, state_.tau);
      }
    } else {
      pt.new_active = active_[t];
      if (add) {
        pt.new_active.push_back(v);
      } else {
        pt.new_active.erase(std::find(pt.new_active.begin(), pt.new_active.end(), v));
      }
      feasible = ll_active_fresh(t, pt.new_active, state_.tau, &pt.ll_new);
    }
    return pt;
  };

  auto plan_set = [&](int t, std::vector<int> new_active) {
    PendingTrait pt;
    pt.t = t;
    pt.new_active = std::move(new_active);
    feasible = ll_active_fresh(t, pt.new_active, state_.tau, &pt.ll_new);
    return pt;
  };

  switch (mv.kind) {
    case Move::Kind::Flip:
    case Move::Kind::WithinRow:
    case Move::Kind::WithinGroup:
      pend.push_back(plan_single(mv.t, mv.v, mv.add));
      break;
    case Move::Kind::RowAdd:
    case Move::Kind::RowRemove:
      for (int t : mv.row_traits) {
        pend.push_back(plan_single(t, mv.v, mv.kind == Move::Kind::RowAdd));
        if (!feasible) break;
      }
      break;
    case Move::Kind::GroupAdd:
      if (!mv.group_members.empty()) {
        std::vector<int> na = current_active(mv.t);
        na.insert(na.end(), mv.group_members.begin(), mv.group_members.end());
        pend.push_back(plan_set(mv.t, std::move(na)));
      }
      break;
    case Move::Kind::GroupRemove:
      if (!mv.group_members.empty()) {
        std::vector<int> na = current_active(mv.t);
        for (int v : mv.group_members) na.erase(std::find(na.begin(), na.end(), v));
        pend.push_back(plan_set(mv.t, std::move(na)));
      }
      break;
    case Move::Kind::NoOp:
      break;
  }
  if (!feasible) return;  // zero-mass proposal: certain rejection

  double dll = 0.0;
  for (const PendingTrait& pt : pend) dll += pt.ll_new - cur_ll_[pt.t];
  const double dprior = move_prior_delta(spec_, state_, mv);
  if (!mh_accept(dprior + dll, mv.log_q_ratio, rng_)) return;
  ++st.accepted;

  settle_move(mv, iter);
  apply_move(state_, mv, spec_);
  stamp_move(mv, iter);

  for (PendingTrait& pt : pend) {
    if (gprior_) {
      if (pt.flip_v >= 0) {
        if (pt.flip_add) {
          engines_[pt.t].commit_add(pt.flip_v);
        } else {
          engines_[pt.t].commit_remove_position(engines_[pt.t].position_of(pt.flip_v));
        }
      } else {
        engines_[pt.t].reset(pt.new_active);
      }
    } else {
      active_[pt.t] = std::move(pt.new_active);
    }
    cur_ll_[pt.t] = pt.ll_new;
  }
}

void ChainRunner::validate_invariants() const {
  state_.check_consistency(spec_);
  for (int t = 0; t < sh_.q; ++t) {
    std::vector<int> act = current_active(t);
    std::sort(act.begin(), act.end());
    if (act != active_set(state_.Z, t)) {
      throw_numeric("sampler invariant: active set diverged from Z");
    }
    double fresh = 0.0;
    if (!ll_active_fresh(t, act, state_.tau, &fresh)) {
      throw_numeric("sampler invariant: active set became singular");
    }
    if (std::fabs(fresh - cur_ll_[t]) > 1e-6 * std::max(1.0, std::fabs(fresh))) {
      throw_numeric("sampler invariant: cached likelihood drifted");
    }
  }
}

ChainResult ChainRunner::run() {
  init_state();
  burn_ = cfg_.burn_in;
  total_ = burn_ + cfg_.n_samples;

  const int p = sh_.p, q = sh_.q;
  z_dwell_ = CountMatrix::Zero(p, q);
  z_on_ = CountMatrix::Zero(p, q);
  if (state_.W) {
    w_dwell_ = CountMatrix::Zero(p, 1);
    w_on_ = CountMatrix::Zero(p, 1);
  }
  if (state_.G) {
    const int r = spec_.groups->n_groups();
    g_dwell_ = CountMatrix::Zero(r, q);
    g_on_ = CountMatrix::Zero(r, q);
  }

  for (std::int64_t iter = 0; iter < total_; ++iter) {
    if (!cfg_.tau_fixed) do_tau_move();
    if (!cfg_.freeze_indicators) do_z_move(iter);
    if (iter >= burn_) {
      tau_sum_ += state_.tau;
      tau_sq_sum_ += state_.tau * state_.tau;
    }
    if (cfg_.trace_every > 0 && (iter + 1) % cfg_.trace_every == 0) {
      TracePoint tp;
      tp.iteration = iter;
      tp.tau = state_.tau;
      tp.z_count = state_.z_count();
      double ll = 0.0;
      for (int t = 0; t < q; ++t) ll += cur_ll_[t];
      tp.log_posterior = log_prior_indicators(spec_, state_) + ll;
      trace_.push_back(tp);
    }
    if (cfg_.validate_every > 0 && (iter + 1) % cfg_.validate_every == 0) {
      validate_invariants();
    }
  }

  // Flush dwell times through the end of the run.
  for (int t = 0; t < q; ++t) {
    for (int v = 0; v < p; ++v) settle_z(v, t, total_);
  }
  if (state_.W) {
    for (int v = 0; v < p; ++v) settle_w(v, total_);
  }
  if (state_.G) {
    for (int t = 0; t < q; ++t) {
      for (int g = 0; g < spec_.groups->n_groups(); ++g) settle_g(g, t, total_);
    }
  }

  const double ns = static_cast<double>(cfg_.n_samples);
  ChainResult res;
  res.z_bar = z_dwell_.cast<double>() / ns;
  if (state_.W) res.w_bar = Vector(w_dwell_.cast<double>().col(0) / ns);
  if (state_.G) res.g_bar = Matrix(g_dwell_.cast<double>() / ns);
  res.tau_mean = tau_sum_ / ns;
  res.tau_sq_mean = tau_sq_sum_ / ns;
  res.n_samples = cfg_.n_samples;
  res.acceptance = acc_;
  res.trace = std::move(trace_);
  return res;
}

void validate_run_inputs(const DataSet& data, const PriorSpec& spec, const SamplerConfig& config) {
  config.validate();
  spec.validate(data.p());
  data.validate();
}

}  // namespace

ChainResult run_chain(const DataSet& data, const PriorSpec& spec, const SamplerConfig& config,
                      int chain_index) {
  validate_run_inputs(data, spec, config);
  if (chain_index < 0 || chain_index >= config.n_chains) {
    throw_validation("run_chain: chain index out of range");
  }
  SharedPrecompute shared(data);
  ChainRunner runner(spec, config, chain_index, shared);
  return runner.run();
}

PosteriorSummary run_ensemble(const DataSet& data, const PriorSpec& spec,
                              const SamplerConfig& config) {
  validate_run_inputs(data, spec, config);
  SharedPrecompute shared(data);
  const int nc = config.n_chains;
  std::vector<ChainResult> results(nc);
  std::vector<std::exception_ptr> errors(nc);

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= nc) return;
      try {
        ChainRunner runner(spec, config, c, shared);
        results[c] = runner.run();
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int n_threads = config.n_threads > 0 ? std::min(config.n_threads, nc) : nc;
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (std::thread& th : threads) th.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const int p = data.p(), q = data.q();
  PosteriorSummary sum;
  sum.n_chains = nc;
  sum.n_samples_per_chain = config.n_samples;
  sum.z_bar = Matrix::Zero(p, q);
  Matrix z_min = Matrix::Constant(p, q, 1.0), z_max = Matrix::Zero(p, q);
  double tau_mean = 0.0, tau_sq = 0.0;
  for (const ChainResult& r : results) {
    sum.z_bar += r.z_bar;
    z_min = z_min.cwiseMin(r.z_bar);
    z_max = z_max.cwiseMax(r.z_bar);
    tau_mean += r.tau_mean;
    tau_sq += r.tau_sq_mean;
    for (const auto& [key, st] : r.acceptance) {
      sum.acceptance[key].proposed += st.proposed;
      sum.acceptance[key].accepted += st.accepted;
    }
    sum.z_bar_chain.push_back(r.z_bar);
  }
  sum.z_bar /= nc;
  sum.delta_z = z_max - z_min;
  sum.convergence_fraction =
      (sum.delta_z.array() < config.delta_threshold).cast<double>().mean();
  sum.converged = sum.convergence_fraction >= kConvergedFraction;
  sum.tau_mean = tau_mean / nc;
  sum.tau_var = std::max(0.0, tau_sq / nc - sum.tau_mean * sum.tau_mean);

  if (spec.kind == PriorKind::AcrossTraits) {
    Vector wb = Vector::Zero(p), wmin = Vector::Constant(p, 1.0), wmax = Vector::Zero(p);
    for (const ChainResult& r : results) {
      wb += *r.w_bar;
      wmin = wmin.cwiseMin(*r.w_bar);
      wmax = wmax.cwiseMax(*r.w_bar);
    }
    sum.w_bar = Vector(wb / nc);
    sum.delta_w = Vector(wmax - wmin);
  }
  if (spec.kind == PriorKind::AcrossSites) {
    const int r_groups = spec.groups->n_groups();
    Matrix gb = Matrix::Zero(r_groups, q);
    Matrix gmin = Matrix::Constant(r_groups, q, 1.0), gmax = Matrix::Zero(r_groups, q);
    for (const ChainResult& r : results) {
      gb += *r.g_bar;
      gmin = gmin.cwiseMin(*r.g_bar);
      gmax = gmax.cwiseMax(*r.g_bar);
    }
    sum.g_bar = Matrix(gb / nc);
    sum.delta_g = Matrix(gmax - gmin);
  }
  return sum;
}

}  // namespace sparsepost
