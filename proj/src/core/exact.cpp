#include "core/exact.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace sparsepost {

double enumeration_count(int p, int max_size) {
  if (p <= 0) throw_validation("enumeration_count: p must be positive");
  if (max_size < 1) throw_validation("enumeration_count: max_size must be at least 1");
  double total = 0.0;
  double binom = 1.0;  // C(p, 0)
  for (int k = 0; k < max_size && k <= p; ++k) {
    total += binom;
    binom = binom * (p - k) / (k + 1);
    if (total > 1e18) break;
  }
  return total;
}

namespace {

struct EnumerationContext {
  const Hyperparameters* hyper;
  double tau;
  double yty;
  int n;
  int p;
  int max_size;
  bool gprior;
  double log_prior_by_size[65];  // Basic per-vector mass, by |Z|
};

double node_log_posterior(const EnumerationContext& ctx, const ActiveSetChol& engine) {
  const int k = engine.size();
  double det_term;
  double proj;
  if (ctx.gprior) {
    const double nt2 = ctx.n * ctx.tau * ctx.tau;
    proj = (nt2 / (nt2 + 1.0)) * engine.proj();
    det_term = -0.5 * k * std::log1p(nt2);
  } else {
    proj = engine.proj();
    double half_logdet = 0.0;
    for (int j = 0; j < k; ++j) half_logdet += std::log(engine.factor_diag(j));
    det_term = -half_logdet - k * std::log(ctx.tau);
  }
  const double s2 = std::max(0.0, ctx.yty - proj);
  const double log_lik =
      -(0.5 * ctx.n + ctx.hyper->alpha_rho) * std::log(ctx.hyper->lambda_rho + 0.5 * s2) +
      det_term;
  return ctx.log_prior_by_size[k] + log_lik;
}

void dfs(const EnumerationContext& ctx, ActiveSetChol& engine, std::uint64_t mask, int next,
         std::vector<EnumerationEntry>& out) {
  out.push_back({mask, node_log_posterior(ctx, engine), 0.0});
  if (engine.size() + 1 >= ctx.max_size) return;  // children would have |Z| = size+1
  for (int v = next; v < ctx.p; ++v) {
    double ignored;
    if (!engine.peek_add(v, &ignored)) continue;  // collinear: whole subtree has zero mass
    engine.commit_add(v);
    dfs(ctx, engine, mask | (std::uint64_t{1} << v), v + 1, out);
    engine.pop();
  }
}

}  // namespace

EnumerationTable enumerate_posterior(const Matrix& X, const Vector& y,
                                     const Hyperparameters& hyper, double tau, int max_size,
                                     int n_threads) {
  hyper.validate();
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (y.size() != n) throw_validation("enumerate_posterior: y length mismatch");
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw_validation("enumerate_posterior: tau must be positive and finite");
  }
  if (p > 64) throw_validation("enumerate_posterior: supports at most 64 variants");
  max_size = std::min(max_size, p + 1);
  const double count = enumeration_count(p, max_size);
  if (count > kEnumerationBudget) {
    throw_validation("enumerate_posterior: " + std::to_string(count) +
                     " feasible configurations exceed the enumeration budget");
  }
  if (hyper.covariance == CovarianceForm::GPrior && max_size - 1 >= n) {
    // Sizes >= n carry zero mass under the g-prior; clip rather than visit them.
    max_size = n;
  }

  EnumerationContext ctx;
  Matrix gram = X.transpose() * X;
  if (hyper.covariance == CovarianceForm::Identity) {
    gram.diagonal().array() += 1.0 / (tau * tau);
  }
  Vector xty = X.transpose() * y;
  ctx.hyper = &hyper;
  ctx.tau = tau;
  ctx.yty = y.squaredNorm();
  ctx.n = n;
  ctx.p = p;
  ctx.max_size = max_size;
  ctx.gprior = hyper.covariance == CovarianceForm::GPrior;
  for (int k = 0; k <= std::min(p, 64); ++k) {
    ctx.log_prior_by_size[k] =
        log_beta(hyper.a_omega + k, hyper.b_omega + p - k) - log_beta(hyper.a_omega, hyper.b_omega);
  }

  // The null configuration, then one subtree per leading variant.
  std::vector<std::vector<EnumerationEntry>> buckets(p + 1);
  {
    ActiveSetChol engine;
    engine.init(&gram, &xty, kPivotRelTol);
    engine.reset({});
    buckets[0].push_back({0, node_log_posterior(ctx, engine), 0.0});
  }
  const bool any_children = max_size > 1;
  if (any_children) {
    n_threads = std::max(1, n_threads);
    std::atomic<int> next_root{0};
    auto worker = [&]() {
      ActiveSetChol engine;
      engine.init(&gram, &xty, kPivotRelTol);
      engine.reset({});
      for (;;) {
        const int v0 = next_root.fetch_add(1);
        if (v0 >= p) break;
        double ignored;
        if (!engine.peek_add(v0, &ignored)) continue;
        engine.commit_add(v0);
        dfs(ctx, engine, std::uint64_t{1} << v0, v0 + 1, buckets[v0 + 1]);
        engine.pop();
      }
    };
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
  }

  EnumerationTable table;
  table.p = p;
  table.max_size = max_size;
  table.tau = tau;
  std::size_t total = 0;
  for (const auto& b : buckets) total += b.size();
  table.entries.reserve(total);
  for (auto& b : buckets) {
    table.entries.insert(table.entries.end(), b.begin(), b.end());
  }

  std::vector<double> lps(table.entries.size());
  for (std::size_t i = 0; i < table.entries.size(); ++i) lps[i] = table.entries[i].log_posterior;
  table.log_normalizer = log_sum_exp(lps);
  for (auto& e : table.entries) e.probability = std::exp(e.log_posterior - table.log_normalizer);
  std::sort(table.entries.begin(), table.entries.end(), [](const auto& a, const auto& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return a.mask < b.mask;
  });
  return table;
}

Vector exact_pips(const EnumerationTable& table) {
  Vector pips = Vector::Zero(table.p);
  for (const auto& e : table.entries) {
    std::uint64_t m = e.mask;
    while (m) {
      const int v = __builtin_ctzll(m);
      pips(v) += e.probability;
      m &= m - 1;
    }
  }
  return pips;
}

EnumerationEntry map_configuration(const EnumerationTable& table) {
  if (table.entries.empty()) throw_validation("map_configuration: empty table");
  return table.entries.front();
}

ConfidenceSet confidence_set(const EnumerationTable& table, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw_validation("confidence_set: threshold must lie in (0,1)");
  }
  if (table.entries.empty()) throw_validation("confidence_set: empty table");
  ConfidenceSet cs;
  std::uint64_t smask = 0;
  double attained = 0.0;
  for (const auto& e : table.entries) {
    if (e.mask == 0) attained += e.probability;
  }
  cs.attained = attained;
  std::vector<bool> in_set(table.p, false);
  while (cs.attained < threshold && static_cast<int>(cs.variants.size()) < table.p) {
    int best = -1;
    double best_p = -1.0;
    for (int v = 0; v < table.p; ++v) {
      if (in_set[v]) continue;
      const std::uint64_t cand = smask | (std::uint64_t{1} << v);
      double pv = 0.0;
      for (const auto& e : table.entries) {
        if ((e.mask & ~cand) == 0) pv += e.probability;
      }
      if (pv > best_p) {
        best_p = pv;
        best = v;
      }
    }
    smask |= std::uint64_t{1} << best;
    in_set[best] = true;
    cs.variants.push_back(best);
    cs.attained = best_p;
    cs.path.push_back(best_p);
  }
  return cs;
}

// ---------------------------------------------------------------------------
// Approximations.
// ---------------------------------------------------------------------------

namespace {

// Clamp eta^2 away from 1 and report whether clamping occurred.
double clamp_eta_sq(double eta, bool* clamped) {
  double e2 = eta * eta;
  if (e2 >= 1.0 - 1e-12) {
    e2 = 1.0 - 1e-12;
    *clamped = true;
  }
  return e2;
}

// Stable 1/(1 + exp(logc)).
double inv_one_plus_exp(double logc) {
  if (logc > 36.0) return std::exp(-logc);
  if (logc < -36.0) return 1.0 - std::exp(logc);
  return 1.0 / (1.0 + std::exp(logc));
}

// log of x_t = (tau sqrt(n))^{-1} (1 - eta^2)^{-n/2}.
double log_x_term(double tau, int n, double eta, bool* clamped) {
  const double e2 = clamp_eta_sq(eta, clamped);
  return -std::log(tau * std::sqrt(static_cast<double>(n))) - 0.5 * n * std::log1p(-e2);
}

// Log elementary symmetric polynomials e_0..e_m of the values exp(logx[i]).
std::vector<double> log_elementary_symmetric(const std::vector<double>& logx) {
  const std::size_t m = logx.size();
  std::vector<double> e(m + 1, -std::numeric_limits<double>::infinity());
  e[0] = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t s = std::min(j + 1, m); s >= 1; --s) {
      e[s] = log_sum_exp(e[s], e[s - 1] + logx[j]);
    }
  }
  return e;
}

// log h for a beta-binomial mixture layer: h = sum_s mass(s) e_s(x), where
// mass(s) = B(a+s, b+m-s)/B(a,b) is the per-vector prior mass at size s.
double log_h_sum(double a, double b, const std::vector<double>& logx) {
  const int m = static_cast<int>(logx.size());
  const std::vector<double> e = log_elementary_symmetric(logx);
  std::vector<double> terms(m + 1);
  for (int s = 0; s <= m; ++s) {
    terms[s] = log_beta(a + s, b + m - s) - log_beta(a, b) + e[s];
  }
  return log_sum_exp(terms);
}

ApproxResult one_layer_approx(double tau, int n, int total, double a, double b, int rest,
                              double eta) {
  if (rest < 0 || rest > total - 1) throw_validation("approx pip: count out of range");
  ApproxResult out;
  const double e2 = clamp_eta_sq(eta, &out.eta_clamped);
  const double logc = std::log(tau * std::sqrt(static_cast<double>(n))) +
                      std::log(b + total - rest - 1) - std::log(a + rest) +
                      0.5 * n * std::log1p(-e2);
  out.value = inv_one_plus_exp(logc);
  return out;
}

}  // namespace

ApproxResult approx_pip_basic(double tau, int n, int p, double a_omega, double b_omega,
                              int z_rest, double eta) {
  return one_layer_approx(tau, n, p, a_omega, b_omega, z_rest, eta);
}

ApproxResult approx_pip_within_row(double tau, int n, int q, double a_v, double b_v,
                                   int s_rest, double eta) {
  return one_layer_approx(tau, n, q, a_v, b_v, s_rest, eta);
}

ApproxResult approx_pip_row(double tau, int n, int p, double a_w, double b_w, int w_rest,
                            double a_v, double b_v, const std::vector<double>& etas) {
  if (etas.empty() || etas.size() > 30) {
    throw_validation("approx_pip_row: needs 1..30 trait correlations");
  }
  if (w_rest < 0 || w_rest > p - 1) throw_validation("approx_pip_row: |W| out of range");
  ApproxResult out;
  std::vector<double> logx(etas.size());
  for (std::size_t t = 0; t < etas.size(); ++t) {
    logx[t] = log_x_term(tau, n, etas[t], &out.eta_clamped);
  }
  const double log_h = std::log(a_w + w_rest) - std::log(b_w + p - w_rest - 1) +
                       log_h_sum(a_v, b_v, logx);
  // E[W_v]^{-1} ~= 1 + 1/h.
  out.value = inv_one_plus_exp(-log_h);
  return out;
}

ApproxResult approx_pip_group(double tau, int n, int r, double a_gtop, double b_gtop,
                              int g_rest, double a_g, double b_g,
                              const std::vector<double>& etas) {
  if (etas.empty() || etas.size() > 30) {
    throw_validation("approx_pip_group: needs 1..30 member correlations");
  }
  if (g_rest < 0 || g_rest > r - 1) throw_validation("approx_pip_group: |G| out of range");
  ApproxResult out;
  double log_inner;
  if (etas.size() == 1) {
    // Singleton group: activation forces the lone indicator on.
    log_inner = log_x_term(tau, n, etas[0], &out.eta_clamped);
  } else {
    std::vector<double> logx(etas.size());
    for (std::size_t v = 0; v < etas.size(); ++v) {
      logx[v] = log_x_term(tau, n, etas[v], &out.eta_clamped);
    }
    log_inner = log_h_sum(a_g, b_g, logx);
  }
  const double log_h =
      std::log(a_gtop + g_rest) - std::log(b_gtop + r - g_rest - 1) + log_inner;
  out.value = inv_one_plus_exp(-log_h);
  return out;
}

}  // namespace sparsepost
