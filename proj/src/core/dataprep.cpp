#include "core/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "core/model.hpp"

namespace sparsepost {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

int consequence_rank(const std::string& consequence) {
  const std::string c = lower(consequence);
  if (c == "nonsense") return 0;
  if (c.rfind("missense-probably", 0) == 0) return 1;
  if (c.rfind("missense-possibly", 0) == 0) return 2;
  if (c.rfind("missense", 0) == 0) return 3;
  return 4;
}

bool is_nonsynonymous(const std::string& consequence) { return consequence_rank(consequence) < 4; }

Matrix standardize_columns(const Matrix& m) {
  const int n = static_cast<int>(m.rows());
  const int p = static_cast<int>(m.cols());
  if (n < 2) throw_validation("standardize_columns: need at least two rows");
  Matrix out(n, p);
  for (int j = 0; j < p; ++j) {
    const double mean = m.col(j).mean();
    Vector centered = m.col(j).array() - mean;
    const double var = centered.squaredNorm() / (n - 1);
    if (!(var > 0.0)) {
      throw_validation("standardize_columns: constant column " + std::to_string(j));
    }
    out.col(j) = centered / std::sqrt(var);
  }
  return out;
}

Matrix impute_and_standardize(const Matrix& counts) {
  const int n = static_cast<int>(counts.rows());
  const int p = static_cast<int>(counts.cols());
  if (n < 2 || p < 1) throw_validation("impute_and_standardize: empty input");
  Matrix filled(n, p);
  for (int j = 0; j < p; ++j) {
    double sum = 0.0;
    int observed = 0;
    for (int i = 0; i < n; ++i) {
      const double v = counts(i, j);
      if (std::isnan(v)) continue;
      if (v != 0.0 && v != 1.0 && v != 2.0) {
        throw_validation("impute_and_standardize: allele count outside {0,1,2} at column " +
                         std::to_string(j));
      }
      sum += v;
      ++observed;
    }
    if (observed == 0) {
      throw_validation("impute_and_standardize: variant " + std::to_string(j) +
                       " entirely missing");
    }
    const double mean = sum / observed;
    for (int i = 0; i < n; ++i) {
      const double v = counts(i, j);
      filled(i, j) = std::isnan(v) ? mean : v;
    }
  }
  return standardize_columns(filled);
}

Matrix regress_out(const Matrix& m, const Matrix& covariates) {
  const int n = static_cast<int>(m.rows());
  if (covariates.rows() != n && covariates.size() != 0) {
    throw_validation("regress_out: covariate row count mismatch");
  }
  const int c = covariates.size() == 0 ? 0 : static_cast<int>(covariates.cols());
  Matrix C(n, c + 1);
  C.col(0).setOnes();
  if (c > 0) C.rightCols(c) = covariates;
  Matrix gram = C.transpose() * C;
  if (!cholesky_in_place(gram, kPivotRelTol)) {
    throw_numeric("regress_out: covariate block is rank deficient");
  }
  // Solve (C'C) B = C'M through the factor.
  Matrix B = C.transpose() * m;
  gram.triangularView<Eigen::Lower>().solveInPlace(B);
  gram.triangularView<Eigen::Lower>().transpose().solveInPlace(B);
  return standardize_columns(m - C * B);
}

Vector compute_maf(const Matrix& counts) {
  const int n = static_cast<int>(counts.rows());
  const int p = static_cast<int>(counts.cols());
  Vector maf(p);
  for (int j = 0; j < p; ++j) {
    double sum = 0.0;
    int observed = 0;
    for (int i = 0; i < n; ++i) {
      const double v = counts(i, j);
      if (std::isnan(v)) continue;
      sum += v;
      ++observed;
    }
    if (observed == 0) throw_validation("compute_maf: variant entirely missing");
    const double freq = sum / (2.0 * observed);
    maf(j) = std::min(freq, 1.0 - freq);
  }
  return maf;
}

const char* to_string(DropReason r) {
  switch (r) {
    case DropReason::Duplicate: return "duplicate";
    case DropReason::Protected: return "protected";
    case DropReason::PValue: return "p_value";
    case DropReason::Annotation: return "annotation";
    case DropReason::Maf: return "maf";
    case DropReason::Arbitrary: return "arbitrary";
  }
  return "?";
}

namespace {

// Absolute pairwise-complete correlation between two columns; 0 when fewer
// than three complete pairs or either column is constant on the overlap.
double abs_pairwise_corr(const Matrix& counts, int i, int j) {
  const int n = static_cast<int>(counts.rows());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  int m = 0;
  for (int row = 0; row < n; ++row) {
    const double x = counts(row, i), y = counts(row, j);
    if (std::isnan(x) || std::isnan(y)) continue;
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
    ++m;
  }
  if (m < 3) return 0.0;
  const double vx = sxx - sx * sx / m;
  const double vy = syy - sy * sy / m;
  if (!(vx > 0.0) || !(vy > 0.0)) return 0.0;
  const double c = (sxy - sx * sy / m) / std::sqrt(vx * vy);
  return std::min(std::fabs(c), 1.0);
}

struct Cascade {
  const std::vector<VariantMeta>& meta;
  RngStream& rng;

  // Winner of the survivor cascade plus the rule that decided it.
  std::pair<int, DropReason> pick(std::vector<int> candidates) const {
    // Protected variants win outright; highest priority among them.
    int best = -1;
    for (int v : candidates) {
      if (std::isnan(meta[v].priority)) continue;
      if (best < 0 || meta[v].priority > meta[best].priority) best = v;
    }
    if (best >= 0) return {best, DropReason::Protected};

    // Smallest p-value among common variants, when any carries one.
    double best_p = std::numeric_limits<double>::infinity();
    for (int v : candidates) {
      const double maf = meta[v].maf;
      const double pv = meta[v].p_value;
      if (std::isnan(maf) || maf < kCommonMafThreshold || std::isnan(pv)) continue;
      best_p = std::min(best_p, pv);
    }
    if (std::isfinite(best_p)) {
      std::vector<int> tied;
      for (int v : candidates) {
        const double maf = meta[v].maf;
        if (!std::isnan(maf) && maf >= kCommonMafThreshold && meta[v].p_value == best_p) {
          tied.push_back(v);
        }
      }
      if (tied.size() == 1) return {tied[0], DropReason::PValue};
      candidates = std::move(tied);
    }

    // Worst (most severe) consequence.
    int worst = 5;
    for (int v : candidates) worst = std::min(worst, consequence_rank(meta[v].consequence));
    std::vector<int> sev;
    for (int v : candidates) {
      if (consequence_rank(meta[v].consequence) == worst) sev.push_back(v);
    }
    if (sev.size() == 1) return {sev[0], DropReason::Annotation};
    candidates = std::move(sev);

    // Greatest MAF (missing treated as smallest).
    double max_maf = -1.0;
    for (int v : candidates) {
      const double maf = std::isnan(meta[v].maf) ? -1.0 : meta[v].maf;
      max_maf = std::max(max_maf, maf);
    }
    std::vector<int> top;
    for (int v : candidates) {
      const double maf = std::isnan(meta[v].maf) ? -1.0 : meta[v].maf;
      if (maf == max_maf) top.push_back(v);
    }
    if (top.size() == 1) return {top[0], DropReason::Maf};

    return {top[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(top.size())))],
            DropReason::Arbitrary};
  }
};

bool columns_identical(const Matrix& counts, int i, int j) {
  const int n = static_cast<int>(counts.rows());
  for (int row = 0; row < n; ++row) {
    const double x = counts(row, i), y = counts(row, j);
    const bool nx = std::isnan(x), ny = std::isnan(y);
    if (nx != ny) return false;
    if (!nx && x != y) return false;
  }
  return true;
}

}  // namespace

PruneResult prune_correlated(const Matrix& counts, const std::vector<VariantMeta>& meta,
                             const PruneConfig& config) {
  const int p = static_cast<int>(counts.cols());
  if (static_cast<int>(meta.size()) != p) {
    throw_validation("prune_correlated: metadata size mismatch");
  }
  if (!(config.c_max > 0.0 && config.c_max < 1.0)) {
    throw_validation("prune_correlated: c_max must lie in (0,1)");
  }
  RngStream rng(config.seed, 0x9e3779b9u);
  Cascade cascade{meta, rng};
  std::vector<bool> alive(p, true);
  PruneResult result;

  // Exact-duplicate collapse first.
  for (int i = 0; i < p; ++i) {
    if (!alive[i]) continue;
    std::vector<int> dup{i};
    for (int j = i + 1; j < p; ++j) {
      if (alive[j] && columns_identical(counts, i, j)) dup.push_back(j);
    }
    if (dup.size() < 2) continue;
    const auto [winner, reason] = cascade.pick(dup);
    (void)reason;
    for (int v : dup) {
      if (v == winner) continue;
      alive[v] = false;
      result.drops.push_back({v, winner, 1.0, 0, DropReason::Duplicate});
    }
  }

  // Pairwise-complete correlations are invariant under drops; compute once.
  Matrix corr = Matrix::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = i + 1; j < p; ++j) {
      if (alive[i] && alive[j]) corr(i, j) = corr(j, i) = abs_pairwise_corr(counts, i, j);
    }
  }

  std::vector<double> thresholds;
  for (double c = 0.9; c > config.c_max + 1e-12; c -= 0.1) thresholds.push_back(c);
  thresholds.push_back(config.c_max);

  for (int mode = 1; mode <= 2; ++mode) {
    for (double c0 : thresholds) {
      for (;;) {
        // Most correlated surviving pair; mode 1 restricts to same-chromosome
        // pairs (cross-chromosome entries are skipped, as in the source sweep).
        int bi = -1, bj = -1;
        double best = c0;
        for (int i = 0; i < p; ++i) {
          if (!alive[i]) continue;
          for (int j = i + 1; j < p; ++j) {
            if (!alive[j]) continue;
            if (mode == 1 && meta[i].chromosome != meta[j].chromosome) continue;
            if (corr(i, j) > best) {
              best = corr(i, j);
              bi = i;
              bj = j;
            }
          }
        }
        if (bi < 0) break;

        std::vector<int> cand{bi, bj};
        if (mode == 1) {
          // One-pass expansion over the shared chromosome.
          for (int l = 0; l < p; ++l) {
            if (!alive[l] || l == bi || l == bj) continue;
            if (meta[l].chromosome != meta[bi].chromosome) continue;
            if (corr(bi, l) > c0 || corr(bj, l) > c0) cand.push_back(l);
          }
        }
        const auto [winner, reason] = cascade.pick(cand);
        for (int v : cand) {
          if (v == winner) continue;
          alive[v] = false;
          result.drops.push_back({v, winner, c0, mode, reason});
        }
      }
    }
  }

  for (int v = 0; v < p; ++v) {
    if (alive[v]) result.kept.push_back(v);
  }
  return result;
}

GroupMap group_rare_variants(const std::vector<VariantMeta>& meta, double maf_threshold) {
  const int p = static_cast<int>(meta.size());
  if (p == 0) throw_validation("group_rare_variants: empty metadata");
  std::vector<int> assign(p, -1);
  std::map<std::string, int> gene_group;
  int next = 0;
  for (int v = 0; v < p; ++v) {
    const VariantMeta& m = meta[v];
    const bool rare = !std::isnan(m.maf) && m.maf < maf_threshold;
    if (rare && is_nonsynonymous(m.consequence) && !m.gene.empty()) {
      auto [it, inserted] = gene_group.try_emplace(m.gene, next);
      if (inserted) ++next;
      assign[v] = it->second;
    } else {
      assign[v] = next++;
    }
  }
  return GroupMap::from_assignments(assign);
}

}  // namespace sparsepost
