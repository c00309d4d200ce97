#pragma once

// Genotype/phenotype preparation: mean imputation, standardization, covariate
// projection, correlation pruning with a survivor cascade, and rare-variant
// grouping for the grouped prior.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "core/types.hpp"

namespace sparsepost {

// MAF cutoff separating rare from common variants.
inline constexpr double kCommonMafThreshold = 0.01;

struct VariantMeta {
  std::string id;
  int chromosome = 0;
  long long position = 0;
  std::string gene;
  std::string consequence;  // nonsense / missense-probably / missense-possibly / missense / other
  double maf = std::numeric_limits<double>::quiet_NaN();
  // Non-NaN marks a variant to keep at all costs; larger wins among several.
  double priority = std::numeric_limits<double>::quiet_NaN();
  // Optional per-variant association p-value feeding the survivor cascade.
  double p_value = std::numeric_limits<double>::quiet_NaN();
};

// Severity rank of a consequence string: 0 = nonsense (worst) through
// 4 = everything else.  Unknown strings rank 4.
int consequence_rank(const std::string& consequence);
bool is_nonsynonymous(const std::string& consequence);

// Mean-impute missing allele counts (NaN entries) and standardize each column
// to mean zero, unit sample variance (n-1 divisor).  Observed entries must be
// 0, 1 or 2.
Matrix impute_and_standardize(const Matrix& counts);

// Center and scale the columns of a complete matrix (n-1 divisor).
Matrix standardize_columns(const Matrix& m);

// Replace each column by its least-squares residual against [1 | covariates]
// and re-standardize.  A zero-column covariate block regresses out the
// intercept alone.
Matrix regress_out(const Matrix& m, const Matrix& covariates);

// Minor allele frequency of each column of an allele-count matrix (NaN
// entries ignored).
Vector compute_maf(const Matrix& counts);

struct PruneConfig {
  double c_max = 0.3;
  std::uint64_t seed = 0;
};

enum class DropReason { Duplicate, Protected, PValue, Annotation, Maf, Arbitrary };
const char* to_string(DropReason r);

struct DropRecord {
  int dropped = -1;
  int kept = -1;          // cascade winner of the event
  double threshold = 0.0; // correlation threshold in force (1 for duplicates)
  int mode = 0;           // 0 = duplicate pass, else sweep mode 1/2
  DropReason reason = DropReason::Arbitrary;
};

struct PruneResult {
  std::vector<int> kept;  // ascending indices into the input columns
  std::vector<DropRecord> drops;
};

// Correlation pruning.  Exact-duplicate columns collapse to their cascade
// winner first; then a two-mode sweep over descending thresholds
// 0.9, 0.8, ..., c_max repeatedly takes the most correlated surviving pair
// (mode 1: same-chromosome pairs, with one-pass expansion of the candidate
// set; mode 2: any pair) and keeps the cascade winner: protected variant,
// else smallest p-value among common variants, else worst consequence, else
// greatest MAF, else a seeded arbitrary choice.  Correlations use
// pairwise-complete observations, so `counts` may contain NaN.
PruneResult prune_correlated(const Matrix& counts, const std::vector<VariantMeta>& meta,
                             const PruneConfig& config);

// Groups for the grouped indicator prior: rare nonsynonymous variants in the
// same gene share a group; every other variant is a singleton.
GroupMap group_rare_variants(const std::vector<VariantMeta>& meta,
                             double maf_threshold = kCommonMafThreshold);

}  // namespace sparsepost
