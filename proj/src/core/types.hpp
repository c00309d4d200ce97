#pragma once

// Model state and configuration types shared by the model, sampler and
// enumeration code.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace sparsepost {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using BinaryVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

// Which slab covariance the marginal likelihood uses.
enum class CovarianceForm { Identity, GPrior };

enum class PriorKind { Basic, Unadjusted, AcrossTraits, AcrossSites };

std::string to_string(PriorKind k);
std::string to_string(CovarianceForm c);
std::optional<PriorKind> prior_kind_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Variant grouping (used by the AcrossSites prior and by rare-variant
// aggregation).  Groups are indexed 0..r-1; every variant belongs to exactly
// one group.
// ---------------------------------------------------------------------------

struct GroupMap {
  std::vector<int> group_of;               // size p, values in [0, r)
  std::vector<std::vector<int>> members;   // size r

  int n_variants() const { return static_cast<int>(group_of.size()); }
  int n_groups() const { return static_cast<int>(members.size()); }
  int group_size(int g) const { return static_cast<int>(members[g].size()); }

  static GroupMap from_assignments(const std::vector<int>& group_of);
  // Groups of `size` consecutive variants: {0..size-1}, {size..2*size-1}, ...
  static GroupMap consecutive(int p, int size);
  void validate() const;
};

// ---------------------------------------------------------------------------
// Hyperparameters.  Scalar Beta parameters govern each indicator layer; the
// per-variant and per-group parameters may be vectors (empty means "fill with
// the scalar default of 1").
// ---------------------------------------------------------------------------

struct Hyperparameters {
  double alpha_rho = 10.0;   // Gamma shape on the precision
  double lambda_rho = 10.0;  // Gamma rate on the precision
  double tau_lo = 0.01;      // support of the uniform prior on tau
  double tau_hi = 10.0;

  double a_omega = 1.0;      // Basic: Beta on the per-trait inclusion rate
  double b_omega = 1.0;
  double a_w = 1.0;          // AcrossTraits: Beta on the variant-relevance rate
  double b_w = 1.0;
  double a_g = 1.0;          // AcrossSites: Beta on the group-relevance rate
  double b_g = 1.0;

  Vector a_nu;               // per-variant Beta (row draws); empty -> all 1
  Vector b_nu;
  Vector a_nu_group;         // per-group Beta (group draws); empty -> all 1
  Vector b_nu_group;

  CovarianceForm covariance = CovarianceForm::GPrior;

  void validate() const;
  // Per-variant / per-group parameter accessors with the scalar-1 default.
  double av(int v) const { return a_nu.size() > 0 ? a_nu(v) : 1.0; }
  double bv(int v) const { return b_nu.size() > 0 ? b_nu(v) : 1.0; }
  double ag(int g) const { return a_nu_group.size() > 0 ? a_nu_group(g) : 1.0; }
  double bg(int g) const { return b_nu_group.size() > 0 ? b_nu_group(g) : 1.0; }
};

// ---------------------------------------------------------------------------
// PriorSpec: which structured prior is in force, plus everything needed to
// evaluate it.  AcrossSites requires a group map.
// ---------------------------------------------------------------------------

struct PriorSpec {
  PriorKind kind = PriorKind::Basic;
  Hyperparameters hyper;
  std::optional<GroupMap> groups;  // required iff kind == AcrossSites

  void validate(int p) const;
};

// ---------------------------------------------------------------------------
// DataSet: standardized design matrix plus trait vectors.  Traits are columns
// of Y.  Degenerate traits (zero sum of squares) are rejected at construction.
// ---------------------------------------------------------------------------

struct DataSet {
  Matrix X;  // n x p
  Matrix Y;  // n x q

  DataSet() = default;
  DataSet(Matrix X_, Matrix Y_);

  int n() const { return static_cast<int>(X.rows()); }
  int p() const { return static_cast<int>(X.cols()); }
  int q() const { return static_cast<int>(Y.cols()); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// IndicatorState: the latent indicators and tau.  W is present only for
// AcrossTraits; G (one column per trait) only for AcrossSites.  For q = 1 the
// G matrix is a single column, i.e. a length-r vector.
// ---------------------------------------------------------------------------

struct IndicatorState {
  BinaryMatrix Z;                   // p x q
  std::optional<BinaryVector> W;    // p     (AcrossTraits)
  std::optional<BinaryMatrix> G;    // r x q (AcrossSites)
  double tau = 0.0;

  int p() const { return static_cast<int>(Z.rows()); }
  int q() const { return static_cast<int>(Z.cols()); }

  int z_count() const;              // total active entries of Z
  int z_count_trait(int t) const;   // active entries in column t
  int row_count(int v) const;       // active entries in row v
  int w_count() const;
  int g_count_trait(int t) const;

  // Empty-model state of the right shape for the given prior.
  static IndicatorState empty(int p, int q, const PriorSpec& spec, double tau);
  static IndicatorState full(int p, int q, const PriorSpec& spec, double tau);

  // Throws invalid-state when the hierarchy constraints are violated
  // (AcrossTraits: Z_vt = 0 wherever W_v = 0; AcrossSites: group-level
  // consistency including forced singletons) or tau lies outside support.
  void check_consistency(const PriorSpec& spec) const;
};

}  // namespace sparsepost
