#include "core/types.hpp"

#include <algorithm>
#include <cmath>

namespace sparsepost {

std::string to_string(PriorKind k) {
  switch (k) {
    case PriorKind::Basic: return "basic";
    case PriorKind::Unadjusted: return "unadjusted";
    case PriorKind::AcrossTraits: return "across-traits";
    case PriorKind::AcrossSites: return "across-sites";
  }
  return "?";
}

std::string to_string(CovarianceForm c) {
  return c == CovarianceForm::GPrior ? "gprior" : "identity";
}

std::optional<PriorKind> prior_kind_from_string(const std::string& s) {
  if (s == "basic") return PriorKind::Basic;
  if (s == "unadjusted") return PriorKind::Unadjusted;
  if (s == "across-traits") return PriorKind::AcrossTraits;
  if (s == "across-sites") return PriorKind::AcrossSites;
  return std::nullopt;
}

GroupMap GroupMap::from_assignments(const std::vector<int>& group_of) {
  GroupMap gm;
  gm.group_of = group_of;
  int r = 0;
  for (int g : group_of) r = std::max(r, g + 1);
  gm.members.resize(r);
  for (int v = 0; v < static_cast<int>(group_of.size()); ++v) {
    if (group_of[v] < 0) throw_validation("GroupMap: negative group id");
    gm.members[group_of[v]].push_back(v);
  }
  gm.validate();
  return gm;
}

GroupMap GroupMap::consecutive(int p, int size) {
  if (p <= 0 || size <= 0) throw_validation("GroupMap::consecutive: p and size must be positive");
  std::vector<int> assign(p);
  for (int v = 0; v < p; ++v) assign[v] = v / size;
  return from_assignments(assign);
}

void GroupMap::validate() const {
  const int p = n_variants();
  const int r = n_groups();
  if (p == 0) throw_validation("GroupMap: empty");
  std::vector<int> seen(p, 0);
  for (int g = 0; g < r; ++g) {
    if (members[g].empty()) throw_validation("GroupMap: empty group " + std::to_string(g));
    for (int v : members[g]) {
      if (v < 0 || v >= p) throw_validation("GroupMap: variant index out of range");
      if (group_of[v] != g) throw_validation("GroupMap: inconsistent membership");
      seen[v]++;
    }
  }
  for (int v = 0; v < p; ++v) {
    if (seen[v] != 1) throw_validation("GroupMap: variant " + std::to_string(v) + " not in exactly one group");
  }
}

void Hyperparameters::validate() const {
  auto pos = [](double x, const char* name) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw_validation(std::string("Hyperparameters: ") + name + " must be positive and finite");
    }
  };
  pos(alpha_rho, "alpha_rho");
  pos(lambda_rho, "lambda_rho");
  pos(a_omega, "a_omega");
  pos(b_omega, "b_omega");
  pos(a_w, "a_w");
  pos(b_w, "b_w");
  pos(a_g, "a_g");
  pos(b_g, "b_g");
  if (!(tau_lo > 0.0) || !(tau_hi > tau_lo)) {
    throw_validation("Hyperparameters: tau support requires 0 < tau_lo < tau_hi");
  }
  for (int i = 0; i < a_nu.size(); ++i) pos(a_nu(i), "a_nu");
  for (int i = 0; i < b_nu.size(); ++i) pos(b_nu(i), "b_nu");
  for (int i = 0; i < a_nu_group.size(); ++i) pos(a_nu_group(i), "a_nu_group");
  for (int i = 0; i < b_nu_group.size(); ++i) pos(b_nu_group(i), "b_nu_group");
  if (a_nu.size() != b_nu.size()) throw_validation("Hyperparameters: a_nu/b_nu length mismatch");
  if (a_nu_group.size() != b_nu_group.size()) {
    throw_validation("Hyperparameters: a_nu_group/b_nu_group length mismatch");
  }
}

void PriorSpec::validate(int p) const {
  hyper.validate();
  if (hyper.a_nu.size() > 0 && hyper.a_nu.size() != p) {
    throw_validation("PriorSpec: per-variant Beta parameters must have length p");
  }
  if (kind == PriorKind::AcrossSites) {
    if (!groups) throw_validation("PriorSpec: AcrossSites requires a group map");
    groups->validate();
    if (groups->n_variants() != p) {
      throw_validation("PriorSpec: group map covers " + std::to_string(groups->n_variants()) +
                       " variants, design has " + std::to_string(p));
    }
    if (hyper.a_nu_group.size() > 0 && hyper.a_nu_group.size() != groups->n_groups()) {
      throw_validation("PriorSpec: per-group Beta parameters must have length r");
    }
  } else if (groups) {
    throw_validation("PriorSpec: group map only meaningful for AcrossSites");
  }
}

DataSet::DataSet(Matrix X_, Matrix Y_) : X(std::move(X_)), Y(std::move(Y_)) { validate(); }

void DataSet::validate() const {
  if (X.rows() == 0 || X.cols() == 0) throw_validation("DataSet: empty design matrix");
  if (Y.rows() != X.rows()) throw_validation("DataSet: X and Y row counts differ");
  if (Y.cols() == 0) throw_validation("DataSet: no traits");
  if (!X.allFinite()) throw_validation("DataSet: design matrix contains non-finite values");
  if (!Y.allFinite()) throw_validation("DataSet: traits contain non-finite values");
  for (int t = 0; t < Y.cols(); ++t) {
    if (Y.col(t).squaredNorm() <= 0.0) {
      throw_validation("DataSet: trait " + std::to_string(t) + " is degenerate (zero sum of squares)");
    }
  }
}

int IndicatorState::z_count() const {
  int s = 0;
  for (int t = 0; t < Z.cols(); ++t) s += z_count_trait(t);
  return s;
}

int IndicatorState::z_count_trait(int t) const {
  int s = 0;
  for (int v = 0; v < Z.rows(); ++v) s += Z(v, t);
  return s;
}

int IndicatorState::row_count(int v) const {
  int s = 0;
  for (int t = 0; t < Z.cols(); ++t) s += Z(v, t);
  return s;
}

int IndicatorState::w_count() const {
  if (!W) throw_validation("IndicatorState: W absent");
  int s = 0;
  for (int v = 0; v < W->size(); ++v) s += (*W)(v);
  return s;
}

int IndicatorState::g_count_trait(int t) const {
  if (!G) throw_validation("IndicatorState: G absent");
  int s = 0;
  for (int g = 0; g < G->rows(); ++g) s += (*G)(g, t);
  return s;
}

IndicatorState IndicatorState::empty(int p, int q, const PriorSpec& spec, double tau) {
  IndicatorState s;
  s.Z = BinaryMatrix::Zero(p, q);
  s.tau = tau;
  if (spec.kind == PriorKind::AcrossTraits) s.W = BinaryVector::Zero(p);
  if (spec.kind == PriorKind::AcrossSites) s.G = BinaryMatrix::Zero(spec.groups->n_groups(), q);
  return s;
}

IndicatorState IndicatorState::full(int p, int q, const PriorSpec& spec, double tau) {
  IndicatorState s;
  s.Z = BinaryMatrix::Constant(p, q, 1);
  s.tau = tau;
  if (spec.kind == PriorKind::AcrossTraits) s.W = BinaryVector::Constant(p, 1);
  if (spec.kind == PriorKind::AcrossSites) {
    s.G = BinaryMatrix::Constant(spec.groups->n_groups(), q, 1);
  }
  return s;
}

void IndicatorState::check_consistency(const PriorSpec& spec) const {
  const int pp = p();
  const int qq = q();
  for (int v = 0; v < pp; ++v) {
    for (int t = 0; t < qq; ++t) {
      if (Z(v, t) > 1) throw_validation("IndicatorState: Z must be binary");
    }
  }
  if (!(tau > spec.hyper.tau_lo && tau < spec.hyper.tau_hi)) {
    throw_validation("IndicatorState: tau=" + std::to_string(tau) + " outside prior support (" +
                     std::to_string(spec.hyper.tau_lo) + ", " + std::to_string(spec.hyper.tau_hi) + ")");
  }
  switch (spec.kind) {
    case PriorKind::Basic:
    case PriorKind::Unadjusted:
      if (W || G) throw_validation("IndicatorState: upper layer present for single-layer prior");
      break;
    case PriorKind::AcrossTraits: {
      if (!W || G) throw_validation("IndicatorState: AcrossTraits requires W and no G");
      if (W->size() != pp) throw_validation("IndicatorState: W length mismatch");
      for (int v = 0; v < pp; ++v) {
        if ((*W)(v) > 1) throw_validation("IndicatorState: W must be binary");
        if ((*W)(v) == 0 && row_count(v) > 0) {
          throw_validation("IndicatorState: Z_vt nonzero for variant with W_v = 0");
        }
      }
      break;
    }
    case PriorKind::AcrossSites: {
      if (!G || W) throw_validation("IndicatorState: AcrossSites requires G and no W");
      const GroupMap& gm = *spec.groups;
      if (G->rows() != gm.n_groups() || G->cols() != qq) {
        throw_validation("IndicatorState: G shape mismatch");
      }
      for (int g = 0; g < gm.n_groups(); ++g) {
        for (int t = 0; t < qq; ++t) {
          if ((*G)(g, t) > 1) throw_validation("IndicatorState: G must be binary");
          int active = 0;
          for (int v : gm.members[g]) active += Z(v, t);
          if ((*G)(g, t) == 0 && active > 0) {
            throw_validation("IndicatorState: Z active within inactive group");
          }
          if ((*G)(g, t) == 1 && gm.group_size(g) == 1 && active != 1) {
            throw_validation("IndicatorState: active singleton group must have Z_v = 1");
          }
        }
      }
      break;
    }
  }
}

}  // namespace sparsepost
