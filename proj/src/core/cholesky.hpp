#pragma once

// Incremental Cholesky over a growing/shrinking active set of design columns.
//
// Maintains the lower factor L of A = Gram(idx, idx), the solved vector
// w = L^{-1} c with c = xty(idx), and proj = ||w||^2 = c'A^{-1}c.  Appending a
// column and removing one both cost O(k^2); removal re-triangularizes the
// trailing block with a rank-one update.  The factor is rebuilt from scratch
// every kRefreshInterval structural commits to keep floating-point drift in
// check.

#include "core/types.hpp"

namespace sparsepost {

class ActiveSetChol {
 public:
  static constexpr int kRefreshInterval = 8192;

  ActiveSetChol() = default;

  // `gram` (p x p) and `xty` (p) must outlive the engine.
  void init(const Matrix* gram, const Vector* xty, double rel_tol);

  // Rebuild the factor for the given active set.  Throws numeric error on a
  // rank-deficient set.
  void reset(const std::vector<int>& active);

  int size() const { return k_; }
  const std::vector<int>& active() const { return idx_; }
  bool contains(int v) const { return pos_of_[v] >= 0; }
  int position_of(int v) const { return pos_of_[v]; }
  double proj() const { return proj_; }
  double factor_diag(int j) const { return L_(j, j); }

  // Projection if column v were appended; false when the pivot is below
  // tolerance (collinear candidate).  No state change.
  bool peek_add(int v, double* proj_out) const;
  // Projection if the active column at `pos` were removed.  No state change.
  double peek_remove(int pos) const;

  // Throws numeric error when the pivot check fails.
  void commit_add(int v);
  void commit_remove_position(int pos);
  // Fast path for stack-ordered use: drop the most recently appended column.
  void pop();

 private:
  void ensure_capacity(int k);
  void rebuild();
  double add_pivot(int v, Vector& l, double* d_out) const;  // shared add math
  void refresh_m() const;

  const Matrix* gram_ = nullptr;
  const Vector* xty_ = nullptr;
  double rel_tol_ = 1e-10;

  int k_ = 0;
  std::vector<int> idx_;
  std::vector<int> pos_of_;
  Matrix L_;       // capacity x capacity; top-left k x k in use
  Vector w_;       // L^{-1} c, length >= k
  Vector cvals_;   // xty(idx), length >= k
  double proj_ = 0.0;
  int commits_since_rebuild_ = 0;

  mutable Vector m_;        // A^{-1} c, maintained lazily for peek_remove
  mutable bool m_dirty_ = true;
};

}  // namespace sparsepost
