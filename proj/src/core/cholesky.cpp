#include "core/cholesky.hpp"

#include <cmath>

#include "core/model.hpp"

namespace sparsepost {

void ActiveSetChol::init(const Matrix* gram, const Vector* xty, double rel_tol) {
  gram_ = gram;
  xty_ = xty;
  rel_tol_ = rel_tol;
  const int p = static_cast<int>(gram->rows());
  if (gram->cols() != p || xty->size() != p) {
    throw_validation("ActiveSetChol: gram/xty shape mismatch");
  }
  pos_of_.assign(p, -1);
  idx_.clear();
  k_ = 0;
  proj_ = 0.0;
  m_dirty_ = true;
  ensure_capacity(8);
}

void ActiveSetChol::ensure_capacity(int k) {
  if (L_.rows() >= k) return;
  int cap = std::max<int>(8, static_cast<int>(L_.rows()));
  while (cap < k) cap *= 2;
  cap = std::min<int>(cap, static_cast<int>(gram_->rows()));
  cap = std::max(cap, k);
  Matrix newL = Matrix::Zero(cap, cap);
  if (k_ > 0) newL.topLeftCorner(k_, k_) = L_.topLeftCorner(k_, k_);
  L_ = std::move(newL);
  Vector neww = Vector::Zero(cap), newc = Vector::Zero(cap);
  if (k_ > 0) {
    neww.head(k_) = w_.head(k_);
    newc.head(k_) = cvals_.head(k_);
  }
  w_ = std::move(neww);
  cvals_ = std::move(newc);
  m_ = Vector::Zero(cap);
}

void ActiveSetChol::reset(const std::vector<int>& active) {
  for (int v : idx_) pos_of_[v] = -1;
  idx_ = active;
  k_ = static_cast<int>(idx_.size());
  ensure_capacity(k_);
  for (int j = 0; j < k_; ++j) {
    const int v = idx_[j];
    if (v < 0 || v >= static_cast<int>(pos_of_.size()) || pos_of_[v] >= 0) {
      throw_validation("ActiveSetChol: bad or duplicate active index");
    }
    pos_of_[v] = j;
    cvals_(j) = (*xty_)(v);
  }
  rebuild();
  commits_since_rebuild_ = 0;
}

void ActiveSetChol::rebuild() {
  Matrix A(k_, k_);
  for (int j = 0; j < k_; ++j) {
    for (int i = j; i < k_; ++i) A(i, j) = (*gram_)(idx_[i], idx_[j]);
  }
  if (!cholesky_in_place(A, rel_tol_)) {
    throw_numeric("singular design: active set is rank deficient");
  }
  L_.topLeftCorner(k_, k_) = A;
  w_.head(k_) = L_.topLeftCorner(k_, k_).triangularView<Eigen::Lower>().solve(cvals_.head(k_));
  proj_ = w_.head(k_).squaredNorm();
  m_dirty_ = true;
}

double ActiveSetChol::add_pivot(int v, Vector& l, double* d_out) const {
  // l = L^{-1} Gram(idx, v); d^2 = Gram(v,v) - ||l||^2.
  l.resize(k_);
  for (int j = 0; j < k_; ++j) l(j) = (*gram_)(idx_[j], v);
  if (k_ > 0) {
    L_.topLeftCorner(k_, k_).triangularView<Eigen::Lower>().solveInPlace(l);
  }
  const double gvv = (*gram_)(v, v);
  const double d2 = gvv - l.squaredNorm();
  if (!(d2 > rel_tol_ * gvv)) return -1.0;
  *d_out = std::sqrt(d2);
  // Return the new w entry.
  const double wnew = ((*xty_)(v) - (k_ > 0 ? l.dot(w_.head(k_)) : 0.0)) / *d_out;
  return wnew;
}

bool ActiveSetChol::peek_add(int v, double* proj_out) const {
  if (v < 0 || v >= static_cast<int>(pos_of_.size()) || pos_of_[v] >= 0) {
    throw_validation("ActiveSetChol::peek_add: bad candidate");
  }
  Vector l;
  double d = 0.0;
  const double wnew = add_pivot(v, l, &d);
  if (d <= 0.0) return false;
  *proj_out = proj_ + wnew * wnew;
  return true;
}

void ActiveSetChol::refresh_m() const {
  if (!m_dirty_) return;
  m_.head(k_) = w_.head(k_);
  L_.topLeftCorner(k_, k_).triangularView<Eigen::Lower>().transpose().solveInPlace(
      m_.head(k_));
  m_dirty_ = false;
}

double ActiveSetChol::peek_remove(int pos) const {
  if (pos < 0 || pos >= k_) throw_validation("ActiveSetChol::peek_remove: bad position");
  if (k_ == 1) return 0.0;
  refresh_m();
  // (A^{-1})_{jj} = ||L^{-1} e_j||^2.
  Vector e = Vector::Zero(k_);
  e(pos) = 1.0;
  L_.topLeftCorner(k_, k_).triangularView<Eigen::Lower>().solveInPlace(e);
  const double ainv_jj = e.squaredNorm();
  const double mj = m_(pos);
  return proj_ - mj * mj / ainv_jj;
}

void ActiveSetChol::commit_add(int v) {
  if (v < 0 || v >= static_cast<int>(pos_of_.size()) || pos_of_[v] >= 0) {
    throw_validation("ActiveSetChol::commit_add: bad candidate");
  }
  ensure_capacity(k_ + 1);
  Vector l;
  double d = 0.0;
  const double wnew = add_pivot(v, l, &d);
  if (d <= 0.0) throw_numeric("singular design: candidate column is collinear with active set");
  L_.row(k_).head(k_) = l.transpose();
  L_(k_, k_) = d;
  w_(k_) = wnew;
  cvals_(k_) = (*xty_)(v);
  idx_.push_back(v);
  pos_of_[v] = k_;
  ++k_;
  proj_ += wnew * wnew;
  m_dirty_ = true;
  if (++commits_since_rebuild_ >= kRefreshInterval) {
    rebuild();
    commits_since_rebuild_ = 0;
  }
}

void ActiveSetChol::pop() {
  if (k_ == 0) throw_validation("ActiveSetChol::pop: empty");
  --k_;
  proj_ -= w_(k_) * w_(k_);
  pos_of_[idx_.back()] = -1;
  idx_.pop_back();
  m_dirty_ = true;
  if (k_ == 0) proj_ = 0.0;  // flush any rounding residue
}

void ActiveSetChol::commit_remove_position(int pos) {
  if (pos < 0 || pos >= k_) throw_validation("ActiveSetChol::commit_remove_position: bad position");
  if (pos == k_ - 1) {
    pop();
    return;
  }
  pos_of_[idx_[pos]] = -1;
  // Shift the index bookkeeping and the stored c values.
  for (int j = pos + 1; j < k_; ++j) {
    idx_[j - 1] = idx_[j];
    pos_of_[idx_[j - 1]] = j - 1;
    cvals_(j - 1) = cvals_(j);
  }
  idx_.pop_back();

  // Trailing block: with row `pos` deleted, A33 = L31 L31' + l32 l32' + L33 L33',
  // so the new trailing factor is cholupdate(L33, l32).
  const int m = k_ - pos - 1;
  Vector x = L_.col(pos).segment(pos + 1, m);
  // Slide rows/cols up-left over the removed row and column.
  for (int i = pos + 1; i < k_; ++i) {
    for (int j = 0; j < pos; ++j) L_(i - 1, j) = L_(i, j);
    for (int j = pos + 1; j <= i; ++j) L_(i - 1, j - 1) = L_(i, j);
  }
  --k_;
  // Rank-one update of the trailing m x m block starting at (pos, pos).
  for (int c = 0; c < m; ++c) {
    const int jc = pos + c;
    const double lkk = L_(jc, jc);
    const double r = std::hypot(lkk, x(c));
    const double cs = r / lkk;
    const double sn = x(c) / lkk;
    L_(jc, jc) = r;
    for (int i = c + 1; i < m; ++i) {
      const int ir = pos + i;
      L_(ir, jc) = (L_(ir, jc) + sn * x(i)) / cs;
      x(i) = cs * x(i) - sn * L_(ir, jc);
    }
  }
  w_.head(k_) = L_.topLeftCorner(k_, k_).triangularView<Eigen::Lower>().solve(cvals_.head(k_));
  proj_ = w_.head(k_).squaredNorm();
  m_dirty_ = true;
  if (++commits_since_rebuild_ >= kRefreshInterval) {
    rebuild();
    commits_since_rebuild_ = 0;
  }
}

}  // namespace sparsepost
