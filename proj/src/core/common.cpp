#include "core/common.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace sparsepost {

double log_beta(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw_validation("log_beta requires strictly positive arguments (got a=" +
                     std::to_string(a) + ", b=" + std::to_string(b) + ")");
  }
  return boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b);
}

double log_choose(int n, int k) {
  if (k < 0 || k > n) throw_validation("log_choose: k out of range");
  return boost::math::lgamma(n + 1.0) - boost::math::lgamma(k + 1.0) -
         boost::math::lgamma(n - k + 1.0);
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double normal_cdf(double x) {
  static const boost::math::normal_distribution<double> nd(0.0, 1.0);
  return boost::math::cdf(nd, x);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw_validation("normal_quantile requires p in (0,1)");
  static const boost::math::normal_distribution<double> nd(0.0, 1.0);
  return boost::math::quantile(nd, p);
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw_validation("student_t_two_sided_p requires dof > 0");
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t_distribution<double> td(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(td, std::fabs(t)));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) {
  // Expand (seed, stream) into a full seed sequence so distinct streams are
  // decorrelated even for adjacent seeds.
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream));
  const std::uint64_t c = splitmix64(b + 0x9E3779B97F4A7C15ULL);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  engine_.seed(seq);
}

double RngStream::uniform() {
  return (engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_pos() {
  double u;
  do {
    u = uniform();
  } while (u <= 0.0);
  return u;
}

double RngStream::normal() {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(engine_);
}

double RngStream::gamma(double shape, double scale) {
  std::gamma_distribution<double> d(shape, scale);
  return d(engine_);
}

double RngStream::beta(double a, double b) {
  const double x = gamma(a, 1.0);
  const double y = gamma(b, 1.0);
  return x / (x + y);
}

std::int64_t RngStream::uniform_int(std::int64_t n) {
  if (n <= 0) throw_validation("uniform_int requires n > 0");
  std::uniform_int_distribution<std::int64_t> d(0, n - 1);
  return d(engine_);
}

std::size_t RngStream::categorical(const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw_validation("categorical: bad weight");
    total += w;
  }
  if (total <= 0.0) throw_validation("categorical: weights sum to zero");
  double u = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  return weights.size() - 1;
}

}  // namespace sparsepost
