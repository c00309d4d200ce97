#pragma once

// Shared numerics, error types and RNG streams used across the library.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsepost {

// ---------------------------------------------------------------------------
// Errors.  Two broad classes, matching the CLI exit codes: validation errors
// (bad inputs, inconsistent states, unsupported requests) and numeric errors
// (singular designs, infeasible models, non-convergence).
// ---------------------------------------------------------------------------

enum class errc : int {
  validation = 2,
  numeric = 3,
};

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void throw_validation(const std::string& msg) {
  throw error(errc::validation, msg);
}

[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw error(errc::numeric, msg);
}

// ---------------------------------------------------------------------------
// Log-space helpers.
// ---------------------------------------------------------------------------

double log_beta(double a, double b);           // log B(a,b), a,b > 0
double log_choose(int n, int k);               // log C(n,k)
double log_sum_exp(const std::vector<double>& v);
double log_sum_exp(double a, double b);

// Standard normal CDF, its inverse, and the Student-t two-sided p-value
// P(|T_dof| >= |t|).  Backed by Boost.Math.
double normal_cdf(double x);
double normal_quantile(double p);
double student_t_two_sided_p(double t, double dof);

// ---------------------------------------------------------------------------
// RNG.  One stream per (seed, stream index) pair so that chains and replicates
// draw from independent, reproducible streams.  Stream derivation uses
// SplitMix64 over the pair, which is the documented splitting rule; runs with
// the same (seed, index) reproduce bit-identically on a given platform.
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);

class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream);

  // Uniform on [0,1) with 53 random bits.
  double uniform();
  // Uniform on (0,1) -- never returns 0; safe as a CDF argument.
  double uniform_pos();
  double normal();                       // standard normal
  double gamma(double shape, double scale);
  double beta(double a, double b);
  // Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n);
  // Index draw from unnormalized weights.
  std::size_t categorical(const std::vector<double>& weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sparsepost
