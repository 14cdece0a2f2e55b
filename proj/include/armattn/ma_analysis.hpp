// SPDX-License-Identifier: Apache-2.0
//
// Explicit-matrix view of the MA term. B holds the generated weights
// beta_{t-1,j}; the implied error weights are Theta = B (I - B)^-1 and the
// errors are eps = (I + Theta)^-1 r. Both inverses are triangular solves.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "armattn/kernels.hpp"

namespace armattn::ma {

/// Query activation names: neg-leaky-relu, neg-relu, neg-sigmoid, neg-swish
/// and the pos-* counterparts. neg-f(x) = -f(-x), pos-f(x) = f(x).
const std::vector<std::string>& query_phi_names();
/// Key activation names: sigmoid.
const std::vector<std::string>& key_phi_names();

struct PhiPair {
  std::string q_name = "neg-leaky-relu";
  std::string k_name = "sigmoid";
  double alpha = 0.05;
  double leaky_slope = 0.02;

  void validate() const;  // throws std::invalid_argument on unknown names
};

/// phi_q(q / sqrt(w)) with w = q.cols().
Matrix apply_phi_q(const Matrix& q, const PhiPair& phi);
/// phi_k(alpha * k / sqrt(w)) with w = k.cols().
Matrix apply_phi_k(const Matrix& k, const PhiPair& phi);

/// Single head: B[t, j] = mean_c phi_q(q_{t-1})_c phi_k(k_j)_c for j < t.
Matrix explicit_B(const Matrix& q, const Matrix& k, const PhiPair& phi);
/// One B per head over contiguous column blocks. heads = d gives the
/// per-channel (element-wise) form.
std::vector<Matrix> explicit_B_heads(const Matrix& q, const Matrix& k, const PhiPair& phi, int heads);

/// Theta = B (I - B)^-1 by triangular solve. B must be strictly lower triangular.
Matrix implicit_theta(const Matrix& b);
/// Solves (I + Theta) eps = r by forward substitution; r is N x c.
Matrix recover_epsilon(const Matrix& theta, const Matrix& r);
/// theta_ij = b (1 + b)^(i-j-1) for i > j.
Matrix constant_b_theta(double b, int n);
/// Strictly lower triangular matrix with every entry b.
Matrix constant_B(double b, int n);

/// Mean |theta_{i, i-k}| for k = 1..N-1.
std::vector<double> diag_profile(const Matrix& theta);
/// Fraction of strictly-lower entries that are negative.
double negativity_fraction(const Matrix& m);

struct ThetaReport {
  Matrix B, Theta;
  std::string phi_q_name, phi_k_name;
  double alpha = 0.0;
  int d = 0;
  std::uint64_t seed = 0;
  std::vector<double> diag_profile;
  double negativity_fraction = 0.0;
};

ThetaReport make_report(Matrix b, const PhiPair& phi, int d, std::uint64_t seed);

struct Analysis {
  std::vector<ThetaReport> per_head;
  ThetaReport averaged;  // B and Theta averaged over heads
};

/// q, k ~ N(0, 1), N x d, drawn from the analysis stream of `seed`.
Analysis simulate(int n, int d, int heads, const PhiPair& phi, std::uint64_t seed);

/// Writes <prefix>_B.csv, <prefix>_theta.csv and <prefix>.json.
/// Throws std::runtime_error if a file cannot be written.
void export_weight_maps(const ThetaReport& report, const std::string& prefix);

}  // namespace armattn::ma
