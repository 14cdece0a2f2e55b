// SPDX-License-Identifier: Apache-2.0

#include "armattn/ma_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "armattn/rng.hpp"
#include "armattn/tensor.hpp"
#include "json.hpp"

namespace armattn::ma {

namespace {

double sig(double x) { return kernels::sigmoid(x); }

std::function<double(double)> base_fn(std::string_view base, double slope) {
  if (base == "leaky-relu") return [slope](double x) { return x > 0.0 ? x : slope * x; };
  if (base == "relu") return [](double x) { return x > 0.0 ? x : 0.0; };
  if (base == "sigmoid") return [](double x) { return sig(x); };
  if (base == "swish") return [](double x) { return x * sig(x); };
  throw std::invalid_argument("unknown activation '" + std::string(base) + "'");
}

std::function<double(double)> query_fn(std::string_view name, double slope) {
  if (name.starts_with("neg-")) {
    auto f = base_fn(name.substr(4), slope);
    return [f](double x) { return -f(-x); };
  }
  if (name.starts_with("pos-")) return base_fn(name.substr(4), slope);
  throw std::invalid_argument("unknown query activation '" + std::string(name) + "'");
}

void require_strictly_lower(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + " must be square");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) throw std::invalid_argument(std::string(what) + " is not strictly lower triangular");
    }
  }
}

void zero_upper(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).tail(m.cols() - i).setZero();
}

void write_csv(const Matrix& m, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot write " + path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) std::fprintf(f, j == 0 ? "%.17g" : ",%.17g", m(i, j));
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw std::runtime_error("cannot write " + path);
}

}  // namespace

const std::vector<std::string>& query_phi_names() {
  static const std::vector<std::string> names = {"neg-leaky-relu", "neg-relu", "neg-sigmoid", "neg-swish",
                                                 "pos-leaky-relu", "pos-relu", "pos-sigmoid", "pos-swish"};
  return names;
}

const std::vector<std::string>& key_phi_names() {
  static const std::vector<std::string> names = {"sigmoid"};
  return names;
}

void PhiPair::validate() const {
  const auto& qn = query_phi_names();
  if (std::find(qn.begin(), qn.end(), q_name) == qn.end()) {
    throw std::invalid_argument("unknown query activation '" + q_name + "'");
  }
  if (k_name != "sigmoid") throw std::invalid_argument("unknown key activation '" + k_name + "'");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
}

Matrix apply_phi_q(const Matrix& q, const PhiPair& phi) {
  const auto f = query_fn(phi.q_name, phi.leaky_slope);
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return q.unaryExpr([&](double x) { return f(x * inv); });
}

Matrix apply_phi_k(const Matrix& k, const PhiPair& phi) {
  if (phi.k_name != "sigmoid") throw std::invalid_argument("unknown key activation '" + phi.k_name + "'");
  const double s = phi.alpha / std::sqrt(static_cast<double>(k.cols()));
  return k.unaryExpr([s](double x) { return sig(s * x); });
}

Matrix explicit_B(const Matrix& q, const Matrix& k, const PhiPair& phi) {
  const Eigen::Index n = q.rows();
  if (n < 2) throw std::invalid_argument("explicit B needs N >= 2");
  if (k.rows() != n || k.cols() != q.cols()) throw ShapeError("q and k must share shape");
  const Matrix pq = apply_phi_q(q, phi);
  const Matrix pk = apply_phi_k(k, phi);
  const double inv_w = 1.0 / static_cast<double>(q.cols());
  Matrix b = Matrix::Zero(n, n);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (Eigen::Index j = 0; j < t; ++j) b(t, j) = inv_w * pq.row(t - 1).dot(pk.row(j));
  }
  return b;
}

std::vector<Matrix> explicit_B_heads(const Matrix& q, const Matrix& k, const PhiPair& phi, int heads) {
  if (heads <= 0 || q.cols() % heads != 0) throw ShapeError("model dim not divisible by head count");
  const Eigen::Index w = q.cols() / heads;
  std::vector<Matrix> out;
  for (int h = 0; h < heads; ++h) {
    out.push_back(explicit_B(q.middleCols(h * w, w), k.middleCols(h * w, w), phi));
  }
  return out;
}

Matrix implicit_theta(const Matrix& b) {
  require_strictly_lower(b, "B");
  const Eigen::Index n = b.rows();
  const Matrix i_minus_b = Matrix::Identity(n, n) - b;
  // Theta (I - B) = B, solved as (I - B)^T Theta^T = B^T with a unit upper factor.
  Matrix theta = i_minus_b.transpose().triangularView<Eigen::UnitUpper>().solve(b.transpose()).transpose();
  zero_upper(theta);
  return theta;
}

Matrix recover_epsilon(const Matrix& theta, const Matrix& r) {
  require_strictly_lower(theta, "Theta");
  if (r.rows() != theta.rows()) throw ShapeError("r must have N rows");
  const Matrix i_plus = Matrix::Identity(theta.rows(), theta.cols()) + theta;
  return i_plus.triangularView<Eigen::UnitLower>().solve(r);
}

Matrix constant_b_theta(double b, int n) {
  if (n < 1) throw std::invalid_argument("N must be >= 1");
  Matrix theta = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    for (int j = 0; j < i; ++j) theta(i, j) = b * std::pow(1.0 + b, i - j - 1);
  }
  return theta;
}

Matrix constant_B(double b, int n) {
  if (n < 1) throw std::invalid_argument("N must be >= 1");
  Matrix m = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) m.row(i).head(i).setConstant(b);
  return m;
}

std::vector<double> diag_profile(const Matrix& theta) {
  const Eigen::Index n = theta.rows();
  std::vector<double> profile;
  for (Eigen::Index k = 1; k < n; ++k) {
    double acc = 0.0;
    for (Eigen::Index i = k; i < n; ++i) acc += std::abs(theta(i, i - k));
    profile.push_back(acc / static_cast<double>(n - k));
  }
  return profile;
}

double negativity_fraction(const Matrix& m) {
  const Eigen::Index n = m.rows();
  if (n < 2) return 0.0;
  std::size_t neg = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) neg += m(i, j) < 0.0 ? 1 : 0;
  }
  return static_cast<double>(neg) / static_cast<double>(n * (n - 1) / 2);
}

ThetaReport make_report(Matrix b, const PhiPair& phi, int d, std::uint64_t seed) {
  ThetaReport r;
  r.Theta = implicit_theta(b);
  r.B = std::move(b);
  r.phi_q_name = phi.q_name;
  r.phi_k_name = phi.k_name;
  r.alpha = phi.alpha;
  r.d = d;
  r.seed = seed;
  r.diag_profile = diag_profile(r.Theta);
  r.negativity_fraction = negativity_fraction(r.Theta);
  return r;
}

Analysis simulate(int n, int d, int heads, const PhiPair& phi, std::uint64_t seed) {
  phi.validate();
  if (n < 2 || d < 1) throw std::invalid_argument("simulation needs N >= 2 and d >= 1");
  Rng rng(seed, RngStream::Analysis);
  Matrix q(n, d), k(n, d);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = rng.normal();

  Analysis out;
  Matrix b_sum = Matrix::Zero(n, n), theta_sum = Matrix::Zero(n, n);
  for (Matrix& b : explicit_B_heads(q, k, phi, heads)) {
    out.per_head.push_back(make_report(std::move(b), phi, d, seed));
    b_sum += out.per_head.back().B;
    theta_sum += out.per_head.back().Theta;
  }
  const double inv_h = 1.0 / static_cast<double>(heads);
  ThetaReport& avg = out.averaged;
  avg.B = b_sum * inv_h;
  avg.Theta = theta_sum * inv_h;
  avg.phi_q_name = phi.q_name;
  avg.phi_k_name = phi.k_name;
  avg.alpha = phi.alpha;
  avg.d = d;
  avg.seed = seed;
  avg.diag_profile = diag_profile(avg.Theta);
  avg.negativity_fraction = negativity_fraction(avg.Theta);
  return out;
}

void export_weight_maps(const ThetaReport& report, const std::string& prefix) {
  write_csv(report.B, prefix + "_B.csv");
  write_csv(report.Theta, prefix + "_theta.csv");
  nlohmann::json j;
  j["n"] = report.B.rows();
  j["d"] = report.d;
  j["alpha"] = report.alpha;
  j["phi_q"] = report.phi_q_name;
  j["phi_k"] = report.phi_k_name;
  j["seed"] = report.seed;
  j["negativity_fraction"] = report.negativity_fraction;
  j["diag_profile"] = report.diag_profile;
  std::ofstream out(prefix + ".json");
  if (!out) throw std::runtime_error("cannot write " + prefix + ".json");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + prefix + ".json");
}

}  // namespace armattn::ma
