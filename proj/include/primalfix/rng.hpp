#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

namespace primalfix {

// Deterministic random stream: mt19937_64 core (fully specified by the
// standard) with fixed output mappings, so a given seed reproduces the same
// draws on any platform.
//
//   uniform   : top 53 bits of the next word, scaled to [0, 1)
//   bernoulli : uniform() < p
//   normal    : Box-Muller on two uniforms, spare value cached
//   mvnormal  : mean + L * z with L the lower Cholesky factor and z iid normal
//
// Streams split via splitmix64 over (seed, stream index), which gives
// statistically independent child generators for per-replication use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Rng child(std::uint64_t stream) const {
    std::uint64_t s = seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1);
    return Rng(splitmix64(s));
  }

  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  // chol_lower must be the lower-triangular Cholesky factor of the covariance
  Eigen::VectorXd mvnormal(const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& chol_lower) {
    if (mean.size() != chol_lower.rows())
      throw std::invalid_argument("mvnormal: dimension mismatch");
    return mean + chol_lower * normal_vector(static_cast<int>(mean.size()));
  }

  std::uint64_t next_u64() { return gen_(); }

  // uniform integer in [0, n) by rejection, bias-free
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below: n == 0");
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                          std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }

  static std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("cholesky_lower: covariance not positive definite");
  return llt.matrixL();
}

}  // namespace primalfix
