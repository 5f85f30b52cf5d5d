#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace homog {

/// Standard normal stream with fixed uniform consumption (two draws per
/// Box-Muller pair), so sampled objects are pure functions of the seed
/// independent of the standard library's distribution internals.
class GaussianStream {
 public:
  explicit GaussianStream(uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0,1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_) {
      have_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    have_ = true;
    cached_ = r * std::sin(2.0 * M_PI * u2);
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 eng_;
  bool have_ = false;
  double cached_ = 0.0;
};

struct SampleStats {
  size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

SampleStats sample_stats(const std::vector<double>& x);

/// Cumulative trapezoid with F[0] = 0 on a uniform grid.
std::vector<double> cumtrapz(const std::vector<double>& f, double h);
double trapz(const std::vector<double>& f, double h);

/// FNV-1a over a byte string; used for config hashes.
uint64_t fnv1a(const std::string& bytes);

/// Shortest float text with 17 significant digits.
std::string format_g17(double v);

}  // namespace homog
