#include "homog/util.hpp"

#include <cmath>
#include <cstdio>

namespace homog {

SampleStats sample_stats(const std::vector<double>& x) {
  SampleStats s;
  s.count = x.size();
  if (x.empty()) return s;
  double m = 0.0;
  for (double v : x) m += v;
  m /= x.size();
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  const double n = static_cast<double>(x.size());
  s.mean = m;
  s.variance = (x.size() > 1) ? m2 / (n - 1.0) : 0.0;
  if (m2 > 0.0) {
    const double sig2 = m2 / n;
    s.skewness = (m3 / n) / std::pow(sig2, 1.5);
    s.excess_kurtosis = (m4 / n) / (sig2 * sig2) - 3.0;
  }
  return s;
}

std::vector<double> cumtrapz(const std::vector<double>& f, double h) {
  std::vector<double> F(f.size(), 0.0);
  for (size_t i = 1; i < f.size(); ++i) F[i] = F[i - 1] + 0.5 * h * (f[i - 1] + f[i]);
  return F;
}

double trapz(const std::vector<double>& f, double h) {
  if (f.size() < 2) return 0.0;
  double s = 0.5 * (f.front() + f.back());
  for (size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
  return s * h;
}

uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace homog
