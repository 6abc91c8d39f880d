#pragma once

// Brute-force reference implementations. Each one follows the textbook
// definition directly and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <set>
#include <span>
#include <vector>

namespace oracle {

// Pairwise rank statistic: P(score_pos > score_neg) + 0.5 P(tie).
inline double mann_whitney(std::span<const double> s, std::span<const bool> pos) {
  double num = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  return num / pairs;
}

// Sweeps every distinct score as a threshold (predict positive when score >=
// t), recounting from scratch each time. The area weights each recall gain
// by the best precision at that recall or any higher one.
inline double average_precision_sweep(std::span<const double> s, std::span<const bool> pos) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  std::size_t total_pos = 0;
  for (bool p : pos) total_pos += p ? 1 : 0;
  std::vector<double> recall, precision;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < t) continue;
      if (pos[i]) ++tp;
      else ++fp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_pos));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  double area = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = i; j < recall.size(); ++j) best = std::max(best, precision[j]);
    area += (recall[i] - prev_recall) * best;
    prev_recall = recall[i];
  }
  return area;
}

inline double sse(std::span<const double> x, std::size_t b, std::size_t e) {
  double m = 0.0;
  for (std::size_t i = b; i < e; ++i) m += x[i];
  m /= static_cast<double>(e - b);
  double c = 0.0;
  for (std::size_t i = b; i < e; ++i) c += (x[i] - m) * (x[i] - m);
  return c;
}

struct Split {
  std::vector<std::size_t> breakpoints;
  double cost = std::numeric_limits<double>::infinity();
};

// Enumerates every placement of n breakpoints in lexicographic order and
// keeps the first strictly cheaper one, so ties go to the earliest indices.
inline Split exhaustive_changepoints(std::span<const double> x, int n) {
  const std::size_t N = x.size();
  // Prefix sums keep the n = 3 enumeration on 200 samples fast.
  std::vector<double> s1(N + 1, 0.0), s2(N + 1, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    s1[i + 1] = s1[i] + x[i];
    s2[i + 1] = s2[i] + x[i] * x[i];
  }
  auto cost = [&](std::size_t b, std::size_t e) {
    const double len = static_cast<double>(e - b);
    const double sum = s1[e] - s1[b];
    return (s2[e] - s2[b]) - sum * sum / len;
  };
  Split best;
  std::vector<std::size_t> bp(static_cast<std::size_t>(n));
  auto rec = [&](auto&& self, int k, std::size_t lo, double acc) -> void {
    if (k == n) {
      const std::size_t last = n == 0 ? 0 : bp[static_cast<std::size_t>(n - 1)];
      const double c = acc + cost(last, N);
      if (c < best.cost - 1e-9 * std::max(1.0, std::abs(c))) {
        best.cost = c;
        best.breakpoints = bp;
      }
      return;
    }
    const std::size_t prev = k == 0 ? 0 : bp[static_cast<std::size_t>(k - 1)];
    for (std::size_t b = lo; b + static_cast<std::size_t>(n - k) <= N; ++b) {
      bp[static_cast<std::size_t>(k)] = b;
      self(self, k + 1, b + 1, acc + cost(prev, b));
    }
  };
  rec(rec, 0, 1, 0.0);
  return best;
}

// Direct O(N^2) DFT.
inline std::vector<std::complex<double>> dft(std::span<const double> x) {
  const std::size_t N = x.size();
  std::vector<std::complex<double>> out(N);
  for (std::size_t k = 0; k < N; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * n % N) / static_cast<double>(N);
      acc += x[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace oracle
