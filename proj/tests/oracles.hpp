#pragma once
// Reference implementations for the tests. Written from the definitions, not
// from the library code: long double, no stabilization, brute force where it
// is cheap enough.
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "stts/alignment.hpp"
#include "stts/rng.hpp"

namespace oracle {

using Real = long double;

// softmax_d( (1/T) log sum_n exp A_dn ) == (sum_n e^A_dn)^(1/T) / sum_d' (...)^(1/T)
inline std::vector<Real> marginal(const std::vector<std::vector<double>>& a, double temperature) {
  std::vector<Real> q;
  Real z = 0;
  for (const auto& row : a) {
    Real s = 0;
    for (double v : row) s += std::exp(static_cast<Real>(v));
    q.push_back(std::pow(s, 1.0L / static_cast<Real>(temperature)));
    z += q.back();
  }
  for (auto& v : q) v /= z;
  return q;
}

// exp(beta * log10(t / a)) == (t / a)^(beta / ln 10)
inline std::vector<Real> weights(const std::vector<double>& target, const std::vector<double>& acc, double beta) {
  std::vector<Real> w;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Real ratio = static_cast<Real>(target[i]) / static_cast<Real>(acc[i]);
    w.push_back(std::pow(ratio, static_cast<Real>(beta) / std::log(10.0L)));
  }
  return w;
}

inline std::vector<Real> matching(const std::vector<Real>& current, const std::vector<Real>& w) {
  std::vector<Real> out;
  Real z = 0;
  for (std::size_t i = 0; i < current.size(); ++i) {
    out.push_back(current[i] * w[i]);
    z += out.back();
  }
  for (auto& v : out) v /= z;
  return out;
}

// Exhaustive nucleus: smallest cardinality k such that some k-subset of
// positive bins reaches top_p; among those subsets the heaviest, then the
// lexicographically smallest index set. Bitmask enumeration, so keep n small.
inline std::vector<std::size_t> nucleus(const std::vector<double>& p, double top_p) {
  const std::size_t n = p.size();
  for (std::size_t k = 1; k <= n; ++k) {
    std::optional<unsigned> best;
    Real best_mass = -1;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
      Real mass = 0;
      bool positive = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(mask & (1u << i))) continue;
        if (!(p[i] > 0.0)) positive = false;
        mass += p[i];
      }
      if (!positive) continue;
      // ascending mask order is not lexicographic order on index sets
      auto lex_less = [&](unsigned a, unsigned b) {
        for (std::size_t i = 0; i < n; ++i) {
          const bool ia = a & (1u << i);
          const bool ib = b & (1u << i);
          if (ia != ib) return ia;
        }
        return false;
      };
      if (mass > best_mass || (mass == best_mass && best && lex_less(mask, *best))) {
        best_mass = mass;
        best = mask;
      }
    }
    if (best && best_mass >= static_cast<Real>(top_p)) {
      std::vector<std::size_t> out;
      for (std::size_t i = 0; i < n; ++i) {
        if (*best & (1u << i)) out.push_back(i);
      }
      return out;
    }
  }
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) all.push_back(i);
  }
  return all;
}

// Renormalized top-k softmax at temperature T; selection by repeated scans.
inline std::vector<Real> top_k_probs(const std::vector<double>& logits, std::size_t k, double temperature) {
  std::vector<bool> taken(logits.size(), false);
  std::vector<std::size_t> chosen;
  for (std::size_t r = 0; r < std::min(k, logits.size()); ++r) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (taken[i]) continue;
      if (!best || logits[i] > logits[*best]) best = i;
    }
    taken[*best] = true;
    chosen.push_back(*best);
  }
  std::vector<Real> out(logits.size(), 0);
  Real z = 0;
  for (std::size_t i : chosen) {
    out[i] = std::exp(static_cast<Real>(logits[i]) / static_cast<Real>(temperature));
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

// First index that nothing before ties or beats and nothing after beats.
inline std::size_t argmax(const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    bool beats_all_before = true;
    for (std::size_t j = 0; j < i; ++j) {
      if (v[j] >= v[i]) beats_all_before = false;
    }
    bool not_beaten_after = true;
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      if (v[j] > v[i]) not_beaten_after = false;
    }
    if (beats_all_before && not_beaten_after) return i;
  }
  return 0;
}

// Legality by simulating the token on the buffer: every covered phoneme must
// exist, the new cursor must not pass the end, and an open stream must still
// hold `la` addressable phonemes from the new cursor on.
inline bool legal(const std::vector<stts::Phoneme>& buffer, bool ended, std::size_t cursor, int shift, int ppf,
                  std::size_t la) {
  std::vector<std::size_t> addressable;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (!buffer[i].is_punctuation) addressable.push_back(i);
  }
  for (int k = 0; k < ppf; ++k) {
    if (cursor + static_cast<std::size_t>(k) >= addressable.size()) return false;
  }
  const std::size_t next = cursor + static_cast<std::size_t>(shift);
  if (next > addressable.size()) return false;
  if (ended) return true;
  std::size_t ahead = 0;
  for (std::size_t j = next; j < addressable.size(); ++j) ++ahead;
  return ahead >= la;
}

inline bool gate(const std::vector<stts::Phoneme>& buffer, bool ended, std::size_t cursor, std::size_t la) {
  std::size_t ahead = 0;
  std::size_t seen = 0;
  for (const auto& p : buffer) {
    if (p.is_punctuation) continue;
    if (seen >= cursor) ++ahead;
    ++seen;
  }
  if (ahead == 0) return false;
  return ended || ahead >= la;
}

// Textbook one-pass Pearson.
inline Real pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const Real n = static_cast<Real>(x.size());
  Real sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real a = x[i];
    const Real b = y[i];
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

struct TimedCount {
  double time;
  std::size_t nuclei;
};

// Windowed syllable rate: windows [t0 + j*hop, t0 + j*hop + w) fully inside
// [t0, last + period]; each gives count / w at its center. The value at a
// frame time is the straight line between the two surrounding centers.
inline std::vector<double> windowed_sps(const std::vector<TimedCount>& frames, double w, double hop, double period) {
  const double t0 = frames.front().time;
  const double stop = frames.back().time + period;
  std::vector<double> centers;
  std::vector<double> values;
  for (int j = 0; t0 + j * hop + w <= stop + 1e-9; ++j) {
    const double a = t0 + j * hop;
    std::size_t c = 0;
    for (const auto& f : frames) {
      if (!(f.time < a) && f.time < a + w) c += f.nuclei;
    }
    centers.push_back(a + w / 2);
    values.push_back(static_cast<double>(c) / w);
  }
  std::vector<double> out;
  for (const auto& f : frames) {
    if (f.time <= centers.front()) {
      out.push_back(values.front());
      continue;
    }
    if (f.time >= centers.back()) {
      out.push_back(values.back());
      continue;
    }
    std::size_t k = 0;
    while (centers[k + 1] < f.time) ++k;
    if (centers[k + 1] == f.time) {
      out.push_back(values[k + 1]);
      continue;
    }
    const double u = (f.time - centers[k]) / (centers[k + 1] - centers[k]);
    out.push_back(values[k] + u * (values[k + 1] - values[k]));
  }
  return out;
}

inline Real relative_error(Real got, Real want) {
  const Real scale = std::max(std::fabs(want), 1e-300L);
  return std::fabs(got - want) / scale;
}

// Strictly positive random histogram, Dirichlet(1) via -log(1 - u).
inline std::vector<double> random_histogram(stts::Rng& rng, std::size_t bins = 6, double floor = 1e-3) {
  std::vector<double> p(bins);
  double s = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform()) + floor;
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace oracle
