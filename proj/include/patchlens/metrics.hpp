#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "patchlens/text.hpp"

namespace patchlens::metrics {

/// Token-level Levenshtein distance with unit costs.
template <class T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag : 1 + std::min({diag, up, row[j - 1]});
      diag = up;
    }
  }
  return row[b.size()];
}

template <class T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return edit_distance(std::span<const T>(a), std::span<const T>(b));
}

template <class T>
using NGram = std::vector<T>;

/// Set of contiguous n-token windows (duplicates collapse).
template <class T>
std::set<NGram<T>> ngram_set(const std::vector<T>& seq, std::size_t n) {
  if (n == 0) throw Error("ngram_set: n must be >= 1");
  std::set<NGram<T>> out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    out.emplace(seq.begin() + static_cast<std::ptrdiff_t>(i),
                seq.begin() + static_cast<std::ptrdiff_t>(i + n));
  return out;
}

template <class T>
std::map<NGram<T>, std::size_t> ngram_counts(const std::vector<T>& seq, std::size_t n) {
  std::map<NGram<T>, std::size_t> out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++out[NGram<T>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                   seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

inline constexpr std::size_t kMaxOrder = 4;

/// Mean over n = 1..4 of set intersection-over-union; an n with an empty
/// union contributes 0.
template <class T>
double jaccard(const std::vector<T>& a, const std::vector<T>& b) {
  double total = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    auto sa = ngram_set(a, n);
    auto sb = ngram_set(b, n);
    std::size_t inter = 0;
    for (const auto& g : sa) inter += sb.count(g);
    std::size_t uni = sa.size() + sb.size() - inter;
    if (uni > 0) total += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(kMaxOrder);
}

enum class BleuMean { Arithmetic, Geometric };
enum class BleuSmoothing { None, AddOne };

struct BleuOptions {
  BleuMean mean = BleuMean::Arithmetic;
  BleuSmoothing smoothing = BleuSmoothing::None;
};

/// Clipped n-gram precision of `hyp` against `ref`; 0 when hyp has no
/// n-grams of that order.
template <class T>
double modified_precision(const std::vector<T>& ref, const std::vector<T>& hyp, std::size_t n,
                          BleuSmoothing smoothing = BleuSmoothing::None) {
  auto hyp_counts = ngram_counts(hyp, n);
  auto ref_counts = ngram_counts(ref, n);
  std::size_t total = 0, matched = 0;
  for (const auto& [gram, count] : hyp_counts) {
    total += count;
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) matched += std::min(count, it->second);
  }
  if (smoothing == BleuSmoothing::AddOne && n > 1)
    return static_cast<double>(matched + 1) / static_cast<double>(total + 1);
  if (total == 0) return 0.0;
  return static_cast<double>(matched) / static_cast<double>(total);
}

/// Sentence BLEU over orders 1..4 with brevity penalty
/// min(1, exp(1 - |ref|/|hyp|)). Asymmetric: precisions are taken from the
/// hypothesis side.
template <class T>
double bleu(const std::vector<T>& ref, const std::vector<T>& hyp, BleuOptions opt = {}) {
  if (hyp.empty()) return 0.0;
  std::array<double, kMaxOrder> p{};
  for (std::size_t n = 1; n <= kMaxOrder; ++n) p[n - 1] = modified_precision(ref, hyp, n, opt.smoothing);
  double mean = 0.0;
  if (opt.mean == BleuMean::Arithmetic) {
    mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(kMaxOrder);
  } else {
    if (std::any_of(p.begin(), p.end(), [](double v) { return v <= 0.0; })) return 0.0;
    double logsum = 0.0;
    for (double v : p) logsum += std::log(v);
    mean = std::exp(logsum / static_cast<double>(kMaxOrder));
  }
  double ratio = static_cast<double>(ref.size()) / static_cast<double>(hyp.size());
  double bp = std::min(1.0, std::exp(1.0 - ratio));
  return bp * mean;
}

/// Average ranks (1-based), ties receive the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman's rho. Throws on length mismatch or fewer than two points;
/// returns nullopt when either input is constant (rho undefined).
inline std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman_rho: length mismatch");
  if (x.size() < 2) throw Error("spearman_rho: need at least two points");
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  return pearson(rx, ry);
}

struct DistributionStats {
  double mean = 0.0;
  double median = 0.0;
  std::vector<double> sorted;

  double ratio_at(const std::function<bool(double)>& pred) const {
    auto hits = std::count_if(sorted.begin(), sorted.end(), pred);
    return static_cast<double>(hits) / static_cast<double>(sorted.size());
  }
};

inline DistributionStats distribution_stats(std::span<const double> values) {
  if (values.empty()) throw Error("distribution_stats: empty input");
  DistributionStats s;
  s.sorted.assign(values.begin(), values.end());
  std::sort(s.sorted.begin(), s.sorted.end());
  s.mean = std::accumulate(s.sorted.begin(), s.sorted.end(), 0.0) / static_cast<double>(s.sorted.size());
  std::size_t n = s.sorted.size();
  s.median = n % 2 == 1 ? s.sorted[n / 2] : (s.sorted[n / 2 - 1] + s.sorted[n / 2]) / 2.0;
  return s;
}

}  // namespace patchlens::metrics
