#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "patchlens/bpe.hpp"
#include "patchlens/corpus.hpp"
#include "patchlens/editcodec.hpp"
#include "patchlens/lexer.hpp"
#include "patchlens/metrics.hpp"
#include "patchlens/parallel.hpp"

namespace patchlens::analyses {

using corpus::BugFixPair;
using corpus::ContextMode;
using Tokens = std::vector<std::string>;

struct LexedPair {
  std::string id;
  Tokens bug;
  Tokens patch;
};

inline std::vector<LexedPair> lex_pairs(const std::vector<BugFixPair>& pairs, std::size_t jobs = 1) {
  std::vector<LexedPair> out(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    out[i] = {pairs[i].id(), lex_texts(pairs[i].bug_line), lex_texts(pairs[i].patch_line)};
  });
  return out;
}

/// Tokens in `patch` that are absent from `pool`.
inline Tokens missing_tokens(const Tokens& patch, const Tokens& pool) {
  std::unordered_set<std::string> have(pool.begin(), pool.end());
  Tokens out;
  std::set<std::string> reported;
  for (const auto& t : patch)
    if (!have.count(t) && reported.insert(t).second) out.push_back(t);
  return out;
}

/// Whether the patch needs a (sub)token not present in bug + context.
/// Under BPE both sides are compared as encoded symbols.
inline bool introduces_new_vocab(const BugFixPair& pair, ContextMode mode, const bpe::BpeModel* bpe) {
  Tokens pool = lex_texts(pair.bug_line);
  auto ctx = corpus::extract_context(pair, mode);
  for (const auto& t : ctx.tokens_before) pool.push_back(t.text);
  for (const auto& t : ctx.tokens_after) pool.push_back(t.text);
  Tokens patch = lex_texts(pair.patch_line);
  if (bpe != nullptr) {
    pool = bpe->encode_words(pool);
    patch = bpe->encode_words(patch);
  }
  return !missing_tokens(patch, pool).empty();
}

struct VocabReport {
  ContextMode context_mode;
  bool with_bpe = false;
  double ratio_new_vocab = 0.0;
  std::size_t sample_count = 0;
  std::size_t new_vocab_count = 0;
};

inline VocabReport new_vocab_ratio(const std::vector<BugFixPair>& pairs, ContextMode mode,
                                   const bpe::BpeModel* bpe = nullptr, std::size_t jobs = 1) {
  if (pairs.empty()) throw Error("new_vocab_ratio: empty pair set");
  std::vector<char> hit(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) { hit[i] = introduces_new_vocab(pairs[i], mode, bpe); });
  VocabReport r;
  r.context_mode = mode;
  r.with_bpe = bpe != nullptr;
  r.sample_count = pairs.size();
  r.new_vocab_count = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  r.ratio_new_vocab = static_cast<double>(r.new_vocab_count) / static_cast<double>(r.sample_count);
  return r;
}

// ---------------------------------------------------------------------------
// Bug/patch similarity distributions.

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
};

inline std::size_t unit_bin(double v, std::size_t bins) {
  if (!(v > 0.0)) return 0;
  auto b = static_cast<std::size_t>(std::floor(v * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

struct MetricSummary {
  std::vector<double> values;
  metrics::DistributionStats stats;
  Histogram histogram;
};

struct SimilarityReport {
  MetricSummary edit_distance;
  MetricSummary jaccard;
  MetricSummary bleu;  // reference = patch, hypothesis = bug
};

inline SimilarityReport similarity_report(const std::vector<LexedPair>& pairs, metrics::BleuOptions bleu_opt = {},
                                          std::size_t bins = 20, std::size_t jobs = 1) {
  if (pairs.empty()) throw Error("similarity_report: empty pair set");
  SimilarityReport r;
  const std::size_t n = pairs.size();
  r.edit_distance.values.resize(n);
  r.jaccard.values.resize(n);
  r.bleu.values.resize(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto& p = pairs[i];
    r.edit_distance.values[i] = static_cast<double>(metrics::edit_distance(p.bug, p.patch));
    r.jaccard.values[i] = metrics::jaccard(p.bug, p.patch);
    r.bleu.values[i] = metrics::bleu(p.patch, p.bug, bleu_opt);
  });
  for (MetricSummary* m : {&r.edit_distance, &r.jaccard, &r.bleu}) m->stats = metrics::distribution_stats(m->values);

  const double max_ed = r.edit_distance.stats.sorted.back();
  r.edit_distance.histogram = {0.0, max_ed + 1.0, std::vector<std::size_t>(static_cast<std::size_t>(max_ed) + 1)};
  for (double v : r.edit_distance.values) ++r.edit_distance.histogram.counts[static_cast<std::size_t>(v)];
  for (MetricSummary* m : {&r.jaccard, &r.bleu}) {
    m->histogram = {0.0, 1.0, std::vector<std::size_t>(bins)};
    for (double v : m->values) ++m->histogram.counts[unit_bin(v, bins)];
  }
  return r;
}

// ---------------------------------------------------------------------------
// Similar-bug retrieval and the ambiguity heatmap.

enum class SimMetric { Jaccard, Bleu };

inline std::string_view to_string(SimMetric m) { return m == SimMetric::Jaccard ? "jaccard" : "bleu"; }

/// Similarity of a training item to a held-out item. For BLEU the held-out
/// side is the reference and the training side the hypothesis.
inline double similarity(SimMetric m, const Tokens& held_out, const Tokens& training,
                         metrics::BleuOptions bleu_opt = {}) {
  return m == SimMetric::Jaccard ? metrics::jaccard(held_out, training)
                                 : metrics::bleu(held_out, training, bleu_opt);
}

struct NeighborRecord {
  std::string query_id;
  std::vector<std::size_t> neighbor_index;  // into the train list
  std::vector<std::string> neighbor_ids;
  std::vector<double> bug_sims;    // averaged 1-4-gram Jaccard, descending
  std::vector<double> patch_sims;  // same metric, query patch vs neighbor patch
  bool truncated = false;          // train split held fewer than k items
};

/// Exhaustive top-k search over training bugs by Jaccard; ties keep corpus
/// order.
inline NeighborRecord nearest_bugs(const LexedPair& query, const std::vector<LexedPair>& train, std::size_t k) {
  if (k == 0) throw Error("nearest_bugs: k must be >= 1");
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) scored.emplace_back(metrics::jaccard(query.bug, train[i].bug), i);
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  NeighborRecord rec;
  rec.query_id = query.id;
  rec.truncated = train.size() < k;
  for (std::size_t i = 0; i < take; ++i) {
    const auto idx = scored[i].second;
    rec.neighbor_index.push_back(idx);
    rec.neighbor_ids.push_back(train[idx].id);
    rec.bug_sims.push_back(scored[i].first);
    rec.patch_sims.push_back(metrics::jaccard(query.patch, train[idx].patch));
  }
  return rec;
}

struct SimObservation {
  double bug_sim = 0.0;
  double patch_sim = 0.0;
};

struct HeatmapGrid {
  SimMetric metric = SimMetric::Jaccard;
  std::size_t bins = 0;
  std::vector<std::vector<std::size_t>> counts;   // [bug bin][patch bin]
  std::vector<std::vector<double>> normalized;    // ln(1+c)/ln(1+max)
  std::vector<SimObservation> observations;

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::size_t{0});
    return t;
  }
};

inline HeatmapGrid bin_observations(std::vector<SimObservation> obs, SimMetric metric, std::size_t bins) {
  if (bins == 0) throw Error("heatmap: bins must be >= 1");
  HeatmapGrid g;
  g.metric = metric;
  g.bins = bins;
  g.counts.assign(bins, std::vector<std::size_t>(bins, 0));
  g.normalized.assign(bins, std::vector<double>(bins, 0.0));
  for (const auto& o : obs) ++g.counts[unit_bin(o.bug_sim, bins)][unit_bin(o.patch_sim, bins)];
  std::size_t max_count = 0;
  for (const auto& row : g.counts) max_count = std::max(max_count, *std::max_element(row.begin(), row.end()));
  if (max_count > 0) {
    const double denom = std::log1p(static_cast<double>(max_count));
    for (std::size_t i = 0; i < bins; ++i)
      for (std::size_t j = 0; j < bins; ++j)
        g.normalized[i][j] = std::log1p(static_cast<double>(g.counts[i][j])) / denom;
  }
  g.observations = std::move(obs);
  return g;
}

/// For every held-out pair, its top-3 training neighbors (by Jaccard on the
/// bug) each contribute one (bug sim, patch sim) observation under `metric`.
inline HeatmapGrid ambiguity_heatmap(const std::vector<LexedPair>& test, const std::vector<LexedPair>& train,
                                     SimMetric metric, std::size_t bins = 20, std::size_t neighbors = 3,
                                     metrics::BleuOptions bleu_opt = {}, std::size_t jobs = 1) {
  std::vector<std::vector<SimObservation>> per_query(test.size());
  if (!train.empty()) {
    parallel_for(test.size(), jobs, [&](std::size_t q) {
      auto rec = nearest_bugs(test[q], train, neighbors);
      for (std::size_t idx : rec.neighbor_index)
        per_query[q].push_back({similarity(metric, test[q].bug, train[idx].bug, bleu_opt),
                                similarity(metric, test[q].patch, train[idx].patch, bleu_opt)});
    });
  }
  std::vector<SimObservation> obs;
  for (auto& v : per_query) obs.insert(obs.end(), v.begin(), v.end());
  return bin_observations(std::move(obs), metric, bins);
}

struct BreakdownRow {
  double threshold = 0.0;
  std::size_t n = 0;
  double pct_below = 0.0;
  double pct_at_or_above = 0.0;
};

inline const std::vector<double>& default_bug_thresholds() {
  static const std::vector<double> t = {0.5, 0.6, 0.7, 0.8, 1.0};
  return t;
}

/// Rows of (bug-sim >= t) split by patch similarity at `patch_threshold`.
/// Rows with n == 0 report NaN percentages.
inline std::vector<BreakdownRow> similar_pair_breakdown(const std::vector<SimObservation>& records,
                                                        const std::vector<double>& bug_thresholds = default_bug_thresholds(),
                                                        double patch_threshold = 0.5) {
  std::vector<BreakdownRow> rows;
  for (double t : bug_thresholds) {
    BreakdownRow row;
    row.threshold = t;
    std::size_t above = 0;
    for (const auto& r : records) {
      if (r.bug_sim < t) continue;
      ++row.n;
      if (r.patch_sim >= patch_threshold) ++above;
    }
    if (row.n == 0) {
      row.pct_below = row.pct_at_or_above = std::nan("");
    } else {
      row.pct_at_or_above = 100.0 * static_cast<double>(above) / static_cast<double>(row.n);
      row.pct_below = 100.0 * static_cast<double>(row.n - above) / static_cast<double>(row.n);
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Syntax invariance.

struct Ratio {
  std::size_t hits = 0;
  std::size_t n = 0;
  double value() const { return n == 0 ? std::nan("") : static_cast<double>(hits) / static_cast<double>(n); }
};

struct SyntaxReport {
  Ratio all;
  Ratio with_new_tokens;
  Ratio without_new_tokens;
};

inline SyntaxReport syntax_invariance_report(const std::vector<BugFixPair>& pairs, std::size_t jobs = 1) {
  std::vector<std::pair<char, char>> flags(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    auto bug = tokenize(pairs[i].bug_line);
    auto patch = tokenize(pairs[i].patch_line);
    bool unchanged = syntax_unchanged(bug, patch);
    bool fresh = !missing_tokens(token_texts(patch), token_texts(bug)).empty();
    flags[i] = {unchanged, fresh};
  });
  SyntaxReport r;
  for (auto [unchanged, fresh] : flags) {
    Ratio& stratum = fresh ? r.with_new_tokens : r.without_new_tokens;
    ++r.all.n;
    ++stratum.n;
    if (unchanged) {
      ++r.all.hits;
      ++stratum.hits;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Edit scripts over the corpus.

struct EditRecord {
  std::string id;
  editcodec::EditScript<std::string> script;
  editcodec::EditClass edit_class = editcodec::EditClass::NoChange;
};

struct EditReport {
  std::vector<EditRecord> records;
  std::map<editcodec::EditClass, std::size_t> histogram;
};

inline EditReport edit_report(const std::vector<LexedPair>& pairs) {
  EditReport r;
  for (auto c : {editcodec::EditClass::NoChange, editcodec::EditClass::AddOnly, editcodec::EditClass::DeleteOnly,
                 editcodec::EditClass::Replace})
    r.histogram[c] = 0;
  for (const auto& p : pairs) {
    auto script = editcodec::diff(p.bug, p.patch);
    auto cls = editcodec::classify(script);
    ++r.histogram[cls];
    r.records.push_back({p.id, std::move(script), cls});
  }
  return r;
}

// ---------------------------------------------------------------------------
// New-vocabulary prediction.

struct PredictionRate {
  std::size_t eligible = 0;
  std::size_t hits = 0;
  double value() const { return eligible == 0 ? std::nan("") : static_cast<double>(hits) / static_cast<double>(eligible); }
};

/// Among gold pairs whose patch introduces tokens absent from the bug, the
/// fraction where one of the first k predictions contains all of them.
inline PredictionRate new_vocab_prediction_rate(const std::vector<std::vector<Tokens>>& predictions,
                                                const std::vector<LexedPair>& gold, std::size_t k) {
  if (predictions.size() != gold.size()) throw Error("new_vocab_prediction_rate: size mismatch");
  PredictionRate r;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto required = missing_tokens(gold[i].patch, gold[i].bug);
    if (required.empty()) continue;
    ++r.eligible;
    const std::size_t limit = std::min(k, predictions[i].size());
    for (std::size_t j = 0; j < limit; ++j) {
      std::unordered_set<std::string> have(predictions[i][j].begin(), predictions[i][j].end());
      if (std::all_of(required.begin(), required.end(), [&](const auto& t) { return have.count(t) > 0; })) {
        ++r.hits;
        break;
      }
    }
  }
  return r;
}

}  // namespace patchlens::analyses
