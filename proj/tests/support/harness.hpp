#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "patchlens/patchlens.hpp"
#include "support/fixtures.hpp"

namespace harness {

using patchlens::corpus::BugFixPair;
namespace model = patchlens::model;

// ---- independent oracles ---------------------------------------------------

/// Plain recursive Levenshtein distance.
template <class T>
std::size_t edit_distance_oracle(const std::vector<T>& a, std::size_t i, const std::vector<T>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) return edit_distance_oracle(a, i + 1, b, j + 1);
  return 1 + std::min({edit_distance_oracle(a, i + 1, b, j), edit_distance_oracle(a, i, b, j + 1),
                       edit_distance_oracle(a, i + 1, b, j + 1)});
}

template <class T>
std::size_t edit_distance_oracle(const std::vector<T>& a, const std::vector<T>& b) {
  return edit_distance_oracle(a, 0, b, 0);
}

/// All sequences over `alphabet` of length 0..max_len.
inline std::vector<std::vector<int>> all_sequences(int alphabet, std::size_t max_len) {
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : frontier)
      for (int c = 0; c < alphabet; ++c) {
        auto t = s;
        t.push_back(c);
        next.push_back(t);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

inline std::vector<std::string> random_tokens(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> sym(0, alphabet - 1);
  std::vector<std::string> out(len(rng));
  for (auto& t : out) t = "t" + std::to_string(sym(rng));
  return out;
}

/// Brute-force shortest-edit-script oracle: the longest common prefix, then
/// the longest suffix that leaves the prefix intact.
template <class T>
std::pair<std::size_t, std::size_t> affix_oracle(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t best_p = 0;
  for (std::size_t p = 0; p <= std::min(a.size(), b.size()); ++p)
    if (std::equal(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(p), b.begin())) best_p = p;
  std::size_t best_s = 0;
  for (std::size_t s = 0; s + best_p <= std::min(a.size(), b.size()); ++s)
    if (std::equal(a.end() - static_cast<std::ptrdiff_t>(s), a.end(), b.end() - static_cast<std::ptrdiff_t>(s)))
      best_s = s;
  return {best_p, best_s};
}

// ---- tiny models -------------------------------------------------------------

struct ModelFixture {
  std::vector<BugFixPair> pairs;
  patchlens::bpe::BpeModel bpe;
  model::ModelConfig cfg;
  model::Vocab vocab;
  std::vector<model::Sample> samples;
};

inline patchlens::bpe::BpeModel learn_bpe(const std::vector<BugFixPair>& pairs, std::size_t merges) {
  std::vector<std::string> toks;
  for (const auto& p : pairs) {
    for (auto& t : patchlens::lex_texts(p.bug_line)) toks.push_back(t);
    for (auto& t : patchlens::lex_texts(p.patch_line)) toks.push_back(t);
  }
  patchlens::bpe::TrainOptions o;
  o.num_merges = merges;
  return patchlens::bpe::train(toks, o);
}

/// Desk-scale configuration used by the overfit and decode checks.
inline model::ModelConfig desk_config(model::Variant v) {
  model::ModelConfig c;
  c.variant = v;
  c.d_model = 64;
  c.n_heads = 4;
  c.ff_dim = 128;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.dropout = 0.0;
  c.max_src_len = 200;
  c.max_tgt_len = 60;
  c.context_mode = patchlens::corpus::ContextMode::lines(3);
  c.context_budget = 120;
  c.seed = 11;
  return c;
}

inline model::ModelConfig tiny_config(model::Variant v) {
  model::ModelConfig c = desk_config(v);
  c.d_model = 8;
  c.n_heads = 2;
  c.ff_dim = 12;
  c.context_budget = 6;
  c.context_mode = patchlens::corpus::ContextMode::lines(1);
  return c;
}

inline ModelFixture make_fixture(std::vector<BugFixPair> pairs, model::ModelConfig cfg, std::size_t merges) {
  ModelFixture f;
  f.pairs = std::move(pairs);
  f.bpe = learn_bpe(f.pairs, merges);
  f.cfg = cfg;
  f.vocab = model::build_vocab(f.pairs, f.bpe, cfg);
  f.samples = model::make_samples(f.pairs, f.bpe, f.vocab, cfg);
  return f;
}

struct GradCheck {
  std::string worst_tensor;
  double worst_rel_error = 0.0;
  std::size_t tensors = 0;
  std::size_t scalars = 0;
};

/// Central differences against the tape's gradients, per parameter tensor.
/// The relative error is ||g_a - g_n|| / max(||g_a|| + ||g_n||, floor).
inline GradCheck gradient_check(model::RepairModel<double>& m, const std::vector<model::Sample>& samples,
                                double h = 1e-5, double floor = 1e-6) {
  auto loss_of = [&] {
    double total = 0;
    for (const auto& s : samples) {
      patchlens::nn::Tape<double> tape(false);
      patchlens::model::ForwardStats<double> st;
      m.forward_train(tape, s, &st);
      total += st.loss;
    }
    return total;
  };
  m.params().zero_grad();
  for (const auto& s : samples) {
    patchlens::nn::Tape<double> tape(true);
    auto loss = m.forward_train(tape, s);
    tape.backward(loss);
  }
  GradCheck out;
  for (std::size_t t = 0; t < m.params().size(); ++t) {
    auto& p = m.params()[t];
    const patchlens::nn::Matrix<double> analytic = p.grad;
    patchlens::nn::Matrix<double> numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double orig = p.value.data()[k];
      p.value.data()[k] = orig + h;
      const double up = loss_of();
      p.value.data()[k] = orig - h;
      const double down = loss_of();
      p.value.data()[k] = orig;
      numeric.data()[k] = (up - down) / (2 * h);
    }
    const double rel = (analytic - numeric).norm() / std::max(analytic.norm() + numeric.norm(), floor);
    if (rel > out.worst_rel_error) {
      out.worst_rel_error = rel;
      out.worst_tensor = p.name;
    }
    ++out.tensors;
    out.scalars += static_cast<std::size_t>(p.value.size());
  }
  return out;
}

/// Copies a float model into a double one through the checkpoint format.
inline model::Checkpoint<double> to_double(const model::RepairModel<float>& m, const patchlens::bpe::BpeModel& bpe) {
  std::stringstream ss;
  model::save_checkpoint(ss, m, bpe);
  return model::load_checkpoint<double>(ss);
}

/// Random buggy lines over the fixture's own token inventory, paired with
/// a one-token change.
inline std::vector<BugFixPair> random_pairs(const std::vector<BugFixPair>& pool, std::size_t n, std::uint64_t seed) {
  std::vector<std::string> inventory;
  {
    std::set<std::string> seen;
    for (const auto& p : pool)
      for (auto& t : patchlens::lex_texts(p.bug_line))
        if (seen.insert(t).second) inventory.push_back(t);
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, inventory.size() - 1), len(1, 12);
  std::vector<BugFixPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> toks(len(rng));
    for (auto& t : toks) t = inventory[pick(rng)];
    auto patch = toks;
    patch[pick(rng) % patch.size()] = inventory[pick(rng)];
    BugFixPair p;
    p.repo_id = "rand/app";
    p.org_id = "rand";
    p.commit_hash = std::to_string(i);
    p.file_path = "R.java";
    p.line_number = 2;
    p.bug_line = patchlens::text::join(toks, " ");
    p.patch_line = patchlens::text::join(patch, " ");
    p.file_before = "class R {\n" + p.bug_line + "\n}\n";
    out.push_back(p);
  }
  return out;
}

}  // namespace harness
