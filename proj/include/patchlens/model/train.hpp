#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "patchlens/analyses.hpp"
#include "patchlens/metrics.hpp"
#include "patchlens/model/decode.hpp"
#include "patchlens/nn/optim.hpp"
#include "patchlens/parallel.hpp"

namespace patchlens::model {

struct CurveRecord {
  std::size_t epoch = 0;
  double token_acc = 0;
  double full_seq_acc = 0;
  double topk_acc = 0;
  double mean_gold_prob = 0;
  double train_loss = 0;
};

struct TrainingCurve {
  std::size_t topk = 5;
  std::vector<CurveRecord> records;
};

inline void write_curve_csv(std::ostream& os, const TrainingCurve& c) {
  os << "epoch,token_acc,full_seq_acc,top" << c.topk << "_acc,mean_gold_prob,train_loss\n";
  os.precision(9);
  for (const auto& r : c.records)
    os << r.epoch << ',' << r.token_acc << ',' << r.full_seq_acc << ',' << r.topk_acc << ',' << r.mean_gold_prob << ','
       << r.train_loss << '\n';
}

struct CurveCorrelation {
  std::optional<double> rho_all;
  std::optional<double> rho_after_10;
};

/// Spearman rho between the token-accuracy and full-sequence series, over all
/// epochs and over epochs after the tenth.
inline CurveCorrelation correlate_curve(const TrainingCurve& c) {
  if (c.records.size() < 2) throw Error("correlate_curve needs at least 2 epochs");
  auto rho = [](const std::vector<CurveRecord>& rs) -> std::optional<double> {
    if (rs.size() < 2) return std::nullopt;
    std::vector<double> x, y;
    for (const auto& r : rs) {
      x.push_back(r.token_acc);
      y.push_back(r.full_seq_acc);
    }
    return metrics::spearman_rho(x, y);
  };
  std::vector<CurveRecord> late;
  std::copy_if(c.records.begin(), c.records.end(), std::back_inserter(late), [](const auto& r) { return r.epoch > 10; });
  return {rho(c.records), rho(late)};
}

/// Per-sample outcome of an evaluation pass.
struct SampleOutcome {
  double token_acc = 0;
  double gold_prob = 0;
  bool greedy_exact = false;
  std::size_t gold_rank = 0;  // 1-based position in the beam, 0 when absent
  std::vector<std::vector<std::string>> predictions;  // lexer tokens, ranked
};

struct EvalOptions {
  std::vector<std::size_t> k_list{1, 5, 25};
  /// Pointer pairs explored by the edit variants; 0 means max(k_list).
  std::size_t pointer_beam = 0;
  double length_alpha = 0.0;
  std::size_t jobs = 1;
  bool beam = true;
};

struct EvalResult {
  std::size_t n = 0;
  double token_acc = 0;
  double full_seq_acc = 0;
  double mean_gold_prob = 0;
  std::map<std::size_t, double> topk_acc;
  std::map<std::size_t, analyses::PredictionRate> new_vocab;
  std::vector<SampleOutcome> samples;
};

/// Teacher-forced statistics, greedy exact match and (optionally) ranked beam
/// output for every sample.
template <class T>
EvalResult evaluate(RepairModel<T>& model, const std::vector<Sample>& samples, const bpe::BpeModel& bpe,
                    const EvalOptions& opt = {}) {
  EvalResult r;
  r.n = samples.size();
  r.samples.resize(samples.size());
  const std::size_t kmax = opt.k_list.empty() ? 1 : *std::max_element(opt.k_list.begin(), opt.k_list.end());
  BeamOptions bo{kmax, opt.pointer_beam == 0 ? kmax : opt.pointer_beam, opt.length_alpha};

  parallel_for(samples.size(), opt.jobs, [&](std::size_t i) {
    const Sample& s = samples[i];
    SampleOutcome& o = r.samples[i];
    Tape<T> tape(false);
    ForwardStats<T> st;
    model.forward_train(tape, s, &st);
    o.token_acc = st.token_acc();
    o.gold_prob = st.mean_gold_prob();
    Decoder<T> dec(model);
    auto g = dec.greedy(s);
    o.greedy_exact = bpe.decode_words(g.symbols) == s.patch_tokens;
    if (opt.beam) {
      auto hyps = dec.beam_search(s, bo);
      for (std::size_t h = 0; h < hyps.size(); ++h) {
        o.predictions.push_back(bpe.decode_words(hyps[h].symbols));
        if (o.gold_rank == 0 && o.predictions.back() == s.patch_tokens) o.gold_rank = h + 1;
      }
    }
  });

  std::vector<analyses::LexedPair> gold;
  std::vector<std::vector<std::vector<std::string>>> preds;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& o = r.samples[i];
    r.token_acc += o.token_acc;
    r.mean_gold_prob += o.gold_prob;
    r.full_seq_acc += o.greedy_exact ? 1.0 : 0.0;
    gold.push_back({samples[i].id, samples[i].bug_tokens, samples[i].patch_tokens});
    preds.push_back(o.predictions);
  }
  if (r.n > 0) {
    const double n = static_cast<double>(r.n);
    r.token_acc /= n;
    r.mean_gold_prob /= n;
    r.full_seq_acc /= n;
  }
  if (opt.beam) {
    for (std::size_t k : opt.k_list) {
      std::size_t hits = 0;
      for (const auto& o : r.samples) hits += o.gold_rank != 0 && o.gold_rank <= k;
      r.topk_acc[k] = r.n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(r.n);
      r.new_vocab[k] = analyses::new_vocab_prediction_rate(preds, gold, k);
    }
  }
  return r;
}

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  nn::AdamOptions adam{};
  nn::WarmupSchedule schedule{};
  /// k of the top-k accuracy recorded in the curve.
  std::size_t curve_topk = 5;
  std::size_t jobs = 1;
  /// Stop once the evaluation full-sequence accuracy reaches this value.
  std::optional<double> stop_at_full_seq;
  bool restore_best = true;
  std::function<void(const CurveRecord&)> on_epoch;
};

template <class T>
struct TrainResult {
  TrainingCurve curve;
  std::size_t best_epoch = 0;
  double best_full_seq_acc = -1;
  nn::ParameterSet<T> best_params;
  std::size_t steps = 0;
};

/// Mini-batch Adam training. After every epoch the model is scored on
/// `eval` and the best parameters by full-sequence accuracy are kept.
template <class T>
TrainResult<T> train(RepairModel<T>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& eval,
                     const bpe::BpeModel& bpe, const TrainOptions& opt) {
  if (train_set.empty()) throw Error("train: empty training split");
  if (opt.batch_size == 0) throw Error("train: batch_size must be >= 1");
  TrainResult<T> res;
  res.curve.topk = opt.curve_topk;
  std::mt19937_64 rng(model.config().seed ^ 0x9e3779b97f4a7c15ULL);
  nn::Adam<T> adam(model.params(), opt.adam);
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const T seed = T(1) / static_cast<T>(end - start);
      model.params().zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = train_set[order[b]];
        Tape<T> tape(true);
        ForwardStats<T> st;
        Var loss = model.forward_train(tape, s, &st, &rng);
        if (!std::isfinite(static_cast<double>(st.loss)))
          throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + " sample " + s.id);
        loss_sum += static_cast<double>(st.loss);
        tape.backward(loss, seed);
      }
      adam.step(opt.schedule.at(res.steps++));
    }

    EvalOptions eo;
    eo.k_list = {opt.curve_topk};
    eo.jobs = opt.jobs;
    eo.beam = opt.curve_topk > 0;
    auto ev = evaluate(model, eval.empty() ? train_set : eval, bpe, eo);
    CurveRecord rec{epoch, ev.token_acc, ev.full_seq_acc, eo.beam ? ev.topk_acc[opt.curve_topk] : 0.0,
                    ev.mean_gold_prob, loss_sum / static_cast<double>(train_set.size())};
    res.curve.records.push_back(rec);
    if (rec.full_seq_acc > res.best_full_seq_acc) {
      res.best_full_seq_acc = rec.full_seq_acc;
      res.best_epoch = epoch;
      res.best_params = model.params();
    }
    if (opt.on_epoch) opt.on_epoch(rec);
    if (opt.stop_at_full_seq && rec.full_seq_acc >= *opt.stop_at_full_seq) break;
  }
  if (opt.restore_best && res.best_epoch != 0)
    for (std::size_t i = 0; i < model.params().size(); ++i) model.params()[i].value = res.best_params[i].value;
  return res;
}

}  // namespace patchlens::model
