#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchlens/patchlens.hpp"
#include "support/fixtures.hpp"
#include "support/harness.hpp"

namespace fs = std::filesystem;
using namespace patchlens;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << std::fixed << v;
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("patchlens_acceptance_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1 -------------------------------------------------------------------------
Outcome bleu_paper_value() {
  auto ref = lex_texts("private boolean isName = false;");
  auto hyp = lex_texts("private boolean isName = true;");
  const double b = metrics::bleu(ref, hyp);
  const double hand = (5.0 / 6 + 3.0 / 5 + 2.0 / 4 + 1.0 / 3) / 4;
  const bool ok = std::abs(b - 0.57) <= 0.005 && std::abs(b - hand) < 1e-12;
  return {ok, "bleu=" + num(b) + " expected 0.57+-0.005 (hand " + num(hand) + ")"};
}

// 2 -------------------------------------------------------------------------
Outcome bpe_paper_value() {
  std::vector<std::string> words;
  for (const char* w : {"cod", "codec", "sing", "ring", "king"})
    for (int i = 0; i < 5; ++i) words.emplace_back(w);
  words.emplace_back("coding");
  bpe::TrainOptions opt;
  opt.num_merges = 5;
  auto model = bpe::train(words, opt);
  auto enc = model.encode("coding");
  const bool ok = enc == std::vector<std::string>{"cod", "ing"};
  return {ok, "coding -> [" + text::join(enc, ",") + "]"};
}

// 3 -------------------------------------------------------------------------
Outcome metric_oracles() {
  auto seqs = harness::all_sequences(3, 6);
  std::size_t checked = 0, mismatched = 0;
  for (const auto& a : seqs)
    for (const auto& b : seqs) {
      // Memoised recursion keeps the exhaustive sweep affordable.
      std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
      std::function<int(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t j) -> int {
        if (i == a.size()) return static_cast<int>(b.size() - j);
        if (j == b.size()) return static_cast<int>(a.size() - i);
        int& m = memo[i][j];
        if (m >= 0) return m;
        if (a[i] == b[j]) return m = rec(i + 1, j + 1);
        return m = 1 + std::min({rec(i + 1, j), rec(i, j + 1), rec(i + 1, j + 1)});
      };
      ++checked;
      if (metrics::edit_distance(a, b) != static_cast<std::size_t>(rec(0, 0))) ++mismatched;
    }

  std::mt19937_64 rng(2024);
  std::size_t prop_fail = 0, asym = 0;
  for (int i = 0; i < 10000; ++i) {
    auto x = harness::random_tokens(rng, 10, 5);
    auto y = harness::random_tokens(rng, 10, 5);
    const double jxy = metrics::jaccard(x, y), jyx = metrics::jaccard(y, x);
    const double bxy = metrics::bleu(x, y), byx = metrics::bleu(y, x);
    if (jxy < 0 || jxy > 1 || bxy < 0 || bxy > 1) ++prop_fail;
    if (jxy != jyx) ++prop_fail;
    if (bxy != byx) ++asym;
    if (x.size() >= 4 && (std::abs(metrics::jaccard(x, x) - 1.0) > 1e-12 || std::abs(metrics::bleu(x, x) - 1.0) > 1e-12))
      ++prop_fail;
  }
  const bool ok = mismatched == 0 && prop_fail == 0 && asym > 0;
  return {ok, "edit_distance mismatches " + std::to_string(mismatched) + "/" + std::to_string(checked) +
                  ", property failures " + std::to_string(prop_fail) + ", asymmetric bleu pairs " +
                  std::to_string(asym) + "/10000"};
}

// 4 -------------------------------------------------------------------------
Outcome edit_codec_round_trip() {
  std::mt19937_64 rng(77);
  std::size_t bad = 0, n = 0;
  auto check = [&](const std::vector<std::string>& b, const std::vector<std::string>& p) {
    ++n;
    auto s = editcodec::diff(b, p);
    auto [pre, suf] = harness::affix_oracle(b, p);
    if (editcodec::apply(b, s) != p || !editcodec::is_maximal(b, p, s) || s.insert_ptr != pre ||
        s.delete_ptr != b.size() - suf)
      ++bad;
  };
  for (int i = 0; i < 10000; ++i) check(harness::random_tokens(rng, 8, 3), harness::random_tokens(rng, 8, 3));
  const std::size_t random_n = n;
  for (const auto& p : fixtures::synthetic_pairs(40, 5, 5)) check(lex_texts(p.bug_line), lex_texts(p.patch_line));
  return {bad == 0, std::to_string(bad) + " failures over " + std::to_string(random_n) + " random + " +
                        std::to_string(n - random_n) + " fixture pairs"};
}

// 5 -------------------------------------------------------------------------
Outcome analysis_monotonicity() {
  auto pairs = fixtures::synthetic_pairs(40, 5, 21);
  auto model = harness::learn_bpe(pairs, 300);
  const std::vector<corpus::ContextMode> modes{corpus::ContextMode::none(), corpus::ContextMode::lines(10),
                                               corpus::ContextMode::lines(20), corpus::ContextMode::whole_file()};
  bool ok = pairs.size() == 200;
  double prev_plain = 2, prev_bpe = 2;
  std::string detail = std::to_string(pairs.size()) + " pairs;";
  for (const auto& m : modes) {
    const double plain = analyses::new_vocab_ratio(pairs, m).ratio_new_vocab;
    const double with = analyses::new_vocab_ratio(pairs, m, &model).ratio_new_vocab;
    ok = ok && plain <= prev_plain && with <= prev_bpe && with <= plain;
    prev_plain = plain;
    prev_bpe = with;
    detail += " " + m.name() + "=" + num(plain, 3) + "/" + num(with, 3);
  }
  return {ok, detail + " (plain/bpe)"};
}

// 6 -------------------------------------------------------------------------
Outcome bpe_lossless() {
  auto pairs = fixtures::synthetic_pairs(40, 5, 21);
  auto model = harness::learn_bpe(pairs, 300);
  std::set<std::string> tokens;
  for (const auto& p : pairs) {
    for (auto& t : lex_texts(p.bug_line)) tokens.insert(t);
    for (auto& t : lex_texts(p.patch_line)) tokens.insert(t);
    for (const auto& line : text::split_lines(p.file_before))
      for (auto& t : lex_texts(line)) tokens.insert(t);
  }
  std::size_t bad = 0;
  for (const auto& t : tokens)
    if (model.decode(model.encode(t)) != t) ++bad;
  return {bad == 0 && !tokens.empty(),
          std::to_string(tokens.size() - bad) + "/" + std::to_string(tokens.size()) + " tokens round-trip"};
}

// 7 -------------------------------------------------------------------------
Outcome gradient_check() {
  auto pairs = fixtures::synthetic_pairs(3, 1, 4);
  bool ok = true;
  std::string detail;
  for (auto v : {model::Variant::Baseline, model::Variant::Edit, model::Variant::BaselineContext,
                 model::Variant::EditContext}) {
    auto f = harness::make_fixture(pairs, harness::tiny_config(v), 20);
    model::RepairModel<double> m(f.cfg, f.vocab);
    auto r = harness::gradient_check(m, {f.samples.begin(), f.samples.begin() + 2});
    ok = ok && r.worst_rel_error < 1e-3 && r.tensors > 0;
    detail += std::string(model::to_string(v)) + " worst " + r.worst_tensor + "=" +
              [&] {
                char b[32];
                std::snprintf(b, sizeof b, "%.2e", r.worst_rel_error);
                return std::string(b);
              }() +
              " (" + std::to_string(r.tensors) + " tensors); ";
  }
  return {ok, detail + "tolerance 1e-3"};
}

// 8 -------------------------------------------------------------------------
Outcome overfit() {
  auto pairs = fixtures::synthetic_pairs(10, 5, 7);
  bool ok = pairs.size() == 50;
  std::string detail;
  const fs::path dir = scratch("overfit");
  for (auto v : {model::Variant::Baseline, model::Variant::Edit}) {
    auto f = harness::make_fixture(pairs, harness::desk_config(v), 200);
    model::RepairModel<float> m(f.cfg, f.vocab);
    model::TrainOptions to;
    to.epochs = 200;
    to.batch_size = 8;
    to.schedule.peak = 3e-3;
    to.schedule.warmup_steps = 30;
    to.curve_topk = 5;
    to.stop_at_full_seq = 1.0;
    auto res = model::train(m, f.samples, f.samples, f.bpe, to);

    const fs::path csv = dir / (std::string(model::to_string(v)) + "_curve.csv");
    {
      std::ofstream os(csv);
      model::write_curve_csv(os, res.curve);
    }
    std::ifstream is(csv);
    std::string header, line;
    std::getline(is, header);
    bool monotone_pair = true;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
      auto cells = text::split(line, ',');
      if (cells.size() != 6 || std::stod(cells[1]) < std::stod(cells[2])) monotone_pair = false;
      ++rows;
    }
    const bool header_ok = header == "epoch,token_acc,full_seq_acc,top5_acc,mean_gold_prob,train_loss";
    const bool reached = res.best_full_seq_acc >= 0.95;
    ok = ok && f.samples.size() == 50 && reached && header_ok && monotone_pair && rows == res.curve.records.size();
    detail += std::string(model::to_string(v)) + " best full_seq " + num(res.best_full_seq_acc, 3) + " at epoch " +
              std::to_string(res.best_epoch) + (header_ok ? "" : " bad header") +
              (monotone_pair ? "" : " token_acc<full_seq somewhere") + "; ";
  }
  fs::remove_all(dir);
  return {ok, detail};
}

// 9 -------------------------------------------------------------------------
Outcome decode_consistency() {
  auto train_pairs = fixtures::synthetic_pairs(10, 5, 7);
  auto test_pairs = fixtures::synthetic_pairs(14, 5, 7);
  test_pairs.erase(test_pairs.begin(), test_pairs.begin() + 50);  // orgs 10..13 are unseen
  bool ok = true;
  std::string detail;
  for (auto v : {model::Variant::Baseline, model::Variant::Edit}) {
    auto f = harness::make_fixture(train_pairs, harness::desk_config(v), 200);
    model::RepairModel<float> mf(f.cfg, f.vocab);
    model::TrainOptions to;
    to.epochs = 60;
    to.batch_size = 8;
    to.schedule.peak = 3e-3;
    to.schedule.warmup_steps = 30;
    to.curve_topk = 0;
    to.stop_at_full_seq = 1.0;
    model::train(mf, f.samples, f.samples, f.bpe, to);
    auto ck = harness::to_double(mf, f.bpe);
    auto& m = ck.model;
    model::Decoder<double> dec(m);

    std::size_t mismatch = 0, rescore_bad = 0, hyps = 0;
    double worst = 0;
    auto inputs = model::make_samples(harness::random_pairs(train_pairs, 100, 5), f.bpe, f.vocab, f.cfg);
    for (const auto& s : inputs) {
      auto g = dec.greedy(s);
      auto b = dec.beam_search(s, {1, 1, 0.0});
      if (b.size() != 1 || b[0].tokens != g.tokens || b[0].pointers != g.pointers || b[0].symbols != g.symbols ||
          std::abs(b[0].log_prob - g.log_prob) > 1e-9)
        ++mismatch;
      for (const auto& h : dec.beam_search(s, {5, 5, 0.0})) {
        const double err = std::abs(dec.rescore(s, h) - h.log_prob);
        worst = std::max(worst, err);
        rescore_bad += err > 1e-6;
        ++hyps;
      }
    }
    auto test = model::make_samples(test_pairs, f.bpe, f.vocab, f.cfg);
    model::EvalOptions eo;
    eo.k_list = {1, 5, 25};
    auto ev = model::evaluate(m, test, f.bpe, eo);
    const bool mono = ev.topk_acc[1] <= ev.topk_acc[5] && ev.topk_acc[5] <= ev.topk_acc[25];
    ok = ok && inputs.size() == 100 && mismatch == 0 && rescore_bad == 0 && mono && !test.empty();
    char w[32];
    std::snprintf(w, sizeof w, "%.1e", worst);
    detail += std::string(model::to_string(v)) + ": beam1!=greedy " + std::to_string(mismatch) + "/" +
              std::to_string(inputs.size()) + ", rescore worst " + w + " over " + std::to_string(hyps) +
              " hyps, top1/5/25 " + num(ev.topk_acc[1], 2) + "/" + num(ev.topk_acc[5], 2) + "/" +
              num(ev.topk_acc[25], 2) + " (n=" + std::to_string(test.size()) + "); ";
  }
  return {ok, detail};
}

// 10 ------------------------------------------------------------------------
Outcome context_bias() {
  auto pairs = fixtures::synthetic_pairs(6, 5, 13);
  bool ok = true;
  std::string detail;
  for (auto v : {model::Variant::BaselineContext, model::Variant::EditContext}) {
    auto f = harness::make_fixture(pairs, harness::desk_config(v), 100);
    model::RepairModel<double> m(f.cfg, f.vocab);
    model::Decoder<double> dec(m);
    double worst_diff = 0, min_mass = 1;
    for (std::size_t i = 0; i < 10 && i < f.samples.size(); ++i) {
      const auto& s = f.samples[i];
      const auto enc = m.encode(s.src);
      std::optional<model::PointerPair> ptrs;
      if (model::is_edit(v)) ptrs = model::PointerPair{s.script.insert_ptr, s.script.delete_ptr};
      const auto mem = m.decoder_memory(enc, s, ptrs);
      std::vector<int> dec_in{model::Vocab::kBos};
      const auto& tgt = s.target(v);
      dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());

      m.set_context_bias(0.0);
      m.set_context_bias_enabled(true);
      auto with_zero = m.sequence_log_probs(mem, s.bug_columns(), dec_in);
      auto beam_zero = dec.beam_search(s, {3, 3, 0.0});
      m.set_context_bias_enabled(false);
      auto without = m.sequence_log_probs(mem, s.bug_columns(), dec_in);
      auto beam_off = dec.beam_search(s, {3, 3, 0.0});
      worst_diff = std::max(worst_diff, (with_zero - without).cwiseAbs().maxCoeff());
      for (std::size_t h = 0; h < std::min(beam_zero.size(), beam_off.size()); ++h)
        worst_diff = std::max(worst_diff, std::abs(beam_zero[h].log_prob - beam_off[h].log_prob));
      if (beam_zero.size() != beam_off.size()) worst_diff = 1;

      m.set_context_bias_enabled(true);
      m.set_context_bias(1e9);
      model::AttentionTrace<double> trace;
      m.sequence_log_probs(mem, s.bug_columns(), dec_in, &trace);
      const auto cols = s.bug_columns();
      for (const auto& a : trace.cross)
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          double mass = 0;
          for (Eigen::Index c = 0; c < a.cols(); ++c)
            if (cols[static_cast<std::size_t>(c)]) mass += a(r, c);
          min_mass = std::min(min_mass, mass);
        }
    }
    ok = ok && worst_diff <= 1e-6 && min_mass > 0.9999;
    char b[32];
    std::snprintf(b, sizeof b, "%.1e", worst_diff);
    detail += std::string(model::to_string(v)) + ": bias0 diff " + b + ", min bug mass " + num(min_mass, 6) + "; ";
  }
  return {ok, detail};
}

// 11 ------------------------------------------------------------------------
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PATCHLENS_CLI_PATH) + " " + args + " >>" +
                          mining::detail::shell_quote(log.string()) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) rows.push_back(text::split(line, ','));
  return rows;
}

Outcome end_to_end() {
  const fs::path dir = scratch("e2e");
  const fs::path log = dir / "cli.log";
  auto q = [](const fs::path& p) { return mining::detail::shell_quote(p.string()); };
  std::vector<std::string> failures;
  auto step = [&](const std::string& name, const std::string& args) {
    const int rc = cli(args, log);
    if (rc != 0) failures.push_back(name + " exit " + std::to_string(rc));
    return rc == 0;
  };
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  };

  fixtures::GitFixture repos(dir / "repos", fixtures::synthetic_pairs(20, 5, 31));
  const fs::path corpus = dir / "corpus.jsonl", split = dir / "split", bpe_model = dir / "bpe.model";
  step("mine", "mine --repos " + q(repos.root()) + " --out " + q(corpus));
  const auto mined = fs::exists(corpus) ? corpus::read_corpus(corpus.string()) : std::vector<corpus::BugFixPair>{};
  {
    std::set<std::pair<std::string, std::string>> want, got;
    for (const auto& p : repos.expected()) want.insert({p.commit_hash, p.patch_line});
    for (const auto& p : mined) got.insert({p.commit_hash, p.patch_line});
    expect(want == got && mined.size() == 100, "mined " + std::to_string(mined.size()) + " pairs, expected 100");
  }

  step("split", "--seed 3 split --dedup --corpus " + q(corpus) + " --out " + q(split));
  std::size_t n_train = 0, n_valid = 0, n_test = 0;
  if (fs::exists(split / "test.jsonl")) {
    auto s = corpus::read_split(split);
    n_train = s.train.size(), n_valid = s.valid.size(), n_test = s.test.size();
    std::set<std::string> a, b, c;
    for (const auto& p : s.train) a.insert(p.org_id);
    for (const auto& p : s.valid) b.insert(p.org_id);
    for (const auto& p : s.test) c.insert(p.org_id);
    bool disjoint = true;
    for (const auto& o : a) disjoint = disjoint && !b.count(o) && !c.count(o);
    for (const auto& o : b) disjoint = disjoint && !c.count(o);
    expect(disjoint, "split not org-disjoint");
    auto near = [](std::size_t got, std::size_t want) { return got + 1 >= want && got <= want + 1; };
    expect(near(n_train, 90) && near(n_valid, 5) && near(n_test, 5),
           "split sizes " + std::to_string(n_train) + "/" + std::to_string(n_valid) + "/" + std::to_string(n_test));
  }

  step("bpe", "bpe train --corpus " + q(split / "train.jsonl") + " --merges 200 --out " + q(bpe_model));
  const fs::path reports = dir / "reports";
  for (const std::string r : {"vocab", "similarity", "ambiguity", "syntax", "edits"})
    step("analyze " + r, "analyze " + r + " --split " + q(split) + (r == "vocab" ? " --bpe " + q(bpe_model) : "") +
                             " --out " + q(reports));
  for (const char* f : {"vocab.csv", "similarity.csv", "similarity_hist.csv", "heatmap_jaccard.json",
                        "heatmap_bleu.json", "neighbors.jsonl", "breakdown_jaccard.csv", "breakdown_bleu.csv",
                        "syntax.csv", "edits.jsonl", "edit_classes.csv"})
    expect(fs::exists(reports / f), std::string("missing report ") + f);
  for (const char* metric : {"jaccard", "bleu"}) {
    const fs::path hp = reports / ("heatmap_" + std::string(metric) + ".json");
    if (!fs::exists(hp)) continue;
    auto j = json::parse(std::ifstream(hp));
    std::size_t sum = 0;
    for (const auto& row : j["counts"])
      for (const auto& c : row) sum += c.get<std::size_t>();
    const std::size_t want = n_test * std::min<std::size_t>(3, n_train);
    expect(sum == want && j["total"].get<std::size_t>() == want && j["observations"].get<std::size_t>() == want,
           std::string("heatmap ") + metric + " holds " + std::to_string(sum) + " of " + std::to_string(want));
    auto rows = read_csv(reports / ("breakdown_" + std::string(metric) + ".csv"));
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() != 4) {
        expect(false, "malformed breakdown row");
        continue;
      }
      if (std::stoul(rows[r][1]) == 0) continue;
      const double total = std::stod(rows[r][2]) + std::stod(rows[r][3]);
      expect(std::abs(total - 100.0) < 1e-6, std::string("breakdown row sums to ") + num(total, 6));
    }
  }

  const std::string model_flags =
      " --epochs 30 --batch-size 8 --lr 3e-3 --warmup 30 --d-model 64 --heads 4 --layers 1 --ff 128"
      " --dropout 0 --max-tgt-len 60 --max-src-len 200 --context lines3 --context-budget 120 --bpe " +
      q(bpe_model);
  std::vector<fs::path> ckpts;
  for (const std::string v : {"baseline", "edit"}) {
    const fs::path out = dir / ("model_" + v);
    step("train " + v, "train --split " + q(split) + " --variant " + v + " --out " + q(out) + model_flags);
    for (const char* f : {"model.ckpt", "curve.csv", "bpe.model", "manifest.train.json"})
      expect(fs::exists(out / f), "train " + v + " lacks " + f);
    ckpts.push_back(out / "model.ckpt");
  }
  const fs::path results = dir / "results.csv";
  step("eval", "eval --ckpt " + q(ckpts[0]) + " --ckpt " + q(ckpts[1]) + " --split " + q(split) +
                   " --k 1,5,25 --out " + q(results));
  if (fs::exists(results)) {
    auto rows = read_csv(results);
    const auto& h = rows.front();
    auto has = [&](const std::string& c) { return std::find(h.begin(), h.end(), c) != h.end(); };
    expect(rows.size() == 3 && has("top1_acc") && has("top5_acc") && has("top25_acc") && has("variant"),
           "results.csv is not Table-4 shaped");
  }

  std::string detail = "mined " + std::to_string(mined.size()) + ", split " + std::to_string(n_train) + "/" +
                       std::to_string(n_valid) + "/" + std::to_string(n_test);
  for (const auto& f : failures) detail += "; " + f;
  if (failures.empty()) fs::remove_all(dir);
  else detail += "; log " + log.string();
  return {failures.empty(), detail};
}

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "bleu paper value", 1, bleu_paper_value},
      {2, "bpe paper value", 1, bpe_paper_value},
      {3, "metric oracles", 30, metric_oracles},
      {4, "edit codec round trip", 10, edit_codec_round_trip},
      {5, "analysis monotonicity", 30, analysis_monotonicity},
      {6, "bpe losslessness", 10, bpe_lossless},
      {7, "gradient check", 120, gradient_check},
      {8, "overfit fixture", 900, overfit},
      {9, "decode consistency", 120, decode_consistency},
      {10, "context bias sanity", 60, context_bias},
      {11, "end-to-end pipeline", 1200, end_to_end},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs < c.budget_s;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::cout << "criterion " << c.id << " [" << c.name << "]: " << (pass ? "PASS" : "FAIL") << " (" << num(secs, 2)
              << "s, budget " << c.budget_s << "s" << (in_budget ? "" : ", over budget") << ") " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
