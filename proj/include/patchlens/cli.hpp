#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "patchlens/patchlens.hpp"

#ifndef PATCHLENS_VERSION
#define PATCHLENS_VERSION "0.0.0"
#endif

namespace patchlens::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad invocation; exit code 2.
struct UsageError : Error {
  using Error::Error;
};

/// Input that does not exist or cannot be read; exit code 1.
struct InputError : Error {
  using Error::Error;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

inline void require_file(const std::string& p, std::string_view what) {
  if (p.empty()) throw UsageError(std::string(what) + " is required");
  if (!fs::is_regular_file(p)) throw InputError("missing input " + std::string(what) + ": " + p);
}

inline void require_dir(const std::string& p, std::string_view what) {
  if (p.empty()) throw UsageError(std::string(what) + " is required");
  if (!fs::is_directory(p)) throw InputError("missing input " + std::string(what) + ": " + p);
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : text::split(s, ',')) {
    auto t = text::normalize_whitespace(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> ks;
  for (const auto& t : split_list(s)) {
    try {
      std::size_t used = 0;
      long v = std::stol(t, &used);
      if (used != t.size() || v < 1) throw std::invalid_argument(t);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("bad --k entry: " + t);
    }
  }
  if (ks.empty()) throw UsageError("--k needs at least one value");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

/// Record of one invocation, written next to its outputs.
struct RunManifest {
  std::string subcommand;
  json flags = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string corpus_hash;
  std::uint64_t seed = 0;

  json to_json() const {
    return {{"subcommand", subcommand}, {"flags", flags},         {"inputs", inputs},
            {"outputs", outputs},       {"corpus_hash", corpus_hash}, {"tool_version", PATCHLENS_VERSION},
            {"seed", seed}};
  }
};

/// FNV-1a over the bytes of every input file, in order.
inline std::string hash_files(const std::vector<std::string>& paths) {
  std::uint64_t h = text::fnv1a("");
  for (const auto& p : paths)
    if (fs::is_regular_file(p)) h = text::fnv1a(read_file(p), h);
  return text::hex64(h);
}

struct Globals {
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::size_t jobs = 1;
  std::string config;
};

inline std::uint64_t env_seed(std::uint64_t fallback) {
  if (const char* s = std::getenv("PATCHLENS_SEED"); s != nullptr && *s != '\0') {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw UsageError(std::string("PATCHLENS_SEED is not an integer: ") + s);
    }
  }
  return fallback;
}

inline json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  require_file(path, "--config");
  try {
    auto j = json::parse(read_file(path));
    if (!j.is_object()) throw InputError("config must be a JSON object: " + path);
    return j;
  } catch (const json::exception& e) {
    throw InputError("config " + path + ": " + e.what());
  }
}

/// Seed precedence: --seed, then the config's "seed", then PATCHLENS_SEED, then 1.
inline std::uint64_t resolve_seed(const Globals& g, const json& cfg) {
  if (g.seed_given) return g.seed;
  if (cfg.contains("seed")) return cfg["seed"].get<std::uint64_t>();
  return env_seed(1);
}

inline corpus::DatasetSplit load_split_dir(const std::string& dir) {
  require_dir(dir, "--split");
  for (const char* part : {"train.jsonl", "valid.jsonl", "test.jsonl"})
    if (!fs::is_regular_file(fs::path(dir) / part)) throw InputError("split directory lacks " + std::string(part));
  return corpus::read_split(dir);
}

inline void write_manifest(const fs::path& path, RunManifest m) {
  write_file(path, m.to_json().dump(2) + "\n");
}

inline metrics::BleuOptions bleu_options(const std::string& mean, bool smooth) {
  metrics::BleuOptions o;
  if (mean == "arithmetic") o.mean = metrics::BleuMean::Arithmetic;
  else if (mean == "geometric") o.mean = metrics::BleuMean::Geometric;
  else throw UsageError("--bleu-mean must be arithmetic or geometric");
  o.smoothing = smooth ? metrics::BleuSmoothing::AddOne : metrics::BleuSmoothing::None;
  return o;
}

inline bpe::BpeModel train_bpe_on(const std::vector<corpus::BugFixPair>& pairs, std::size_t merges) {
  std::vector<std::string> tokens;
  for (const auto& p : pairs) {
    for (auto& t : lex_texts(p.bug_line)) tokens.push_back(std::move(t));
    for (auto& t : lex_texts(p.patch_line)) tokens.push_back(std::move(t));
  }
  bpe::TrainOptions opt;
  opt.num_merges = merges;
  return bpe::train(tokens, opt);
}

// ---------------------------------------------------------------------------

class Dispatcher {
public:
  Dispatcher(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"patchlens: mine, analyse and model single-line bug fixes", "patchlens"};
    app.set_version_flag("--version", PATCHLENS_VERSION);
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--seed", g_.seed, "Seed for every random choice (fallback: PATCHLENS_SEED, then 1)");
    app.add_option("--jobs", g_.jobs, "Worker threads for parallel stages")->check(CLI::PositiveNumber);
    app.add_option("--config", g_.config, "JSON config; flags override its keys");

    add_mine(app);
    add_split(app);
    add_bpe(app);
    add_tokenize(app);
    add_analyze(app);
    add_train(app);
    add_eval(app);
    add_decode(app);

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out_, err_);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out_, err_);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e, out_, err_);
    } catch (const CLI::ParseError& e) {
      return fail("usage", e.what(), 2);
    }
    g_.seed_given = app.get_option("--seed")->count() > 0;
    try {
      action_();
    } catch (const UsageError& e) {
      return fail("usage", e.what(), 2);
    } catch (const InputError& e) {
      return fail("input", e.what(), 1);
    } catch (const std::exception& e) {
      return fail("runtime", e.what(), 1);
    }
    return 0;
  }

private:
  std::ostream& out_;
  std::ostream& err_;
  Globals g_;
  std::function<void()> action_;

  int fail(std::string_view kind, std::string msg, int code) {
    for (char& c : msg)
      if (c == '\n' || c == '\r') c = ' ';
    err_ << "patchlens: error: " << kind << ": " << msg << "\n";
    return code;
  }

  void log(const std::string& s) { err_ << s << "\n"; }

  // --- mine ----------------------------------------------------------------

  void add_mine(CLI::App& app) {
    auto* sub = app.add_subcommand("mine", "Mine single-line fixes from git repositories");
    auto repos = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto keywords = std::make_shared<std::string>();
    auto exts = std::make_shared<std::string>(".java");
    auto max_commits = std::make_shared<std::size_t>(0);
    sub->add_option("--repos", *repos, "Directory of clones (<root>/<repo> or <root>/<org>/<repo>)")->required();
    sub->add_option("--out", *out, "Corpus JSONL to write (file_before goes to <name>.files.jsonl)")->required();
    sub->add_option("--keywords", *keywords, "Comma-separated bug-fix keywords (default: fix,bug,defect,fault,error,patch,repair)");
    sub->add_option("--lang-ext", *exts, "Comma-separated file extensions")->capture_default_str();
    sub->add_option("--max-commits", *max_commits, "Commits scanned per repository (0 = all)");
    sub->callback([=, this] {
      action_ = [=, this] {
        require_dir(*repos, "--repos");
        auto cfg = load_config(g_.config);
        mining::MineOptions opt;
        if (!keywords->empty()) {
          opt.keywords.clear();
          for (auto& k : split_list(*keywords)) opt.keywords.insert(text::to_lower(k));
        } else if (cfg.contains("keywords")) {
          opt.keywords = cfg["keywords"].get<std::set<std::string>>();
        }
        opt.extensions = split_list(*exts);
        opt.max_commits = *max_commits;
        mining::MineStats stats;
        auto pairs = mining::mine_all(*repos, opt, g_.jobs, &stats);
        corpus::write_corpus(*out, pairs);
        json report{{"commits_scanned", stats.commits_scanned}, {"keyword_hits", stats.keyword_hits},
                    {"pairs", stats.pairs}, {"skipped_undecodable", stats.skipped_undecodable}};
        write_file(*out + ".stats.json", report.dump(2) + "\n");
        RunManifest m{"mine",
                      {{"repos", *repos}, {"keywords", std::vector<std::string>(opt.keywords.begin(), opt.keywords.end())},
                       {"lang_ext", opt.extensions}, {"max_commits", opt.max_commits}, {"jobs", g_.jobs}},
                      {*repos},
                      {*out, corpus::side_table_path(*out), *out + ".stats.json"},
                      hash_files({*out}),
                      resolve_seed(g_, cfg)};
        write_manifest(*out + ".manifest.json", m);
        log("mined " + std::to_string(pairs.size()) + " pairs from " + std::to_string(stats.commits_scanned) +
            " commits (" + std::to_string(stats.skipped_undecodable) + " undecodable skipped)");
      };
    });
  }

  // --- split ---------------------------------------------------------------

  void add_split(CLI::App& app) {
    auto* sub = app.add_subcommand("split", "Org-disjoint train/valid/test split");
    auto corpus_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto ratios = std::make_shared<std::string>("0.9,0.05,0.05");
    auto dedup = std::make_shared<bool>(false);
    sub->add_option("--corpus", *corpus_path, "Corpus JSONL")->required();
    sub->add_option("--out", *out, "Output directory (train/valid/test.jsonl)")->required();
    sub->add_option("--ratios", *ratios, "train,valid,test fractions")->capture_default_str();
    sub->add_flag("--dedup", *dedup, "Drop test pairs duplicated in train/valid or earlier in test");
    sub->callback([=, this] {
      action_ = [=, this] {
        require_file(*corpus_path, "--corpus");
        auto cfg = load_config(g_.config);
        const auto seed = resolve_seed(g_, cfg);
        auto parts = split_list(*ratios);
        if (parts.size() != 3) throw UsageError("--ratios needs three comma-separated values");
        corpus::SplitRatios r;
        try {
          r = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
        } catch (const std::exception&) {
          throw UsageError("--ratios values must be numbers");
        }
        if (std::abs(r.train + r.valid + r.test - 1.0) > 1e-6) throw UsageError("--ratios must sum to 1");
        auto pairs = corpus::read_corpus(*corpus_path);
        auto split = corpus::split_dataset(pairs, r, seed);
        const std::size_t before = split.test.size();
        if (*dedup) split = corpus::dedup_test(split);
        corpus::write_split(*out, split);
        auto org_count = [](const std::vector<corpus::BugFixPair>& v) {
          std::set<std::string> s;
          for (const auto& p : v) s.insert(p.org_id);
          return s.size();
        };
        json stats{{"train", split.train.size()},       {"valid", split.valid.size()},
                   {"test", split.test.size()},         {"test_before_dedup", before},
                   {"train_orgs", org_count(split.train)}, {"valid_orgs", org_count(split.valid)},
                   {"test_orgs", org_count(split.test)}, {"seed", seed}};
        write_file(fs::path(*out) / "split_stats.json", stats.dump(2) + "\n");
        std::vector<std::string> outs;
        for (const char* p : {"train.jsonl", "valid.jsonl", "test.jsonl", "split_stats.json"})
          outs.push_back((fs::path(*out) / p).string());
        write_manifest(fs::path(*out) / "manifest.split.json",
                       {"split", {{"corpus", *corpus_path}, {"ratios", *ratios}, {"dedup", *dedup}}, {*corpus_path},
                        outs, hash_files({*corpus_path}), seed});
        log("split " + std::to_string(pairs.size()) + " pairs -> " + std::to_string(split.train.size()) + "/" +
            std::to_string(split.valid.size()) + "/" + std::to_string(split.test.size()));
      };
    });
  }

  // --- bpe -----------------------------------------------------------------

  void add_bpe(CLI::App& app) {
    auto* sub = app.add_subcommand("bpe", "Train or apply byte-pair encoding");
    sub->require_subcommand(1);
    {
      auto* t = sub->add_subcommand("train", "Learn merges from the bug and patch lines of a corpus");
      auto corpus_path = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto merges = std::make_shared<std::size_t>(10000);
      t->add_option("--corpus", *corpus_path, "Corpus JSONL (normally the train split)")->required();
      t->add_option("--merges", *merges, "Number of merges")->capture_default_str();
      t->add_option("--out", *out, "Model file to write")->required();
      t->callback([=, this] {
        action_ = [=, this] {
          require_file(*corpus_path, "--corpus");
          auto cfg = load_config(g_.config);
          auto model = train_bpe_on(corpus::read_corpus(*corpus_path), *merges);
          model.save_file(*out);
          write_manifest(*out + ".manifest.json", {"bpe train", {{"corpus", *corpus_path}, {"merges", *merges}},
                                                   {*corpus_path}, {*out}, hash_files({*corpus_path}),
                                                   resolve_seed(g_, cfg)});
          log("learned " + std::to_string(model.merges().size()) + " merges");
        };
      });
    }
    {
      auto* a = sub->add_subcommand("apply", "Encode tokens with a trained model");
      auto model_path = std::make_shared<std::string>();
      auto in = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto line = std::make_shared<std::string>();
      a->add_option("--model", *model_path, "Model file")->required();
      a->add_option("--in", *in, "Corpus JSONL to encode");
      a->add_option("--out", *out, "JSONL of per-pair subtokens (required with --in)");
      a->add_option("--line", *line, "Encode one source line and print JSON to stdout");
      a->callback([=, this] {
        action_ = [=, this] {
          require_file(*model_path, "--model");
          auto model = bpe::BpeModel::load_file(*model_path);
          auto encode_line = [&](const std::string& l) {
            json arr = json::array();
            for (const auto& t : lex_texts(l)) arr.push_back(model.encode(t));
            return arr;
          };
          if (!line->empty() || in->empty()) {
            if (in->empty() && line->empty()) throw UsageError("bpe apply needs --in or --line");
            out_ << encode_line(*line).dump() << "\n";
            return;
          }
          require_file(*in, "--in");
          if (out->empty()) throw UsageError("--out is required with --in");
          std::ostringstream ss;
          for (const auto& p : corpus::read_corpus(*in))
            ss << json{{"id", p.id()}, {"bug", encode_line(p.bug_line)}, {"patch", encode_line(p.patch_line)}}.dump()
               << "\n";
          write_file(*out, ss.str());
          write_manifest(*out + ".manifest.json", {"bpe apply", {{"model", *model_path}, {"in", *in}},
                                                   {*model_path, *in}, {*out}, hash_files({*in}), 0});
        };
      });
    }
  }

  // --- tokenize ------------------------------------------------------------

  void add_tokenize(CLI::App& app) {
    auto* sub = app.add_subcommand("tokenize", "Lex bug and patch lines into tokens with kinds");
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto line = std::make_shared<std::string>();
    sub->add_option("--in", *in, "Corpus JSONL");
    sub->add_option("--out", *out, "Token JSONL to write");
    sub->add_option("--line", *line, "Lex one line and print JSON to stdout");
    sub->callback([=, this] {
      action_ = [=, this] {
        auto lex = [](const std::string& l) {
          json toks = json::array(), kinds = json::array();
          for (const auto& t : tokenize(l)) {
            toks.push_back(t.text);
            kinds.push_back(std::string(to_string(t.kind)));
          }
          return std::pair{toks, kinds};
        };
        if (in->empty()) {
          if (line->empty()) throw UsageError("tokenize needs --in or --line");
          auto [t, k] = lex(*line);
          out_ << json{{"tokens", t}, {"kinds", k}}.dump() << "\n";
          return;
        }
        require_file(*in, "--in");
        if (out->empty()) throw UsageError("--out is required with --in");
        std::ostringstream ss;
        for (const auto& p : corpus::read_corpus(*in)) {
          auto [bt, bk] = lex(p.bug_line);
          auto [pt, pk] = lex(p.patch_line);
          ss << json{{"id", p.id()}, {"bug_tokens", bt}, {"bug_kinds", bk}, {"patch_tokens", pt}, {"patch_kinds", pk}}
                    .dump()
             << "\n";
        }
        write_file(*out, ss.str());
        write_manifest(*out + ".manifest.json", {"tokenize", {{"in", *in}}, {*in}, {*out}, hash_files({*in}), 0});
      };
    });
  }

  // --- analyze -------------------------------------------------------------

  struct AnalyzeArgs {
    std::string corpus;
    std::string split;
    std::string part = "all";
    std::string out;
    std::string bpe;
    std::size_t merges = 10000;
    std::string modes = "none,lines10,lines20,file";
    std::string bleu_mean = "arithmetic";
    bool smooth = false;
    std::size_t bins = 20;
    std::size_t neighbors = 3;
    std::string metric = "both";
  };

  std::vector<corpus::BugFixPair> analysis_pairs(const AnalyzeArgs& a, corpus::DatasetSplit* split_out) {
    if (!a.split.empty()) {
      auto split = load_split_dir(a.split);
      std::vector<corpus::BugFixPair> out;
      auto take = [&](const std::vector<corpus::BugFixPair>& v) { out.insert(out.end(), v.begin(), v.end()); };
      if (a.part == "all" || a.part == "train") take(split.train);
      if (a.part == "all" || a.part == "valid") take(split.valid);
      if (a.part == "all" || a.part == "test") take(split.test);
      if (a.part != "all" && a.part != "train" && a.part != "valid" && a.part != "test")
        throw UsageError("--part must be all, train, valid or test");
      if (split_out) *split_out = std::move(split);
      return out;
    }
    if (a.corpus.empty()) throw UsageError("analyze needs --corpus or --split");
    require_file(a.corpus, "--corpus");
    return corpus::read_corpus(a.corpus);
  }

  void add_analyze(CLI::App& app) {
    auto* sub = app.add_subcommand("analyze", "Corpus studies: vocab, similarity, ambiguity, syntax, edits");
    sub->require_subcommand(1);
    for (const char* name : {"vocab", "similarity", "ambiguity", "syntax", "edits"}) {
      auto* s = sub->add_subcommand(name);
      auto a = std::make_shared<AnalyzeArgs>();
      s->add_option("--corpus", a->corpus, "Corpus JSONL");
      s->add_option("--split", a->split, "Split directory (train/valid/test.jsonl)");
      s->add_option("--part", a->part, "Split part analysed: all|train|valid|test")->capture_default_str();
      s->add_option("--out", a->out, "Output directory")->required();
      s->add_option("--bleu-mean", a->bleu_mean, "arithmetic|geometric")->capture_default_str();
      s->add_flag("--bleu-smooth", a->smooth, "Add-one smoothing for n>1 precisions");
      const std::string report = name;
      if (report == "vocab") {
        s->description("Ratio of patches needing tokens absent from bug + context");
        s->add_option("--bpe", a->bpe, "BPE model (default: learned on the train part)");
        s->add_option("--merges", a->merges, "Merges when learning BPE here")->capture_default_str();
        s->add_option("--modes", a->modes, "Context modes")->capture_default_str();
      } else if (report == "similarity") {
        s->description("Edit distance, Jaccard and BLEU between bug and patch");
        s->add_option("--bins", a->bins, "Histogram bins for [0,1] metrics")->capture_default_str();
      } else if (report == "ambiguity") {
        s->description("Top-k similar training bugs per test bug, heatmap and breakdown");
        s->add_option("--bins", a->bins, "Heatmap bins per axis")->capture_default_str();
        s->add_option("--neighbors", a->neighbors, "Neighbours per query")->capture_default_str();
        s->add_option("--metric", a->metric, "jaccard|bleu|both")->capture_default_str();
      } else if (report == "syntax") {
        s->description("Share of fixes keeping the token-kind sequence");
      } else {
        s->description("Pointer edit scripts and their class histogram");
      }
      s->callback([=, this] { action_ = [=, this] { analyze(report, *a); }; });
    }
  }

  void analyze(const std::string& report, const AnalyzeArgs& a) {
    auto cfg = load_config(g_.config);
    const auto seed = resolve_seed(g_, cfg);
    const auto bleu_opt = bleu_options(a.bleu_mean, a.smooth);
    corpus::DatasetSplit split;
    auto pairs = analysis_pairs(a, &split);
    const fs::path out(a.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;
    auto emit = [&](const std::string& file, const std::string& body) {
      write_file(out / file, body);
      outputs.push_back((out / file).string());
    };
    std::vector<std::string> inputs;
    if (!a.split.empty())
      for (const char* p : {"train.jsonl", "valid.jsonl", "test.jsonl"}) inputs.push_back((fs::path(a.split) / p).string());
    else
      inputs.push_back(a.corpus);

    if (report == "vocab") {
      if (pairs.empty()) throw InputError("no pairs to analyse");
      std::optional<bpe::BpeModel> model;
      if (!a.bpe.empty()) {
        require_file(a.bpe, "--bpe");
        model = bpe::BpeModel::load_file(a.bpe);
        inputs.push_back(a.bpe);
      } else {
        model = train_bpe_on(a.split.empty() ? pairs : split.train, a.merges);
      }
      std::ostringstream csv;
      csv << "context_mode,with_bpe,ratio_new_vocab,new_vocab_count,sample_count\n";
      for (const auto& m : split_list(a.modes)) {
        auto mode = corpus::ContextMode::parse(m);
        for (bool with_bpe : {false, true}) {
          auto r = analyses::new_vocab_ratio(pairs, mode, with_bpe ? &*model : nullptr, g_.jobs);
          csv << mode.name() << ',' << (with_bpe ? "true" : "false") << ',' << fmt(r.ratio_new_vocab) << ','
              << r.new_vocab_count << ',' << r.sample_count << '\n';
        }
      }
      emit("vocab.csv", csv.str());
    } else if (report == "similarity") {
      auto rep = analyses::similarity_report(analyses::lex_pairs(pairs, g_.jobs), bleu_opt, a.bins, g_.jobs);
      std::ostringstream csv, hist;
      csv << "metric,n,mean,median,ratio_eq_1,ratio_le_2,ratio_ge_0.5\n";
      hist << "metric,bin_lo,bin_hi,count\n";
      auto row = [&](const std::string& name, const analyses::MetricSummary& m) {
        const auto& st = m.stats;
        csv << name << ',' << m.values.size() << ',' << fmt(st.mean) << ',' << fmt(st.median) << ','
            << fmt(st.ratio_at([](double v) { return v == 1.0; })) << ','
            << fmt(st.ratio_at([](double v) { return v <= 2.0; })) << ','
            << fmt(st.ratio_at([](double v) { return v >= 0.5; })) << '\n';
        const auto& h = m.histogram;
        const double w = (h.hi - h.lo) / static_cast<double>(h.counts.size());
        for (std::size_t i = 0; i < h.counts.size(); ++i)
          hist << name << ',' << fmt(h.lo + w * static_cast<double>(i)) << ',' << fmt(h.lo + w * static_cast<double>(i + 1))
               << ',' << h.counts[i] << '\n';
      };
      row("edit_distance", rep.edit_distance);
      row("jaccard", rep.jaccard);
      row("bleu", rep.bleu);
      emit("similarity.csv", csv.str());
      emit("similarity_hist.csv", hist.str());
    } else if (report == "ambiguity") {
      if (a.split.empty()) throw UsageError("analyze ambiguity needs --split");
      auto test = analyses::lex_pairs(split.test, g_.jobs);
      auto train = analyses::lex_pairs(split.train, g_.jobs);
      std::vector<analyses::SimMetric> ms;
      if (a.metric == "jaccard" || a.metric == "both") ms.push_back(analyses::SimMetric::Jaccard);
      if (a.metric == "bleu" || a.metric == "both") ms.push_back(analyses::SimMetric::Bleu);
      if (ms.empty()) throw UsageError("--metric must be jaccard, bleu or both");
      std::ostringstream nb;
      for (const auto& q : test) {
        auto rec = analyses::nearest_bugs(q, train, a.neighbors);
        nb << json{{"query_id", rec.query_id}, {"neighbor_ids", rec.neighbor_ids}, {"bug_sims", rec.bug_sims},
                   {"patch_sims", rec.patch_sims}, {"truncated", rec.truncated}}
                  .dump()
           << '\n';
      }
      emit("neighbors.jsonl", nb.str());
      for (auto m : ms) {
        auto grid = analyses::ambiguity_heatmap(test, train, m, a.bins, a.neighbors, bleu_opt, g_.jobs);
        const std::string name(analyses::to_string(m));
        json j{{"metric", name},         {"bins", grid.bins},
               {"counts", grid.counts},  {"normalized", grid.normalized},
               {"total", grid.total()},  {"observations", grid.observations.size()},
               {"axes", {{"rows", "bug_similarity"}, {"cols", "patch_similarity"}}}};
        emit("heatmap_" + name + ".json", j.dump() + "\n");
        std::ostringstream csv;
        csv << "bug_threshold,n,pct_patch_below_0.5,pct_patch_at_or_above_0.5\n";
        for (const auto& r : analyses::similar_pair_breakdown(grid.observations))
          csv << fmt(r.threshold) << ',' << r.n << ',' << fmt(r.pct_below) << ',' << fmt(r.pct_at_or_above) << '\n';
        emit("breakdown_" + name + ".csv", csv.str());
      }
    } else if (report == "syntax") {
      auto r = analyses::syntax_invariance_report(pairs, g_.jobs);
      std::ostringstream csv;
      csv << "stratum,n,unchanged,ratio\n";
      for (auto [name, ratio] : {std::pair{"all", r.all}, std::pair{"with_new_tokens", r.with_new_tokens},
                                 std::pair{"without_new_tokens", r.without_new_tokens}})
        csv << name << ',' << ratio.n << ',' << ratio.hits << ',' << fmt(ratio.value()) << '\n';
      emit("syntax.csv", csv.str());
    } else {
      auto rep = analyses::edit_report(analyses::lex_pairs(pairs, g_.jobs));
      std::ostringstream jl, csv;
      for (const auto& r : rep.records)
        jl << json{{"id", r.id}, {"insert_ptr", r.script.insert_ptr}, {"delete_ptr", r.script.delete_ptr},
                   {"inserted", r.script.inserted}, {"class", std::string(editcodec::to_string(r.edit_class))}}
                  .dump()
           << '\n';
      csv << "class,count\n";
      for (const auto& [c, n] : rep.histogram) csv << editcodec::to_string(c) << ',' << n << '\n';
      emit("edits.jsonl", jl.str());
      emit("edit_classes.csv", csv.str());
    }
    json flags{{"corpus", a.corpus}, {"split", a.split}, {"part", a.part}, {"bleu_mean", a.bleu_mean},
               {"bleu_smooth", a.smooth}, {"bins", a.bins}, {"neighbors", a.neighbors}, {"metric", a.metric},
               {"modes", a.modes}, {"bpe", a.bpe}, {"merges", a.merges}};
    write_manifest(out / ("manifest.analyze." + report + ".json"),
                   {"analyze " + report, flags, inputs, outputs, hash_files(inputs), seed});
    log("analyze " + report + ": " + std::to_string(pairs.size()) + " pairs -> " + out.string());
  }

  // --- train ---------------------------------------------------------------

  struct TrainArgs {
    std::string split;
    std::string out;
    std::string variant;
    std::string bpe;
    std::optional<std::size_t> merges, epochs, batch, warmup, curve_topk;
    std::optional<int> d_model, heads, layers, ff, max_src, max_tgt, context_budget;
    std::optional<double> dropout, lr, stop_at;
    std::string context;
  };

  void add_train(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "Train a repair model and record its training curve");
    auto a = std::make_shared<TrainArgs>();
    sub->add_option("--split", a->split, "Split directory")->required();
    sub->add_option("--out", a->out, "Output directory")->required();
    sub->add_option("--variant", a->variant, "baseline|edit|baseline+context|edit+context");
    sub->add_option("--bpe", a->bpe, "Existing BPE model (default: learned on train)");
    sub->add_option("--merges", a->merges, "BPE merges when learning here (default 10000)");
    sub->add_option("--epochs", a->epochs, "Epochs (default 100)");
    sub->add_option("--batch-size", a->batch, "Samples per update (default 16)");
    sub->add_option("--lr", a->lr, "Peak learning rate (default 1e-3)");
    sub->add_option("--warmup", a->warmup, "Warmup steps (default 100)");
    sub->add_option("--curve-topk", a->curve_topk, "k of the curve's top-k accuracy (default 5)");
    sub->add_option("--stop-at", a->stop_at, "Stop once validation full-sequence accuracy reaches this");
    sub->add_option("--d-model", a->d_model, "Model width");
    sub->add_option("--heads", a->heads, "Attention heads");
    sub->add_option("--layers", a->layers, "Encoder and decoder layers");
    sub->add_option("--ff", a->ff, "Feed-forward width");
    sub->add_option("--dropout", a->dropout, "Dropout rate");
    sub->add_option("--max-src-len", a->max_src, "Source symbol budget");
    sub->add_option("--max-tgt-len", a->max_tgt, "Target symbol budget (including </s>)");
    sub->add_option("--context", a->context, "Context mode for +context variants: none|linesN|file");
    sub->add_option("--context-budget", a->context_budget, "Context symbols admitted (default 500)");
    sub->callback([=, this] { action_ = [=, this] { train(*a); }; });
  }

  void train(const TrainArgs& a) {
    auto split = load_split_dir(a.split);
    auto cfg_json = load_config(g_.config);
    model::ModelConfig cfg = model::config_from_json(cfg_json);
    cfg.seed = resolve_seed(g_, cfg_json);
    if (!a.variant.empty()) cfg.variant = model::parse_variant(a.variant);
    if (a.d_model) cfg.d_model = *a.d_model;
    if (a.heads) cfg.n_heads = *a.heads;
    if (a.layers) cfg.n_enc_layers = cfg.n_dec_layers = *a.layers;
    if (a.ff) cfg.ff_dim = *a.ff;
    if (a.dropout) cfg.dropout = *a.dropout;
    if (a.max_src) cfg.max_src_len = *a.max_src;
    if (a.max_tgt) cfg.max_tgt_len = *a.max_tgt;
    if (a.context_budget) cfg.context_budget = *a.context_budget;
    if (!a.context.empty()) cfg.context_mode = corpus::ContextMode::parse(a.context);
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }

    model::TrainOptions to;
    to.epochs = a.epochs.value_or(cfg_json.value("epochs", to.epochs));
    to.batch_size = a.batch.value_or(cfg_json.value("batch_size", to.batch_size));
    to.schedule.peak = a.lr.value_or(cfg_json.value("lr", to.schedule.peak));
    to.schedule.warmup_steps = a.warmup.value_or(cfg_json.value("warmup_steps", to.schedule.warmup_steps));
    to.curve_topk = a.curve_topk.value_or(cfg_json.value("curve_topk", to.curve_topk));
    to.adam.clip_norm = cfg_json.value("clip_norm", to.adam.clip_norm);
    to.adam.weight_decay = cfg_json.value("weight_decay", to.adam.weight_decay);
    if (cfg_json.value("lr_decay", std::string("none")) == "inverse_sqrt") to.schedule.decay = nn::LrDecay::InverseSqrt;
    if (a.stop_at) to.stop_at_full_seq = *a.stop_at;
    else if (cfg_json.contains("stop_at")) to.stop_at_full_seq = cfg_json["stop_at"].get<double>();
    to.jobs = g_.jobs;
    const std::size_t merges = a.merges.value_or(cfg_json.value("merges", std::size_t{10000}));

    std::vector<std::string> inputs;
    for (const char* p : {"train.jsonl", "valid.jsonl", "test.jsonl"}) inputs.push_back((fs::path(a.split) / p).string());
    bpe::BpeModel bpe_model;
    if (!a.bpe.empty()) {
      require_file(a.bpe, "--bpe");
      bpe_model = bpe::BpeModel::load_file(a.bpe);
      inputs.push_back(a.bpe);
    } else {
      bpe_model = train_bpe_on(split.train, merges);
    }
    auto vocab = model::build_vocab(split.train, bpe_model, cfg);
    model::EncodeStats train_stats, valid_stats;
    auto train_samples = model::make_samples(split.train, bpe_model, vocab, cfg, &train_stats);
    auto valid_samples = model::make_samples(split.valid, bpe_model, vocab, cfg, &valid_stats);
    if (train_samples.empty()) throw InputError("no trainable samples in " + a.split);

    const fs::path out(a.out);
    fs::create_directories(out);
    log("training " + std::string(model::to_string(cfg.variant)) + " on " + std::to_string(train_samples.size()) +
        " samples, vocab " + std::to_string(vocab.size()));
    to.on_epoch = [this](const model::CurveRecord& r) {
      log("epoch " + std::to_string(r.epoch) + " loss " + fmt(r.train_loss) + " token_acc " + fmt(r.token_acc) +
          " full_seq_acc " + fmt(r.full_seq_acc));
    };
    model::RepairModel<float> m(cfg, vocab);
    auto res = model::train(m, train_samples, valid_samples, bpe_model, to);

    std::ostringstream curve;
    model::write_curve_csv(curve, res.curve);
    write_file(out / "curve.csv", curve.str());
    bpe_model.save_file((out / "bpe.model").string());
    json meta{{"best_epoch", res.best_epoch}, {"best_full_seq_acc", res.best_full_seq_acc}};
    model::save_checkpoint_file(out / "model.ckpt", m, bpe_model, meta);
    json stats{{"variant", model::to_string(cfg.variant)},
               {"config", model::to_json(cfg)},
               {"epochs_run", res.curve.records.size()},
               {"best_epoch", res.best_epoch},
               {"best_full_seq_acc", res.best_full_seq_acc},
               {"train_samples", train_stats.kept},
               {"train_rejected_overlength", train_stats.rejected_overlength},
               {"valid_samples", valid_stats.kept},
               {"valid_rejected_overlength", valid_stats.rejected_overlength},
               {"context_trimmed", train_stats.context_trimmed + valid_stats.context_trimmed},
               {"vocab_size", vocab.size()},
               {"bpe_merges", bpe_model.merges().size()},
               {"parameters", m.params().scalar_count()}};
    if (res.curve.records.size() >= 2) {
      auto rho = model::correlate_curve(res.curve);
      stats["rho_all"] = rho.rho_all ? json(*rho.rho_all) : json(nullptr);
      stats["rho_after_epoch_10"] = rho.rho_after_10 ? json(*rho.rho_after_10) : json(nullptr);
    }
    write_file(out / "train_stats.json", stats.dump(2) + "\n");
    json flags = model::to_json(cfg);
    flags["epochs"] = to.epochs;
    flags["batch_size"] = to.batch_size;
    flags["lr"] = to.schedule.peak;
    flags["warmup_steps"] = to.schedule.warmup_steps;
    flags["curve_topk"] = to.curve_topk;
    flags["merges"] = merges;
    flags["split"] = a.split;
    write_manifest(out / "manifest.train.json",
                   {"train", flags, inputs,
                    {(out / "model.ckpt").string(), (out / "curve.csv").string(), (out / "bpe.model").string(),
                     (out / "train_stats.json").string()},
                    hash_files(inputs), cfg.seed});
  }

  // --- eval ----------------------------------------------------------------

  struct EvalArgs {
    std::vector<std::string> ckpts;
    std::string test;
    std::string split;
    std::string k = "1,5,25";
    std::string out;
    std::size_t pointer_beam = 0;
    double length_alpha = 0.0;
  };

  void add_eval(CLI::App& app) {
    auto* sub = app.add_subcommand("eval", "Repair accuracy of checkpoints on test pairs");
    auto a = std::make_shared<EvalArgs>();
    sub->add_option("--ckpt", a->ckpts, "Checkpoint (repeatable; one CSV row each)")->required();
    sub->add_option("--test", a->test, "Test JSONL");
    sub->add_option("--split", a->split, "Split directory (its test.jsonl is used)");
    sub->add_option("--k", a->k, "Comma-separated top-k list")->capture_default_str();
    sub->add_option("--pointer-beam", a->pointer_beam, "Pointer pairs for edit variants (0 = max k)");
    sub->add_option("--length-alpha", a->length_alpha, "Beam length-normalisation exponent (0 = off)");
    sub->add_option("--out", a->out, "Results CSV")->required();
    sub->callback([=, this] { action_ = [=, this] { eval(*a); }; });
  }

  void eval(const EvalArgs& a) {
    auto cfg_json = load_config(g_.config);
    const auto ks = parse_k_list(a.k);
    std::string test_path = a.test;
    if (test_path.empty()) {
      if (a.split.empty()) throw UsageError("eval needs --test or --split");
      require_dir(a.split, "--split");
      test_path = (fs::path(a.split) / "test.jsonl").string();
    }
    require_file(test_path, "--test");
    for (const auto& c : a.ckpts) require_file(c, "--ckpt");
    auto pairs = corpus::read_corpus(test_path);

    std::ostringstream csv;
    csv << "variant,checkpoint,n,rejected,token_acc,full_seq_acc";
    for (auto k : ks) csv << ",top" << k << "_acc";
    csv << ",new_vocab_eligible";
    for (auto k : ks) csv << ",new_vocab_top" << k;
    csv << '\n';
    for (const auto& path : a.ckpts) {
      auto ck = model::load_checkpoint_file<float>(path);
      model::EncodeStats st;
      auto samples = model::make_samples(pairs, ck.bpe, ck.model.vocab(), ck.model.config(), &st);
      model::EvalOptions eo;
      eo.k_list = ks;
      eo.pointer_beam = a.pointer_beam;
      eo.length_alpha = a.length_alpha;
      eo.jobs = g_.jobs;
      auto r = model::evaluate(ck.model, samples, ck.bpe, eo);
      csv << model::to_string(ck.model.config().variant) << ',' << path << ',' << r.n << ',' << st.rejected_overlength
          << ',' << fmt(r.token_acc) << ',' << fmt(r.full_seq_acc);
      for (auto k : ks) csv << ',' << fmt(r.topk_acc[k]);
      csv << ',' << (r.new_vocab.empty() ? 0 : r.new_vocab.begin()->second.eligible);
      for (auto k : ks) csv << ',' << fmt(r.new_vocab[k].value());
      csv << '\n';
      log("eval " + path + ": n=" + std::to_string(r.n) + " full_seq_acc " + fmt(r.full_seq_acc));
    }
    write_file(a.out, csv.str());
    std::vector<std::string> inputs = a.ckpts;
    inputs.push_back(test_path);
    write_manifest(a.out + ".manifest.json",
                   {"eval", {{"ckpt", a.ckpts}, {"test", test_path}, {"k", a.k}, {"pointer_beam", a.pointer_beam},
                             {"length_alpha", a.length_alpha}},
                    inputs, {a.out}, hash_files(inputs), resolve_seed(g_, cfg_json)});
  }

  // --- decode --------------------------------------------------------------

  void add_decode(CLI::App& app) {
    auto* sub = app.add_subcommand("decode", "Propose patches for one buggy line");
    auto ckpt = std::make_shared<std::string>();
    auto line = std::make_shared<std::string>();
    auto file = std::make_shared<std::string>();
    auto line_number = std::make_shared<std::size_t>(0);
    auto beam = std::make_shared<std::size_t>(5);
    auto pointer_beam = std::make_shared<std::size_t>(0);
    auto alpha = std::make_shared<double>(0.0);
    auto greedy = std::make_shared<bool>(false);
    sub->add_option("--ckpt", *ckpt, "Checkpoint")->required();
    sub->add_option("--line", *line, "Buggy line");
    sub->add_option("--file", *file, "Source file providing context");
    sub->add_option("--line-number", *line_number, "1-based buggy line in --file");
    sub->add_option("--beam", *beam, "Beam width")->capture_default_str();
    sub->add_option("--pointer-beam", *pointer_beam, "Pointer pairs for edit variants (0 = beam width)");
    sub->add_option("--length-alpha", *alpha, "Length-normalisation exponent");
    sub->add_flag("--greedy", *greedy, "Greedy decoding instead of beam search");
    sub->callback([=, this] {
      action_ = [=, this] {
        require_file(*ckpt, "--ckpt");
        corpus::BugFixPair pair;
        if (!file->empty()) {
          require_file(*file, "--file");
          pair.file_before = read_file(*file);
          auto lines = text::split_lines(pair.file_before);
          if (*line_number == 0 || *line_number > lines.size()) throw UsageError("--line-number out of range");
          pair.line_number = *line_number;
          pair.bug_line = lines[*line_number - 1];
        } else {
          if (line->empty()) throw UsageError("decode needs --line or --file with --line-number");
          pair.bug_line = *line;
          pair.file_before = *line + "\n";
          pair.line_number = 1;
        }
        auto ck = model::load_checkpoint_file<float>(*ckpt);
        auto sample = model::make_sample(pair, ck.bpe, ck.model.vocab(), ck.model.config());
        if (!sample) throw InputError("line exceeds the model's length limits");
        model::Decoder<float> dec(ck.model);
        std::vector<model::Hypothesis> hyps;
        if (*greedy) hyps.push_back(dec.greedy(*sample));
        else hyps = dec.beam_search(*sample, {*beam, *pointer_beam == 0 ? *beam : *pointer_beam, *alpha});
        for (std::size_t i = 0; i < hyps.size() && i < std::max<std::size_t>(*beam, 1); ++i) {
          const auto& h = hyps[i];
          auto toks = ck.bpe.decode_words(h.symbols);
          json j{{"rank", i + 1}, {"score", h.score}, {"log_prob", h.log_prob}, {"tokens", toks},
                 {"patch", text::join(toks, " ")}, {"finished", h.finished}};
          if (h.pointers) {
            j["insert_ptr"] = h.pointers->insert;
            j["delete_ptr"] = h.pointers->del;
          }
          out_ << j.dump() << "\n";
        }
      };
    });
  }
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return Dispatcher(out, err).run(argc, argv);
}

}  // namespace patchlens::cli
