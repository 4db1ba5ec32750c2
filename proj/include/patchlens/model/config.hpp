#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "patchlens/corpus.hpp"
#include "patchlens/text.hpp"

namespace patchlens::model {

enum class Variant { Baseline, Edit, BaselineContext, EditContext };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Edit: return "edit";
    case Variant::BaselineContext: return "baseline+context";
    case Variant::EditContext: return "edit+context";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "edit" || s == "edits") return Variant::Edit;
  if (s == "baseline+context" || s == "context") return Variant::BaselineContext;
  if (s == "edit+context" || s == "edits+context") return Variant::EditContext;
  throw Error("unknown model variant: " + std::string(s));
}

inline bool is_edit(Variant v) { return v == Variant::Edit || v == Variant::EditContext; }
inline bool uses_context(Variant v) { return v == Variant::BaselineContext || v == Variant::EditContext; }

struct ModelConfig {
  Variant variant = Variant::Baseline;
  int d_model = 128;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int ff_dim = 512;
  double dropout = 0.1;
  int max_src_len = 600;
  int max_tgt_len = 100;
  /// Context symbols admitted by the +context variants.
  int context_budget = 500;
  corpus::ContextMode context_mode = corpus::ContextMode::whole_file();
  double token_loss_weight = 1.0;
  double insert_loss_weight = 1.0;
  double delete_loss_weight = 1.0;
  /// Absolute bound applied to the learned context-attention bias.
  double bias_limit = 50.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0) throw Error("config: d_model and n_heads must be positive");
    if (d_model % n_heads != 0)
      throw Error("config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                  std::to_string(n_heads));
    if (n_enc_layers < 1 || n_dec_layers < 1) throw Error("config: need at least one layer per stack");
    if (ff_dim <= 0) throw Error("config: ff_dim must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("config: dropout must be in [0, 1)");
    if (max_src_len < 2 || max_tgt_len < 1) throw Error("config: max lengths too small");
    if (context_budget < 0) throw Error("config: context_budget must be >= 0");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"variant", to_string(c.variant)},
                        {"d_model", c.d_model},
                        {"n_heads", c.n_heads},
                        {"n_enc_layers", c.n_enc_layers},
                        {"n_dec_layers", c.n_dec_layers},
                        {"ff_dim", c.ff_dim},
                        {"dropout", c.dropout},
                        {"max_src_len", c.max_src_len},
                        {"max_tgt_len", c.max_tgt_len},
                        {"context_budget", c.context_budget},
                        {"context_mode", c.context_mode.name()},
                        {"token_loss_weight", c.token_loss_weight},
                        {"insert_loss_weight", c.insert_loss_weight},
                        {"delete_loss_weight", c.delete_loss_weight},
                        {"bias_limit", c.bias_limit},
                        {"seed", c.seed}};
}

/// Overlays the keys present in `j` onto `base`.
inline ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  if (j.contains("variant")) base.variant = parse_variant(j["variant"].get<std::string>());
  base.d_model = j.value("d_model", base.d_model);
  base.n_heads = j.value("n_heads", base.n_heads);
  base.n_enc_layers = j.value("n_enc_layers", base.n_enc_layers);
  base.n_dec_layers = j.value("n_dec_layers", base.n_dec_layers);
  base.ff_dim = j.value("ff_dim", base.ff_dim);
  base.dropout = j.value("dropout", base.dropout);
  base.max_src_len = j.value("max_src_len", base.max_src_len);
  base.max_tgt_len = j.value("max_tgt_len", base.max_tgt_len);
  base.context_budget = j.value("context_budget", base.context_budget);
  if (j.contains("context_mode")) base.context_mode = corpus::ContextMode::parse(j["context_mode"].get<std::string>());
  base.token_loss_weight = j.value("token_loss_weight", base.token_loss_weight);
  base.insert_loss_weight = j.value("insert_loss_weight", base.insert_loss_weight);
  base.delete_loss_weight = j.value("delete_loss_weight", base.delete_loss_weight);
  base.bias_limit = j.value("bias_limit", base.bias_limit);
  base.seed = j.value("seed", base.seed);
  return base;
}

}  // namespace patchlens::model
