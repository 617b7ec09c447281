#pragma once

// Versioned JSON checkpoint: config, vocabulary and flat parameter arrays.
// Loading rebuilds the module tree and validates every shape.

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/model.hpp"

namespace xlgen {

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {
      {"d_model", c.d_model},
      {"n_layers", c.n_layers},
      {"n_heads", c.n_heads},
      {"ff_dim", c.ff_dim},
      {"max_input_len", c.max_input_len},
      {"max_output_len", c.max_output_len},
      {"mode", mode_name(c.mode)},
      {"k_clusters", c.k_clusters},
      {"tie_embeddings", c.tie_embeddings},
      {"bcl_pooling", c.bcl_pooling == Pooling::mean ? "mean" : "max"},
      {"pos_invariant", c.pos_invariant},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_input_len = j.at("max_input_len").get<int>();
  c.max_output_len = j.at("max_output_len").get<int>();
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.k_clusters = j.at("k_clusters").get<int>();
  c.tie_embeddings = j.at("tie_embeddings").get<bool>();
  c.bcl_pooling = j.at("bcl_pooling").get<std::string>() == "max" ? Pooling::max : Pooling::mean;
  c.pos_invariant = j.at("pos_invariant").get<bool>();
  return c;
}

inline nlohmann::json checkpoint_to_json(Seq2SeqModel& model) {
  nlohmann::json j;
  j["format"] = "xlgen-checkpoint";
  j["version"] = 1;
  j["config"] = model_config_to_json(model.cfg);
  // words after the specials/cluster tokens; the rest is reconstructed
  const auto& toks = model.vocab.tokens();
  const std::size_t first_word =
      static_cast<std::size_t>(Vocab::first_cluster + model.vocab.k_clusters());
  j["vocab"] = {{"k_clusters", model.vocab.k_clusters()},
                {"words", std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(first_word),
                                                   toks.end())}};
  auto params = nlohmann::json::array();
  for (Param* p : model.params()) {
    params.push_back({{"name", p->name},
                      {"rows", p->w.rows()},
                      {"cols", p->w.cols()},
                      {"data", p->w.data()}});
  }
  j["params"] = std::move(params);
  return j;
}

inline Seq2SeqModel checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "xlgen-checkpoint")
    throw std::runtime_error("checkpoint: unrecognized format");
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported version");
  const ModelConfig cfg = model_config_from_json(j.at("config"));
  const auto& jv = j.at("vocab");
  Vocab vocab = Vocab::from_words(jv.at("words").get<std::vector<std::string>>(),
                                  jv.at("k_clusters").get<int>());
  Seq2SeqModel model(cfg, std::move(vocab), 0);
  auto ps = model.params();
  const auto& jp = j.at("params");
  if (jp.size() != ps.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& e = jp[i];
    if (e.at("name").get<std::string>() != ps[i]->name)
      throw std::runtime_error("checkpoint: parameter order mismatch at " + ps[i]->name);
    if (e.at("rows").get<std::size_t>() != ps[i]->w.rows() ||
        e.at("cols").get<std::size_t>() != ps[i]->w.cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + ps[i]->name);
    auto data = e.at("data").get<std::vector<double>>();
    if (data.size() != ps[i]->w.size())
      throw std::runtime_error("checkpoint: data size mismatch for " + ps[i]->name);
    ps[i]->w.data() = std::move(data);
  }
  return model;
}

inline void save_checkpoint(Seq2SeqModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << checkpoint_to_json(model).dump() << '\n';
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Seq2SeqModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace xlgen
