#pragma once

// Command implementations behind the CLI: data generation, clustering,
// training, prediction, evaluation, embedding export and the sweep runner.
// Everything works on plain files (TSV/JSON/CSV) and is deterministic given
// the configured seeds: a rerun with the same config writes identical bytes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/checkpoint.hpp"
#include "xlgen/cluster.hpp"
#include "xlgen/corpus.hpp"
#include "xlgen/decode.hpp"
#include "xlgen/eval.hpp"
#include "xlgen/model.hpp"
#include "xlgen/train.hpp"

namespace xlgen::pipeline {

namespace fs = std::filesystem;

inline std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_hash_hex: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

inline void ensure_output_dir(const std::string& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw std::runtime_error(dir + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw std::runtime_error("output directory " + dir + " is not empty (use --force)");
  } else {
    fs::create_directories(dir);
  }
}

// ---------------------------------------------------------------------------
// Strategy spec parsing
//   greedy | beam:W | temp:T | topk:K | topp:P | toppk:P,K |
//   sample:temp=T,topk=K,topp=P
// ---------------------------------------------------------------------------

inline DecodeStrategy parse_strategy(const std::string& spec, int max_len, std::uint64_t seed) {
  DecodeStrategy s;
  s.max_len = max_len;
  s.seed = seed;
  const auto colon = spec.find(':');
  const std::string head = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);

  if (head == "greedy") {
    s.kind = DecodeKind::greedy;
  } else if (head == "beam") {
    s.kind = DecodeKind::beam;
    s.width = rest.empty() ? 5 : std::stoi(rest);
  } else if (head == "temp") {
    s.kind = DecodeKind::sample;
    s.temperature = std::stod(rest);
  } else if (head == "topk") {
    s.kind = DecodeKind::sample;
    s.top_k = std::stoi(rest);
  } else if (head == "topp") {
    s.kind = DecodeKind::sample;
    s.top_p = std::stod(rest);
  } else if (head == "toppk") {
    s.kind = DecodeKind::sample;
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("toppk needs P,K");
    s.top_p = std::stod(rest.substr(0, comma));
    s.top_k = std::stoi(rest.substr(comma + 1));
  } else if (head == "sample") {
    s.kind = DecodeKind::sample;
    for (const auto& part : text::split_on(rest, ',')) {
      const auto eq = part.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("bad sample parameter: " + part);
      const std::string key = part.substr(0, eq);
      const std::string val = part.substr(eq + 1);
      if (key == "temp") s.temperature = std::stod(val);
      else if (key == "topk") s.top_k = std::stoi(val);
      else if (key == "topp") s.top_p = std::stod(val);
      else throw std::invalid_argument("unknown sample parameter: " + key);
    }
  } else {
    throw std::invalid_argument("unknown strategy: " + spec);
  }
  s.validate();
  return s;
}

// The ensemble triple used for PU runs: beam(5), top-P+K, temperature 0.8.
inline std::vector<DecodeStrategy> pu_default_ensemble(int max_len, std::uint64_t seed) {
  return {parse_strategy("beam:5", max_len, seed),
          parse_strategy("toppk:0.9,50", max_len, seed),
          parse_strategy("temp:0.8", max_len, seed)};
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataConfig {
  SynthConfig synth;
  std::string out_dir = "data";
  bool force = false;
};

inline void cmd_gen_data(const GenDataConfig& cfg) {
  ensure_output_dir(cfg.out_dir, cfg.force);
  const auto data = synth_generate(cfg.synth);
  save_dataset(data.train, (fs::path(cfg.out_dir) / "train.tsv").string());
  save_dataset(data.validation, (fs::path(cfg.out_dir) / "valid.tsv").string());
  save_dataset(data.test, (fs::path(cfg.out_dir) / "test.tsv").string());
  nlohmann::json planted;
  planted["schema_version"] = 1;
  planted["clusters"] = data.planted_clusters;
  std::ofstream out(fs::path(cfg.out_dir) / "planted.json");
  out << planted.dump(2) << '\n';
  if (!out) throw std::runtime_error("cmd_gen_data: write failed");

  // validate what was written
  load_dataset((fs::path(cfg.out_dir) / "train.tsv").string(), Split::train);
  load_dataset((fs::path(cfg.out_dir) / "test.tsv").string(), Split::test);
}

struct DataStats {
  std::size_t n_train = 0, n_valid = 0, n_test = 0;
  std::size_t n_train_labels = 0;
  std::size_t zero_bucket = 0, one_bucket = 0;
};

inline DataStats data_stats(const std::string& data_dir) {
  const auto train = load_dataset((fs::path(data_dir) / "train.tsv").string(), Split::train);
  const auto valid = load_dataset((fs::path(data_dir) / "valid.tsv").string(), Split::validation);
  const auto test = load_dataset((fs::path(data_dir) / "test.tsv").string(), Split::test);
  const auto stats = build_label_stats(train);
  std::set<std::string> test_gold;
  for (const auto& d : test.documents)
    for (const auto& l : d.gold_labels) test_gold.insert(l);
  const auto buckets = tail_buckets(stats, test_gold);
  DataStats out;
  out.n_train = train.documents.size();
  out.n_valid = valid.documents.size();
  out.n_test = test.documents.size();
  out.n_train_labels = stats.freq.size();
  out.zero_bucket = buckets.zero.size();
  out.one_bucket = buckets.one.size();
  return out;
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

struct ClusterCmdConfig {
  std::string data_dir = "data";
  std::string out_path = "cluster.json";
  int k = 8;
  std::uint64_t seed = 0;
  KMeansOptions kmeans;
  std::string features = "tfidf";  // tfidf | encoder
  std::string checkpoint;          // required for encoder features
  double pu_rate = -1.0;           // optional train-side label deficit
  std::uint64_t pu_seed = 0;
};

// Document vectors from the toy model: mean-pooled encoder states over the
// <multilabel>-prefixed text, mirroring the pretrained-encoder variant.
inline Mat encoder_doc_vectors(const Seq2SeqModel& model, const Dataset& ds) {
  Mat out(ds.documents.size(), static_cast<std::size_t>(model.cfg.d_model));
  Activations acts;
  for (std::size_t d = 0; d < ds.documents.size(); ++d) {
    std::vector<int> in{Vocab::multilabel};
    const auto ids = model.vocab.encode(ds.documents[d].text);
    in.insert(in.end(), ids.begin(), ids.end());
    model.encode(in, acts);
    const auto pooled = mean_pool(acts.enc_out, acts.enc_mask);
    for (std::size_t j = 0; j < pooled.size(); ++j) out(d, j) = pooled[j];
  }
  return out;
}

inline ClusterModel fit_clusters(const Dataset& train, const ClusterCmdConfig& cfg) {
  Mat doc_vectors;
  if (cfg.features == "tfidf") {
    doc_vectors = tfidf_vectors(train.documents).vectors;
  } else if (cfg.features == "encoder") {
    if (cfg.checkpoint.empty())
      throw std::invalid_argument("cluster: encoder features need --checkpoint");
    const auto model = load_checkpoint(cfg.checkpoint);
    doc_vectors = encoder_doc_vectors(model, train);
  } else {
    throw std::invalid_argument("cluster: unknown feature source " + cfg.features);
  }
  const auto lf = label_features(train, doc_vectors);
  return kmeans_fit(lf, cfg.k, cfg.seed, cfg.kmeans);
}

inline void cmd_cluster(const ClusterCmdConfig& cfg) {
  auto train = load_dataset((fs::path(cfg.data_dir) / "train.tsv").string(), Split::train);
  if (cfg.pu_rate >= 0.0) train = apply_pu_deficit(train, PUConfig{cfg.pu_rate, cfg.pu_seed});
  const auto cm = fit_clusters(train, cfg);
  save_cluster_model(cm, cfg.out_path);
  load_cluster_model(cfg.out_path);  // schema validation
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmdConfig {
  std::string data_dir = "data";
  std::string cluster_path;  // required for bcl/mcg
  std::string out_model = "model.json";
  std::string out_log = "loss_log.csv";
  ModelConfig model;
  TrainConfig train;
  double pu_rate = -1.0;  // optional train-side label deficit
  std::uint64_t pu_seed = 0;
};

inline void cmd_train(const TrainCmdConfig& cfg) {
  auto train = load_dataset((fs::path(cfg.data_dir) / "train.tsv").string(), Split::train);
  if (cfg.pu_rate >= 0.0) train = apply_pu_deficit(train, PUConfig{cfg.pu_rate, cfg.pu_seed});

  std::optional<ClusterModel> cm;
  if (cfg.model.mode != Mode::base) {
    if (cfg.cluster_path.empty())
      throw std::invalid_argument("train: bcl/mcg modes require --cluster");
    cm = load_cluster_model(cfg.cluster_path);
  }

  std::vector<EpochLog> log;
  auto model = train_model(train, cm ? &*cm : nullptr, cfg.model, cfg.train, &log);
  save_checkpoint(model, cfg.out_model);
  save_loss_log(log, cfg.out_log);
  load_checkpoint(cfg.out_model);  // shape validation on what was written
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictCmdConfig {
  std::string data_dir = "data";
  std::string split = "test";
  std::string model_path = "model.json";
  std::string out_path = "predictions.tsv";
  std::string strategy = "beam:5";
  std::uint64_t seed = 0;
  bool restrict_to_known = false;
  bool oracle_clusters = false;
  std::string cluster_path;  // needed for --oracle-clusters
  std::string ensemble;      // "" | "pu-default"
  std::string join = "union";
};

inline Dataset load_split(const std::string& data_dir, const std::string& split) {
  if (split == "train")
    return load_dataset((fs::path(data_dir) / "train.tsv").string(), Split::train);
  if (split == "valid")
    return load_dataset((fs::path(data_dir) / "valid.tsv").string(), Split::validation);
  if (split == "test") return load_dataset((fs::path(data_dir) / "test.tsv").string(), Split::test);
  throw std::invalid_argument("unknown split: " + split);
}

inline std::vector<PredictionSet> run_predictions(const Seq2SeqModel& model, const Dataset& docs,
                                                  const PredictCmdConfig& cfg,
                                                  const std::set<std::string>* known_labels,
                                                  const ClusterModel* cm) {
  std::vector<DecodeStrategy> strategies;
  if (cfg.ensemble.empty()) {
    strategies.push_back(parse_strategy(cfg.strategy, model.cfg.max_output_len, cfg.seed));
  } else if (cfg.ensemble == "pu-default") {
    strategies = pu_default_ensemble(model.cfg.max_output_len, cfg.seed);
  } else {
    throw std::invalid_argument("unknown ensemble: " + cfg.ensemble);
  }
  const JoinMode join = parse_join_mode(cfg.join);

  std::vector<PredictionSet> out;
  out.reserve(docs.documents.size());
  for (const auto& doc : docs.documents) {
    PredictOptions opts;
    opts.restrict_to_known = cfg.restrict_to_known;
    opts.known_labels = known_labels;
    std::set<int> oracle;
    if (cfg.oracle_clusters) {
      if (!cm) throw std::invalid_argument("predict: --oracle-clusters needs --cluster");
      oracle = assign_doc_clusters(doc.gold_labels, *cm).clusters;
      opts.oracle_clusters = &oracle;
    }

    std::vector<PredictionSet> per_strategy;
    for (auto s : strategies) {
      s.seed = mix_seed(s.seed, fnv1a(doc.id));  // per-document sampling stream
      per_strategy.push_back(predict(model, doc, s, opts));
    }
    if (per_strategy.size() == 1) {
      out.push_back(std::move(per_strategy[0]));
    } else {
      out.push_back(ensemble_join(per_strategy, join));
    }
  }
  return out;
}

inline void cmd_predict(const PredictCmdConfig& cfg) {
  const auto model = load_checkpoint(cfg.model_path);
  const auto docs = load_split(cfg.data_dir, cfg.split);

  std::set<std::string> known;
  if (cfg.restrict_to_known) {
    const auto train = load_dataset((fs::path(cfg.data_dir) / "train.tsv").string(), Split::train);
    for (const auto& d : train.documents)
      for (const auto& l : d.gold_labels) known.insert(l);
  }
  std::optional<ClusterModel> cm;
  if (!cfg.cluster_path.empty()) cm = load_cluster_model(cfg.cluster_path);

  const auto preds = run_predictions(model, docs, cfg, cfg.restrict_to_known ? &known : nullptr,
                                     cm ? &*cm : nullptr);
  save_predictions(preds, cfg.out_path, file_hash_hex(cfg.model_path));
  load_predictions(cfg.out_path);  // parse validation
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCmdConfig {
  std::string data_dir = "data";
  std::string split = "test";
  std::string pred_path = "predictions.tsv";
  std::string out_report = "report.json";
  std::string out_table = "report.tsv";
  double pu_rate = -1.0;  // deficit applied to the train stats view only
  std::uint64_t pu_seed = 0;
  std::map<std::string, std::string> metadata;
};

inline MetricsReport cmd_eval(const EvalCmdConfig& cfg) {
  const auto gold_ds = load_split(cfg.data_dir, cfg.split);
  auto train = load_dataset((fs::path(cfg.data_dir) / "train.tsv").string(), Split::train);
  if (cfg.pu_rate >= 0.0) train = apply_pu_deficit(train, PUConfig{cfg.pu_rate, cfg.pu_seed});
  const auto stats = build_label_stats(train);

  GoldMap gold;
  for (const auto& d : gold_ds.documents) gold[d.id] = d.gold_labels;
  PredMap pred;
  std::string strategy = "unknown";
  for (const auto& p : load_predictions(cfg.pred_path)) {
    pred[p.doc_id] = p.labels;
    strategy = p.strategy;
  }

  auto metadata = cfg.metadata;
  metadata["strategy"] = strategy;
  if (cfg.pu_rate >= 0.0) metadata["pu_rate_stats_view"] = std::to_string(cfg.pu_rate);
  const auto report = evaluate(gold, pred, stats, {1, 3, 5}, std::move(metadata));

  {
    std::ofstream out(cfg.out_report);
    if (!out) throw std::runtime_error("cmd_eval: cannot open " + cfg.out_report);
    out << report_to_json(report).dump(2) << '\n';
  }
  {
    RunRow row;
    row.name = strategy;
    row.metrics["micro_f1"] = report.micro;
    row.metrics["macro_f1"] = report.macro;
    for (const auto& [k, v] : report.f_at_k) row.metrics["f@" + std::to_string(k)] = v;
    if (report.tail.zero) row.metrics["tail0_macro"] = *report.tail.zero;
    if (report.tail.one) row.metrics["tail1_macro"] = *report.tail.one;
    std::ofstream out(cfg.out_table);
    if (!out) throw std::runtime_error("cmd_eval: cannot open " + cfg.out_table);
    out << table_to_tsv(compare_runs({row}));
  }
  {
    std::ifstream check(cfg.out_report);
    nlohmann::json j;
    check >> j;
    if (j.at("schema_version").get<int>() != 1)
      throw std::runtime_error("cmd_eval: schema validation failed");
  }
  return report;
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

struct ExportCmdConfig {
  std::string model_path = "model.json";
  std::string data_dir = "data";  // labels default to the train label set
  std::vector<std::string> labels;
  std::string out_path = "embeddings.tsv";
};

inline std::size_t cmd_export_embeddings(const ExportCmdConfig& cfg) {
  const auto model = load_checkpoint(cfg.model_path);
  std::vector<std::string> labels = cfg.labels;
  if (labels.empty()) {
    const auto train = load_dataset((fs::path(cfg.data_dir) / "train.tsv").string(), Split::train);
    std::set<std::string> all;
    for (const auto& d : train.documents)
      for (const auto& l : d.gold_labels) all.insert(l);
    labels.assign(all.begin(), all.end());
  }

  std::ofstream out(cfg.out_path);
  if (!out) throw std::runtime_error("cmd_export_embeddings: cannot open " + cfg.out_path);
  std::size_t written = 0;
  char buf[32];
  for (const auto& label : labels) {
    bool known = true;
    for (const auto& w : text::label_words(label))
      known = known && model.vocab.encode_token(w) != Vocab::unk;
    if (!known) {
      std::cerr << "export-embeddings: skipping out-of-vocab label '" << label << "'\n";
      continue;
    }
    const auto emb = label_embedding(model, label);
    out << label;
    for (double v : emb) {
      std::snprintf(buf, sizeof(buf), "%.12g", v);
      out << '\t' << buf;
    }
    out << '\n';
    ++written;
  }
  if (!out) throw std::runtime_error("cmd_export_embeddings: write failed");
  return written;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepConfig {
  SynthConfig synth;
  std::vector<std::string> modes{"base", "bcl", "mcg"};
  std::vector<int> k_list{4};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> orders{"frequency"};
  std::vector<std::string> strategies{"greedy"};
  std::vector<double> pu_rates{};  // empty: no PU deficit
  ModelConfig model;
  TrainConfig train;
  std::string out_dir = "sweep";
  bool force = false;
  bool fresh_data_per_seed = true;
};

struct SweepRow {
  std::string mode;
  int k = 0;
  std::uint64_t seed = 0;
  std::string order;
  std::string strategy;
  double pu_rate = -1.0;
  double micro = 0.0, macro = 0.0;
  std::optional<double> tail_zero, tail_one;
  std::optional<double> oracle_micro;   // mcg only
  std::optional<double> cluster_micro;  // mcg only: cluster prediction quality
};

struct SweepResult {
  std::vector<SweepRow> rows;
};

namespace detail {

inline GoldMap gold_of(const Dataset& ds) {
  GoldMap gold;
  for (const auto& d : ds.documents) gold[d.id] = d.gold_labels;
  return gold;
}

inline PredMap pred_of(const std::vector<PredictionSet>& preds) {
  PredMap pred;
  for (const auto& p : preds) pred[p.doc_id] = p.labels;
  return pred;
}

// Micro-F1 of stage-1 cluster-id prediction against gold doc clusters.
inline double cluster_prediction_micro(const Seq2SeqModel& model, const Dataset& test,
                                       const ClusterModel& cm) {
  GoldMap gold;
  PredMap pred;
  Activations acts;
  for (const auto& doc : test.documents) {
    std::set<std::string> gold_tokens;
    for (int c : assign_doc_clusters(doc.gold_labels, cm).clusters)
      gold_tokens.insert(cluster_token(c));
    gold[doc.id] = gold_tokens;

    std::vector<int> in{Vocab::multicluster};
    const auto ids = model.vocab.encode(doc.text);
    in.insert(in.end(), ids.begin(), ids.end());
    std::vector<int> truncated(in.begin(),
                               in.begin() + std::min<std::size_t>(in.size(),
                                   static_cast<std::size_t>(model.cfg.max_input_len)));
    Activations enc_acts;
    model.encode(truncated, enc_acts);
    const auto out =
        greedy_decode(make_step_fn(model, enc_acts), Vocab::eos, model.cfg.max_output_len);
    std::vector<std::string> pred_tokens;
    std::set<int> seen;
    for (int id : out)
      if (auto c = model.vocab.cluster_of_token(id))
        if (seen.insert(*c).second) pred_tokens.push_back(cluster_token(*c));
    pred[doc.id] = pred_tokens;
  }
  return micro_f1(confusion(gold, pred));
}

}  // namespace detail

inline SweepResult cmd_sweep(const SweepConfig& cfg) {
  ensure_output_dir(cfg.out_dir, cfg.force);
  SweepResult result;

  std::vector<double> pu_rates = cfg.pu_rates;
  if (pu_rates.empty()) pu_rates.push_back(-1.0);

  for (std::uint64_t seed : cfg.seeds) {
    SynthConfig synth = cfg.synth;
    if (cfg.fresh_data_per_seed) synth.seed = mix_seed(cfg.synth.seed, seed);
    const auto data = synth_generate(synth);

    for (double pu_rate : pu_rates) {
      Dataset train = data.train;
      if (pu_rate >= 0.0) train = apply_pu_deficit(train, PUConfig{pu_rate, seed});

      for (const auto& mode_name_str : cfg.modes) {
        const Mode mode = parse_mode(mode_name_str);
        for (int k : cfg.k_list) {
          // base mode ignores k; run it once per (seed, pu) only
          if (mode == Mode::base && k != cfg.k_list.front()) continue;

          std::optional<ClusterModel> cm;
          if (mode != Mode::base) {
            ClusterCmdConfig ccfg;
            ccfg.k = k;
            ccfg.seed = seed;
            cm = fit_clusters(train, ccfg);
          }

          for (const auto& order : cfg.orders) {
            ModelConfig mcfg = cfg.model;
            mcfg.mode = mode;
            mcfg.k_clusters = cm ? cm->k : 0;
            TrainConfig tcfg = cfg.train;
            tcfg.seed = mix_seed(seed, fnv1a(mode_name_str + order));
            const auto parsed_order = parse_label_order(order);
            if (!parsed_order) throw std::invalid_argument("unknown label order: " + order);
            tcfg.order_mode = *parsed_order;

            const auto model = train_model(train, cm ? &*cm : nullptr, mcfg, tcfg);
            const auto stats = build_label_stats(train);
            const auto gold = detail::gold_of(data.test);

            for (const auto& strategy : cfg.strategies) {
              PredictCmdConfig pcfg;
              pcfg.seed = seed;
              if (strategy == "ensemble-union" || strategy == "ensemble-intersection") {
                pcfg.ensemble = "pu-default";
                pcfg.join = strategy.substr(9);
              } else {
                pcfg.strategy = strategy;
              }
              const auto preds =
                  run_predictions(model, data.test, pcfg, nullptr, cm ? &*cm : nullptr);
              const auto report = evaluate(gold, detail::pred_of(preds), stats);

              SweepRow row;
              row.mode = mode_name_str;
              row.k = cm ? cm->k : 0;
              row.seed = seed;
              row.order = order;
              row.strategy = strategy;
              row.pu_rate = pu_rate;
              row.micro = report.micro;
              row.macro = report.macro;
              row.tail_zero = report.tail.zero;
              row.tail_one = report.tail.one;

              if (mode == Mode::mcg) {
                PredictCmdConfig ocfg = pcfg;
                ocfg.oracle_clusters = true;
                const auto oracle_preds =
                    run_predictions(model, data.test, ocfg, nullptr, &*cm);
                row.oracle_micro =
                    evaluate(gold, detail::pred_of(oracle_preds), stats).micro;
                row.cluster_micro = detail::cluster_prediction_micro(model, data.test, *cm);
              }
              result.rows.push_back(std::move(row));
            }
          }
        }
      }
    }
  }

  // results JSON
  nlohmann::json j;
  j["schema_version"] = 1;
  auto rows = nlohmann::json::array();
  for (const auto& r : result.rows) {
    nlohmann::json e;
    e["mode"] = r.mode;
    e["k"] = r.k;
    e["seed"] = r.seed;
    e["order"] = r.order;
    e["strategy"] = r.strategy;
    e["pu_rate"] = r.pu_rate;
    e["micro_f1"] = r.micro;
    e["macro_f1"] = r.macro;
    e["tail0_macro"] = r.tail_zero ? nlohmann::json(*r.tail_zero) : nlohmann::json();
    e["tail1_macro"] = r.tail_one ? nlohmann::json(*r.tail_one) : nlohmann::json();
    e["oracle_micro_f1"] = r.oracle_micro ? nlohmann::json(*r.oracle_micro) : nlohmann::json();
    e["cluster_micro_f1"] = r.cluster_micro ? nlohmann::json(*r.cluster_micro) : nlohmann::json();
    rows.push_back(std::move(e));
  }
  j["rows"] = std::move(rows);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "sweep_results.json");
    if (!out) throw std::runtime_error("cmd_sweep: cannot write results");
    out << j.dump(2) << '\n';
  }

  // comparison table with per-mode means
  std::vector<RunRow> table_rows;
  for (const auto& r : result.rows) {
    RunRow tr;
    std::ostringstream name;
    name << r.mode << "/k" << r.k << "/s" << r.seed << "/" << r.order << "/" << r.strategy;
    if (r.pu_rate >= 0.0) name << "/pu" << r.pu_rate;
    tr.name = name.str();
    tr.group = r.mode;
    tr.metrics["micro_f1"] = r.micro;
    tr.metrics["macro_f1"] = r.macro;
    if (r.tail_zero) tr.metrics["tail0_macro"] = *r.tail_zero;
    if (r.tail_one) tr.metrics["tail1_macro"] = *r.tail_one;
    if (r.oracle_micro) tr.metrics["oracle_micro"] = *r.oracle_micro;
    if (r.cluster_micro) tr.metrics["cluster_micro"] = *r.cluster_micro;
    table_rows.push_back(std::move(tr));
  }
  const auto table = compare_runs(table_rows);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "sweep_table.tsv");
    out << table_to_tsv(table);
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "sweep_table.txt");
    out << table_to_text(table);
  }

  // schema validation of the artifact just written
  {
    std::ifstream check(fs::path(cfg.out_dir) / "sweep_results.json");
    nlohmann::json jj;
    check >> jj;
    if (!jj.at("rows").is_array() || jj.at("rows").size() != result.rows.size())
      throw std::runtime_error("cmd_sweep: result schema validation failed");
  }
  return result;
}

}  // namespace xlgen::pipeline
