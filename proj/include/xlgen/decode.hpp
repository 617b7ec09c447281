#pragma once

// Generation strategies (greedy, length-complete beam, top-k/top-p/temperature
// sampling), label-sequence parsing, the two-stage MCG inference path and
// ensemble joins. Decoders run over a generic next-token callback so they are
// testable against arbitrary toy distributions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlgen/cluster.hpp"
#include "xlgen/model.hpp"
#include "xlgen/rng.hpp"
#include "xlgen/train.hpp"

namespace xlgen {

enum class DecodeKind { greedy, beam, sample };

struct DecodeStrategy {
  DecodeKind kind = DecodeKind::beam;
  int width = 5;  // beam only; paper default
  double temperature = 1.0;
  std::optional<int> top_k;
  std::optional<double> top_p;
  int max_len = 32;
  std::uint64_t seed = 0;  // sampling only

  void validate() const {
    if (kind == DecodeKind::beam && width < 1)
      throw std::invalid_argument("DecodeStrategy: beam width must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("DecodeStrategy: temperature must be > 0");
    if (top_k && *top_k < 1) throw std::invalid_argument("DecodeStrategy: top_k must be >= 1");
    if (top_p && !(*top_p > 0.0 && *top_p <= 1.0))
      throw std::invalid_argument("DecodeStrategy: top_p must be in (0,1]");
    if (max_len < 1) throw std::invalid_argument("DecodeStrategy: max_len must be >= 1");
  }

  std::string tag() const {
    switch (kind) {
      case DecodeKind::greedy: return "greedy";
      case DecodeKind::beam: return "beam:" + std::to_string(width);
      case DecodeKind::sample: {
        std::string t = "sample:temp=" + format_num(temperature);
        if (top_k) t += ",topk=" + std::to_string(*top_k);
        if (top_p) t += ",topp=" + format_num(*top_p);
        return t;
      }
    }
    return "?";
  }

 private:
  static std::string format_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
  }
};

// Next-token logits given the tokens generated so far.
using StepFn = std::function<std::vector<double>(const std::vector<int>&)>;

namespace detail {

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : logits) denom += std::exp(v - mx);
  const double lse = mx + std::log(denom);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace detail

// Argmax each step; ties resolve to the lowest token id. The terminating
// <eos> is not part of the returned sequence.
inline std::vector<int> greedy_decode(const StepFn& step, int eos_id, int max_len) {
  std::vector<int> out;
  for (int t = 0; t < max_len; ++t) {
    const auto logits = step(out);
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    if (static_cast<int>(best) == eos_id) break;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

struct BeamHypothesis {
  std::vector<int> tokens;  // content tokens, excluding <eos>
  double log_prob = 0.0;    // includes the <eos> step when eos-terminated
};

// Length-complete beam search over total sequence log-probability. Finished
// hypotheses (eos-terminated or at max_len) compete by raw log-prob with no
// length normalization; exact ties break lexicographically on token ids.
inline std::vector<BeamHypothesis> beam_decode(const StepFn& step, int width, int eos_id,
                                               int max_len) {
  if (width < 1) throw std::invalid_argument("beam_decode: width must be >= 1");

  auto better = [](const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };

  std::vector<BeamHypothesis> beams{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;

  for (int t = 0; t < max_len && !beams.empty(); ++t) {
    std::vector<BeamHypothesis> candidates;
    std::vector<bool> cand_eos;
    for (const auto& beam : beams) {
      const auto lp = detail::log_softmax(step(beam.tokens));
      for (std::size_t v = 0; v < lp.size(); ++v) {
        BeamHypothesis h;
        h.tokens = beam.tokens;
        h.log_prob = beam.log_prob + lp[v];
        const bool is_eos = static_cast<int>(v) == eos_id;
        if (!is_eos) h.tokens.push_back(static_cast<int>(v));
        candidates.push_back(std::move(h));
        cand_eos.push_back(is_eos);
      }
    }
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return better(candidates[a], candidates[b]);
    });

    beams.clear();
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(width), order.size());
    for (std::size_t i = 0; i < keep; ++i) {
      auto& h = candidates[order[i]];
      if (cand_eos[order[i]])
        finished.push_back(std::move(h));
      else if (t + 1 == max_len)
        finished.push_back(std::move(h));  // complete by length
      else
        beams.push_back(std::move(h));
    }
  }

  std::sort(finished.begin(), finished.end(), better);
  if (finished.empty()) throw std::logic_error("beam_decode: no finished hypothesis");
  return finished;
}

// Temperature scaling, then top-k truncation, then top-p nucleus truncation
// (P+K applies both), renormalize, draw from the seeded generator.
inline std::vector<int> sample_decode(const StepFn& step, const DecodeStrategy& strategy,
                                      int eos_id) {
  strategy.validate();
  Rng rng(strategy.seed);
  std::vector<int> out;
  for (int t = 0; t < strategy.max_len; ++t) {
    auto logits = step(out);
    for (double& v : logits) v /= strategy.temperature;
    const auto lp = detail::log_softmax(logits);

    std::vector<std::size_t> order(lp.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return lp[a] != lp[b] ? lp[a] > lp[b] : a < b;
    });

    std::size_t support = order.size();
    if (strategy.top_k) support = std::min<std::size_t>(support, static_cast<std::size_t>(*strategy.top_k));
    if (strategy.top_p) {
      double cum = 0.0;
      std::size_t prefix = 0;
      while (prefix < support) {
        cum += std::exp(lp[order[prefix]]);
        ++prefix;
        if (cum >= *strategy.top_p - 1e-12) break;
      }
      support = std::max<std::size_t>(1, prefix);
    }

    double total = 0.0;
    for (std::size_t i = 0; i < support; ++i) total += std::exp(lp[order[i]]);
    const double u = rng.uniform_real() * total;
    double acc = 0.0;
    std::size_t pick = support - 1;
    for (std::size_t i = 0; i < support; ++i) {
      acc += std::exp(lp[order[i]]);
      if (u < acc) {
        pick = i;
        break;
      }
    }
    const int tok = static_cast<int>(order[pick]);
    if (tok == eos_id) break;
    out.push_back(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label parsing
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_special_token(const std::string& tok) {
  return tok.size() >= 2 && tok.front() == '<' && tok.back() == '>';
}

}  // namespace detail

// Split on <sep>, drop special tokens, join word tokens with '_', drop empty
// segments, de-duplicate keeping the first occurrence (earlier = higher rank).
inline std::vector<std::string> parse_labels(const std::vector<std::string>& tokens) {
  std::vector<std::string> labels;
  std::set<std::string> seen;
  std::vector<std::string> segment;
  auto flush = [&]() {
    if (!segment.empty()) {
      std::string label = text::join(segment, "_");
      if (seen.insert(label).second) labels.push_back(std::move(label));
      segment.clear();
    }
  };
  for (const auto& tok : tokens) {
    if (tok == "<sep>") {
      flush();
    } else if (!detail::is_special_token(tok)) {
      segment.push_back(tok);
    }
  }
  flush();
  return labels;
}

inline std::vector<std::string> parse_labels(const std::vector<int>& ids, const Vocab& vocab) {
  return parse_labels(vocab.decode(ids));
}

// ---------------------------------------------------------------------------
// Document-level prediction
// ---------------------------------------------------------------------------

struct PredictionSet {
  std::string doc_id;
  std::vector<std::string> labels;  // ordered, de-duplicated
  std::vector<std::string> raw_tokens;
  std::string strategy;
};

struct PredictOptions {
  bool restrict_to_known = false;
  const std::set<std::string>* known_labels = nullptr;  // required when restricting
  const std::set<int>* oracle_clusters = nullptr;       // mcg: bypass stage 1
  ClusterSeqOrder cluster_seq_order = ClusterSeqOrder::ascending_id;
};

inline StepFn make_step_fn(const Seq2SeqModel& model, const Activations& enc_acts) {
  return [&model, &enc_acts](const std::vector<int>& generated) {
    Activations dec_acts;
    std::vector<int> dec_in{Vocab::bos};
    dec_in.insert(dec_in.end(), generated.begin(), generated.end());
    const Mat& logits = model.decode_logits(enc_acts.enc_out, enc_acts.enc_mask, dec_in, dec_acts);
    const double* last = logits.row(logits.rows() - 1);
    return std::vector<double>(last, last + logits.cols());
  };
}

inline std::vector<int> run_strategy(const StepFn& step, const DecodeStrategy& strategy) {
  strategy.validate();
  switch (strategy.kind) {
    case DecodeKind::greedy: return greedy_decode(step, Vocab::eos, strategy.max_len);
    case DecodeKind::beam: return beam_decode(step, strategy.width, Vocab::eos, strategy.max_len)
                               .front()
                               .tokens;
    case DecodeKind::sample: return sample_decode(step, strategy, Vocab::eos);
  }
  throw std::logic_error("run_strategy: bad kind");
}

// base/bcl: one pass over the <multilabel> input (bcl's cluster head is not
// used at inference). mcg: greedy cluster-id generation from <multicluster>,
// then label generation with the predicted (or oracle) ids appended.
inline PredictionSet predict(const Seq2SeqModel& model, const Document& doc,
                             const DecodeStrategy& strategy, const PredictOptions& opts = {}) {
  if (opts.restrict_to_known && !opts.known_labels)
    throw std::invalid_argument("predict: restrict_to_known requires known_labels");

  const auto text_ids = model.vocab.encode(doc.text);
  auto compose = [&](int prefix, const std::vector<int>& suffix) {
    std::vector<int> in{prefix};
    const std::size_t reserved = suffix.empty() ? 0 : suffix.size() + 1;
    const std::size_t budget =
        static_cast<std::size_t>(model.cfg.max_input_len) > 1 + reserved
            ? static_cast<std::size_t>(model.cfg.max_input_len) - 1 - reserved
            : 0;
    const std::size_t n = std::min(text_ids.size(), budget);
    in.insert(in.end(), text_ids.begin(), text_ids.begin() + static_cast<std::ptrdiff_t>(n));
    if (!suffix.empty()) {
      in.push_back(Vocab::sep);
      in.insert(in.end(), suffix.begin(), suffix.end());
    }
    return in;
  };

  std::vector<int> suffix;
  if (model.cfg.mode == Mode::mcg) {
    std::set<int> clusters;
    if (opts.oracle_clusters) {
      clusters = *opts.oracle_clusters;
    } else {
      Activations enc_acts;
      model.encode(compose(Vocab::multicluster, {}), enc_acts);
      const auto ids =
          greedy_decode(make_step_fn(model, enc_acts), Vocab::eos, model.cfg.max_output_len);
      for (int id : ids)
        if (auto c = model.vocab.cluster_of_token(id)) clusters.insert(*c);
    }
    for (int c : clusters) suffix.push_back(model.vocab.cluster_token_id(c));
  }

  Activations enc_acts;
  model.encode(compose(Vocab::multilabel, suffix), enc_acts);
  const auto ids = run_strategy(make_step_fn(model, enc_acts), strategy);

  PredictionSet ps;
  ps.doc_id = doc.id;
  ps.raw_tokens = model.vocab.decode(ids);
  ps.strategy = strategy.tag();
  for (auto& label : parse_labels(ps.raw_tokens)) {
    if (opts.restrict_to_known && !opts.known_labels->count(label)) continue;
    ps.labels.push_back(std::move(label));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Ensemble joins
// ---------------------------------------------------------------------------

enum class JoinMode { union_join, intersection_join };

inline JoinMode parse_join_mode(const std::string& s) {
  if (s == "union") return JoinMode::union_join;
  if (s == "intersection") return JoinMode::intersection_join;
  throw std::invalid_argument("unknown join mode: " + s);
}

// union: labels from any result, ordered by (result count desc, earliest
// position asc, label asc); intersection: labels in every result, ordered by
// their position in the first result.
inline PredictionSet ensemble_join(const std::vector<PredictionSet>& results, JoinMode mode) {
  if (results.size() < 2) throw std::invalid_argument("ensemble_join: need at least 2 results");
  for (const auto& r : results)
    if (r.doc_id != results[0].doc_id)
      throw std::invalid_argument("ensemble_join: mismatched doc ids");

  PredictionSet out;
  out.doc_id = results[0].doc_id;
  out.strategy = std::string("ensemble-") +
                 (mode == JoinMode::union_join ? "union" : "intersection");

  if (mode == JoinMode::union_join) {
    struct Entry {
      int count = 0;
      std::size_t first_pos = std::numeric_limits<std::size_t>::max();
    };
    std::map<std::string, Entry> entries;
    for (const auto& r : results) {
      for (std::size_t pos = 0; pos < r.labels.size(); ++pos) {
        auto& e = entries[r.labels[pos]];
        ++e.count;
        e.first_pos = std::min(e.first_pos, pos);
      }
    }
    std::vector<std::string> labels;
    for (const auto& [label, e] : entries) labels.push_back(label);
    std::sort(labels.begin(), labels.end(), [&](const std::string& a, const std::string& b) {
      const auto& ea = entries.at(a);
      const auto& eb = entries.at(b);
      if (ea.count != eb.count) return ea.count > eb.count;
      if (ea.first_pos != eb.first_pos) return ea.first_pos < eb.first_pos;
      return a < b;
    });
    out.labels = std::move(labels);
  } else {
    for (const auto& label : results[0].labels) {
      bool everywhere = true;
      for (std::size_t r = 1; r < results.size() && everywhere; ++r)
        everywhere = std::find(results[r].labels.begin(), results[r].labels.end(), label) !=
                     results[r].labels.end();
      if (everywhere) out.labels.push_back(label);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction file IO
// Header comment records strategy and model hash; records are
// id<TAB>label1;label2;...
// ---------------------------------------------------------------------------

inline void save_predictions(const std::vector<PredictionSet>& preds, const std::string& path,
                             const std::string& model_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_predictions: cannot open " + path);
  const std::string strategy = preds.empty() ? "none" : preds[0].strategy;
  out << "# strategy=" << strategy << " model=" << model_hash << '\n';
  for (const auto& p : preds) out << p.doc_id << '\t' << text::join(p.labels, ";") << '\n';
  if (!out) throw std::runtime_error("save_predictions: write failed for " + path);
}

inline std::vector<PredictionSet> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_predictions: cannot open " + path);
  std::vector<PredictionSet> out;
  std::string line;
  std::string strategy = "unknown";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("strategy=");
      if (pos != std::string::npos) {
        const auto end = line.find(' ', pos);
        strategy = line.substr(pos + 9, end == std::string::npos ? end : end - pos - 9);
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("load_predictions: malformed line in " + path);
    PredictionSet p;
    p.doc_id = line.substr(0, tab);
    p.strategy = strategy;
    std::set<std::string> seen;
    for (auto& label : text::split_on(line.substr(tab + 1), ';'))
      if (!label.empty() && seen.insert(label).second) p.labels.push_back(label);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace xlgen
