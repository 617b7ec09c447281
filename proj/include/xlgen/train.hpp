#pragma once

// Training-example construction for the three modes and the deterministic
// AdamW training loop with the 1/epoch lambda schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlgen/cluster.hpp"
#include "xlgen/corpus.hpp"
#include "xlgen/model.hpp"
#include "xlgen/rng.hpp"
#include "xlgen/vocab.hpp"

namespace xlgen {

enum class ClusterSeqOrder { ascending_id, by_frequency };

struct TrainingExample {
  std::vector<int> input_ids;          // encoder input
  std::vector<int> target_ids;         // decoder targets, ends with <eos>
  std::vector<double> cluster_target;  // k-dim 0/1 vector, bcl only
  int stream = 0;                      // mcg: 0 = label task, 1 = cluster task
};

struct ExampleBuildConfig {
  Mode mode = Mode::base;
  LabelOrder order_mode = LabelOrder::frequency;
  ClusterSeqOrder cluster_seq_order = ClusterSeqOrder::ascending_id;
  int max_input_len = 64;
  int max_output_len = 32;
  std::uint64_t shuffle_seed = 0;  // per-epoch seed for LabelOrder::shuffle
};

namespace detail {

inline std::vector<int> encode_label_sequence(const std::vector<std::string>& ordered_labels,
                                              const Vocab& vocab, int max_output_len) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < ordered_labels.size(); ++i) {
    if (i) ids.push_back(Vocab::sep);
    for (const auto& w : text::label_words(ordered_labels[i]))
      ids.push_back(vocab.encode_token(w));
  }
  ids.push_back(Vocab::eos);
  if (ids.size() > static_cast<std::size_t>(max_output_len)) {
    ids.resize(static_cast<std::size_t>(max_output_len) - 1);
    ids.push_back(Vocab::eos);
  }
  return ids;
}

inline std::vector<int> cluster_token_ids(const std::set<int>& clusters, const Vocab& vocab,
                                          ClusterSeqOrder order, const ClusterModel* cm,
                                          const LabelStats* stats) {
  std::vector<int> ordered(clusters.begin(), clusters.end());  // ascending ids
  if (order == ClusterSeqOrder::by_frequency && cm && stats) {
    std::vector<long long> weight(static_cast<std::size_t>(cm->k), 0);
    for (std::size_t i = 0; i < cm->labels.size(); ++i)
      weight[static_cast<std::size_t>(cm->assignment[i])] += stats->freq_of(cm->labels[i]);
    std::sort(ordered.begin(), ordered.end(), [&](int a, int b) {
      const auto wa = weight[static_cast<std::size_t>(a)], wb = weight[static_cast<std::size_t>(b)];
      return wa != wb ? wa > wb : a < b;
    });
  }
  std::vector<int> ids;
  ids.reserve(ordered.size());
  for (int c : ordered) ids.push_back(vocab.cluster_token_id(c));
  return ids;
}

}  // namespace detail

// base -> one (input, labels) pair; bcl -> same plus the 0/1 cluster vector;
// mcg -> the label task with cluster ids appended to the input, plus the
// cluster-generation task under the <multicluster> prefix.
inline std::vector<TrainingExample> build_training_example(const Document& doc,
                                                           const ExampleBuildConfig& cfg,
                                                           const Vocab& vocab,
                                                           const LabelStats& stats,
                                                           const ClusterModel* cm) {
  if ((cfg.mode == Mode::bcl || cfg.mode == Mode::mcg) && !cm)
    throw std::invalid_argument("build_training_example: bcl/mcg require a cluster model");

  const auto ordered = order_labels(doc.gold_labels, stats, cfg.order_mode,
                                    mix_seed(cfg.shuffle_seed, fnv1a(doc.id)));
  const auto target = detail::encode_label_sequence(ordered, vocab, cfg.max_output_len);
  const auto text_ids = vocab.encode(doc.text);

  auto make_input = [&](int prefix, std::size_t reserved_suffix) {
    std::vector<int> in{prefix};
    const std::size_t budget =
        static_cast<std::size_t>(cfg.max_input_len) > 1 + reserved_suffix
            ? static_cast<std::size_t>(cfg.max_input_len) - 1 - reserved_suffix
            : 0;
    const std::size_t n = std::min(text_ids.size(), budget);
    in.insert(in.end(), text_ids.begin(), text_ids.begin() + static_cast<std::ptrdiff_t>(n));
    return in;
  };

  std::vector<TrainingExample> out;
  if (cfg.mode == Mode::base) {
    TrainingExample ex;
    ex.input_ids = make_input(Vocab::multilabel, 0);
    ex.target_ids = target;
    out.push_back(std::move(ex));
  } else if (cfg.mode == Mode::bcl) {
    const auto dc = assign_doc_clusters(doc.gold_labels, *cm);
    TrainingExample ex;
    ex.input_ids = make_input(Vocab::multilabel, 0);
    ex.target_ids = target;
    ex.cluster_target.assign(static_cast<std::size_t>(cm->k), 0.0);
    for (int c : dc.clusters) ex.cluster_target[static_cast<std::size_t>(c)] = 1.0;
    out.push_back(std::move(ex));
  } else {
    const auto dc = assign_doc_clusters(doc.gold_labels, *cm);
    const auto ctoks = detail::cluster_token_ids(dc.clusters, vocab, cfg.cluster_seq_order, cm, &stats);

    TrainingExample label_task;
    label_task.input_ids = make_input(Vocab::multilabel, 1 + ctoks.size());
    label_task.input_ids.push_back(Vocab::sep);
    label_task.input_ids.insert(label_task.input_ids.end(), ctoks.begin(), ctoks.end());
    label_task.target_ids = target;
    label_task.stream = 0;
    out.push_back(std::move(label_task));

    TrainingExample cluster_task;
    cluster_task.input_ids = make_input(Vocab::multicluster, 0);
    cluster_task.target_ids = ctoks;
    cluster_task.target_ids.push_back(Vocab::eos);
    cluster_task.stream = 1;
    out.push_back(std::move(cluster_task));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward/backward over one example
// ---------------------------------------------------------------------------

struct ExampleLosses {
  double xent = 0.0;
  double bce = 0.0;
};

inline ExampleLosses forward_example(const Seq2SeqModel& model, const TrainingExample& ex,
                                     Activations& a) {
  model.encode(ex.input_ids, a);
  std::vector<int> dec_in{Vocab::bos};
  dec_in.insert(dec_in.end(), ex.target_ids.begin(), ex.target_ids.end() - 1);
  model.decode_logits(a.enc_out, a.enc_mask, dec_in, a);
  ExampleLosses L;
  L.xent = loss_xent(a.logits, ex.target_ids, Vocab::pad);
  if (!ex.cluster_target.empty()) {
    model.cluster_logits(a.enc_out, a.enc_mask, a);
    L.bce = loss_bce(a.cls_logits, ex.cluster_target);
  }
  return L;
}

inline double example_loss(const Seq2SeqModel& model, const TrainingExample& ex, double lambda) {
  Activations a;
  const auto L = forward_example(model, ex, a);
  return combined_loss(L.xent, L.bce, ex.cluster_target.empty() ? 0.0 : lambda);
}

inline void backward_example(Seq2SeqModel& model, const TrainingExample& ex,
                             const Activations& a, double lambda, double scale) {
  Mat dlogits;
  loss_xent(a.logits, ex.target_ids, Vocab::pad, &dlogits);
  dlogits *= scale;
  if (!ex.cluster_target.empty()) {
    std::vector<double> dcls;
    loss_bce(a.cls_logits, ex.cluster_target, &dcls);
    for (double& v : dcls) v *= lambda * scale;
    model.backward(a, dlogits, &dcls);
  } else {
    model.backward(a, dlogits, nullptr);
  }
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 2e-4;
  int epochs = 10;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double lambda_initial = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  LabelOrder order_mode = LabelOrder::frequency;
  ClusterSeqOrder cluster_seq_order = ClusterSeqOrder::ascending_id;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (lambda_initial < 0.0) throw std::invalid_argument("TrainConfig: lambda_initial must be >= 0");
  }
};

class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  explicit AdamW(const TrainConfig& tc)
      : AdamW(tc.lr, tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay) {}

  void step(Seq2SeqModel& model) {
    auto ps = model.params();
    if (m_.empty()) {
      for (Param* p : ps) {
        m_.emplace_back(p->w.rows(), p->w.cols());
        v_.emplace_back(p->w.rows(), p->w.cols());
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Param& p = *ps[i];
      auto& m = m_[i].data();
      auto& v = v_[i].data();
      auto& w = p.w.data();
      const auto& g = p.g.data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
        v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        double upd = mh / (std::sqrt(vh) + eps_);
        if (p.decay) upd += wd_ * w[j];
        w[j] -= lr_ * upd;
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  int t_ = 0;
  std::vector<Mat> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double xent = 0.0;
  double bce = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

inline void save_loss_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_loss_log: cannot open " + path);
  out << "epoch,xent,bce,lambda,total\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.xent, e.bce,
                  e.lambda, e.total);
    out << buf;
  }
}

// Deterministic given (config seed, data). MCG alternates batches between the
// label stream and the cluster stream, both reshuffled each epoch.
inline Seq2SeqModel train_model(const Dataset& train, const ClusterModel* cm, ModelConfig mcfg,
                                const TrainConfig& tcfg, std::vector<EpochLog>* log_out = nullptr) {
  tcfg.validate();
  if (train.split != Split::train)
    throw std::invalid_argument("train_model: dataset is not the train split");
  if ((mcfg.mode == Mode::bcl || mcfg.mode == Mode::mcg) && !cm)
    throw std::invalid_argument("train_model: bcl/mcg require a cluster model");

  if (cm) mcfg.k_clusters = cm->k;
  mcfg.pos_invariant = (tcfg.order_mode == LabelOrder::pos_invariant);
  const int vocab_clusters = (mcfg.mode == Mode::mcg && cm) ? cm->k : 0;
  Vocab vocab = Vocab::build(train, vocab_clusters);

  const LabelStats stats = build_label_stats(train);
  Seq2SeqModel model(mcfg, std::move(vocab), mix_seed(tcfg.seed, 0xA11CEULL));
  AdamW opt(tcfg);

  ExampleBuildConfig bcfg;
  bcfg.mode = mcfg.mode;
  bcfg.order_mode = tcfg.order_mode;
  bcfg.cluster_seq_order = tcfg.cluster_seq_order;
  bcfg.max_input_len = mcfg.max_input_len;
  bcfg.max_output_len = mcfg.max_output_len;

  Activations acts;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const double lambda = lambda_at_epoch(tcfg.lambda_initial, epoch);
    bcfg.shuffle_seed = mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch));

    std::vector<TrainingExample> label_stream, cluster_stream;
    for (const auto& doc : train.documents)
      for (auto& ex : build_training_example(doc, bcfg, model.vocab, stats, cm))
        (ex.stream == 0 ? label_stream : cluster_stream).push_back(std::move(ex));

    Rng shuffle_rng(mix_seed(tcfg.seed, 0xE90C4ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(label_stream);
    shuffle_rng.shuffle(cluster_stream);

    // alternate chunks of the two streams (single stream for base/bcl)
    std::vector<std::vector<const TrainingExample*>> batches;
    {
      std::size_t ia = 0, ib = 0;
      bool take_a = true;
      const auto bs = static_cast<std::size_t>(tcfg.batch_size);
      while (ia < label_stream.size() || ib < cluster_stream.size()) {
        std::vector<const TrainingExample*> batch;
        auto& stream = (take_a && ia < label_stream.size()) || ib >= cluster_stream.size()
                           ? label_stream
                           : cluster_stream;
        std::size_t& idx = (&stream == &label_stream) ? ia : ib;
        while (idx < stream.size() && batch.size() < bs) batch.push_back(&stream[idx++]);
        if (!batch.empty()) batches.push_back(std::move(batch));
        take_a = !take_a;
      }
    }

    double sum_xent = 0.0, sum_bce = 0.0;
    std::size_t n_examples = 0, n_bce = 0;
    for (const auto& batch : batches) {
      model.zero_grads();
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (const TrainingExample* ex : batch) {
        const auto L = forward_example(model, *ex, acts);
        const double loss = combined_loss(L.xent, L.bce, ex->cluster_target.empty() ? 0.0 : lambda);
        if (!std::isfinite(loss))
          throw std::runtime_error("train_model: non-finite loss at epoch " +
                                   std::to_string(epoch));
        sum_xent += L.xent;
        ++n_examples;
        if (!ex->cluster_target.empty()) {
          sum_bce += L.bce;
          ++n_bce;
        }
        backward_example(model, *ex, acts, lambda, scale);
      }
      opt.step(model);
      if (!model.params_finite())
        throw std::runtime_error("train_model: non-finite parameters after step at epoch " +
                                 std::to_string(epoch));
    }

    EpochLog e;
    e.epoch = epoch;
    e.xent = n_examples ? sum_xent / static_cast<double>(n_examples) : 0.0;
    e.bce = n_bce ? sum_bce / static_cast<double>(n_bce) : 0.0;
    e.lambda = lambda;
    e.total = combined_loss(e.xent, e.bce, lambda);
    if (log_out) log_out->push_back(e);
  }
  return model;
}

}  // namespace xlgen
