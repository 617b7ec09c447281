#pragma once

// Dataset model and corpus-side operations: TSV IO, label statistics,
// label ordering, PU deficit simulation, tail buckets, synthetic benchmark
// generation and TF-IDF document vectors.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "xlgen/matrix.hpp"
#include "xlgen/rng.hpp"

namespace xlgen {

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

struct Document {
  std::string id;
  std::vector<std::string> text;      // lowercased word tokens
  std::set<std::string> gold_labels;  // set keeps labels unique and ordered
};

struct Dataset {
  std::vector<Document> documents;
  Split split = Split::train;
};

namespace text {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// Labels split into word tokens on '_' and whitespace, so the decoder can
// compose multi-word labels token by token.
inline std::vector<std::string> label_words(std::string_view label) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : label) {
    if (c == '_' || std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace text

// ---------------------------------------------------------------------------
// Label statistics and ordering
// ---------------------------------------------------------------------------

struct LabelStats {
  std::map<std::string, int> freq;  // train-document count per label

  int freq_of(const std::string& label) const {
    auto it = freq.find(label);
    return it == freq.end() ? 0 : it->second;
  }
};

inline LabelStats build_label_stats(const Dataset& train) {
  if (train.split != Split::train)
    throw std::invalid_argument("build_label_stats: dataset is not the train split");
  if (train.documents.empty())
    throw std::invalid_argument("build_label_stats: empty dataset");
  LabelStats stats;
  for (const auto& doc : train.documents)
    for (const auto& label : doc.gold_labels) ++stats.freq[label];
  return stats;
}

enum class LabelOrder { frequency, inverse, shuffle, pos_invariant };

inline std::optional<LabelOrder> parse_label_order(std::string_view s) {
  if (s == "frequency") return LabelOrder::frequency;
  if (s == "inverse") return LabelOrder::inverse;
  if (s == "shuffle") return LabelOrder::shuffle;
  if (s == "pos_invariant" || s == "posinv") return LabelOrder::pos_invariant;
  return std::nullopt;
}

inline const char* label_order_name(LabelOrder o) {
  switch (o) {
    case LabelOrder::frequency: return "frequency";
    case LabelOrder::inverse: return "inverse";
    case LabelOrder::shuffle: return "shuffle";
    case LabelOrder::pos_invariant: return "pos_invariant";
  }
  return "?";
}

// frequency: decreasing train frequency, ties lexicographic.
// inverse:   increasing train frequency, ties lexicographic.
// shuffle:   uniform permutation from `seed` (re-drawn per epoch by callers).
// pos_invariant: frequency order; the position reset happens in the decoder.
inline std::vector<std::string> order_labels(const std::set<std::string>& labels,
                                             const LabelStats& stats, LabelOrder mode,
                                             std::uint64_t seed = 0) {
  std::vector<std::string> out(labels.begin(), labels.end());
  switch (mode) {
    case LabelOrder::frequency:
    case LabelOrder::pos_invariant:
      std::sort(out.begin(), out.end(), [&](const std::string& a, const std::string& b) {
        const int fa = stats.freq_of(a), fb = stats.freq_of(b);
        return fa != fb ? fa > fb : a < b;
      });
      break;
    case LabelOrder::inverse:
      std::sort(out.begin(), out.end(), [&](const std::string& a, const std::string& b) {
        const int fa = stats.freq_of(a), fb = stats.freq_of(b);
        return fa != fb ? fa < fb : a < b;
      });
      break;
    case LabelOrder::shuffle: {
      Rng rng(seed);
      rng.shuffle(out);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PU deficit simulation
// ---------------------------------------------------------------------------

struct PUConfig {
  double deficit_rate = 0.5;  // fraction of positive labels removed, in [0,1)
  std::uint64_t seed = 0;
};

// Keeps exactly max(1, round((1-rate)*n)) labels per document, chosen
// uniformly without replacement. Deterministic given (seed, doc id).
inline Dataset apply_pu_deficit(const Dataset& ds, const PUConfig& cfg) {
  if (ds.split != Split::train)
    throw std::invalid_argument("apply_pu_deficit: PU deficit applies to the train split");
  if (!(cfg.deficit_rate >= 0.0 && cfg.deficit_rate < 1.0))
    throw std::invalid_argument("apply_pu_deficit: deficit_rate must be in [0,1)");
  Dataset out;
  out.split = ds.split;
  out.documents.reserve(ds.documents.size());
  for (const auto& doc : ds.documents) {
    const auto n = static_cast<long long>(doc.gold_labels.size());
    auto n_kept = static_cast<std::size_t>(
        std::max(1LL, std::llround((1.0 - cfg.deficit_rate) * static_cast<double>(n))));
    n_kept = std::min(n_kept, doc.gold_labels.size());

    std::vector<std::string> labels(doc.gold_labels.begin(), doc.gold_labels.end());
    Rng rng(mix_seed(cfg.seed, fnv1a(doc.id)));
    // partial Fisher-Yates: the first n_kept slots are the kept sample
    for (std::size_t i = 0; i < n_kept && i + 1 < labels.size(); ++i) {
      const std::size_t j = i + rng.uniform_u64(labels.size() - i);
      std::swap(labels[i], labels[j]);
    }
    Document kept = doc;
    kept.gold_labels = std::set<std::string>(labels.begin(), labels.begin() + n_kept);
    out.documents.push_back(std::move(kept));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tail buckets
// ---------------------------------------------------------------------------

struct TailBuckets {
  std::set<std::string> zero;  // test-gold labels never seen in train
  std::set<std::string> one;   // test-gold labels seen exactly once in train
};

inline TailBuckets tail_buckets(const LabelStats& stats, const std::set<std::string>& test_gold) {
  TailBuckets b;
  for (const auto& label : test_gold) {
    const int f = stats.freq_of(label);
    if (f == 0) b.zero.insert(label);
    else if (f == 1) b.one.insert(label);
  }
  return b;
}

// ---------------------------------------------------------------------------
// TF-IDF document vectors
// ---------------------------------------------------------------------------

struct TfidfResult {
  std::vector<std::string> terms;  // sorted vocabulary
  Mat vectors;                     // doc x term, rows L2-normalized when nonzero
};

// tf = raw count / doc length; idf = ln(N / (1 + df)) + 1.
inline TfidfResult tfidf_vectors(const std::vector<Document>& docs) {
  if (docs.empty()) throw std::invalid_argument("tfidf_vectors: empty corpus");

  std::map<std::string, std::size_t> term_index;
  for (const auto& doc : docs)
    for (const auto& tok : doc.text) term_index.emplace(tok, 0);
  std::size_t idx = 0;
  for (auto& [term, i] : term_index) i = idx++;

  TfidfResult res;
  res.terms.resize(term_index.size());
  for (const auto& [term, i] : term_index) res.terms[i] = term;

  std::vector<int> df(term_index.size(), 0);
  for (const auto& doc : docs) {
    std::set<std::size_t> seen;
    for (const auto& tok : doc.text) seen.insert(term_index.at(tok));
    for (std::size_t i : seen) ++df[i];
  }

  const double n_docs = static_cast<double>(docs.size());
  std::vector<double> idf(term_index.size());
  for (std::size_t i = 0; i < idf.size(); ++i)
    idf[i] = std::log(n_docs / (1.0 + static_cast<double>(df[i]))) + 1.0;

  res.vectors = Mat(docs.size(), term_index.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& doc = docs[d];
    if (doc.text.empty()) continue;
    std::map<std::size_t, int> counts;
    for (const auto& tok : doc.text) ++counts[term_index.at(tok)];
    const double len = static_cast<double>(doc.text.size());
    double* row = res.vectors.row(d);
    for (const auto& [i, c] : counts) row[i] = (static_cast<double>(c) / len) * idf[i];
    const double norm = l2_norm(row, res.vectors.cols());
    if (norm > 0.0)
      for (std::size_t i = 0; i < res.vectors.cols(); ++i) row[i] /= norm;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Dataset file IO
// Record format: id<TAB>label1;label2;...<TAB>text  (UTF-8, one per line)
// ---------------------------------------------------------------------------

inline Dataset load_dataset(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  Dataset ds;
  ds.split = split;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos)
      throw std::runtime_error("load_dataset: malformed record at " + path + ":" +
                               std::to_string(line_no));
    Document doc;
    doc.id = line.substr(0, tab1);
    if (!seen_ids.insert(doc.id).second)
      throw std::runtime_error("load_dataset: duplicate document id '" + doc.id + "' in " + path);
    const std::string label_field = line.substr(tab1 + 1, tab2 - tab1 - 1);
    if (!label_field.empty()) {
      for (auto& lab : text::split_on(label_field, ';'))
        if (!lab.empty()) doc.gold_labels.insert(text::to_lower(lab));
    }
    if (split == Split::train && doc.gold_labels.empty())
      throw std::runtime_error("load_dataset: train document '" + doc.id + "' has no labels");
    doc.text = text::split_ws(text::to_lower(line.substr(tab2 + 1)));
    ds.documents.push_back(std::move(doc));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const auto& doc : ds.documents) {
    std::vector<std::string> labels(doc.gold_labels.begin(), doc.gold_labels.end());
    out << doc.id << '\t' << text::join(labels, ";") << '\t' << text::join(doc.text, " ") << '\n';
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generation
// ---------------------------------------------------------------------------

struct SynthConfig {
  int n_docs = 300;
  int n_labels = 60;
  int n_clusters = 6;
  int vocab_size = 400;
  int labels_per_doc_min = 2;
  int labels_per_doc_max = 6;
  int unseen_label_count = 3;
  std::uint64_t seed = 1;
};

struct SynthData {
  Dataset train, validation, test;
  std::map<std::string, int> planted_clusters;  // label -> cluster id (incl. unseen labels)
};

namespace detail {

// Pronounceable pseudo-word for a vocabulary index; bijective by construction.
inline std::string synth_word(int idx) {
  static const char* syll[] = {"ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "na",
                               "pe", "qui", "ro", "su", "ta", "ve", "wi", "xo", "yu", "za"};
  constexpr int base = 20;
  std::string w;
  int v = idx;
  do {
    w += syll[v % base];
    v /= base;
  } while (v > 0);
  w += syll[(idx / base) % base];  // pad to >= 2 syllables
  return w;
}

}  // namespace detail

// Cluster-topical corpus with Zipf label frequencies and a planted set of
// test-only labels. Pure function of the config: same config, same bytes.
inline SynthData synth_generate(const SynthConfig& cfg) {
  if (cfg.n_clusters < 1 || cfg.n_labels < cfg.n_clusters)
    throw std::invalid_argument("synth_generate: need n_labels >= n_clusters >= 1");
  if (cfg.labels_per_doc_min < 1 || cfg.labels_per_doc_max < cfg.labels_per_doc_min)
    throw std::invalid_argument("synth_generate: bad labels_per_doc range");
  if (cfg.unseen_label_count < 0 || cfg.unseen_label_count >= cfg.n_labels)
    throw std::invalid_argument("synth_generate: unseen_label_count must be < n_labels");
  if (cfg.n_docs < 20) throw std::invalid_argument("synth_generate: need at least 20 documents");

  const int labels_per_cluster =
      (cfg.n_labels + cfg.n_clusters - 1) / cfg.n_clusters;  // ceil
  // w singles + w*(w-1)/2 pairs must cover the names needed per cluster
  int words_per_cluster = 4;
  while (words_per_cluster + words_per_cluster * (words_per_cluster - 1) / 2 < labels_per_cluster)
    ++words_per_cluster;
  const int topic_words_total = words_per_cluster * cfg.n_clusters;
  const int noise_words = cfg.vocab_size - topic_words_total;
  if (noise_words < 4)
    throw std::invalid_argument("synth_generate: vocab_size too small for this label/cluster count");

  Rng rng(cfg.seed);

  // vocabulary: first the per-cluster topic words, then noise words
  std::vector<std::vector<std::string>> topic(cfg.n_clusters);
  int widx = 0;
  for (int c = 0; c < cfg.n_clusters; ++c)
    for (int j = 0; j < words_per_cluster; ++j) topic[c].push_back(detail::synth_word(widx++));
  std::vector<std::string> noise;
  for (int j = 0; j < noise_words; ++j) noise.push_back(detail::synth_word(widx++));

  // label names per cluster: singles first, then underscore-joined pairs
  SynthData data;
  std::vector<std::string> labels;          // all labels, cluster-major
  std::vector<int> label_cluster;           // aligned cluster ids
  for (int c = 0; c < cfg.n_clusters; ++c) {
    std::vector<std::string> names;
    for (int a = 0; a < words_per_cluster; ++a) names.push_back(topic[c][a]);
    for (int a = 0; a < words_per_cluster; ++a)
      for (int b = a + 1; b < words_per_cluster; ++b)
        names.push_back(topic[c][a] + "_" + topic[c][b]);
    const int from = c * labels_per_cluster;
    const int count = std::min(labels_per_cluster, cfg.n_labels - from);
    for (int j = 0; j < count; ++j) {
      labels.push_back(names[static_cast<std::size_t>(j)]);
      label_cluster.push_back(c);
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    data.planted_clusters[labels[i]] = label_cluster[i];

  // the last label of successive clusters becomes test-only ("unseen")
  std::vector<bool> unseen(labels.size(), false);
  {
    int marked = 0;
    int c = 0;
    while (marked < cfg.unseen_label_count) {
      // last label currently assigned to cluster c and not yet marked
      int pick = -1;
      for (int i = static_cast<int>(labels.size()) - 1; i >= 0; --i)
        if (label_cluster[i] == c && !unseen[i]) { pick = i; break; }
      if (pick >= 0) { unseen[pick] = true; ++marked; }
      c = (c + 1) % cfg.n_clusters;
    }
  }
  std::vector<int> seen_idx;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!unseen[i]) seen_idx.push_back(static_cast<int>(i));

  // Zipf popularity over seen labels, rank permutation drawn from the seed
  std::vector<int> rank_of(seen_idx.size());
  {
    std::vector<int> perm(seen_idx.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    rng.shuffle(perm);
    for (std::size_t i = 0; i < perm.size(); ++i) rank_of[i] = perm[i];
  }
  auto zipf_weight = [&](std::size_t seen_pos) {
    return 1.0 / static_cast<double>(rank_of[seen_pos] + 1);
  };

  const int n_test = std::max(1, cfg.n_docs / 10);
  const int n_valid = std::max(1, cfg.n_docs / 10);
  const int n_train = cfg.n_docs - n_test - n_valid;

  auto sample_doc_labels = [&](int n_lab) {
    const int home = rng.uniform_int(cfg.n_clusters);
    std::set<int> chosen;
    int guard = 0;
    while (static_cast<int>(chosen.size()) < n_lab && guard++ < 1000) {
      const bool from_home = rng.uniform_real() < 0.85;
      std::vector<double> w(seen_idx.size(), 0.0);
      for (std::size_t i = 0; i < seen_idx.size(); ++i) {
        if (from_home && label_cluster[seen_idx[i]] != home) continue;
        if (chosen.count(seen_idx[i])) continue;
        w[i] = zipf_weight(i);
      }
      double total = 0.0;
      for (double x : w) total += x;
      if (total <= 0.0) { guard = 1000; break; }
      chosen.insert(seen_idx[rng.weighted_index(w)]);
    }
    if (chosen.empty()) chosen.insert(seen_idx[0]);
    return chosen;
  };

  auto make_text = [&](const std::set<int>& doc_labels) {
    std::vector<int> lab_list(doc_labels.begin(), doc_labels.end());
    const int len = 10 + 3 * static_cast<int>(lab_list.size()) + rng.uniform_int(8);
    std::vector<std::string> toks;
    toks.reserve(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
      const double u = rng.uniform_real();
      if (u < 0.55) {  // a topic word of some gold label's cluster
        const int li = lab_list[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lab_list.size())))];
        const auto& tw = topic[static_cast<std::size_t>(label_cluster[li])];
        toks.push_back(tw[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(tw.size())))]);
      } else if (u < 0.8) {  // a word of some gold label's own name
        const int li = lab_list[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(lab_list.size())))];
        const auto words = text::label_words(labels[static_cast<std::size_t>(li)]);
        toks.push_back(words[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(words.size())))]);
      } else {  // noise
        toks.push_back(noise[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(noise.size())))]);
      }
    }
    return toks;
  };

  auto gen_docs = [&](Dataset& ds, Split split, const char* prefix, int count) {
    ds.split = split;
    for (int d = 0; d < count; ++d) {
      Document doc;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%04d", prefix, d);
      doc.id = buf;
      const int n_lab = cfg.labels_per_doc_min +
                        rng.uniform_int(cfg.labels_per_doc_max - cfg.labels_per_doc_min + 1);
      const auto chosen = sample_doc_labels(n_lab);
      for (int li : chosen) doc.gold_labels.insert(labels[static_cast<std::size_t>(li)]);
      doc.text = make_text(chosen);
      ds.documents.push_back(std::move(doc));
    }
  };

  gen_docs(data.train, Split::train, "tr", n_train);
  gen_docs(data.validation, Split::validation, "va", n_valid);
  gen_docs(data.test, Split::test, "te", n_test);

  // plant each unseen label into a test document (round-robin), echoing its
  // words into the text so generation has something to work from
  {
    int slot = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!unseen[i]) continue;
      Document& doc = data.test.documents[static_cast<std::size_t>(slot) %
                                          data.test.documents.size()];
      doc.gold_labels.insert(labels[i]);
      for (int rep = 0; rep < 3; ++rep)
        for (const auto& w : text::label_words(labels[i])) doc.text.push_back(w);
      ++slot;
    }
  }

  // every seen label must occur in train at least once, so the planted zero
  // bucket is exactly the unseen set
  {
    std::set<std::string> in_train;
    for (const auto& doc : data.train.documents)
      for (const auto& l : doc.gold_labels) in_train.insert(l);
    int slot = 0;
    for (int i : seen_idx) {
      const std::string& lab = labels[static_cast<std::size_t>(i)];
      if (in_train.count(lab)) continue;
      Document& doc =
          data.train.documents[static_cast<std::size_t>(slot) % data.train.documents.size()];
      doc.gold_labels.insert(lab);
      for (int rep = 0; rep < 2; ++rep)
        for (const auto& w : text::label_words(lab)) doc.text.push_back(w);
      ++slot;
    }
  }

  return data;
}

}  // namespace xlgen
