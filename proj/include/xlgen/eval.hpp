#pragma once

// Evaluation protocol: per-label confusion counts, micro/macro F1, ranked F@k,
// tail-bucket macro F1 and comparison tables across runs.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/corpus.hpp"

namespace xlgen {

struct LabelCounts {
  long long tp = 0, fp = 0, fn = 0;
};

struct ConfusionCounts {
  std::map<std::string, LabelCounts> per_label;
  long long tp = 0, fp = 0, fn = 0;  // global totals
};

using GoldMap = std::map<std::string, std::set<std::string>>;
using PredMap = std::map<std::string, std::vector<std::string>>;

inline ConfusionCounts confusion(const GoldMap& gold, const PredMap& pred) {
  if (gold.size() != pred.size())
    throw std::invalid_argument("confusion: gold/pred document sets differ");
  ConfusionCounts c;
  for (const auto& [doc_id, gold_labels] : gold) {
    auto it = pred.find(doc_id);
    if (it == pred.end())
      throw std::invalid_argument("confusion: missing predictions for doc " + doc_id);
    std::set<std::string> pred_labels(it->second.begin(), it->second.end());
    for (const auto& l : pred_labels) {
      if (gold_labels.count(l)) {
        ++c.per_label[l].tp;
        ++c.tp;
      } else {
        ++c.per_label[l].fp;
        ++c.fp;
      }
    }
    for (const auto& l : gold_labels) {
      if (!pred_labels.count(l)) {
        ++c.per_label[l].fn;
        ++c.fn;
      }
    }
  }
  return c;
}

inline double f1_from_counts(long long tp, long long fp, long long fn) {
  const long long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

inline double micro_f1(const ConfusionCounts& c) { return f1_from_counts(c.tp, c.fp, c.fn); }

// Mean per-label F1 over the given universe; labels with no counts score 0.
inline double macro_f1(const ConfusionCounts& c, const std::set<std::string>& label_universe) {
  if (label_universe.empty()) throw std::invalid_argument("macro_f1: empty label universe");
  double total = 0.0;
  for (const auto& label : label_universe) {
    auto it = c.per_label.find(label);
    if (it != c.per_label.end())
      total += f1_from_counts(it->second.tp, it->second.fp, it->second.fn);
  }
  return total / static_cast<double>(label_universe.size());
}

// Instance-averaged F1 of the first min(k, |pred|) generated labels,
// treating generation order as a rank.
inline double f_at_k(const GoldMap& gold, const PredMap& pred, int k) {
  if (k < 1) throw std::invalid_argument("f_at_k: k must be >= 1");
  if (gold.size() != pred.size())
    throw std::invalid_argument("f_at_k: gold/pred document sets differ");
  if (gold.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [doc_id, gold_labels] : gold) {
    auto it = pred.find(doc_id);
    if (it == pred.end()) throw std::invalid_argument("f_at_k: missing predictions for " + doc_id);
    const auto& ordered = it->second;
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), ordered.size());
    long long hits = 0;
    for (std::size_t i = 0; i < take; ++i)
      if (gold_labels.count(ordered[i])) ++hits;
    const auto denom = static_cast<double>(take + gold_labels.size());
    total += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(hits) / denom;
  }
  return total / static_cast<double>(gold.size());
}

struct TailMacro {
  std::optional<double> zero;  // null when the bucket is empty
  std::optional<double> one;
};

inline TailMacro tail_macro(const ConfusionCounts& c, const TailBuckets& buckets) {
  TailMacro t;
  if (!buckets.zero.empty()) t.zero = macro_f1(c, buckets.zero);
  if (!buckets.one.empty()) t.one = macro_f1(c, buckets.one);
  return t;
}

// ---------------------------------------------------------------------------
// Metrics report
// ---------------------------------------------------------------------------

struct MetricsReport {
  double micro = 0.0;
  double macro = 0.0;
  std::map<int, double> f_at_k;
  TailMacro tail;
  std::size_t tail_zero_count = 0, tail_one_count = 0;
  ConfusionCounts counts;
  std::map<std::string, std::string> metadata;
};

// The macro universe is the union of test-gold and predicted labels; labels
// that are neither would contribute an undefined 0/0 F1 and are excluded.
// Recorded in the metadata so the numbers stay interpretable.
inline MetricsReport evaluate(const GoldMap& gold, const PredMap& pred, const LabelStats& stats,
                              const std::vector<int>& ks = {1, 3, 5},
                              std::map<std::string, std::string> metadata = {}) {
  MetricsReport r;
  r.counts = confusion(gold, pred);
  std::set<std::string> universe;
  std::set<std::string> test_gold;
  for (const auto& [doc, labels] : gold)
    for (const auto& l : labels) {
      universe.insert(l);
      test_gold.insert(l);
    }
  for (const auto& [doc, labels] : pred)
    for (const auto& l : labels) universe.insert(l);

  r.micro = micro_f1(r.counts);
  r.macro = universe.empty() ? 0.0 : macro_f1(r.counts, universe);
  for (int k : ks) r.f_at_k[k] = f_at_k(gold, pred, k);

  const auto buckets = tail_buckets(stats, test_gold);
  r.tail = tail_macro(r.counts, buckets);
  r.tail_zero_count = buckets.zero.size();
  r.tail_one_count = buckets.one.size();

  r.metadata = std::move(metadata);
  r.metadata["macro_universe"] = "union(test_gold, predicted)";
  r.metadata["n_docs"] = std::to_string(gold.size());
  return r;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["micro_f1"] = r.micro;
  j["macro_f1"] = r.macro;
  auto fk = nlohmann::json::object();
  for (const auto& [k, v] : r.f_at_k) fk[std::to_string(k)] = v;
  j["f_at_k"] = std::move(fk);
  j["tail"] = {{"zero_macro", r.tail.zero ? nlohmann::json(*r.tail.zero) : nlohmann::json()},
               {"one_macro", r.tail.one ? nlohmann::json(*r.tail.one) : nlohmann::json()},
               {"zero_count", r.tail_zero_count},
               {"one_count", r.tail_one_count}};
  auto per_label = nlohmann::json::array();
  for (const auto& [label, c] : r.counts.per_label)
    per_label.push_back({{"label", label},
                         {"tp", c.tp},
                         {"fp", c.fp},
                         {"fn", c.fn},
                         {"f1", f1_from_counts(c.tp, c.fp, c.fn)}});
  j["per_label"] = std::move(per_label);
  j["metadata"] = r.metadata;
  return j;
}

// ---------------------------------------------------------------------------
// Run comparison tables
// ---------------------------------------------------------------------------

struct RunRow {
  std::string name;
  std::string group;  // rows sharing a group get a trailing mean row
  std::map<std::string, double> metrics;
};

struct ComparisonTable {
  std::vector<std::string> columns;
  std::vector<RunRow> rows;  // includes "<group>/mean" rows
};

inline ComparisonTable compare_runs(const std::vector<RunRow>& runs) {
  if (runs.empty()) throw std::invalid_argument("compare_runs: no runs");
  ComparisonTable t;
  std::set<std::string> cols;
  for (const auto& r : runs)
    for (const auto& [k, v] : r.metrics) cols.insert(k);
  t.columns.assign(cols.begin(), cols.end());
  t.rows = runs;

  std::vector<std::string> group_order;
  std::map<std::string, std::vector<const RunRow*>> by_group;
  for (const auto& r : runs) {
    if (r.group.empty()) continue;
    if (!by_group.count(r.group)) group_order.push_back(r.group);
    by_group[r.group].push_back(&r);
  }
  for (const auto& g : group_order) {
    const auto& members = by_group[g];
    if (members.size() < 2) continue;
    RunRow mean;
    mean.name = g + "/mean";
    mean.group = "";
    for (const auto& col : t.columns) {
      double sum = 0.0;
      int n = 0;
      for (const RunRow* m : members) {
        auto it = m->metrics.find(col);
        if (it != m->metrics.end()) {
          sum += it->second;
          ++n;
        }
      }
      if (n > 0) mean.metrics[col] = sum / n;
    }
    t.rows.push_back(std::move(mean));
  }
  return t;
}

inline std::string table_to_tsv(const ComparisonTable& t) {
  std::ostringstream os;
  os << "run";
  for (const auto& c : t.columns) os << '\t' << c;
  os << '\n';
  os << std::setprecision(6) << std::fixed;
  for (const auto& r : t.rows) {
    os << r.name;
    for (const auto& c : t.columns) {
      auto it = r.metrics.find(c);
      os << '\t';
      if (it == r.metrics.end()) os << '-';
      else os << it->second;
    }
    os << '\n';
  }
  return os.str();
}

inline std::string table_to_text(const ComparisonTable& t) {
  std::size_t name_w = 3;
  for (const auto& r : t.rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "run";
  for (const auto& c : t.columns) os << std::setw(12) << c;
  os << '\n';
  for (const auto& r : t.rows) {
    os << std::setw(static_cast<int>(name_w) + 2) << r.name;
    for (const auto& c : t.columns) {
      auto it = r.metrics.find(c);
      if (it == r.metrics.end()) {
        os << std::setw(12) << "-";
      } else {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", it->second);
        os << std::setw(12) << buf;
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace xlgen
