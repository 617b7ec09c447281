#pragma once

// Pre-computed label clustering: label features from averaged positive
// document vectors, K-means fitting (Lloyd + k-means++ seeding, best of
// restarts), the label->cluster assignment and per-document cluster sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlgen/corpus.hpp"
#include "xlgen/matrix.hpp"
#include "xlgen/rng.hpp"

namespace xlgen {

struct LabelFeatureMatrix {
  std::vector<std::string> labels;  // sorted train labels, one row each
  Mat features;                     // label x feature-dim
};

// Row for label l = mean of the vectors of train documents containing l.
inline LabelFeatureMatrix label_features(const Dataset& train, const Mat& doc_vectors) {
  if (doc_vectors.rows() != train.documents.size())
    throw std::invalid_argument("label_features: doc_vectors not row-aligned with documents");

  std::map<std::string, std::vector<std::size_t>> positives;
  for (std::size_t d = 0; d < train.documents.size(); ++d)
    for (const auto& label : train.documents[d].gold_labels) positives[label].push_back(d);

  LabelFeatureMatrix out;
  out.labels.reserve(positives.size());
  for (const auto& [label, docs] : positives) {
    if (docs.empty()) throw std::runtime_error("label_features: label without positive documents");
    out.labels.push_back(label);
  }
  out.features = Mat(out.labels.size(), doc_vectors.cols());
  std::size_t r = 0;
  for (const auto& [label, docs] : positives) {
    double* row = out.features.row(r++);
    for (std::size_t d : docs) {
      const double* dv = doc_vectors.row(d);
      for (std::size_t j = 0; j < doc_vectors.cols(); ++j) row[j] += dv[j];
    }
    const double inv = 1.0 / static_cast<double>(docs.size());
    for (std::size_t j = 0; j < doc_vectors.cols(); ++j) row[j] *= inv;
  }
  return out;
}

struct ClusterModel {
  int k = 0;
  Mat centroids;                          // k x dim
  std::vector<std::string> labels;        // row-aligned with assignment
  std::vector<int> assignment;            // label index -> cluster id
  double inertia = 0.0;

  std::map<std::string, int> label_to_cluster() const {
    std::map<std::string, int> m;
    for (std::size_t i = 0; i < labels.size(); ++i) m[labels[i]] = assignment[i];
    return m;
  }
};

struct LloydResult {
  Mat centroids;
  std::vector<int> assignment;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each assignment pass; nonincreasing
  int iterations = 0;
};

namespace detail {

inline int nearest_centroid(const double* x, const Mat& centroids, std::size_t dim) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = sq_dist(x, centroids.row(c), dim);
    if (d < best_d) {  // strict: ties resolve to the lowest cluster id
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace detail

// One Lloyd run from the given initial centroids. Empty clusters are repaired
// by reseeding the centroid at the point farthest from its assigned centroid.
inline LloydResult lloyd(const Mat& points, Mat centroids, int max_iter = 100,
                         double tol = 1e-6) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  const std::size_t k = centroids.rows();
  if (k == 0 || k > n) throw std::invalid_argument("lloyd: need 1 <= k <= n points");

  LloydResult res;
  res.assignment.assign(n, 0);

  auto assign_all = [&]() {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res.assignment[i] = detail::nearest_centroid(points.row(i), centroids, dim);
      inertia += sq_dist(points.row(i), centroids.row(static_cast<std::size_t>(res.assignment[i])), dim);
    }
    return inertia;
  };

  res.inertia = assign_all();
  res.inertia_history.push_back(res.inertia);

  for (int iter = 0; iter < max_iter; ++iter) {
    // update step
    Mat new_centroids(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(res.assignment[i]);
      ++counts[c];
      const double* p = points.row(i);
      double* cen = new_centroids.row(c);
      for (std::size_t j = 0; j < dim; ++j) cen[j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t j = 0; j < dim; ++j) new_centroids(c, j) *= inv;
      } else {
        // empty cluster: reseed at the point farthest from its own centroid
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sq_dist(
              points.row(i), centroids.row(static_cast<std::size_t>(res.assignment[i])), dim);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        for (std::size_t j = 0; j < dim; ++j) new_centroids(c, j) = points(far_i, j);
      }
    }

    double max_shift = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < dim; ++j)
        max_shift = std::max(max_shift, std::abs(new_centroids(c, j) - centroids(c, j)));
    centroids = std::move(new_centroids);

    res.inertia = assign_all();
    res.inertia_history.push_back(res.inertia);
    res.iterations = iter + 1;
    if (max_shift < tol) break;
  }

  res.centroids = std::move(centroids);
  return res;
}

// k-means++ seeding: first centroid uniform, the rest proportional to the
// squared distance to the nearest centroid chosen so far.
inline Mat kmeanspp_seed(const Mat& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  Mat centroids(k, dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.uniform_u64(n);
  for (std::size_t j = 0; j < dim; ++j) centroids(0, j) = points(first, j);
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], sq_dist(points.row(i), centroids.row(c - 1), dim));
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick;
    if (total > 0.0) {
      pick = rng.weighted_index(d2);
    } else {
      pick = rng.uniform_u64(n);  // all points coincide with centroids
    }
    for (std::size_t j = 0; j < dim; ++j) centroids(c, j) = points(pick, j);
  }
  return centroids;
}

struct KMeansOptions {
  int max_iter = 100;
  double tol = 1e-6;
  int restarts = 8;
};

inline ClusterModel kmeans_fit(const LabelFeatureMatrix& features, int k, std::uint64_t seed,
                               const KMeansOptions& opt = {}) {
  if (k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
  if (static_cast<std::size_t>(k) > features.labels.size())
    throw std::invalid_argument("kmeans_fit: k exceeds number of labels");
  if (opt.restarts < 1) throw std::invalid_argument("kmeans_fit: restarts must be >= 1");

  LloydResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opt.restarts; ++r) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
    Mat init = kmeanspp_seed(features.features, static_cast<std::size_t>(k), rng);
    LloydResult run = lloyd(features.features, std::move(init), opt.max_iter, opt.tol);
    if (run.inertia < best.inertia) best = std::move(run);
  }

  ClusterModel cm;
  cm.k = k;
  cm.centroids = std::move(best.centroids);
  cm.labels = features.labels;
  cm.assignment = std::move(best.assignment);
  cm.inertia = best.inertia;
  return cm;
}

// ---------------------------------------------------------------------------
// Document cluster assignment and cluster-ID token sequences
// ---------------------------------------------------------------------------

struct DocClusters {
  std::set<int> clusters;
  bool skipped_unknown = false;  // some gold label was absent from the model
};

inline DocClusters assign_doc_clusters(const std::set<std::string>& gold_labels,
                                       const ClusterModel& cm) {
  DocClusters out;
  const auto map = cm.label_to_cluster();
  for (const auto& label : gold_labels) {
    auto it = map.find(label);
    if (it == map.end()) {
      out.skipped_unknown = true;
      continue;
    }
    out.clusters.insert(it->second);
  }
  return out;
}

inline std::string cluster_token(int cluster_id) {
  return "<c" + std::to_string(cluster_id) + ">";
}

// Ascending cluster id; matches the training target layout.
inline std::vector<std::string> cluster_id_sequence(const std::set<int>& clusters) {
  std::vector<std::string> out;
  out.reserve(clusters.size());
  for (int c : clusters) out.push_back(cluster_token(c));
  return out;
}

// ---------------------------------------------------------------------------
// JSON serialization: {k, centroids, labels, assignment, inertia}
// ---------------------------------------------------------------------------

inline nlohmann::json cluster_model_to_json(const ClusterModel& cm) {
  nlohmann::json j;
  j["k"] = cm.k;
  auto cents = nlohmann::json::array();
  for (std::size_t r = 0; r < cm.centroids.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < cm.centroids.cols(); ++c) row.push_back(cm.centroids(r, c));
    cents.push_back(std::move(row));
  }
  j["centroids"] = std::move(cents);
  j["labels"] = cm.labels;
  j["assignment"] = cm.assignment;
  j["inertia"] = cm.inertia;
  return j;
}

inline ClusterModel cluster_model_from_json(const nlohmann::json& j) {
  ClusterModel cm;
  cm.k = j.at("k").get<int>();
  const auto& cents = j.at("centroids");
  const std::size_t rows = cents.size();
  const std::size_t cols = rows ? cents[0].size() : 0;
  cm.centroids = Mat(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) cm.centroids(r, c) = cents[r][c].get<double>();
  cm.labels = j.at("labels").get<std::vector<std::string>>();
  cm.assignment = j.at("assignment").get<std::vector<int>>();
  cm.inertia = j.at("inertia").get<double>();
  if (cm.labels.size() != cm.assignment.size())
    throw std::runtime_error("cluster model: labels/assignment size mismatch");
  for (int a : cm.assignment)
    if (a < 0 || a >= cm.k) throw std::runtime_error("cluster model: assignment out of range");
  return cm;
}

inline void save_cluster_model(const ClusterModel& cm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_cluster_model: cannot open " + path);
  out << cluster_model_to_json(cm).dump(2) << '\n';
}

inline ClusterModel load_cluster_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cluster_model: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return cluster_model_from_json(j);
}

}  // namespace xlgen
