#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <limits>

#include "xlgen/cluster.hpp"

#include "test_oracles.hpp"

using namespace xlgen;

namespace {

Mat gaussian_blobs(int n_clusters, int per_cluster, int dim, double separation, double spread,
                   Rng& rng, std::vector<int>* truth = nullptr) {
  Mat pts(static_cast<std::size_t>(n_clusters * per_cluster), static_cast<std::size_t>(dim));
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(n_clusters));
  for (auto& c : centers) {
    c.resize(static_cast<std::size_t>(dim));
    for (auto& v : c) v = rng.normal(0.0, separation);
  }
  std::size_t row = 0;
  for (int c = 0; c < n_clusters; ++c) {
    for (int i = 0; i < per_cluster; ++i, ++row) {
      for (int j = 0; j < dim; ++j)
        pts(row, static_cast<std::size_t>(j)) =
            centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] +
            rng.normal(0.0, spread);
      if (truth) truth->push_back(c);
    }
  }
  return pts;
}

}  // namespace

TEST_CASE("label_features averages positive document vectors", "[cluster]") {
  Dataset train;
  train.split = Split::train;
  Document d1, d2;
  d1.id = "d1";
  d1.gold_labels = {"a", "b"};
  d2.id = "d2";
  d2.gold_labels = {"a"};
  train.documents = {d1, d2};

  Mat vecs(2, 3);
  vecs(0, 0) = 1.0;
  vecs(0, 1) = 2.0;
  vecs(0, 2) = 3.0;
  vecs(1, 0) = 3.0;
  vecs(1, 1) = 4.0;
  vecs(1, 2) = 5.0;

  const auto lf = label_features(train, vecs);
  REQUIRE(lf.labels == std::vector<std::string>{"a", "b"});
  // a appears in both docs -> mean; b only in d1 -> that row
  CHECK(lf.features(0, 0) == Catch::Approx(2.0));
  CHECK(lf.features(0, 1) == Catch::Approx(3.0));
  CHECK(lf.features(0, 2) == Catch::Approx(4.0));
  CHECK(lf.features(1, 0) == Catch::Approx(1.0));
  CHECK(lf.features(1, 2) == Catch::Approx(3.0));
}

TEST_CASE("label_features matches a brute-force recomputation", "[cluster]") {
  Rng rng(17);
  Dataset train;
  train.split = Split::train;
  const std::vector<std::string> labels{"u", "v", "w", "x"};
  for (int d = 0; d < 5; ++d) {
    Document doc;
    doc.id = "d" + std::to_string(d);
    for (const auto& l : labels)
      if (rng.uniform_real() < 0.6) doc.gold_labels.insert(l);
    if (doc.gold_labels.empty()) doc.gold_labels.insert("u");
    train.documents.push_back(doc);
  }
  Mat vecs(5, 4);
  for (auto& v : vecs.data()) v = rng.normal();

  const auto lf = label_features(train, vecs);
  for (std::size_t li = 0; li < lf.labels.size(); ++li) {
    std::vector<double> mean(4, 0.0);
    int count = 0;
    for (std::size_t d = 0; d < train.documents.size(); ++d) {
      if (!train.documents[d].gold_labels.count(lf.labels[li])) continue;
      ++count;
      for (int j = 0; j < 4; ++j) mean[static_cast<std::size_t>(j)] += vecs(d, static_cast<std::size_t>(j));
    }
    for (double& v : mean) v /= count;
    for (int j = 0; j < 4; ++j)
      CHECK(lf.features(li, static_cast<std::size_t>(j)) ==
            Catch::Approx(mean[static_cast<std::size_t>(j)]).margin(1e-12));
  }
}

TEST_CASE("label_features requires row alignment", "[cluster]") {
  Dataset train;
  train.split = Split::train;
  Document d;
  d.id = "d";
  d.gold_labels = {"a"};
  train.documents = {d};
  Mat wrong(3, 2);
  CHECK_THROWS_AS(label_features(train, wrong), std::invalid_argument);
}

TEST_CASE("kmeans k equals n gives zero inertia", "[cluster]") {
  Rng rng(3);
  LabelFeatureMatrix lf;
  lf.features = Mat(6, 4);
  for (auto& v : lf.features.data()) v = rng.normal();
  for (int i = 0; i < 6; ++i) lf.labels.push_back("l" + std::to_string(i));

  const auto cm = kmeans_fit(lf, 6, 1);
  CHECK(cm.inertia == Catch::Approx(0.0).margin(1e-18));
  std::set<int> used(cm.assignment.begin(), cm.assignment.end());
  CHECK(used.size() == 6);
}

TEST_CASE("kmeans k=1 yields the global mean and total variance", "[cluster]") {
  Rng rng(4);
  LabelFeatureMatrix lf;
  lf.features = Mat(10, 3);
  for (auto& v : lf.features.data()) v = rng.normal();
  for (int i = 0; i < 10; ++i) lf.labels.push_back("l" + std::to_string(i));

  const auto cm = kmeans_fit(lf, 1, 1);
  std::vector<double> mean(3, 0.0);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 3; ++j) mean[j] += lf.features(i, j);
  for (double& v : mean) v /= 10.0;
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(cm.centroids(0, j) == Catch::Approx(mean[j]).margin(1e-12));

  double var_total = 0.0;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double d = lf.features(i, j) - mean[j];
      var_total += d * d;
    }
  CHECK(cm.inertia == Catch::Approx(var_total).margin(1e-9));
}

TEST_CASE("kmeans rejects k greater than point count", "[cluster]") {
  LabelFeatureMatrix lf;
  lf.features = Mat(3, 2);
  lf.labels = {"a", "b", "c"};
  CHECK_THROWS_AS(kmeans_fit(lf, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_fit(lf, 0, 0), std::invalid_argument);
}

TEST_CASE("lloyd inertia history is nonincreasing", "[cluster]") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 12 + rng.uniform_int(20);
    Mat pts(static_cast<std::size_t>(n), 3);
    for (auto& v : pts.data()) v = rng.normal();
    const int k = 2 + rng.uniform_int(4);
    Rng seed_rng(trial);
    Mat init = kmeanspp_seed(pts, static_cast<std::size_t>(k), seed_rng);
    const auto res = lloyd(pts, init);
    for (std::size_t i = 1; i < res.inertia_history.size(); ++i)
      CHECK(res.inertia_history[i] <= res.inertia_history[i - 1] + 1e-12);
  }
}

TEST_CASE("lloyd converges to nearest-centroid assignments", "[cluster]") {
  Rng rng(22);
  Mat pts(20, 2);
  for (auto& v : pts.data()) v = rng.normal();
  Rng seed_rng(1);
  const auto res = lloyd(pts, kmeanspp_seed(pts, 3, seed_rng));
  for (std::size_t i = 0; i < 20; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = -1;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = sq_dist(pts.row(i), res.centroids.row(c), 2);
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    CHECK(res.assignment[i] == best_c);
  }
}

TEST_CASE("best pairwise seeding reaches the brute-force optimum on n=8 k=2", "[cluster]") {
  for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    Rng rng(seed);
    Mat pts(8, 2);
    for (auto& v : pts.data()) v = rng.normal();

    const double brute = testutil::brute_force_two_cluster_inertia(pts);

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < 8; ++a) {
      for (std::size_t b = a + 1; b < 8; ++b) {
        Mat init(2, 2);
        for (std::size_t j = 0; j < 2; ++j) {
          init(0, j) = pts(a, j);
          init(1, j) = pts(b, j);
        }
        best = std::min(best, lloyd(pts, init).inertia);
      }
    }
    CHECK(best == Catch::Approx(brute).margin(1e-9));
  }
}

TEST_CASE("kmeans_fit is deterministic given seed and restarts", "[cluster]") {
  Rng rng(30);
  LabelFeatureMatrix lf;
  lf.features = Mat(15, 4);
  for (auto& v : lf.features.data()) v = rng.normal();
  for (int i = 0; i < 15; ++i) lf.labels.push_back("l" + std::to_string(i));

  const auto a = kmeans_fit(lf, 3, 77);
  const auto b = kmeans_fit(lf, 3, 77);
  CHECK(a.assignment == b.assignment);
  CHECK(a.inertia == b.inertia);
  CHECK(a.centroids.data() == b.centroids.data());
}

TEST_CASE("planted clusters recovered on well-separated blobs", "[cluster]") {
  int recovered = 0;
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    std::vector<int> truth;
    const Mat pts = gaussian_blobs(4, 8, 6, 10.0, 0.3, rng, &truth);
    LabelFeatureMatrix lf;
    lf.features = pts;
    for (std::size_t i = 0; i < pts.rows(); ++i) lf.labels.push_back("l" + std::to_string(i));
    const auto cm = kmeans_fit(lf, 4, seed);
    if (testutil::adjusted_rand_index(truth, cm.assignment) == 1.0) ++recovered;
  }
  CHECK(recovered >= 9);
}

TEST_CASE("empty cluster repair keeps k clusters alive", "[cluster]") {
  // two tight far-apart groups; seed both initial centroids inside one group
  Mat pts(6, 1);
  pts(0, 0) = 0.0;
  pts(1, 0) = 0.1;
  pts(2, 0) = 0.2;
  pts(3, 0) = 100.0;
  pts(4, 0) = 100.1;
  pts(5, 0) = 100.2;
  Mat init(2, 1);
  init(0, 0) = 0.0;
  init(1, 0) = 0.05;  // both near the first group
  const auto res = lloyd(pts, init);
  std::set<int> used(res.assignment.begin(), res.assignment.end());
  CHECK(used.size() == 2);
  CHECK(res.inertia < 1.0);  // split recovered: within-group spread only
}

TEST_CASE("assign_doc_clusters unions label clusters", "[cluster]") {
  ClusterModel cm;
  cm.k = 4;
  cm.labels = {"a", "b", "c"};
  cm.assignment = {3, 3, 1};
  CHECK(assign_doc_clusters({"a", "b"}, cm).clusters == std::set<int>{3});
  CHECK(assign_doc_clusters({"a", "c"}, cm).clusters == std::set<int>{1, 3});

  const auto with_unknown = assign_doc_clusters({"a", "zzz"}, cm);
  CHECK(with_unknown.clusters == std::set<int>{3});
  CHECK(with_unknown.skipped_unknown);
}

TEST_CASE("cluster_id_sequence is ascending and token-formatted", "[cluster]") {
  CHECK(cluster_id_sequence({2, 1, 11}) == std::vector<std::string>{"<c1>", "<c2>", "<c11>"});
  CHECK(cluster_id_sequence({}).empty());
  CHECK(cluster_id_sequence({5}) == std::vector<std::string>{"<c5>"});
}

TEST_CASE("cluster model JSON round-trip", "[cluster]") {
  Rng rng(8);
  LabelFeatureMatrix lf;
  lf.features = Mat(10, 3);
  for (auto& v : lf.features.data()) v = rng.normal();
  for (int i = 0; i < 10; ++i) lf.labels.push_back("l" + std::to_string(i));
  const auto cm = kmeans_fit(lf, 3, 5);

  const auto dir = std::filesystem::temp_directory_path() / "xlgen_cluster_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "cm.json").string();
  save_cluster_model(cm, path);
  const auto loaded = load_cluster_model(path);
  CHECK(loaded.k == cm.k);
  CHECK(loaded.labels == cm.labels);
  CHECK(loaded.assignment == cm.assignment);
  CHECK(loaded.inertia == cm.inertia);
  CHECK(loaded.centroids.data() == cm.centroids.data());
  std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline recovery: tfidf label features separate planted clusters", "[cluster]") {
  int good = 0;
  for (int seed = 0; seed < 10; ++seed) {
    SynthConfig cfg;
    cfg.n_docs = 200;
    cfg.n_labels = 24;
    cfg.n_clusters = 4;
    cfg.unseen_label_count = 0;
    cfg.vocab_size = 200;
    cfg.seed = static_cast<std::uint64_t>(40 + seed);
    const auto data = synth_generate(cfg);
    const auto tfidf = tfidf_vectors(data.train.documents);
    const auto lf = label_features(data.train, tfidf.vectors);
    const auto cm = kmeans_fit(lf, 4, static_cast<std::uint64_t>(seed));

    std::vector<int> truth;
    for (const auto& l : lf.labels) truth.push_back(data.planted_clusters.at(l));
    if (testutil::adjusted_rand_index(truth, cm.assignment) >= 0.9) ++good;
  }
  CHECK(good >= 9);
}
