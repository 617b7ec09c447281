#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlgen/corpus.hpp"

namespace xlgen {

// Token vocabulary. Fixed specials lead, then the task prefixes, then the
// cluster-id tokens <c0>..<c{k-1}>, then the word tokens in sorted order.
class Vocab {
 public:
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int sep = 3;
  static constexpr int unk = 4;
  static constexpr int multilabel = 5;
  static constexpr int multicluster = 6;
  static constexpr int first_cluster = 7;

  Vocab() = default;

  static Vocab build(const Dataset& train, int k_clusters) {
    std::set<std::string> words;
    for (const auto& doc : train.documents) {
      for (const auto& tok : doc.text) words.insert(tok);
      for (const auto& label : doc.gold_labels)
        for (const auto& w : text::label_words(label)) words.insert(w);
    }
    return from_words({words.begin(), words.end()}, k_clusters);
  }

  static Vocab from_words(std::vector<std::string> words, int k_clusters) {
    Vocab v;
    v.k_clusters_ = k_clusters;
    v.tokens_ = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>", "<multilabel>", "<multicluster>"};
    for (int c = 0; c < k_clusters; ++c) v.tokens_.push_back("<c" + std::to_string(c) + ">");
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (auto& w : words) v.tokens_.push_back(std::move(w));
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i);
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int k_clusters() const { return k_clusters_; }

  int encode_token(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? unk : it->second;
  }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(encode_token(t));
    return out;
  }

  const std::string& decode_token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocab::decode_token: bad id");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(decode_token(id));
    return out;
  }

  bool is_cluster_token(int id) const {
    return id >= first_cluster && id < first_cluster + k_clusters_;
  }

  int cluster_token_id(int cluster) const {
    if (cluster < 0 || cluster >= k_clusters_)
      throw std::out_of_range("Vocab::cluster_token_id: bad cluster id");
    return first_cluster + cluster;
  }

  std::optional<int> cluster_of_token(int id) const {
    if (!is_cluster_token(id)) return std::nullopt;
    return id - first_cluster;
  }

  // everything that is not a plain word token
  bool is_special(int id) const { return id < first_cluster + k_clusters_; }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  int k_clusters_ = 0;
};

}  // namespace xlgen
