#pragma once

// Bag-of-binary-words place recognition: a hierarchical k-medians
// vocabulary over 256-bit descriptors, tf-idf BoW vectors, and an
// inverted index over every keyframe the server has seen.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cslam/mapcore.hpp"

namespace cslam {

struct BowVector {
  std::map<std::uint32_t, double> weights;  // leaf id -> tf-idf, L1-normalized
};

// L1 similarity in [0,1]: sum of min weights over shared leaves.
double bow_similarity(const BowVector& a, const BowVector& b);

class Vocabulary {
 public:
  struct Node {
    Descriptor centroid;
    std::vector<std::uint32_t> children;  // empty for leaves
    std::int32_t leaf_id = -1;
    double idf = 0.0;
  };

  // Hierarchical k-medians under Hamming distance, deterministic under
  // seed. The corpus must hold at least k^L descriptors.
  static Vocabulary train(const std::vector<Descriptor>& corpus, int k, int levels,
                          std::uint64_t seed);

  std::uint32_t quantize(const Descriptor& d) const;  // leaf id
  BowVector convert(const std::vector<Descriptor>& descriptors) const;

  int branching() const { return k_; }
  int depth() const { return levels_; }
  std::uint32_t leaf_count() const { return leaf_count_; }

  void save(const std::string& path) const;
  static std::optional<Vocabulary> load(const std::string& path);

  bool operator==(const Vocabulary& other) const;

 private:
  int k_ = 0;
  int levels_ = 0;
  std::uint32_t leaf_count_ = 0;
  std::vector<Node> nodes_;  // nodes_[0] is the root
  friend struct VocabularyBuilder;
};

struct MatchCandidate {
  KfId query_kf;
  std::uint32_t query_submap = 0;
  KfId matched_kf;
  std::uint32_t matched_submap = 0;
  double score = 0.0;
  bool same_submap = false;
};

enum class FusionRoute { TriggerInterMapBA, TriggerMultiMapFusion };

struct PlaceRecParams {
  std::uint64_t min_gap = 30;      // same-submap sequence gap excluded around the query
  int top_k = 3;                   // candidates returned
  int consistency_window = 2;      // prior queries a submap must have scored in
  int consistency_pool = 5;        // how deep "scored" reaches
  double min_score = 0.02;
};

// Inverted index plus per-agent temporal-consistency history.
class PlaceRecognizer {
 public:
  PlaceRecognizer(const Vocabulary* vocab, PlaceRecParams params = {})
      : vocab_(vocab), params_(params) {}

  // Index the keyframe and return overlap candidates scored against
  // everything previously indexed.
  std::vector<MatchCandidate> add_and_query(const KeyFrame& kf, std::uint32_t submap_id);

  const BowVector* bow_of(const KfId& id) const;

 private:
  struct IndexedKf {
    KfId id;
    std::uint32_t submap_id;
    BowVector bow;
  };

  const Vocabulary* vocab_;
  PlaceRecParams params_;
  std::vector<IndexedKf> frames_;
  std::map<KfId, std::size_t> by_id_;
  std::map<std::uint32_t, std::vector<std::size_t>> inverted_;       // leaf -> frame indices
  std::map<std::uint32_t, std::vector<std::set<std::uint32_t>>> history_;  // agent -> recent top submap sets
};

FusionRoute dispatch(const MatchCandidate& candidate, const ServerMapContainer& container);

}  // namespace cslam
