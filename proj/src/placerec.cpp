#include "cslam/placerec.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>

namespace cslam {
namespace {

// Bitwise-majority centroid, the Hamming-space median.
Descriptor majority_centroid(const std::vector<Descriptor>& descs,
                             const std::vector<std::size_t>& members) {
  std::array<int, 256> ones{};
  for (std::size_t m : members)
    for (int b = 0; b < 256; ++b)
      if (descs[m].bit(b)) ++ones[b];
  Descriptor c;
  const int half = static_cast<int>(members.size()) / 2;
  for (int b = 0; b < 256; ++b)
    if (ones[b] > half) c.set_bit(b);
  return c;
}

}  // namespace

double bow_similarity(const BowVector& a, const BowVector& b) {
  double s = 0.0;
  auto ia = a.weights.begin();
  auto ib = b.weights.begin();
  while (ia != a.weights.end() && ib != b.weights.end()) {
    if (ia->first < ib->first)
      ++ia;
    else if (ib->first < ia->first)
      ++ib;
    else {
      s += std::min(ia->second, ib->second);
      ++ia;
      ++ib;
    }
  }
  return s;
}

struct VocabularyBuilder {
  const std::vector<Descriptor>& corpus;
  int k;
  int levels;
  std::mt19937_64 rng;
  Vocabulary vocab;
  std::vector<std::uint32_t> leaf_sizes;

  VocabularyBuilder(const std::vector<Descriptor>& c, int k_in, int levels_in, std::uint64_t seed)
      : corpus(c), k(k_in), levels(levels_in), rng(seed) {}

  std::uint32_t make_node(const std::vector<std::size_t>& members, int depth) {
    const std::uint32_t idx = static_cast<std::uint32_t>(vocab.nodes_.size());
    vocab.nodes_.emplace_back();
    vocab.nodes_[idx].centroid = majority_centroid(corpus, members);

    if (depth == levels || members.size() <= 1) {
      vocab.nodes_[idx].leaf_id = static_cast<std::int32_t>(leaf_sizes.size());
      leaf_sizes.push_back(static_cast<std::uint32_t>(members.size()));
      return idx;
    }

    std::vector<std::vector<std::size_t>> clusters = cluster(members);
    std::vector<std::uint32_t> children;
    for (const auto& c : clusters)
      if (!c.empty()) children.push_back(make_node(c, depth + 1));
    vocab.nodes_[idx].children = std::move(children);
    return idx;
  }

  // k-medians under Hamming distance. Tiny nodes split into singleton
  // children so distinct descriptors end up in distinct leaves.
  std::vector<std::vector<std::size_t>> cluster(const std::vector<std::size_t>& members) {
    const int kk = std::min<int>(k, static_cast<int>(members.size()));
    if (static_cast<int>(members.size()) <= k) {
      std::vector<std::vector<std::size_t>> singletons;
      std::vector<std::size_t> uniq = members;
      for (std::size_t m : members) (void)m;
      singletons.reserve(members.size());
      for (std::size_t m : members) {
        bool dup = false;
        for (auto& c : singletons)
          if (corpus[c.front()] == corpus[m]) {
            c.push_back(m);
            dup = true;
            break;
          }
        if (!dup) singletons.push_back({m});
      }
      return singletons;
    }

    // Seeded farthest-point initialization.
    std::vector<Descriptor> centers;
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    centers.push_back(corpus[members[pick(rng)]]);
    while (static_cast<int>(centers.size()) < kk) {
      std::size_t best = members[0];
      int best_d = -1;
      for (std::size_t m : members) {
        int d = 256;
        for (const Descriptor& c : centers) d = std::min(d, hamming(corpus[m], c));
        if (d > best_d) {
          best_d = d;
          best = m;
        }
      }
      if (best_d == 0) break;  // fewer distinct descriptors than centers
      centers.push_back(corpus[best]);
    }

    std::vector<int> assign(members.size(), -1);
    for (int iter = 0; iter < 10; ++iter) {
      bool changed = false;
      for (std::size_t i = 0; i < members.size(); ++i) {
        int best_c = 0, best_d = 257;
        for (std::size_t c = 0; c < centers.size(); ++c) {
          const int d = hamming(corpus[members[i]], centers[c]);
          if (d < best_d) {
            best_d = d;
            best_c = static_cast<int>(c);
          }
        }
        if (assign[i] != best_c) {
          assign[i] = best_c;
          changed = true;
        }
      }
      if (!changed) break;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        std::vector<std::size_t> mem;
        for (std::size_t i = 0; i < members.size(); ++i)
          if (assign[i] == static_cast<int>(c)) mem.push_back(members[i]);
        if (!mem.empty()) centers[c] = majority_centroid(corpus, mem);
      }
    }

    std::vector<std::vector<std::size_t>> clusters(centers.size());
    for (std::size_t i = 0; i < members.size(); ++i)
      clusters[assign[i]].push_back(members[i]);
    return clusters;
  }
};

Vocabulary Vocabulary::train(const std::vector<Descriptor>& corpus, int k, int levels,
                             std::uint64_t seed) {
  const double needed = std::pow(double(k), double(levels));
  if (double(corpus.size()) < needed)
    throw std::invalid_argument("vocabulary corpus too small: need at least " +
                                std::to_string(static_cast<std::uint64_t>(needed)) +
                                " descriptors, got " + std::to_string(corpus.size()));

  VocabularyBuilder b(corpus, k, levels, seed);
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  b.make_node(all, 0);
  b.vocab.k_ = k;
  b.vocab.levels_ = levels;
  b.vocab.leaf_count_ = static_cast<std::uint32_t>(b.leaf_sizes.size());

  const double n = static_cast<double>(corpus.size());
  for (Node& node : b.vocab.nodes_)
    if (node.leaf_id >= 0)
      node.idf = std::log((n + 1.0) / (double(b.leaf_sizes[node.leaf_id]) + 1.0));
  return std::move(b.vocab);
}

std::uint32_t Vocabulary::quantize(const Descriptor& d) const {
  // Small beam over the tree; the margin between sibling centroids of a
  // random-descriptor corpus is narrow, and the beam keeps noisy
  // re-observations landing on the same leaf.
  constexpr int kBeam = 3;
  std::vector<std::uint32_t> frontier{0};
  std::uint32_t best_leaf = 0;
  int best_leaf_d = 257;

  while (!frontier.empty()) {
    std::vector<std::pair<int, std::uint32_t>> next;  // (distance, node)
    for (std::uint32_t ni : frontier) {
      const Node& node = nodes_[ni];
      if (node.children.empty()) {
        const int dist = hamming(d, node.centroid);
        if (dist < best_leaf_d ||
            (dist == best_leaf_d && node.leaf_id < nodes_[best_leaf].leaf_id)) {
          best_leaf_d = dist;
          best_leaf = ni;
        }
        continue;
      }
      for (std::uint32_t c : node.children) next.emplace_back(hamming(d, nodes_[c].centroid), c);
    }
    std::sort(next.begin(), next.end());
    if (static_cast<int>(next.size()) > kBeam) next.resize(kBeam);
    frontier.clear();
    for (const auto& [dist, ni] : next) frontier.push_back(ni);
  }
  return static_cast<std::uint32_t>(nodes_[best_leaf].leaf_id);
}

BowVector Vocabulary::convert(const std::vector<Descriptor>& descriptors) const {
  BowVector v;
  if (descriptors.empty()) return v;
  std::map<std::uint32_t, int> counts;
  for (const Descriptor& d : descriptors) counts[quantize(d)]++;

  std::map<std::uint32_t, double> idf_by_leaf;
  for (const Node& n : nodes_)
    if (n.leaf_id >= 0) idf_by_leaf[static_cast<std::uint32_t>(n.leaf_id)] = n.idf;

  double total = 0.0;
  for (const auto& [leaf, c] : counts) {
    const double w = double(c) / double(descriptors.size()) * idf_by_leaf[leaf];
    if (w > 0.0) {
      v.weights[leaf] = w;
      total += w;
    }
  }
  if (total > 0.0)
    for (auto& [leaf, w] : v.weights) w /= total;
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  auto put32 = [&os](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  os.write("CSVB", 4);
  put32(1);  // version
  put32(static_cast<std::uint32_t>(k_));
  put32(static_cast<std::uint32_t>(levels_));
  put32(leaf_count_);
  put32(static_cast<std::uint32_t>(nodes_.size()));
  for (const Node& n : nodes_) {
    os.write(reinterpret_cast<const char*>(n.centroid.words.data()), 32);
    const std::int32_t leaf = n.leaf_id;
    os.write(reinterpret_cast<const char*>(&leaf), 4);
    os.write(reinterpret_cast<const char*>(&n.idf), 8);
    put32(static_cast<std::uint32_t>(n.children.size()));
    for (std::uint32_t c : n.children) put32(c);
  }
}

std::optional<Vocabulary> Vocabulary::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  char magic[4];
  is.read(magic, 4);
  if (std::string(magic, 4) != "CSVB") return std::nullopt;
  auto get32 = [&is]() {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  if (get32() != 1) return std::nullopt;
  Vocabulary v;
  v.k_ = static_cast<int>(get32());
  v.levels_ = static_cast<int>(get32());
  v.leaf_count_ = get32();
  const std::uint32_t n_nodes = get32();
  v.nodes_.resize(n_nodes);
  for (Node& n : v.nodes_) {
    is.read(reinterpret_cast<char*>(n.centroid.words.data()), 32);
    std::int32_t leaf = -1;
    is.read(reinterpret_cast<char*>(&leaf), 4);
    n.leaf_id = leaf;
    is.read(reinterpret_cast<char*>(&n.idf), 8);
    n.children.resize(get32());
    for (std::uint32_t& c : n.children) c = get32();
  }
  if (!is) return std::nullopt;
  return v;
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  if (k_ != other.k_ || levels_ != other.levels_ || leaf_count_ != other.leaf_count_ ||
      nodes_.size() != other.nodes_.size())
    return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!(nodes_[i].centroid == other.nodes_[i].centroid)) return false;
    if (nodes_[i].children != other.nodes_[i].children) return false;
    if (nodes_[i].leaf_id != other.nodes_[i].leaf_id) return false;
    if (nodes_[i].idf != other.nodes_[i].idf) return false;
  }
  return true;
}

std::vector<MatchCandidate> PlaceRecognizer::add_and_query(const KeyFrame& kf,
                                                           std::uint32_t submap_id) {
  BowVector bow = vocab_->convert(kf.descriptors);

  // Score every indexed frame sharing at least one leaf with the query.
  std::map<std::size_t, double> scores;
  for (const auto& [leaf, wq] : bow.weights) {
    auto it = inverted_.find(leaf);
    if (it == inverted_.end()) continue;
    for (std::size_t fi : it->second) {
      const auto wit = frames_[fi].bow.weights.find(leaf);
      if (wit != frames_[fi].bow.weights.end()) scores[fi] += std::min(wq, wit->second);
    }
  }

  std::vector<std::pair<double, std::size_t>> ranked;
  for (const auto& [fi, s] : scores) {
    const IndexedKf& f = frames_[fi];
    if (f.submap_id == submap_id) {
      const std::uint64_t gap = kf.id.seq > f.id.seq ? kf.id.seq - f.id.seq : f.id.seq - kf.id.seq;
      if (gap < params_.min_gap) continue;
    }
    if (s < params_.min_score) continue;
    ranked.emplace_back(s, fi);
  }
  std::sort(ranked.begin(), ranked.end(), [this](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return frames_[a.second].id < frames_[b.second].id;
  });

  // Temporal consistency: a candidate's submap must have scored in the
  // top pool of the previous `consistency_window` queries from this agent.
  std::set<std::uint32_t> pool;
  for (std::size_t i = 0; i < ranked.size() && i < std::size_t(params_.consistency_pool); ++i)
    pool.insert(frames_[ranked[i].second].submap_id);

  auto& hist = history_[kf.id.agent];
  std::vector<MatchCandidate> out;
  if (static_cast<int>(hist.size()) >= params_.consistency_window) {
    for (const auto& [s, fi] : ranked) {
      if (static_cast<int>(out.size()) >= params_.top_k) break;
      const IndexedKf& f = frames_[fi];
      bool consistent = true;
      for (int h = 0; h < params_.consistency_window; ++h)
        if (!hist[hist.size() - 1 - h].count(f.submap_id)) consistent = false;
      if (!consistent) continue;
      MatchCandidate c;
      c.query_kf = kf.id;
      c.query_submap = submap_id;
      c.matched_kf = f.id;
      c.matched_submap = f.submap_id;
      c.score = s;
      c.same_submap = f.submap_id == submap_id;
      out.push_back(c);
    }
  }

  hist.push_back(std::move(pool));
  if (static_cast<int>(hist.size()) > params_.consistency_window) hist.erase(hist.begin());

  // Index the query itself.
  const std::size_t idx = frames_.size();
  for (const auto& [leaf, w] : bow.weights) inverted_[leaf].push_back(idx);
  by_id_[kf.id] = idx;
  frames_.push_back({kf.id, submap_id, std::move(bow)});
  return out;
}

const BowVector* PlaceRecognizer::bow_of(const KfId& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &frames_[it->second].bow;
}

FusionRoute dispatch(const MatchCandidate& candidate, const ServerMapContainer& container) {
  if (!candidate.same_submap) return FusionRoute::TriggerMultiMapFusion;
  const bool fused = container.group_members(candidate.matched_submap).size() > 1;
  return fused ? FusionRoute::TriggerMultiMapFusion : FusionRoute::TriggerInterMapBA;
}

}  // namespace cslam
