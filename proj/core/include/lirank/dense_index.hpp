#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lirank/types.hpp"

namespace lirank {

using DenseRecords = std::vector<std::pair<std::string, DenseVector>>;

/// Brute-force single-vector index. Vectors are stored contiguously in insertion
/// order; norms are cached for Cosine scoring.
class FlatIndex {
 public:
  FlatIndex(SimilarityKind kind, std::size_t dim);

  /// Throws InvalidArgument on empty input, duplicate ids, or a zero vector under
  /// Cosine; DimensionMismatch on mixed dims.
  static FlatIndex build(const DenseRecords& records, SimilarityKind kind);

  void add(std::string id, const DenseVector& v);
  void add(std::string id, std::span<const float> v);

  SimilarityKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::string& id(std::size_t ordinal) const { return ids_[ordinal]; }
  std::span<const float> vector(std::size_t ordinal) const {
    return std::span<const float>(vectors_).subspan(ordinal * dim_, dim_);
  }
  double norm(std::size_t ordinal) const { return norms_[ordinal]; }

  /// Validates a query against this index (dim, and non-zero norm under Cosine)
  /// and returns its norm.
  double prepare_query(std::span<const float> q) const;

  /// Similarity between a prepared query and a stored vector.
  double score(std::span<const float> q, double q_norm, std::size_t ordinal) const;

  RankedRun search_exact(const DenseVector& q, std::size_t k, std::string query_id = {}) const;
  RankedRun search_exact(std::span<const float> q, std::size_t k, std::string query_id = {}) const;

  void encode(std::ostream& out) const;
  static FlatIndex decode(std::istream& in);

  bool operator==(const FlatIndex&) const = default;

 private:
  SimilarityKind kind_;
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<float> vectors_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::uint32_t> by_id_;
};

struct HnswParams {
  std::size_t M = 16;
  std::size_t ef_construction = 200;
  std::uint64_t seed = 42;

  bool operator==(const HnswParams&) const = default;
};

inline constexpr std::size_t kDefaultEfSearch = 128;

/// Hierarchical navigable small-world graph over a FlatIndex. Node levels are a
/// pure function of (seed, ordinal), so builds are reproducible and a loaded
/// snapshot keeps growing deterministically.
///
/// Layer 0 carries a spanning tree: every node after the first links to a parent
/// and back, and pruning never drops a tree edge. Every node therefore stays
/// reachable from any entry point.
class HnswIndex {
 public:
  /// Throws InvalidArgument unless M >= 2 and ef_construction >= M.
  HnswIndex(SimilarityKind kind, std::size_t dim, HnswParams params = {});

  static HnswIndex build(const FlatIndex& base, HnswParams params = {});

  void add(std::string id, const DenseVector& v);
  void add(std::string id, std::span<const float> v);

  /// Throws DimensionMismatch, or InvalidArgument when ef_search < k.
  RankedRun search(const DenseVector& q, std::size_t k, std::size_t ef_search = kDefaultEfSearch,
                   std::string query_id = {}) const;
  RankedRun search(std::span<const float> q, std::size_t k, std::size_t ef_search = kDefaultEfSearch,
                   std::string query_id = {}) const;

  const FlatIndex& base() const { return base_; }
  const HnswParams& params() const { return params_; }
  std::size_t size() const { return base_.size(); }
  int max_level() const { return max_level_; }
  std::uint32_t entry_point() const { return entry_; }
  std::size_t level_of(std::size_t node) const { return links_[node].size() - 1; }
  const std::vector<std::uint32_t>& neighbors(std::size_t node, std::size_t level) const {
    return links_[node][level];
  }
  std::size_t max_neighbors(std::size_t level) const { return level == 0 ? 2 * params_.M : params_.M; }

  /// Number of nodes reachable on layer 0 from the entry point.
  std::size_t reachable_count() const;

  /// Tree parent on layer 0; the first node is its own parent.
  std::uint32_t parent_of(std::size_t node) const { return parent_[node]; }

  void save(const std::filesystem::path& path) const;
  static HnswIndex load(const std::filesystem::path& path);
  void encode(std::ostream& out) const;
  static HnswIndex decode(std::istream& in);

  bool operator==(const HnswIndex&) const = default;

 private:
  struct Scored {
    double score;
    std::uint32_t node;
  };

  std::size_t draw_level(std::size_t ordinal) const;
  void link_new_node(std::uint32_t node);
  void attach_to_tree(std::uint32_t node, const std::vector<Scored>& found, std::vector<std::uint32_t>& chosen);
  std::vector<Scored> search_layer(std::span<const float> q, double q_norm,
                                   const std::vector<Scored>& entry, std::size_t ef,
                                   std::size_t level) const;
  std::vector<std::uint32_t> select_neighbors(std::vector<Scored> candidates, std::size_t m) const;
  /// Prunes `owner`'s layer-0 list to the limit, keeping its tree edges.
  void prune_layer0(std::uint32_t owner);
  bool tree_edge(std::uint32_t a, std::uint32_t b) const { return parent_[a] == b || parent_[b] == a; }
  std::size_t tree_degree(std::uint32_t node) const;
  double pair_score(std::uint32_t a, std::uint32_t b) const;

  FlatIndex base_;
  HnswParams params_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> level -> neighbors
  std::uint32_t entry_ = 0;
  int max_level_ = -1;
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint32_t> children_;  // tree children per node, derived from parent_
};

/// Persistence for exact indexes (same container conventions as HnswIndex).
void save_flat(const FlatIndex& index, const std::filesystem::path& path);
FlatIndex load_flat(const std::filesystem::path& path);

}  // namespace lirank
