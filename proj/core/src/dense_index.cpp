#include "lirank/dense_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <queue>
#include <sstream>

#include "lirank/binary_io.hpp"
#include "lirank/errors.hpp"
#include "lirank/rng.hpp"
#include "lirank/similarity.hpp"

namespace lirank {

namespace {

constexpr char kFlatMagic[] = "LIFLAT01";
constexpr char kHnswMagic[] = "LIHNSW01";

}  // namespace

// ---------------------------------------------------------------------------
// FlatIndex
// ---------------------------------------------------------------------------

FlatIndex::FlatIndex(SimilarityKind kind, std::size_t dim) : kind_(kind), dim_(dim) {
  if (dim_ == 0) throw InvalidArgument("index dim must be > 0");
}

FlatIndex FlatIndex::build(const DenseRecords& records, SimilarityKind kind) {
  if (records.empty()) throw InvalidArgument("cannot build an index from zero vectors");
  FlatIndex index(kind, records.front().second.dim());
  index.ids_.reserve(records.size());
  index.vectors_.reserve(records.size() * index.dim_);
  index.norms_.reserve(records.size());
  for (const auto& [id, v] : records) index.add(id, v);
  return index;
}

void FlatIndex::add(std::string id, const DenseVector& v) { add(std::move(id), v.values()); }

void FlatIndex::add(std::string id, std::span<const float> v) {
  if (v.size() != dim_) throw DimensionMismatch(dim_, v.size());
  if (id.empty()) throw InvalidArgument("vector id must be non-empty");
  for (float x : v) {
    if (!std::isfinite(x)) throw InvalidArgument("vector '" + id + "' contains NaN/Inf");
  }
  const double n = l2_norm(v);
  if (kind_ == SimilarityKind::Cosine && n == 0.0) {
    throw InvalidArgument("zero vector '" + id + "' cannot be indexed under cosine similarity");
  }
  if (!by_id_.emplace(id, static_cast<std::uint32_t>(ids_.size())).second) {
    throw InvalidArgument("duplicate vector id '" + id + "'");
  }
  ids_.push_back(std::move(id));
  vectors_.insert(vectors_.end(), v.begin(), v.end());
  norms_.push_back(n);
}

double FlatIndex::prepare_query(std::span<const float> q) const {
  if (q.size() != dim_) throw DimensionMismatch(dim_, q.size());
  const double n = l2_norm(q);
  if (kind_ == SimilarityKind::Cosine && n == 0.0) {
    throw InvalidArgument("zero-norm query under cosine similarity");
  }
  return n;
}

double FlatIndex::score(std::span<const float> q, double q_norm, std::size_t ordinal) const {
  const double uv = dot(q, vector(ordinal));
  if (kind_ == SimilarityKind::Dot) return uv;
  return cosine_with_norms(uv, q_norm, norms_[ordinal]);
}

RankedRun FlatIndex::search_exact(const DenseVector& q, std::size_t k, std::string query_id) const {
  return search_exact(q.values(), k, std::move(query_id));
}

RankedRun FlatIndex::search_exact(std::span<const float> q, std::size_t k, std::string query_id) const {
  if (k == 0) throw InvalidArgument("search k must be >= 1");
  const double qn = prepare_query(q);
  RankedRun run{std::move(query_id), {}};
  run.candidates.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    run.candidates.push_back(ScoredCandidate{ids_[i], score(q, qn, i), Stage::FirstStage});
  }
  sort_and_truncate(run.candidates, k);
  return run;
}

void FlatIndex::encode(std::ostream& out) const {
  binary::Writer w(out);
  w.bytes(std::string_view(kFlatMagic, 8));
  w.u8(static_cast<std::uint8_t>(kind_));
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u64(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    w.str(ids_[i]);
    w.f32s(vector(i));
  }
}

FlatIndex FlatIndex::decode(std::istream& in) {
  binary::Reader r(in);
  binary::expect_magic(r, std::string_view(kFlatMagic, 8));
  const auto kind = r.u8("similarity kind");
  if (kind > 1) throw FormatError(FormatErrorKind::UnsupportedVersion, "unknown similarity kind");
  const auto dim = r.u32("dim");
  if (dim == 0) throw FormatError(FormatErrorKind::PayloadMismatch, "index dim is 0");
  const auto n = r.u64("vector count");
  FlatIndex index(static_cast<SimilarityKind>(kind), dim);
  std::vector<float> v(dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto id = r.str("vector id");
    r.f32s(v, "vector payload");
    index.add(std::move(id), v);
  }
  return index;
}

void save_flat(const FlatIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  index.encode(out);
}

FlatIndex load_flat(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  auto index = FlatIndex::decode(in);
  binary::Reader r(in);
  if (!r.at_end()) throw FormatError(FormatErrorKind::RecordCountMismatch, "trailing bytes in flat index");
  return index;
}

// ---------------------------------------------------------------------------
// HnswIndex
// ---------------------------------------------------------------------------

HnswIndex::HnswIndex(SimilarityKind kind, std::size_t dim, HnswParams params)
    : base_(kind, dim), params_(params) {
  if (params_.M < 2) throw InvalidArgument("HNSW M must be >= 2");
  if (params_.ef_construction < params_.M) {
    throw InvalidArgument("HNSW ef_construction must be >= M");
  }
}

HnswIndex HnswIndex::build(const FlatIndex& base, HnswParams params) {
  HnswIndex index(base.kind(), base.dim(), params);
  for (std::size_t i = 0; i < base.size(); ++i) index.add(base.id(i), base.vector(i));
  return index;
}

std::size_t HnswIndex::draw_level(std::size_t ordinal) const {
  const double ml = 1.0 / std::log(static_cast<double>(params_.M));
  const double u = uniform_open01(derive_seed(params_.seed, static_cast<std::uint64_t>(ordinal)));
  return static_cast<std::size_t>(std::floor(-std::log(u) * ml));
}

double HnswIndex::pair_score(std::uint32_t a, std::uint32_t b) const {
  return base_.score(base_.vector(a), base_.norm(a), b);
}

void HnswIndex::add(std::string id, const DenseVector& v) { add(std::move(id), v.values()); }

void HnswIndex::add(std::string id, std::span<const float> v) {
  base_.add(std::move(id), v);
  const auto node = static_cast<std::uint32_t>(base_.size() - 1);
  links_.emplace_back(draw_level(node) + 1);
  parent_.push_back(node);
  children_.push_back(0);
  link_new_node(node);
}

std::size_t HnswIndex::tree_degree(std::uint32_t node) const {
  return children_[node] + (parent_[node] != node ? 1 : 0);
}

void HnswIndex::prune_layer0(std::uint32_t owner) {
  auto& list = links_[owner][0];
  const std::size_t limit = max_neighbors(0);
  if (list.size() <= limit) return;
  std::vector<std::uint32_t> kept;
  std::vector<Scored> rest;
  for (auto other : list) {
    if (tree_edge(owner, other)) {
      kept.push_back(other);
    } else {
      rest.push_back({pair_score(owner, other), other});
    }
  }
  for (auto other : select_neighbors(std::move(rest), limit - kept.size())) kept.push_back(other);
  list = std::move(kept);
}

// Picks the best-scored neighbor with spare tree capacity as parent; any tree leaf
// qualifies as a last resort, so a parent always exists.
void HnswIndex::attach_to_tree(std::uint32_t node, const std::vector<Scored>& found,
                               std::vector<std::uint32_t>& chosen) {
  const std::size_t limit = max_neighbors(0);
  auto has_room = [&](std::uint32_t n) { return tree_degree(n) < limit; };
  std::optional<std::uint32_t> parent;
  for (auto c : chosen) {
    if (has_room(c)) {
      parent = c;
      break;
    }
  }
  for (std::size_t i = 0; !parent && i < found.size(); ++i) {
    if (has_room(found[i].node)) parent = found[i].node;
  }
  for (std::uint32_t n = 0; !parent && n < node; ++n) {
    if (has_room(n)) parent = n;
  }
  if (std::find(chosen.begin(), chosen.end(), *parent) == chosen.end()) {
    if (chosen.size() >= limit) chosen.pop_back();
    chosen.push_back(*parent);
  }
  parent_[node] = *parent;
  ++children_[*parent];
}

void HnswIndex::link_new_node(std::uint32_t node) {
  const int level = static_cast<int>(links_[node].size()) - 1;
  if (max_level_ < 0) {
    entry_ = node;
    max_level_ = level;
    return;
  }
  const auto q = base_.vector(node);
  const double qn = base_.norm(node);

  std::vector<Scored> entry{{base_.score(q, qn, entry_), entry_}};
  for (int lc = max_level_; lc > level; --lc) {
    entry = search_layer(q, qn, entry, 1, static_cast<std::size_t>(lc));
  }
  for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
    const auto layer = static_cast<std::size_t>(lc);
    auto found = search_layer(q, qn, entry, params_.ef_construction, layer);
    // Layer 0 takes up to 2M links from the start, as its back-link capacity does.
    auto chosen = select_neighbors(found, max_neighbors(layer));
    if (layer == 0) attach_to_tree(node, found, chosen);
    links_[node][layer] = chosen;
    for (auto nb : chosen) {
      auto& list = links_[nb][layer];
      list.push_back(node);
      if (layer == 0) {
        prune_layer0(nb);
      } else if (list.size() > max_neighbors(layer)) {
        std::vector<Scored> cands;
        cands.reserve(list.size());
        for (auto other : list) cands.push_back({pair_score(nb, other), other});
        list = select_neighbors(std::move(cands), max_neighbors(layer));
      }
    }
    entry = std::move(found);
  }
  if (level > max_level_) {
    entry_ = node;
    max_level_ = level;
  }
}

namespace {

// Orders by score, breaking ties on node ordinal so heap behavior is fully determined.
struct BetterFirst {
  template <typename S>
  bool operator()(const S& a, const S& b) const {
    if (a.score != b.score) return a.score < b.score;
    return a.node > b.node;
  }
};

struct WorseFirst {
  template <typename S>
  bool operator()(const S& a, const S& b) const {
    if (a.score != b.score) return a.score > b.score;
    return a.node < b.node;
  }
};

}  // namespace

std::vector<HnswIndex::Scored> HnswIndex::search_layer(std::span<const float> q, double q_norm,
                                                       const std::vector<Scored>& entry,
                                                       std::size_t ef, std::size_t level) const {
  std::vector<bool> visited(base_.size(), false);
  std::priority_queue<Scored, std::vector<Scored>, BetterFirst> candidates;
  std::priority_queue<Scored, std::vector<Scored>, WorseFirst> results;
  for (const auto& e : entry) {
    if (visited[e.node]) continue;
    visited[e.node] = true;
    candidates.push(e);
    results.push(e);
    if (results.size() > ef) results.pop();
  }
  while (!candidates.empty()) {
    const Scored c = candidates.top();
    if (results.size() >= ef && c.score < results.top().score) break;
    candidates.pop();
    if (level >= links_[c.node].size()) continue;
    for (auto nb : links_[c.node][level]) {
      if (visited[nb]) continue;
      visited[nb] = true;
      const double s = base_.score(q, q_norm, nb);
      if (results.size() < ef || s > results.top().score) {
        candidates.push({s, nb});
        results.push({s, nb});
        if (results.size() > ef) results.pop();
      }
    }
  }
  std::vector<Scored> out;
  out.reserve(results.size());
  while (!results.empty()) {
    out.push_back(results.top());
    results.pop();
  }
  std::reverse(out.begin(), out.end());  // best first
  return out;
}

// Diversity heuristic: keep a candidate only if it is closer to the query than to
// every neighbor already kept.
std::vector<std::uint32_t> HnswIndex::select_neighbors(std::vector<Scored> candidates,
                                                       std::size_t m) const {
  std::sort(candidates.begin(), candidates.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.node < b.node;
  });
  std::vector<std::uint32_t> kept;
  kept.reserve(m);
  for (const auto& c : candidates) {
    if (kept.size() >= m) break;
    bool diverse = true;
    for (auto r : kept) {
      if (pair_score(c.node, r) > c.score) {
        diverse = false;
        break;
      }
    }
    if (diverse) kept.push_back(c.node);
  }
  return kept;
}

RankedRun HnswIndex::search(const DenseVector& q, std::size_t k, std::size_t ef_search,
                            std::string query_id) const {
  return search(q.values(), k, ef_search, std::move(query_id));
}

RankedRun HnswIndex::search(std::span<const float> q, std::size_t k, std::size_t ef_search,
                            std::string query_id) const {
  if (k == 0) throw InvalidArgument("search k must be >= 1");
  if (ef_search < k) throw InvalidArgument("ef_search must be >= k");
  const double qn = base_.prepare_query(q);
  RankedRun run{std::move(query_id), {}};
  if (max_level_ < 0) return run;

  std::vector<Scored> entry{{base_.score(q, qn, entry_), entry_}};
  for (int lc = max_level_; lc > 0; --lc) {
    entry = search_layer(q, qn, entry, 1, static_cast<std::size_t>(lc));
  }
  const auto found = search_layer(q, qn, entry, ef_search, 0);
  run.candidates.reserve(found.size());
  for (const auto& s : found) {
    run.candidates.push_back(ScoredCandidate{base_.id(s.node), s.score, Stage::FirstStage});
  }
  sort_and_truncate(run.candidates, k);
  return run;
}

std::size_t HnswIndex::reachable_count() const {
  if (max_level_ < 0) return 0;
  std::vector<bool> seen(base_.size(), false);
  std::vector<std::uint32_t> stack{entry_};
  seen[entry_] = true;
  std::size_t count = 0;
  while (!stack.empty()) {
    const auto n = stack.back();
    stack.pop_back();
    ++count;
    for (auto nb : links_[n][0]) {
      if (!seen[nb]) {
        seen[nb] = true;
        stack.push_back(nb);
      }
    }
  }
  return count;
}

void HnswIndex::encode(std::ostream& out) const {
  binary::Writer w(out);
  w.bytes(std::string_view(kHnswMagic, 8));
  w.u64(params_.M);
  w.u64(params_.ef_construction);
  w.u64(params_.seed);
  base_.encode(out);
  w.u32(entry_);
  w.u32(static_cast<std::uint32_t>(max_level_ + 1));
  for (const auto& levels : links_) {
    w.u32(static_cast<std::uint32_t>(levels.size()));
    for (const auto& list : levels) {
      w.u32(static_cast<std::uint32_t>(list.size()));
      for (auto nb : list) w.u32(nb);
    }
  }
  for (auto p : parent_) w.u32(p);
}

HnswIndex HnswIndex::decode(std::istream& in) {
  binary::Reader r(in);
  binary::expect_magic(r, std::string_view(kHnswMagic, 8));
  HnswParams params;
  params.M = r.u64("M");
  params.ef_construction = r.u64("ef_construction");
  params.seed = r.u64("seed");
  auto base = FlatIndex::decode(in);
  HnswIndex index(base.kind(), base.dim(), params);
  index.base_ = std::move(base);
  index.entry_ = r.u32("entry point");
  index.max_level_ = static_cast<int>(r.u32("max level")) - 1;
  const auto n = index.base_.size();
  index.links_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto levels = r.u32("level count");
    if (levels == 0) throw FormatError(FormatErrorKind::PayloadMismatch, "node without layer 0");
    index.links_[i].resize(levels);
    for (auto& list : index.links_[i]) {
      list.resize(r.u32("neighbor count"));
      for (auto& nb : list) {
        nb = r.u32("neighbor");
        if (nb >= n) throw FormatError(FormatErrorKind::PayloadMismatch, "neighbor ordinal out of range");
      }
    }
  }
  index.parent_.resize(n);
  index.children_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = r.u32("tree parent");
    if (p >= n || (p == i && i != 0) || (i == 0 && p != 0)) {
      throw FormatError(FormatErrorKind::PayloadMismatch, "invalid tree parent");
    }
    index.parent_[i] = p;
    if (p != i) ++index.children_[p];
  }
  if (n > 0 && (index.entry_ >= n || index.max_level_ < 0)) {
    throw FormatError(FormatErrorKind::PayloadMismatch, "invalid entry point");
  }
  return index;
}

void HnswIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  encode(out);
}

HnswIndex HnswIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  auto index = decode(in);
  binary::Reader r(in);
  if (!r.at_end()) throw FormatError(FormatErrorKind::RecordCountMismatch, "trailing bytes in HNSW index");
  return index;
}

}  // namespace lirank
