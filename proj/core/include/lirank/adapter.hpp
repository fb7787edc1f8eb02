#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lirank/io.hpp"
#include "lirank/types.hpp"

namespace lirank {

struct AdapterMeta {
  SimilarityKind kind = SimilarityKind::Cosine;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  bool operator==(const AdapterMeta&) const = default;
};

/// Linear map v -> W^T v shared by queries and passages. W is dim_in x dim_out,
/// row-major, held in double precision.
class Adapter {
 public:
  using Meta = AdapterMeta;

  Adapter() = default;
  /// Throws InvalidArgument for dim_out > dim_in, a zero dim, a weight count that
  /// is not dim_in * dim_out, or non-finite weights.
  Adapter(std::size_t dim_in, std::size_t dim_out, std::vector<double> weights, Meta meta = {});

  /// Top dim_out x dim_out block is the identity, remaining rows are zero.
  static Adapter identity(std::size_t dim_in, std::size_t dim_out, Meta meta = {});

  std::size_t dim_in() const { return dim_in_; }
  std::size_t dim_out() const { return dim_out_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_weights() { return weights_; }
  double weight(std::size_t row, std::size_t col) const { return weights_[row * dim_out_ + col]; }
  const Meta& meta() const { return meta_; }
  void set_meta(Meta meta) { meta_ = meta; }

  /// Throws DimensionMismatch when v.size() != dim_in.
  std::vector<double> apply(std::span<const float> v) const;
  std::vector<float> apply_f32(std::span<const float> v) const;
  /// Row-wise application; the result is never flagged row_normalized.
  TokenMatrix apply(const TokenMatrix& m) const;

  void encode(std::ostream& out) const;
  static Adapter decode(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Adapter load(const std::filesystem::path& path);

  bool operator==(const Adapter&) const = default;

 private:
  std::size_t dim_in_ = 0;
  std::size_t dim_out_ = 0;
  std::vector<double> weights_;
  Meta meta_;
};

/// Re-embeds every record of a dense or token file through the adapter.
io::EmbeddingFile adapt_embeddings(const Adapter& adapter, const io::EmbeddingFile& file);

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d W, same layout as Adapter::weights()
};

using VectorRefs = std::vector<std::span<const float>>;

/// In-batch softmax cross-entropy: row i scores query i against every positive in
/// the batch, the true class being positive i.
///   loss = -(1/B) sum_i log softmax_i(sim(q_i, p_1..p_B) / tau)
/// Throws InvalidArgument for tau <= 0, B < 2, or |Q| != |P|.
LossResult inbatch_loss(const Adapter& adapter, const VectorRefs& queries, const VectorRefs& positives,
                        SimilarityKind kind, double tau);

/// Softmax cross-entropy over (p+, p-_1..p-_n) for one query.
LossResult explicit_negatives_loss(const Adapter& adapter, std::span<const float> query,
                                   std::span<const float> positive, const VectorRefs& negatives,
                                   SimilarityKind kind, double tau);

/// Same objective with MaxSim scores over adapted token rows in place of
/// single-vector similarities (re-ranker stand-in).
LossResult maxsim_negatives_loss(const Adapter& adapter, const TokenMatrix& query,
                                 const TokenMatrix& positive, const std::vector<TokenMatrix>& negatives,
                                 SimilarityKind kind, double tau);

enum class LossKind { InBatch, ExplicitNegatives };

const char* to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct TrainConfig {
  LossKind loss = LossKind::InBatch;
  SimilarityKind kind = SimilarityKind::Cosine;
  double temperature = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  std::size_t dim_out = 0;  // 0: same as input dim

  void validate() const;
  std::uint64_t hash() const;
};

/// Embeddings resolved for one training pair.
struct TrainingExample {
  std::vector<float> query;
  std::vector<float> positive;
  std::vector<std::vector<float>> negatives;
};

/// Resolves ids against embedding tables. Throws NotFound naming the first
/// missing id before any training starts.
std::vector<TrainingExample> resolve_examples(
    const std::vector<io::TrainingPairRecord>& pairs,
    const std::unordered_map<std::string, std::vector<float>>& query_vectors,
    const std::unordered_map<std::string, std::vector<float>>& passage_vectors, bool need_negatives);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_batch_loss = 0.0;  // averaged over the epoch's (shuffled) batches
  double eval_loss = 0.0;        // full training set, fixed partition, after the epoch
};

struct TrainResult {
  Adapter adapter;
  double initial_loss = 0.0;  // eval_loss of the initial adapter
  std::vector<EpochLog> log;
};

/// Mini-batch gradient descent (optional momentum) from the identity-padded
/// adapter. Deterministic for a fixed config.
TrainResult train_adapter(const std::vector<TrainingExample>& examples, const TrainConfig& cfg);

/// Loss of `adapter` over the fixed, unshuffled partition of `examples`.
double dataset_loss(const Adapter& adapter, const std::vector<TrainingExample>& examples,
                    const TrainConfig& cfg);

}  // namespace lirank
