#include "lirank/adapter.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "lirank/binary_io.hpp"
#include "lirank/errors.hpp"
#include "lirank/rng.hpp"

namespace lirank {

namespace {

constexpr char kAdapterMagic[] = "LIADAPT1";

}  // namespace

Adapter::Adapter(std::size_t dim_in, std::size_t dim_out, std::vector<double> weights, Meta meta)
    : dim_in_(dim_in), dim_out_(dim_out), weights_(std::move(weights)), meta_(meta) {
  if (dim_in_ == 0 || dim_out_ == 0) throw InvalidArgument("adapter dims must be > 0");
  if (dim_out_ > dim_in_) throw InvalidArgument("adapter dim_out must not exceed dim_in");
  if (weights_.size() != dim_in_ * dim_out_) {
    throw InvalidArgument("adapter expects " + std::to_string(dim_in_ * dim_out_) + " weights, got " +
                          std::to_string(weights_.size()));
  }
  for (double w : weights_) {
    if (!std::isfinite(w)) throw InvalidArgument("adapter weights must be finite");
  }
}

Adapter Adapter::identity(std::size_t dim_in, std::size_t dim_out, Meta meta) {
  std::vector<double> w(dim_in * dim_out, 0.0);
  for (std::size_t i = 0; i < std::min(dim_in, dim_out); ++i) w[i * dim_out + i] = 1.0;
  return Adapter(dim_in, dim_out, std::move(w), meta);
}

std::vector<double> Adapter::apply(std::span<const float> v) const {
  if (v.size() != dim_in_) throw DimensionMismatch(dim_in_, v.size());
  std::vector<double> out(dim_out_, 0.0);
  for (std::size_t i = 0; i < dim_in_; ++i) {
    const double x = v[i];
    if (x == 0.0) continue;
    const double* row = weights_.data() + i * dim_out_;
    for (std::size_t k = 0; k < dim_out_; ++k) out[k] += x * row[k];
  }
  return out;
}

std::vector<float> Adapter::apply_f32(std::span<const float> v) const {
  const auto d = apply(v);
  return std::vector<float>(d.begin(), d.end());
}

TokenMatrix Adapter::apply(const TokenMatrix& m) const {
  std::vector<float> rows;
  rows.reserve(m.token_count() * dim_out_);
  for (std::size_t i = 0; i < m.token_count(); ++i) {
    const auto r = apply(m.row(i));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return TokenMatrix(m.token_count(), dim_out_, std::move(rows), false);
}

void Adapter::encode(std::ostream& out) const {
  binary::Writer w(out);
  w.bytes(std::string_view(kAdapterMagic, 8));
  w.u32(static_cast<std::uint32_t>(dim_in_));
  w.u32(static_cast<std::uint32_t>(dim_out_));
  w.u8(static_cast<std::uint8_t>(meta_.kind));
  w.u64(meta_.seed);
  w.u64(meta_.config_hash);
  for (double x : weights_) w.f64(x);
}

Adapter Adapter::decode(std::istream& in) {
  binary::Reader r(in);
  binary::expect_magic(r, std::string_view(kAdapterMagic, 8));
  const auto dim_in = r.u32("adapter dim_in");
  const auto dim_out = r.u32("adapter dim_out");
  Meta meta;
  const auto kind = r.u8("adapter kind");
  if (kind > 1) throw FormatError(FormatErrorKind::UnsupportedVersion, "unknown similarity kind");
  meta.kind = static_cast<SimilarityKind>(kind);
  meta.seed = r.u64("adapter seed");
  meta.config_hash = r.u64("adapter config hash");
  if (dim_in == 0 || dim_out == 0 || dim_out > dim_in) {
    throw FormatError(FormatErrorKind::PayloadMismatch, "invalid adapter dims");
  }
  std::vector<double> w(static_cast<std::size_t>(dim_in) * dim_out);
  for (auto& x : w) x = r.f64("adapter weights");
  if (!r.at_end()) throw FormatError(FormatErrorKind::RecordCountMismatch, "trailing bytes in adapter file");
  return Adapter(dim_in, dim_out, std::move(w), meta);
}

void Adapter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  encode(out);
}

Adapter Adapter::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  return decode(in);
}

io::EmbeddingFile adapt_embeddings(const Adapter& adapter, const io::EmbeddingFile& file) {
  if (file.header.dim != adapter.dim_in()) throw DimensionMismatch(adapter.dim_in(), file.header.dim);
  io::EmbeddingFile out;
  out.header = file.header;
  out.header.dim = static_cast<std::uint32_t>(adapter.dim_out());
  out.header.normalized = false;
  out.records.reserve(file.records.size());
  for (const auto& rec : file.records) {
    io::EmbeddingRecord r{rec.id, rec.token_count, {}};
    r.values.reserve(static_cast<std::size_t>(rec.token_count) * adapter.dim_out());
    for (std::uint32_t t = 0; t < rec.token_count; ++t) {
      const auto row = std::span<const float>(rec.values).subspan(t * file.header.dim, file.header.dim);
      const auto a = adapter.apply_f32(row);
      r.values.insert(r.values.end(), a.begin(), a.end());
    }
    out.records.push_back(std::move(r));
  }
  out.header.record_count = out.records.size();
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// One raw input vector, its adapted image, and the gradient w.r.t. that image.
struct Side {
  std::span<const float> raw;
  std::vector<double> adapted;
  std::vector<double> grad;
  double norm = 0.0;

  Side(const Adapter& a, std::span<const float> x, SimilarityKind kind)
      : raw(x), adapted(a.apply(x)), grad(a.dim_out(), 0.0) {
    norm = std::sqrt(dot(adapted, adapted));
    if (kind == SimilarityKind::Cosine && norm == 0.0) {
      throw InvalidArgument("adapted vector has zero norm under cosine similarity");
    }
  }
};

double sim(const Side& u, const Side& v, SimilarityKind kind) {
  const double uv = dot(u.adapted, v.adapted);
  return kind == SimilarityKind::Dot ? uv : uv / (u.norm * v.norm);
}

/// Adds coef * d sim(u, v) / du to u.grad and coef * d sim / dv to v.grad.
void backprop_sim(Side& u, Side& v, SimilarityKind kind, double coef) {
  if (coef == 0.0) return;
  const std::size_t d = u.adapted.size();
  if (kind == SimilarityKind::Dot) {
    for (std::size_t k = 0; k < d; ++k) {
      u.grad[k] += coef * v.adapted[k];
      v.grad[k] += coef * u.adapted[k];
    }
    return;
  }
  const double s = sim(u, v, kind);
  const double inv = 1.0 / (u.norm * v.norm);
  const double su = s / (u.norm * u.norm);
  const double sv = s / (v.norm * v.norm);
  for (std::size_t k = 0; k < d; ++k) {
    u.grad[k] += coef * (v.adapted[k] * inv - su * u.adapted[k]);
    v.grad[k] += coef * (u.adapted[k] * inv - sv * v.adapted[k]);
  }
}

/// grad_W += x g^T for every side (u = W^T x).
void accumulate_weight_grad(std::vector<double>& grad_w, std::size_t dim_out, const Side& s) {
  for (std::size_t i = 0; i < s.raw.size(); ++i) {
    const double x = s.raw[i];
    if (x == 0.0) continue;
    double* row = grad_w.data() + i * dim_out;
    for (std::size_t k = 0; k < dim_out; ++k) row[k] += x * s.grad[k];
  }
}

/// Returns -log softmax(logits)[target] and overwrites `logits` with the softmax.
/// When the target holds the largest logit the loss is log1p of the other terms, which
/// keeps full relative precision as it approaches zero.
double cross_entropy_inplace(std::vector<double>& logits, std::size_t target) {
  const double m = *std::max_element(logits.begin(), logits.end());
  const double lt = logits[target];
  double z = 0.0, rest = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    logits[j] = std::exp(logits[j] - m);
    z += logits[j];
    if (j != target) rest += logits[j];
  }
  for (double& l : logits) l /= z;
  return lt == m ? std::log1p(rest) : (m - lt) + std::log(z);
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("temperature must be > 0");
}

}  // namespace

LossResult inbatch_loss(const Adapter& adapter, const VectorRefs& queries, const VectorRefs& positives,
                        SimilarityKind kind, double tau) {
  check_tau(tau);
  const std::size_t b = queries.size();
  if (b != positives.size()) throw InvalidArgument("in-batch loss needs |Q| == |P|");
  if (b < 2) throw InvalidArgument("in-batch loss needs a batch of at least 2");

  std::vector<Side> q, p;
  q.reserve(b);
  p.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    q.emplace_back(adapter, queries[i], kind);
    p.emplace_back(adapter, positives[i], kind);
  }

  LossResult out;
  std::vector<double> row(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) row[j] = sim(q[i], p[j], kind) / tau;
    out.loss += cross_entropy_inplace(row, i);
    for (std::size_t j = 0; j < b; ++j) {
      const double coef = (row[j] - (i == j ? 1.0 : 0.0)) / (static_cast<double>(b) * tau);
      backprop_sim(q[i], p[j], kind, coef);
    }
  }
  out.loss /= static_cast<double>(b);

  out.grad.assign(adapter.dim_in() * adapter.dim_out(), 0.0);
  for (const auto& s : q) accumulate_weight_grad(out.grad, adapter.dim_out(), s);
  for (const auto& s : p) accumulate_weight_grad(out.grad, adapter.dim_out(), s);
  return out;
}

LossResult explicit_negatives_loss(const Adapter& adapter, std::span<const float> query,
                                   std::span<const float> positive, const VectorRefs& negatives,
                                   SimilarityKind kind, double tau) {
  check_tau(tau);
  if (negatives.empty()) throw InvalidArgument("explicit-negatives loss needs at least one negative");

  Side q(adapter, query, kind);
  std::vector<Side> docs;
  docs.reserve(negatives.size() + 1);
  docs.emplace_back(adapter, positive, kind);
  for (const auto& n : negatives) docs.emplace_back(adapter, n, kind);

  std::vector<double> logits(docs.size());
  for (std::size_t j = 0; j < docs.size(); ++j) logits[j] = sim(q, docs[j], kind) / tau;
  LossResult out;
  out.loss = cross_entropy_inplace(logits, 0);
  for (std::size_t j = 0; j < docs.size(); ++j) {
    backprop_sim(q, docs[j], kind, (logits[j] - (j == 0 ? 1.0 : 0.0)) / tau);
  }
  out.grad.assign(adapter.dim_in() * adapter.dim_out(), 0.0);
  accumulate_weight_grad(out.grad, adapter.dim_out(), q);
  for (const auto& s : docs) accumulate_weight_grad(out.grad, adapter.dim_out(), s);
  return out;
}

namespace {

struct TokenSides {
  std::vector<Side> rows;

  TokenSides(const Adapter& a, const TokenMatrix& m, SimilarityKind kind) {
    if (m.dim() != a.dim_in()) throw DimensionMismatch(a.dim_in(), m.dim());
    rows.reserve(m.token_count());
    for (std::size_t i = 0; i < m.token_count(); ++i) rows.emplace_back(a, m.row(i), kind);
  }
};

/// MaxSim over adapted rows, recording the chosen document row per query token.
double maxsim(const TokenSides& q, const TokenSides& d, SimilarityKind kind, std::vector<std::size_t>& argmax) {
  argmax.assign(q.rows.size(), 0);
  double total = 0.0;
  for (std::size_t i = 0; i < q.rows.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d.rows.size(); ++j) {
      const double s = sim(q.rows[i], d.rows[j], kind);
      if (s > best) {
        best = s;
        argmax[i] = j;
      }
    }
    total += best;
  }
  return total;
}

}  // namespace

LossResult maxsim_negatives_loss(const Adapter& adapter, const TokenMatrix& query,
                                 const TokenMatrix& positive, const std::vector<TokenMatrix>& negatives,
                                 SimilarityKind kind, double tau) {
  check_tau(tau);
  if (negatives.empty()) throw InvalidArgument("MaxSim loss needs at least one negative");

  TokenSides q(adapter, query, kind);
  std::vector<TokenSides> docs;
  docs.reserve(negatives.size() + 1);
  docs.emplace_back(adapter, positive, kind);
  for (const auto& n : negatives) docs.emplace_back(adapter, n, kind);

  std::vector<std::vector<std::size_t>> argmax(docs.size());
  std::vector<double> logits(docs.size());
  for (std::size_t j = 0; j < docs.size(); ++j) logits[j] = maxsim(q, docs[j], kind, argmax[j]) / tau;
  LossResult out;
  out.loss = cross_entropy_inplace(logits, 0);
  for (std::size_t j = 0; j < docs.size(); ++j) {
    const double coef = (logits[j] - (j == 0 ? 1.0 : 0.0)) / tau;
    for (std::size_t i = 0; i < q.rows.size(); ++i) {
      backprop_sim(q.rows[i], docs[j].rows[argmax[j][i]], kind, coef);
    }
  }
  out.grad.assign(adapter.dim_in() * adapter.dim_out(), 0.0);
  for (const auto& s : q.rows) accumulate_weight_grad(out.grad, adapter.dim_out(), s);
  for (const auto& d : docs) {
    for (const auto& s : d.rows) accumulate_weight_grad(out.grad, adapter.dim_out(), s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

const char* to_string(LossKind kind) {
  return kind == LossKind::InBatch ? "inbatch" : "explicit";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "inbatch" || name == "ibns") return LossKind::InBatch;
  if (name == "explicit" || name == "negatives") return LossKind::ExplicitNegatives;
  throw InvalidArgument("unknown loss '" + std::string(name) + "' (expected inbatch|explicit)");
}

void TrainConfig::validate() const {
  check_tau(temperature);
  if (loss == LossKind::InBatch && batch_size < 2) throw InvalidArgument("in-batch training needs batch_size >= 2");
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
}

std::uint64_t TrainConfig::hash() const {
  std::ostringstream s;
  s.precision(17);
  s << to_string(loss) << '|' << lirank::to_string(kind) << '|' << temperature << '|' << batch_size << '|'
    << epochs << '|' << learning_rate << '|' << momentum << '|' << seed << '|' << dim_out;
  return fnv1a64(s.str());
}

std::vector<TrainingExample> resolve_examples(
    const std::vector<io::TrainingPairRecord>& pairs,
    const std::unordered_map<std::string, std::vector<float>>& query_vectors,
    const std::unordered_map<std::string, std::vector<float>>& passage_vectors, bool need_negatives) {
  auto lookup = [](const auto& table, const std::string& id, const char* what) -> const std::vector<float>& {
    auto it = table.find(id);
    if (it == table.end()) throw NotFound(std::string("no embedding for ") + what + " '" + id + "'");
    return it->second;
  };
  std::vector<TrainingExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    TrainingExample ex;
    ex.query = lookup(query_vectors, p.query_id, "query");
    ex.positive = lookup(passage_vectors, p.positive_doc_id, "passage");
    if (need_negatives) {
      if (p.negative_doc_ids.empty()) {
        throw InvalidArgument("pair for query '" + p.query_id + "' has no negatives");
      }
      for (const auto& n : p.negative_doc_ids) ex.negatives.push_back(lookup(passage_vectors, n, "passage"));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> partition(const std::vector<std::size_t>& order, std::size_t batch_size,
                                                std::size_t min_batch) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() < min_batch) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

LossResult batch_loss(const Adapter& adapter, const std::vector<TrainingExample>& examples,
                      const std::vector<std::size_t>& batch, const TrainConfig& cfg) {
  if (cfg.loss == LossKind::InBatch) {
    VectorRefs q, p;
    for (auto i : batch) {
      q.emplace_back(examples[i].query);
      p.emplace_back(examples[i].positive);
    }
    return inbatch_loss(adapter, q, p, cfg.kind, cfg.temperature);
  }
  LossResult total;
  total.grad.assign(adapter.dim_in() * adapter.dim_out(), 0.0);
  for (auto i : batch) {
    const auto& ex = examples[i];
    VectorRefs negs(ex.negatives.begin(), ex.negatives.end());
    auto r = explicit_negatives_loss(adapter, ex.query, ex.positive, negs, cfg.kind, cfg.temperature);
    total.loss += r.loss;
    for (std::size_t k = 0; k < r.grad.size(); ++k) total.grad[k] += r.grad[k];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total.loss *= inv;
  for (double& g : total.grad) g *= inv;
  return total;
}

std::size_t min_batch(const TrainConfig& cfg) { return cfg.loss == LossKind::InBatch ? 2 : 1; }

}  // namespace

double dataset_loss(const Adapter& adapter, const std::vector<TrainingExample>& examples,
                    const TrainConfig& cfg) {
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double weighted = 0.0;
  for (const auto& batch : partition(order, cfg.batch_size, min_batch(cfg))) {
    weighted += batch_loss(adapter, examples, batch, cfg).loss * static_cast<double>(batch.size());
  }
  return weighted / static_cast<double>(examples.size());
}

TrainResult train_adapter(const std::vector<TrainingExample>& examples, const TrainConfig& cfg) {
  cfg.validate();
  if (examples.size() < min_batch(cfg)) throw InvalidArgument("not enough training examples");
  const std::size_t dim_in = examples.front().query.size();
  for (const auto& ex : examples) {
    if (ex.query.size() != dim_in) throw DimensionMismatch(dim_in, ex.query.size());
    if (ex.positive.size() != dim_in) throw DimensionMismatch(dim_in, ex.positive.size());
    for (const auto& n : ex.negatives) {
      if (n.size() != dim_in) throw DimensionMismatch(dim_in, n.size());
    }
    if (cfg.loss == LossKind::ExplicitNegatives && ex.negatives.empty()) {
      throw InvalidArgument("explicit-negatives training needs negatives for every pair");
    }
  }
  const std::size_t dim_out = cfg.dim_out == 0 ? dim_in : cfg.dim_out;

  TrainResult result;
  result.adapter = Adapter::identity(dim_in, dim_out, Adapter::Meta{cfg.kind, cfg.seed, cfg.hash()});
  result.initial_loss = dataset_loss(result.adapter, examples, cfg);

  std::vector<double> velocity(dim_in * dim_out, 0.0);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_index(rng, i)]);
    }
    double sum = 0.0;
    const auto batches = partition(order, cfg.batch_size, min_batch(cfg));
    for (const auto& batch : batches) {
      auto r = batch_loss(result.adapter, examples, batch, cfg);
      if (!std::isfinite(r.loss)) {
        throw Error("training diverged at epoch " + std::to_string(epoch + 1));
      }
      sum += r.loss;
      auto w = result.adapter.mutable_weights();
      for (std::size_t k = 0; k < w.size(); ++k) {
        velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * r.grad[k];
        w[k] += velocity[k];
      }
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.mean_batch_loss = sum / static_cast<double>(batches.size());
    log.eval_loss = dataset_loss(result.adapter, examples, cfg);
    result.log.push_back(log);
  }
  return result;
}

}  // namespace lirank
