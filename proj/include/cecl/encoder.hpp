#pragma once

// Query/key encoders, data augmentation, the momentum key queue and the
// contrastive embedding pool.

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "cecl/nn.hpp"
#include "cecl/rng.hpp"
#include "cecl/types.hpp"

namespace cecl {

enum class Architecture { mlp, cnn };

struct ModelSpec {
  Architecture architecture = Architecture::mlp;
  int input_dim = 2;
  ImageShape image;  // required for cnn
  int hidden = 128;
  int hidden_layers = 2;
  int conv_channels = 8;  // first conv block; the second doubles it
  int projection_hidden = 128;
  int embedding_dim = 64;
  int classes = 2;
};

// A single trunk shared by two heads: a linear classifier and a two-layer
// projection head whose output is L2-normalized.
class Model {
 public:
  Model() = default;
  Model(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::size_t param_count() const { return params.size(); }

  std::span<double> trunk_params() { return std::span(params).subspan(0, trunk_.param_count()); }
  std::span<const double> trunk_params() const { return std::span(params).subspan(0, trunk_.param_count()); }
  std::span<const double> classifier_params() const {
    return std::span(params).subspan(trunk_.param_count(), classifier_.param_count());
  }
  std::span<const double> projection_params() const {
    return std::span(params).subspan(trunk_.param_count() + classifier_.param_count());
  }

  struct Pass {
    Network::Cache trunk, classifier, projection;
    Matrix features;   // trunk output
    Matrix logits;     // empty unless requested
    Matrix raw;        // projection output before normalization
    Matrix embedding;  // unit rows; empty unless requested
  };

  Pass forward(const Matrix& x, bool logits, bool embedding) const;
  Matrix logits(const Matrix& x) const { return forward(x, true, false).logits; }
  Matrix embed(const Matrix& x) const { return forward(x, false, true).embedding; }

  // Accumulates d loss / d params into grad. Either upstream gradient may
  // be null when that head did not contribute.
  void backward(const Pass& pass, const Matrix* dlogits, const Matrix* dembedding,
                std::span<double> grad) const;

  // Flat parameter collection: [trunk | classifier | projection].
  std::vector<double> params;

 private:
  ModelSpec spec_;
  Network trunk_, classifier_, projection_;
};

struct AugmentSpec {
  bool enabled = true;
  double jitter = 0.1;  // Gaussian feature jitter for vector corpora
  int crop_pad = 2;     // random crop after zero padding, for images
  bool flip = true;     // random horizontal flip, for images
  ImageShape image;
};

// Augments one example in place of a copy; identity when disabled.
RowVector augment(const RowVector& x, const AugmentSpec& spec, Rng& rng);

// Augmented copies of a batch. Row i uses a stream derived from
// (seed, ids[i], view) so results do not depend on batch composition.
Matrix augment_batch(const Matrix& x, std::span<const int> ids, const AugmentSpec& spec,
                     std::uint64_t seed, std::uint64_t view);

enum class Partition : std::uint8_t { clean = 0, noisy = 1 };

struct EmbeddingRecord {
  Vector q;
  Vector k;
  int coarse_label = 0;
  Partition partition = Partition::clean;
  int example_id = 0;
};

struct ViewBatch {
  Matrix query_input;
  Model::Pass query;  // logits + embedding of the query view
  Matrix keys;        // unit rows from the key network (no gradient)
};

ViewBatch forward_views(const Model& query, const Model& key, const Matrix& x,
                        std::span<const int> ids, const AugmentSpec& spec, std::uint64_t seed);

EmbeddingRecord forward_views(const Model& query, const Model& key, const RowVector& x,
                              int example_id, const AugmentSpec& spec, std::uint64_t seed);

// key <- m * key + (1 - m) * query, element-wise. m in [0, 1).
void momentum_update(std::vector<double>& key, std::span<const double> query, double m);
void momentum_update(Model& key, const Model& query, double m);

struct QueueEntry {
  Vector key;
  int label = 0;
  Partition partition = Partition::clean;
  bool flag = false;  // open-set decision at push time
  int example_id = 0;
};

// Fixed-capacity FIFO of recent key embeddings with their metadata.
class MomentumQueue {
 public:
  explicit MomentumQueue(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const QueueEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::deque<QueueEntry>& entries() const { return entries_; }

  // Appends in order, evicting the oldest entries beyond capacity. Throws
  // DomainError if a key is not unit-norm.
  void push(std::span<const QueueEntry> batch);
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<QueueEntry> entries_;
};

enum class PoolSource : std::uint8_t { batch_query = 0, batch_key = 1, queue = 2 };

// A = B_q u B_k u queue. Rows [0, b) are the batch queries, [b, 2b) the
// batch keys and the rest the queue snapshot, oldest first. The contrast
// set A(x) of batch anchor i is every row except row i.
struct Pool {
  Matrix vectors;
  std::vector<int> labels;
  std::vector<Partition> partition;
  std::vector<int> example_ids;
  std::vector<PoolSource> source;
  std::vector<int> batch_row;  // owning batch row, -1 for queue rows
  int batch_size = 0;

  int size() const { return static_cast<int>(labels.size()); }
  // Pool rows forming A(x) for batch anchor i.
  std::vector<int> contrast_set(int anchor) const;
};

struct BatchMeta {
  std::vector<int> labels;  // coarse labels Y'
  std::vector<Partition> partition;
  std::vector<int> example_ids;
};

Pool build_pool(const Matrix& batch_queries, const Matrix& batch_keys, const BatchMeta& meta,
                const MomentumQueue& queue);

}  // namespace cecl
