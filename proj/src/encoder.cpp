#include "cecl/encoder.hpp"

#include <cmath>

#include "cecl/errors.hpp"

namespace cecl {

namespace {

constexpr double kUnitTolerance = 1e-6;

Network build_trunk(const ModelSpec& spec) {
  if (spec.architecture == Architecture::cnn) {
    if (!spec.image.is_image()) throw ConfigError("cnn encoder needs an image shape");
    Network net(spec.image);
    net.conv3x3(spec.conv_channels).relu().avg_pool2().conv3x3(2 * spec.conv_channels).relu().global_avg_pool();
    net.linear(spec.hidden).relu();
    return net;
  }
  Network net(spec.input_dim);
  for (int i = 0; i < spec.hidden_layers; ++i) net.linear(spec.hidden).relu();
  return net;
}

}  // namespace

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (spec.embedding_dim < 1 || spec.hidden < 1) throw ConfigError("layer widths must be positive");
  trunk_ = build_trunk(spec);
  classifier_ = Network(trunk_.output_dim());
  classifier_.linear(spec.classes);
  projection_ = Network(trunk_.output_dim());
  projection_.linear(spec.projection_hidden).relu().linear(spec.embedding_dim);

  params.assign(trunk_.param_count() + classifier_.param_count() + projection_.param_count(), 0.0);
  Rng rng(seed);
  std::span<double> all(params);
  trunk_.init_params(all.subspan(0, trunk_.param_count()), rng);
  classifier_.init_params(all.subspan(trunk_.param_count(), classifier_.param_count()), rng);
  projection_.init_params(all.subspan(trunk_.param_count() + classifier_.param_count()), rng);
}

Model::Pass Model::forward(const Matrix& x, bool logits, bool embedding) const {
  if (params.size() != trunk_.param_count() + classifier_.param_count() + projection_.param_count()) {
    throw InternalError("model parameters do not match the architecture");
  }
  Pass pass;
  pass.features = trunk_.forward(trunk_params(), x, &pass.trunk);
  if (logits) pass.logits = classifier_.forward(classifier_params(), pass.features, &pass.classifier);
  if (embedding) {
    pass.raw = projection_.forward(projection_params(), pass.features, &pass.projection);
    pass.embedding = pass.raw;
    for (Eigen::Index i = 0; i < pass.raw.rows(); ++i) {
      const double norm = pass.raw.row(i).norm();
      if (norm <= 0.0) throw DomainError("zero projection output cannot be normalized");
      pass.embedding.row(i) /= norm;
    }
  }
  return pass;
}

void Model::backward(const Pass& pass, const Matrix* dlogits, const Matrix* dembedding,
                     std::span<double> grad) const {
  if (grad.size() != params.size()) throw InternalError("gradient buffer has the wrong size");
  std::span<double> g_trunk = grad.subspan(0, trunk_.param_count());
  std::span<double> g_cls = grad.subspan(trunk_.param_count(), classifier_.param_count());
  std::span<double> g_proj = grad.subspan(trunk_.param_count() + classifier_.param_count());

  Matrix dfeatures = Matrix::Zero(pass.features.rows(), pass.features.cols());
  if (dlogits) dfeatures += classifier_.backward(classifier_params(), pass.classifier, *dlogits, g_cls);
  if (dembedding) {
    // d(z/|z|) = (I - q q^T) / |z|
    Matrix draw(pass.raw.rows(), pass.raw.cols());
    for (Eigen::Index i = 0; i < pass.raw.rows(); ++i) {
      const auto q = pass.embedding.row(i);
      const auto dq = dembedding->row(i);
      draw.row(i) = (dq - q * q.dot(dq)) / pass.raw.row(i).norm();
    }
    dfeatures += projection_.backward(projection_params(), pass.projection, draw, g_proj);
  }
  trunk_.backward(trunk_params(), pass.trunk, dfeatures, g_trunk);
}

RowVector augment(const RowVector& x, const AugmentSpec& spec, Rng& rng) {
  if (!spec.enabled) return x;
  if (!spec.image.is_image()) {
    RowVector out = x;
    for (Eigen::Index j = 0; j < out.size(); ++j) out(j) += rng.normal(0.0, spec.jitter);
    return out;
  }
  const ImageShape& s = spec.image;
  if (x.size() != s.size()) throw InputError("image augmentation: feature size mismatch");
  const int pad = spec.crop_pad;
  const int dy = pad > 0 ? static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
  const int dx = pad > 0 ? static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
  const bool flip = spec.flip && rng.uniform() < 0.5;
  RowVector out = RowVector::Zero(x.size());
  for (int ch = 0; ch < s.channels; ++ch) {
    for (int y = 0; y < s.height; ++y) {
      const int sy = y + dy;
      if (sy < 0 || sy >= s.height) continue;
      for (int xx = 0; xx < s.width; ++xx) {
        const int tx = flip ? s.width - 1 - xx : xx;
        const int sx = tx + dx;
        if (sx < 0 || sx >= s.width) continue;
        out((ch * s.height + y) * s.width + xx) = x((ch * s.height + sy) * s.width + sx);
      }
    }
  }
  return out;
}

Matrix augment_batch(const Matrix& x, std::span<const int> ids, const AugmentSpec& spec,
                     std::uint64_t seed, std::uint64_t view) {
  if (static_cast<Eigen::Index>(ids.size()) != x.rows()) throw InternalError("augment_batch: id count mismatch");
  if (!spec.enabled) return x;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(ids[static_cast<std::size_t>(i)]), view}));
    out.row(i) = augment(x.row(i), spec, rng);
  }
  return out;
}

ViewBatch forward_views(const Model& query, const Model& key, const Matrix& x,
                        std::span<const int> ids, const AugmentSpec& spec, std::uint64_t seed) {
  if (x.cols() != query.spec().input_dim) throw InputError("forward_views: input shape mismatch");
  ViewBatch views;
  views.query_input = augment_batch(x, ids, spec, seed, 0);
  views.query = query.forward(views.query_input, true, true);
  views.keys = key.embed(augment_batch(x, ids, spec, seed, 1));
  return views;
}

EmbeddingRecord forward_views(const Model& query, const Model& key, const RowVector& x,
                              int example_id, const AugmentSpec& spec, std::uint64_t seed) {
  const int ids[] = {example_id};
  ViewBatch views = forward_views(query, key, Matrix(x), ids, spec, seed);
  EmbeddingRecord record;
  record.q = views.query.embedding.row(0).transpose();
  record.k = views.keys.row(0).transpose();
  record.example_id = example_id;
  return record;
}

void momentum_update(std::vector<double>& key, std::span<const double> query, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (key.size() != query.size()) throw InternalError("momentum_update: parameter shapes differ");
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = m * key[i] + (1.0 - m) * query[i];
}

void momentum_update(Model& key, const Model& query, double m) {
  momentum_update(key.params, query.params, m);
}

void MomentumQueue::push(std::span<const QueueEntry> batch) {
  for (const QueueEntry& entry : batch) {
    if (std::abs(entry.key.norm() - 1.0) > kUnitTolerance) {
      throw DomainError("queue entries must be unit-norm");
    }
  }
  if (capacity_ == 0) return;
  for (const QueueEntry& entry : batch) {
    entries_.push_back(entry);
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

std::vector<int> Pool::contrast_set(int anchor) const {
  std::vector<int> rows;
  rows.reserve(labels.size());
  for (int a = 0; a < size(); ++a) {
    if (a != anchor) rows.push_back(a);
  }
  return rows;
}

Pool build_pool(const Matrix& batch_queries, const Matrix& batch_keys, const BatchMeta& meta,
                const MomentumQueue& queue) {
  const auto b = static_cast<int>(batch_queries.rows());
  if (batch_keys.rows() != b || static_cast<int>(meta.labels.size()) != b ||
      static_cast<int>(meta.partition.size()) != b || static_cast<int>(meta.example_ids.size()) != b) {
    throw InternalError("build_pool: batch metadata mismatch");
  }
  const int total = 2 * b + static_cast<int>(queue.size());
  Pool pool;
  pool.batch_size = b;
  pool.vectors.resize(total, batch_queries.cols());
  if (b > 0) {
    pool.vectors.topRows(b) = batch_queries;
    pool.vectors.middleRows(b, b) = batch_keys;
  }
  for (int view = 0; view < 2; ++view) {
    for (int i = 0; i < b; ++i) {
      const auto k = static_cast<std::size_t>(i);
      pool.labels.push_back(meta.labels[k]);
      pool.partition.push_back(meta.partition[k]);
      pool.example_ids.push_back(meta.example_ids[k]);
      pool.source.push_back(view == 0 ? PoolSource::batch_query : PoolSource::batch_key);
      pool.batch_row.push_back(i);
    }
  }
  for (std::size_t j = 0; j < queue.size(); ++j) {
    const QueueEntry& entry = queue[j];
    if (entry.key.size() != batch_queries.cols()) throw InternalError("queue embedding size mismatch");
    pool.vectors.row(2 * b + static_cast<int>(j)) = entry.key.transpose();
    pool.labels.push_back(entry.label);
    pool.partition.push_back(entry.partition);
    pool.example_ids.push_back(entry.example_id);
    pool.source.push_back(PoolSource::queue);
    pool.batch_row.push_back(-1);
  }
  return pool;
}

}  // namespace cecl
