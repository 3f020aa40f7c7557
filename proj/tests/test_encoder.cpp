#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cecl/encoder.hpp"
#include "cecl/errors.hpp"

using namespace cecl;

namespace {

ModelSpec small_mlp() {
  ModelSpec spec;
  spec.input_dim = 5;
  spec.hidden = 12;
  spec.hidden_layers = 2;
  spec.projection_hidden = 10;
  spec.embedding_dim = 6;
  spec.classes = 3;
  return spec;
}

QueueEntry entry(int id, int dim = 3) {
  QueueEntry e;
  e.key = Vector::Zero(dim);
  e.key[id % dim] = 1.0;
  e.example_id = id;
  e.label = id % 2;
  return e;
}

std::vector<int> queue_ids(const MomentumQueue& q) {
  std::vector<int> ids;
  for (const auto& e : q.entries()) ids.push_back(e.example_id);
  return ids;
}

}  // namespace

TEST_CASE("forward_views normalizes and is reproducible") {
  Model query(small_mlp(), 1);
  Model key = query;
  Rng rng(4);
  RowVector x(5);
  for (int j = 0; j < 5; ++j) x[j] = rng.normal();

  AugmentSpec off;
  off.enabled = false;
  EmbeddingRecord same = forward_views(query, key, x, 0, off, 9);
  CHECK(same.q == same.k);

  AugmentSpec on;
  on.jitter = 0.3;
  EmbeddingRecord a = forward_views(query, key, x, 3, on, 9);
  EmbeddingRecord b = forward_views(query, key, x, 3, on, 9);
  CHECK(std::abs(a.q.norm() - 1.0) < 1e-6);
  CHECK(std::abs(a.k.norm() - 1.0) < 1e-6);
  CHECK(a.q == b.q);
  CHECK(a.k == b.k);
  CHECK(a.q != a.k);

  Matrix batch(8, 5);
  for (int i = 0; i < batch.size(); ++i) batch.data()[i] = rng.normal(0.0, 3.0);
  std::vector<int> ids = {0, 1, 2, 3, 4, 5, 6, 7};
  ViewBatch views = forward_views(query, key, batch, ids, on, 2);
  for (int i = 0; i < 8; ++i) {
    CHECK(std::abs(views.query.embedding.row(i).norm() - 1.0) < 1e-6);
    CHECK(std::abs(views.keys.row(i).norm() - 1.0) < 1e-6);
  }

  CHECK_THROWS_AS(forward_views(query, key, RowVector::Zero(4), 0, on, 1), InputError);
}

TEST_CASE("model backward matches finite differences") {
  ModelSpec spec = small_mlp();
  Model model(spec, 3);
  Rng rng(8);
  Matrix x(4, spec.input_dim);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Matrix wl(4, spec.classes), we(4, spec.embedding_dim);
  for (int i = 0; i < wl.size(); ++i) wl.data()[i] = rng.normal();
  for (int i = 0; i < we.size(); ++i) we.data()[i] = rng.normal();

  // Scalar objective: <wl, logits> + <we, embedding>.
  auto objective = [&](const Model& m) {
    Model::Pass p = m.forward(x, true, true);
    return (p.logits.array() * wl.array()).sum() + (p.embedding.array() * we.array()).sum();
  };
  Model::Pass pass = model.forward(x, true, true);
  std::vector<double> grad(model.param_count(), 0.0);
  model.backward(pass, &wl, &we, grad);

  const double h = 1e-5;
  for (std::size_t i = 0; i < model.param_count(); i += 7) {
    Model plus = model, minus = model;
    plus.params[i] += h;
    minus.params[i] -= h;
    const double fd = (objective(plus) - objective(minus)) / (2 * h);
    CHECK(std::abs(fd - grad[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("momentum update") {
  std::vector<double> key = {2.0};
  const std::vector<double> query = {4.0};
  momentum_update(key, query, 0.9);
  CHECK(key[0] == doctest::Approx(2.2).epsilon(1e-12));

  std::vector<double> k2 = {1.0, -3.0, 5.0};
  const std::vector<double> q2 = {0.5, 0.5, 0.5};
  momentum_update(k2, q2, 0.0);
  CHECK(k2 == q2);

  std::vector<double> k3 = {1.0, -3.0, 5.0};
  const std::vector<double> before = k3;
  momentum_update(k3, q2, 0.7);
  for (std::size_t i = 0; i < k3.size(); ++i) {
    CHECK(std::abs(k3[i] - q2[i]) == doctest::Approx(0.7 * std::abs(before[i] - q2[i])));
  }

  CHECK_THROWS_AS(momentum_update(k3, q2, 1.0), ConfigError);
  const std::vector<double> wrong = {1.0};
  CHECK_THROWS_AS(momentum_update(k3, wrong, 0.5), InternalError);
}

TEST_CASE("momentum queue is a FIFO") {
  MomentumQueue q(4);
  for (int id = 0; id < 5; ++id) {
    const QueueEntry e = entry(id);
    q.push(std::span(&e, 1));
  }
  CHECK(queue_ids(q) == std::vector<int>{1, 2, 3, 4});

  q.push({});
  CHECK(queue_ids(q) == std::vector<int>{1, 2, 3, 4});

  MomentumQueue r(4);
  std::vector<QueueEntry> first = {entry(0), entry(1), entry(2)};
  std::vector<QueueEntry> second = {entry(3), entry(4), entry(5)};
  r.push(first);
  r.push(second);
  CHECK(queue_ids(r) == std::vector<int>{2, 3, 4, 5});

  QueueEntry bad = entry(0);
  bad.key *= 2.0;
  CHECK_THROWS_AS(r.push(std::span(&bad, 1)), DomainError);
}

TEST_CASE("pool layout and contrast sets") {
  BatchMeta meta;
  meta.labels = {0};
  meta.partition = {Partition::clean};
  meta.example_ids = {7};
  Matrix q(1, 3), k(1, 3);
  q << 1, 0, 0;
  k << 0, 1, 0;
  MomentumQueue empty(8);
  Pool single = build_pool(q, k, meta, empty);
  CHECK(single.size() == 2);
  CHECK(single.contrast_set(0) == std::vector<int>{1});
  CHECK(single.source[1] == PoolSource::batch_key);

  BatchMeta two;
  two.labels = {0, 1};
  two.partition = {Partition::clean, Partition::noisy};
  two.example_ids = {0, 1};
  Matrix q2 = Matrix::Identity(2, 3), k2 = Matrix::Identity(2, 3);
  MomentumQueue queue(8);
  std::vector<QueueEntry> entries = {entry(10), entry(11), entry(12)};
  queue.push(entries);
  Pool pool = build_pool(q2, k2, two, queue);
  CHECK(pool.size() == 2 * 2 + 3);
  for (int a = 0; a < 2; ++a) {
    auto set = pool.contrast_set(a);
    CHECK(set.size() == 6);
    CHECK(std::find(set.begin(), set.end(), a) == set.end());
  }
  CHECK(pool.batch_row == std::vector<int>{0, 1, 0, 1, -1, -1, -1});
  CHECK(pool.example_ids[4] == 10);
  CHECK(pool.partition[3] == Partition::noisy);
}
