#include <doctest.h>

#include <filesystem>

#include "cecl/errors.hpp"
#include "cecl/theory.hpp"
#include "oracles.hpp"

using namespace cecl;

namespace {

// Ordered pairs (m, t), m an anchor, t != m; positive iff both share a
// non-negative label.
std::pair<double, double> brute_align_uniform(const Matrix& e, const PairStructure& s) {
  double pos = 0.0, neg = 0.0;
  int np = 0, nn = 0;
  for (int m = 0; m < e.rows(); ++m) {
    if (!s.is_anchor.empty() && !s.is_anchor[static_cast<std::size_t>(m)]) continue;
    for (int t = 0; t < e.rows(); ++t) {
      if (t == m) continue;
      double d2 = 0.0;
      for (int j = 0; j < e.cols(); ++j) d2 += (e(m, j) - e(t, j)) * (e(m, j) - e(t, j));
      const int lm = s.labels[static_cast<std::size_t>(m)];
      if (lm >= 0 && lm == s.labels[static_cast<std::size_t>(t)]) {
        pos += d2;
        ++np;
      } else {
        neg += d2;
        ++nn;
      }
    }
  }
  return {pos / np, -neg / nn};
}

}  // namespace

TEST_CASE("alignment and uniformity") {
  Matrix same = Matrix::Ones(4, 3);
  PairStructure s{{0, 0, 1, 1}, {}};
  CHECK(alignment_loss(same, s) == 0.0);
  CHECK(uniformity_loss(same, s) == 0.0);

  Matrix two(2, 2);
  two << 0, 0, 3, 4;
  CHECK(alignment_loss(two, PairStructure{{0, 0}, {}}) == doctest::Approx(25.0));
  CHECK(uniformity_loss(two, PairStructure{{0, 1}, {}}) == doctest::Approx(-25.0));

  CHECK_THROWS_AS(alignment_loss(two, PairStructure{{0, 1}, {}}), InputError);
  CHECK_THROWS_AS(uniformity_loss(two, PairStructure{{0, 0}, {}}), InputError);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix e = oracle::random_unit_rows(10, 3, rng);
    PairStructure r;
    for (int i = 0; i < 10; ++i) {
      r.labels.push_back(static_cast<int>(rng.uniform_index(4)) - 1);
      r.is_anchor.push_back(i < 2 || rng.uniform() < 0.6);
    }
    r.labels[0] = r.labels[1] = 2;
    const auto [align, uniform] = brute_align_uniform(e, r);
    CHECK(alignment_loss(e, r) == doctest::Approx(align).epsilon(1e-12));
    CHECK(uniformity_loss(e, r) == doctest::Approx(uniform).epsilon(1e-12));
    CHECK(alignment_loss(e, r) >= 0.0);
    CHECK(uniformity_loss(e, r) <= 0.0);
    const AlignUniform au = align_uniform(e, r, 1);
    CHECK_FALSE(au.sampled);
    CHECK(au.uniform == doctest::Approx(uniform).epsilon(1e-12));
  }
}

TEST_CASE("sampled estimator beyond the enumeration limit") {
  Rng rng(6);
  const int n = kFullEnumerationLimit * 3;
  Matrix e = oracle::random_unit_rows(n, 4, rng);
  PairStructure s;
  for (int i = 0; i < n; ++i) s.labels.push_back(i % 3);
  const AlignUniform sampled = align_uniform(e, s, 7);
  CHECK(sampled.sampled);
  const auto [align, uniform] = brute_align_uniform(e, s);
  CHECK(sampled.align == doctest::Approx(align).epsilon(0.05));
  CHECK(sampled.uniform == doctest::Approx(uniform).epsilon(0.05));
  const AlignUniform again = align_uniform(e, s, 7);
  CHECK(again.uniform == sampled.uniform);
}

TEST_CASE("adding a cross-class pair weakly lowers L_uniform") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix e = oracle::random_unit_rows(8, 3, rng);
    PairStructure s;
    for (int i = 0; i < 8; ++i) s.labels.push_back(i % 2);
    // A delimiter whose distance to every row is at least the current mean
    // negative distance is guaranteed not to raise L_uniform.
    const double before = uniformity_loss(e, s);
    Matrix wider(9, 3);
    wider.topRows(8) = e;
    RowVector far = -e.colwise().mean();
    if (far.norm() < 1e-9) far = RowVector::Unit(3, 0);
    wider.row(8) = far.normalized() * 10.0;
    PairStructure t = s;
    t.labels.push_back(-1);
    t.is_anchor.assign(9, 1);
    t.is_anchor[8] = 0;
    CHECK(uniformity_loss(wider, t) <= before + 1e-12);
    CHECK(alignment_loss(wider, t) == doctest::Approx(alignment_loss(e, s)));
  }
}

TEST_CASE("cluster statistics") {
  Rng rng(13);
  Matrix e(7, 3);
  for (int i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  std::vector<int> labels = {0, 1, 0, 2, 1, 0, 2};
  ClusterStats s = cluster_stats(e, labels, 4);
  for (int k = 0; k < 3; ++k) {
    RowVector mean = RowVector::Zero(3);
    int count = 0;
    for (int i = 0; i < 7; ++i) {
      if (labels[static_cast<std::size_t>(i)] == k) {
        mean += e.row(i);
        ++count;
      }
    }
    mean /= count;
    CHECK((s.centroids.row(k) - mean).norm() < 1e-14);
    CHECK(s.counts[static_cast<std::size_t>(k)] == count);
    CHECK(s.priors[static_cast<std::size_t>(k)] == doctest::Approx(count / 7.0));
  }
  CHECK(s.counts[3] == 0);
  CHECK(s.centroids.row(3).norm() == 0.0);
  for (int k = 0; k < 4; ++k) {
    for (int l = 0; l < 4; ++l) CHECK(std::abs(s.inner_products(k, l)) <= s.radius * s.radius + 1e-12);
  }

  Matrix orth(2, 2);
  orth << 1, 0, 0, 1;
  ClusterStats o = cluster_stats(orth, std::vector<int>{0, 1}, 2);
  CHECK(o.inner_products(0, 1) == 0.0);
  CHECK(off_diagonal_max_mean(o).first == 0.0);
}

TEST_CASE("main part on three hand-built points") {
  // d(0,1) = 1, d(0,2) = 2, d(1,2) = 1.5.
  Matrix d(3, 3);
  d << 0, 1, 2,
       1, 0, 1.5,
       2, 1.5, 0;
  // Exhaustive subset check: the largest subset with diameter <= delta.
  auto exhaustive = [&](double delta) {
    std::vector<int> best;
    double best_diameter = 0.0;
    for (int mask = 1; mask < 8; ++mask) {
      std::vector<int> members;
      for (int i = 0; i < 3; ++i) {
        if (mask & (1 << i)) members.push_back(i);
      }
      double diameter = 0.0;
      for (int a : members) {
        for (int b : members) diameter = std::max(diameter, d(a, b));
      }
      if (diameter > delta) continue;
      if (members.size() > best.size() || (members.size() == best.size() && diameter < best_diameter)) {
        best = members;
        best_diameter = diameter;
      }
    }
    return best;
  };
  for (double delta : {0.5, 1.0, 1.2, 1.5, 1.9, 2.0, 3.0}) {
    CHECK(main_part(d, delta) == exhaustive(delta));
  }
  CHECK(main_part(d, 1.5) == std::vector<int>{0, 1});
  CHECK(main_part(d, 2.0).size() == 3);
}

TEST_CASE("augmentation statistics") {
  Rng rng(14);
  Matrix x(6, 2);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<int> labels = {0, 0, 0, 1, 1, 1};
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden = 8;
  spec.projection_hidden = 8;
  spec.embedding_dim = 4;
  spec.classes = 2;
  Model model(spec, 2);

  AugmentSpec identity;
  identity.enabled = false;
  Matrix d = augmentation_distances(x, identity, 3, 1);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) CHECK(d(i, j) == doctest::Approx((x.row(i) - x.row(j)).norm()));
  }
  AugmentationStats s = estimate_augmentation_stats(model, x, labels, 2, identity, 2, 0.1, 1e9, 3);
  for (int k = 0; k < 2; ++k) {
    double diameter = 0.0;
    for (int i = 3 * k; i < 3 * k + 3; ++i) {
      for (int j = 3 * k; j < 3 * k + 3; ++j) diameter = std::max(diameter, (x.row(i) - x.row(j)).norm());
    }
    CHECK(s.sigma[static_cast<std::size_t>(k)] == 1.0);
    CHECK(s.delta[static_cast<std::size_t>(k)] == doctest::Approx(diameter));
  }
  CHECK(s.r_epsilon == 0.0);  // identical views never leave S_epsilon

  AugmentSpec jitter;
  jitter.jitter = 0.5;
  AugmentationStats wide = estimate_augmentation_stats(model, x, labels, 2, jitter, 4, 1e9, 0.5, 3);
  CHECK(wide.r_epsilon == 0.0);
  for (double sigma : wide.sigma) CHECK((sigma > 0.0 && sigma <= 1.0));
  for (double delta : wide.delta) CHECK(delta >= 0.0);
  AugmentationStats tight = estimate_augmentation_stats(model, x, labels, 2, jitter, 4, 0.0, 0.5, 3);
  CHECK(tight.r_epsilon == 1.0);

  CHECK_THROWS_AS(estimate_augmentation_stats(model, x, labels, 2, jitter, 1, 1.0, 0.5, 3), InputError);
}

TEST_CASE("separation report") {
  Matrix e(4, 2);
  e << 1, 0, 1, 0.1, 0, 1, 0.1, 1;
  std::vector<int> labels = {0, 0, 1, 1};
  ClusterStats s = cluster_stats(e, labels, 2);
  SeparationReport same = centroid_separation_report(s, -1.0, s, -1.0);
  CHECK(same.max_inner_difference == 0.0);
  CHECK_FALSE(same.delimiters_reduced_max);
  CHECK_FALSE(same.separation_bound_raised);

  Matrix apart(4, 2);
  apart << 1, 0, 1, 0, -1, 0, -1, 0;
  ClusterStats t = cluster_stats(apart, labels, 2);
  SeparationReport better = centroid_separation_report(t, -4.0, s, -1.0);
  CHECK(better.delimiters_reduced_max);
  CHECK(better.separation_bound_raised);
  CHECK(better.max_inner_difference > 0.0);

  ClusterStats one = cluster_stats(e, std::vector<int>{0, 0, 0, 0}, 2);
  CHECK_THROWS_AS(centroid_separation_report(one, -1.0, s, -1.0), DomainError);

  const auto dir = std::filesystem::temp_directory_path() / "cecl_test_separation";
  std::filesystem::remove_all(dir);
  write_separation_report(better, t, s, dir);
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "centroid_products.csv"));
  std::filesystem::remove_all(dir);
}
