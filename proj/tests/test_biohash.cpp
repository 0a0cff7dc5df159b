#include <doctest.h>

#include "fdf/biohash.hpp"
#include "fdf/random.hpp"
#include "test_util.hpp"

using namespace fdf;
using fdf::testing::random_grid;

namespace {

BitVector bits(std::initializer_list<int> values) {
  BitVector b(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (int v : values) b(i++) = static_cast<std::uint8_t>(v);
  return b;
}

UserKey key(std::uint64_t seed, int m = 128) { return {"user", seed, m, 1}; }

} // namespace

TEST_CASE("random vectors") {
  const Eigen::MatrixXd a = generate_random_vectors(key(7), 256);
  CHECK(a.rows() == 256);
  CHECK(a.cols() == 128);
  CHECK(a == generate_random_vectors(key(7), 256));
  CHECK(a != generate_random_vectors(key(8), 256));
  CHECK_THROWS_AS(generate_random_vectors(key(7), 100), KeyError);
  // Column-major draw order: the 32-bit basis is the prefix of the 128-bit one.
  CHECK(generate_random_vectors(key(7, 32), 256) == a.leftCols(32));
  CHECK(std::abs(a.mean()) < 0.02);
  CHECK(std::abs(a.array().square().mean() - 1.0) < 0.03);
}

TEST_CASE("Gram-Schmidt hand cases") {
  CHECK(orthonormalize(Eigen::Matrix2d::Identity()) == Eigen::Matrix2d::Identity());
  Eigen::Matrix2d m;
  m << 1, 1, 0, 1; // columns [1,0] and [1,1]
  const Eigen::MatrixXd q = orthonormalize(m);
  CHECK(q(0, 0) == doctest::Approx(1.0));
  CHECK(q(1, 0) == doctest::Approx(0.0));
  CHECK(q(0, 1) == doctest::Approx(0.0));
  CHECK(q(1, 1) == doctest::Approx(1.0));

  Eigen::MatrixXd dup(3, 2);
  dup << 1, 1, 2, 2, 3, 3;
  CHECK_THROWS_AS(orthonormalize(dup), KeyError);
  CHECK_THROWS_AS(orthonormalize(Eigen::MatrixXd::Zero(3, 1)), KeyError);
  CHECK_THROWS_AS(orthonormalize(Eigen::MatrixXd::Ones(2, 3)), KeyError);
}

TEST_CASE("property: bases are orthonormal and span the key vectors") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Eigen::MatrixXd r = generate_random_vectors(key(s * 977 + 1), 256);
    const Eigen::MatrixXd q = orthonormalize(r);
    CHECK(orthonormality_error(q) <= 1e-9);
    // Span preserved: r = q (q^T r).
    CHECK((q * (q.transpose() * r) - r).norm() <= 1e-9 * r.norm());
  }
}

TEST_CASE("projection") {
  ProjectionBasis identity{Eigen::MatrixXd::Identity(4, 4), key(1, 4)};
  const Eigen::Vector4d f(1, 2, 3, 4);
  CHECK(project(f, identity) == Eigen::VectorXd(f));

  const ProjectionBasis b = make_basis(key(3, 32), 64);
  const Eigen::VectorXd along = 3.0 * b.matrix.col(0);
  const Eigen::VectorXd coeffs = project(along, b);
  CHECK(coeffs(0) == doctest::Approx(3.0));
  CHECK(coeffs.tail(31).cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::VectorXd v = random_grid(64, 1, 5);
  const Eigen::VectorXd orthogonal = v - b.matrix * (b.matrix.transpose() * v);
  CHECK(project(orthogonal, b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(project(Eigen::VectorXd::Ones(63), b), DimensionError);
}

TEST_CASE("zero-crossing binarization") {
  CHECK((binarize(Eigen::Vector3d(0.5, -0.3, 0.0)) == bits({1, 0, 0})).all());
  CHECK((binarize(Eigen::Vector3d(-1, -2, -0.1)) == 0).all());
  const Eigen::VectorXd c = random_grid(40, 1, 9, -1, 1);
  CHECK((binarize(-c) == 1 - binarize(c)).all());
}

TEST_CASE("template distance") {
  const BitVector q = bits({1, 0, 1, 1});
  CHECK(template_distance(q, q) == 0.0);
  CHECK(template_distance(bits({1, 1, 1, 1, 1}), bits({0, 0, 0, 0, 0})) == 1.0);
  CHECK(template_distance(bits({1, 1, 0, 0}), bits({0, 0, 1, 1})) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(template_distance(bits({1, 1, 0, 0}), bits({0, 0, 1, 1})) == doctest::Approx(0.7071).epsilon(1e-4));
  CHECK_THROWS_AS(template_distance(bits({0, 0}), bits({0, 0})), UndefinedMetricError);
  CHECK_THROWS_AS(template_distance(bits({0, 1}), bits({0, 0, 1})), DimensionError);
}

TEST_CASE("property: template distance is a bounded symmetric dissimilarity") {
  CounterRng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    BitVector a(32), b(32);
    for (Eigen::Index i = 0; i < 32; ++i) {
      a(i) = rng.uniform() < 0.5;
      b(i) = rng.uniform() < 0.5;
    }
    if (a.sum() == 0 && b.sum() == 0) continue;
    const double d = template_distance(a, b);
    CHECK(d == template_distance(b, a));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK((d == 0.0) == (a == b).all());
  }
}

TEST_CASE("hash_features determinism and positive-scale invariance") {
  const Eigen::VectorXd f = random_grid(256, 1, 11, 0, 2);
  const CancelableTemplate t = hash_features(f, key(42));
  CHECK(t.bit_length() == 128);
  CHECK((hash_features(f, key(42)).bits == t.bits).all());
  for (double alpha : {1e-6, 0.3, 1.0, 7.5, 1e6}) CHECK((hash_features(Eigen::VectorXd(alpha * f), key(42)).bits == t.bits).all());
}

TEST_CASE("property: templates under independent keys look like fresh coin flips") {
  const Eigen::VectorXd f = random_grid(256, 1, 12, 0, 1);
  const int n = 200;
  std::vector<BitVector> templates;
  for (int k = 0; k < n; ++k) templates.push_back(hash_features(f, key(derive_seed(99, k))).bits);
  double total = 0.0;
  int pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++pairs) total += normalized_hamming(templates[i], templates[j]);
  CHECK(total / pairs == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("hex round trip") {
  const BitVector b = bits({1, 0, 1, 1, 0, 0, 0, 1});
  CHECK(bits_to_hex(b) == "b1");
  CHECK((bits_from_hex("b1", 8) == b).all());
  const BitVector t = hash_features(random_grid(256, 1, 2), key(5)).bits;
  CHECK((bits_from_hex(bits_to_hex(t), 128) == t).all());
  CHECK_THROWS_AS(bits_from_hex("b1", 12), LoadError);
  CHECK_THROWS_AS(bits_from_hex("zz", 8), LoadError);
}
