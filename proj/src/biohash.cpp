#include "fdf/biohash.hpp"

#include <cmath>

#include "fdf/error.hpp"
#include "fdf/random.hpp"

namespace fdf {

namespace {

constexpr double kPivotTolerance = 1e-12;
constexpr double kReorthTolerance = 1e-10;
constexpr int kMaxPasses = 4;

// One classical Gram-Schmidt sweep: every projection coefficient of column j
// is taken against the original column, then subtracted in one go.
void gram_schmidt_pass(Eigen::MatrixXd& q, const Eigen::MatrixXd& source) {
  for (Eigen::Index j = 0; j < source.cols(); ++j) {
    Eigen::VectorXd v = source.col(j);
    const double original = v.norm();
    if (j > 0) {
      const Eigen::VectorXd coeffs = q.leftCols(j).transpose() * source.col(j);
      v.noalias() -= q.leftCols(j) * coeffs;
    }
    const double residual = v.norm();
    if (!(original > 0.0) || residual < kPivotTolerance * original)
      throw KeyError("degenerate key: projection vector " + std::to_string(j) +
                     " is linearly dependent on its predecessors; re-issue the key");
    q.col(j) = v / residual;
  }
}

} // namespace

bool is_supported_bit_length(int m) { return m == 32 || m == 64 || m == 128; }

Eigen::MatrixXd generate_random_vectors(const UserKey& key, Eigen::Index feature_dim) {
  if (key.bit_length < 1 || feature_dim < 1)
    throw KeyError("key: bit length and feature dimension must be positive");
  if (key.bit_length > feature_dim)
    throw KeyError("key: bit length " + std::to_string(key.bit_length) +
                   " exceeds feature dimension " + std::to_string(feature_dim));
  CounterRng rng(key.seed);
  Eigen::MatrixXd r(feature_dim, key.bit_length);
  for (Eigen::Index j = 0; j < r.cols(); ++j)
    for (Eigen::Index i = 0; i < r.rows(); ++i) r(i, j) = rng.normal();
  return r;
}

double orthonormality_error(const Eigen::MatrixXd& basis) {
  const Eigen::MatrixXd gram = basis.transpose() * basis;
  return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& vectors) {
  if (vectors.cols() > vectors.rows())
    throw KeyError("orthonormalize: more vectors than dimensions");
  Eigen::MatrixXd q(vectors.rows(), vectors.cols());
  gram_schmidt_pass(q, vectors);
  for (int pass = 1; pass < kMaxPasses && orthonormality_error(q) > kReorthTolerance; ++pass) {
    const Eigen::MatrixXd previous = q;
    gram_schmidt_pass(q, previous);
  }
  return q;
}

ProjectionBasis make_basis(const UserKey& key, Eigen::Index feature_dim) {
  return {orthonormalize(generate_random_vectors(key, feature_dim)), key};
}

Eigen::VectorXd project(const Eigen::VectorXd& features, const ProjectionBasis& basis) {
  if (features.size() != basis.matrix.rows())
    throw DimensionError("project: feature length " + std::to_string(features.size()) +
                         " != basis dimension " + std::to_string(basis.matrix.rows()));
  return basis.matrix.transpose() * features;
}

BitVector binarize(const Eigen::VectorXd& coefficients) {
  return (coefficients.array() > 0.0).cast<std::uint8_t>();
}

double template_distance(const BitVector& query, const BitVector& stored) {
  if (query.size() != stored.size())
    throw DimensionError("template_distance: lengths " + std::to_string(query.size()) + " and " +
                         std::to_string(stored.size()) + " differ");
  const auto q = query.cast<double>();
  const auto t = stored.cast<double>();
  const double denom = std::sqrt((q * q).sum()) + std::sqrt((t * t).sum());
  if (denom == 0.0) throw UndefinedMetricError("template_distance: both templates are all-zero");
  return std::sqrt((q - t).square().sum()) / denom;
}

double normalized_hamming(const BitVector& a, const BitVector& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw DimensionError("normalized_hamming: lengths differ or are zero");
  return static_cast<double>((a != b).count()) / static_cast<double>(a.size());
}

CancelableTemplate hash_features(const Eigen::VectorXd& features, const ProjectionBasis& basis) {
  return {binarize(project(features, basis)), basis.origin_key.user_id,
          basis.origin_key.key_version};
}

CancelableTemplate hash_features(const Eigen::VectorXd& features, const UserKey& key) {
  return hash_features(features, make_basis(key, features.size()));
}

std::string bits_to_hex(const BitVector& bits) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string hex;
  for (Eigen::Index i = 0; i < bits.size(); i += 4) {
    int nibble = 0;
    for (Eigen::Index k = 0; k < 4; ++k) {
      nibble <<= 1;
      if (i + k < bits.size() && bits(i + k)) nibble |= 1;
    }
    hex.push_back(digits[nibble]);
  }
  return hex;
}

BitVector bits_from_hex(std::string_view hex, int bit_length) {
  if (bit_length < 0 || static_cast<std::size_t>((bit_length + 3) / 4) != hex.size())
    throw LoadError("template bits: hex length does not match bit length");
  BitVector bits(bit_length);
  for (std::size_t d = 0; d < hex.size(); ++d) {
    const char ch = hex[d];
    int nibble = 0;
    if (ch >= '0' && ch <= '9')
      nibble = ch - '0';
    else if (ch >= 'a' && ch <= 'f')
      nibble = ch - 'a' + 10;
    else
      throw LoadError("template bits: invalid hex digit");
    for (int k = 0; k < 4; ++k) {
      const auto i = static_cast<Eigen::Index>(d * 4 + static_cast<std::size_t>(k));
      const bool bit = (nibble >> (3 - k)) & 1;
      if (i < bits.size())
        bits(i) = bit ? 1 : 0;
      else if (bit)
        throw LoadError("template bits: nonzero padding");
    }
  }
  return bits;
}

} // namespace fdf
