#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace fdf {

/// User token: seeds the pseudo-random projection for one (user, application).
struct UserKey {
  std::string user_id;
  std::uint64_t seed = 0;
  int bit_length = 128; // 32, 64 or 128
  int key_version = 1;
};

bool is_supported_bit_length(int m);

/// Columns are pairwise orthonormal; the realized matrix is persisted alongside enrollments.
struct ProjectionBasis {
  Eigen::MatrixXd matrix; // M x m
  UserKey origin_key;
};

using BitVector = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

/// Holds only the hashed bits; never features or pixels.
struct CancelableTemplate {
  BitVector bits;
  std::string user_id;
  int key_version = 1;

  int bit_length() const { return static_cast<int>(bits.size()); }
};

/// M x m standard-normal matrix, column-major draw order from CounterRng(key.seed).
Eigen::MatrixXd generate_random_vectors(const UserKey& key, Eigen::Index feature_dim);

/// Classical Gram-Schmidt with re-orthogonalization passes until max|G - I| <= 1e-10.
/// Throws KeyError when a column is (numerically) dependent on its predecessors.
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& vectors);
ProjectionBasis make_basis(const UserKey& key, Eigen::Index feature_dim);

/// max |<c_i, c_j> - delta_ij| over all column pairs.
double orthonormality_error(const Eigen::MatrixXd& basis);

Eigen::VectorXd project(const Eigen::VectorXd& features, const ProjectionBasis& basis);

/// Zero-crossing: 1 where the coefficient is strictly positive, else 0.
BitVector binarize(const Eigen::VectorXd& coefficients);

/// ||Q - T||_2 / (||Q||_2 + ||T||_2). 0 for identical templates, 1 for disjoint supports.
double template_distance(const BitVector& query, const BitVector& stored);

/// Fraction of differing bits.
double normalized_hamming(const BitVector& a, const BitVector& b);

CancelableTemplate hash_features(const Eigen::VectorXd& features, const ProjectionBasis& basis);
CancelableTemplate hash_features(const Eigen::VectorXd& features, const UserKey& key);

/// Lowercase hex, four bits per digit, most significant bit first; zero-padded to a nibble.
std::string bits_to_hex(const BitVector& bits);
BitVector bits_from_hex(std::string_view hex, int bit_length);

} // namespace fdf
