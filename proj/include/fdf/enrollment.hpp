#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fdf/biohash.hpp"
#include "fdf/fdfnet.hpp"

namespace fdf {

enum class Modality { major, minor, nail, fused };

std::string_view to_string(Modality modality);
Modality modality_from_string(std::string_view name);

struct EnrollmentRecord {
  std::string user_id;
  Modality modality = Modality::major;
  int key_version = 1;
  CancelableTemplate templ;
  std::int64_t created_at = 0;
  bool revoked = false;
};

/// Issued key plus its realized basis (the basis, not the seed, drives verification).
struct KeyRecord {
  Modality modality = Modality::major;
  ProjectionBasis basis;
};

struct VerificationDecision {
  double score = 1.0;
  double threshold = 0.0;
  bool accepted = false;
  std::string user_id;
  Modality modality = Modality::major;
};

/// Derives per-(user, modality, version) seeds from one master seed.
class KeyIssuer {
public:
  explicit KeyIssuer(std::uint64_t master_seed) : master_seed_(master_seed) {}
  UserKey issue(std::string_view user_id, Modality modality, int key_version, int bit_length) const;

private:
  std::uint64_t master_seed_;
};

/**
 * Append-only template and key store.
 *
 * Backed by two JSON-lines files in a directory when opened from disk:
 * `templates.jsonl` (enrollment and revocation events) and `keys.jsonl`
 * (issued keys with their materialized bases). An in-memory store writes
 * nothing. Mutations follow a single-writer contract.
 */
class EnrollmentStore {
public:
  static constexpr int kSchemaVersion = 1;

  EnrollmentStore();
  static EnrollmentStore open(const std::filesystem::path& directory);

  /// Source of created_at stamps. Defaults to a logical clock (event sequence
  /// number) so identical runs produce identical files.
  void set_clock(std::function<std::int64_t()> clock) { clock_ = std::move(clock); }

  /// Adds a record, superseding (revoking) the active one for the same user and modality.
  const EnrollmentRecord& add(CancelableTemplate templ, Modality modality, const ProjectionBasis& basis);

  const EnrollmentRecord* active(std::string_view user_id, Modality modality) const;
  const EnrollmentRecord* find(std::string_view user_id, Modality modality, int key_version) const;
  const KeyRecord* key(std::string_view user_id, Modality modality, int key_version) const;
  std::vector<const EnrollmentRecord*> history(std::string_view user_id) const;
  int latest_key_version(std::string_view user_id, Modality modality) const;
  bool knows(std::string_view user_id) const;
  const std::vector<EnrollmentRecord>& records() const { return records_; }

private:
  void revoke(std::size_t index);
  void append(const std::filesystem::path& file, const std::string& line) const;
  std::filesystem::path templates_path() const { return directory_ / "templates.jsonl"; }
  std::filesystem::path keys_path() const { return directory_ / "keys.jsonl"; }

  std::filesystem::path directory_;
  std::vector<EnrollmentRecord> records_;
  std::map<std::string, KeyRecord, std::less<>> keys_;
  std::int64_t sequence_ = 0;
  std::function<std::int64_t()> clock_;
};

/// Arithmetic mean of per-sample features.
Eigen::VectorXd mean_features(std::span<const Eigen::VectorXd> features);

const EnrollmentRecord& enroll_features(EnrollmentStore& store, std::string_view user_id,
                                        std::span<const Eigen::VectorXd> features,
                                        const UserKey& key, Modality modality);

const EnrollmentRecord& enroll(EnrollmentStore& store, std::string_view user_id,
                               std::span<const ImageGrid> images, const FdfModel& model,
                               const UserKey& key, Modality modality);

/// Hashes the query under the claimed user's stored basis and scores it against the stored bits.
/// With `key_version` set, checks that specific record (RevokedError when superseded).
VerificationDecision verify_features(const EnrollmentStore& store, const Eigen::VectorXd& query,
                                     std::string_view claimed_user_id, Modality modality,
                                     double threshold, std::optional<int> key_version = {});

VerificationDecision verify(const EnrollmentStore& store, const ImageGrid& query,
                            std::string_view claimed_user_id, const FdfModel& model,
                            double threshold, Modality modality = Modality::major,
                            std::optional<int> key_version = {});

const EnrollmentRecord& revoke_and_reissue_features(EnrollmentStore& store, const KeyIssuer& issuer,
                                                    std::string_view user_id,
                                                    std::span<const Eigen::VectorXd> features,
                                                    Modality modality);

const EnrollmentRecord& revoke_and_reissue(EnrollmentStore& store, const KeyIssuer& issuer,
                                           std::string_view user_id, std::span<const ImageGrid> images,
                                           const FdfModel& model, Modality modality);

enum class FusionNormalization { per_vector, per_dimension };

/// Per-dimension bounds gathered over a population, for FusionNormalization::per_dimension.
struct DimensionBounds {
  Eigen::VectorXd min, max;
};

Eigen::VectorXd min_max_normalize(const Eigen::VectorXd& v);

/// Min-max normalizes each modality vector then sums them.
Eigen::VectorXd fuse_features(std::span<const Eigen::VectorXd> vectors);
Eigen::VectorXd fuse_features(std::span<const Eigen::VectorXd> vectors,
                              std::span<const DimensionBounds> bounds);

} // namespace fdf
