#include "fdf/enrollment.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fdf/error.hpp"
#include "fdf/random.hpp"

namespace fdf {

namespace {

using nlohmann::json;

std::string key_id(std::string_view user, Modality modality, int version) {
  std::string id(user);
  id += '\x1f';
  id += to_string(modality);
  id += '\x1f';
  id += std::to_string(version);
  return id;
}

std::string matrix_to_hex(const Eigen::MatrixXd& m) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(static_cast<std::size_t>(m.size()) * 16);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint64_t bits = 0;
    const double v = m.data()[i];
    std::memcpy(&bits, &v, sizeof(bits));
    for (int shift = 60; shift >= 0; shift -= 4) hex.push_back(digits[(bits >> shift) & 0xF]);
  }
  return hex;
}

Eigen::MatrixXd matrix_from_hex(const std::string& hex, Eigen::Index rows, Eigen::Index cols) {
  if (hex.size() != static_cast<std::size_t>(rows * cols) * 16)
    throw LoadError("key record: basis size mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto word = hex.substr(static_cast<std::size_t>(i) * 16, 16);
    std::size_t used = 0;
    const std::uint64_t bits = std::stoull(word, &used, 16);
    if (used != 16) throw LoadError("key record: invalid basis hex");
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof(v));
    m.data()[i] = v;
  }
  return m;
}

void check_schema(const json& j) {
  if (j.value("schema", 0) != EnrollmentStore::kSchemaVersion)
    throw LoadError("store: unsupported record schema");
}

} // namespace

std::string_view to_string(Modality modality) {
  switch (modality) {
  case Modality::major: return "major";
  case Modality::minor: return "minor";
  case Modality::nail: return "nail";
  case Modality::fused: return "fused";
  }
  return "major";
}

Modality modality_from_string(std::string_view name) {
  if (name == "major") return Modality::major;
  if (name == "minor") return Modality::minor;
  if (name == "nail") return Modality::nail;
  if (name == "fused") return Modality::fused;
  throw DataError("unknown modality '" + std::string(name) + "'");
}

UserKey KeyIssuer::issue(std::string_view user_id, Modality modality, int key_version,
                         int bit_length) const {
  if (!is_supported_bit_length(bit_length))
    throw KeyError("key: bit length must be 32, 64 or 128, got " + std::to_string(bit_length));
  const std::uint64_t per_user = derive_seed(master_seed_, fnv1a(user_id));
  const std::uint64_t per_app = derive_seed(per_user, static_cast<std::uint64_t>(modality));
  return {std::string(user_id), derive_seed(per_app, static_cast<std::uint64_t>(key_version)),
          bit_length, key_version};
}

// --- store -------------------------------------------------------------------

EnrollmentStore::EnrollmentStore() = default;

EnrollmentStore EnrollmentStore::open(const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("store: cannot create " + directory.string() + ": " + ec.message());

  EnrollmentStore store;
  store.directory_ = directory;

  if (std::ifstream keys(store.keys_path()); keys) {
    std::string line;
    while (std::getline(keys, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
        check_schema(j);
        KeyRecord rec;
        rec.modality = modality_from_string(j.at("modality").get<std::string>());
        UserKey& k = rec.basis.origin_key;
        k.user_id = j.at("user_id").get<std::string>();
        k.key_version = j.at("key_version").get<int>();
        k.seed = j.at("seed").get<std::uint64_t>();
        k.bit_length = j.at("bit_length").get<int>();
        rec.basis.matrix =
            matrix_from_hex(j.at("basis").get<std::string>(), j.at("feature_dim").get<Eigen::Index>(),
                            k.bit_length);
        store.keys_[key_id(k.user_id, rec.modality, k.key_version)] = std::move(rec);
      } catch (const json::exception& e) {
        throw LoadError(std::string("store: malformed key record: ") + e.what());
      }
    }
  }

  if (std::ifstream events(store.templates_path()); events) {
    std::string line;
    while (std::getline(events, line)) {
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        check_schema(j);
        const std::string type = j.at("type").get<std::string>();
        const std::string user = j.at("user_id").get<std::string>();
        const Modality modality = modality_from_string(j.at("modality").get<std::string>());
        const int version = j.at("key_version").get<int>();
        if (type == "template") {
          EnrollmentRecord rec;
          rec.user_id = user;
          rec.modality = modality;
          rec.key_version = version;
          rec.created_at = j.at("created_at").get<std::int64_t>();
          rec.templ.user_id = user;
          rec.templ.key_version = version;
          rec.templ.bits =
              bits_from_hex(j.at("bits").get<std::string>(), j.at("bit_length").get<int>());
          store.records_.push_back(std::move(rec));
        } else if (type == "revocation") {
          bool found = false;
          for (auto& rec : store.records_)
            if (rec.user_id == user && rec.modality == modality && rec.key_version == version) {
              rec.revoked = true;
              found = true;
            }
          if (!found) throw LoadError("store: revocation of unknown record");
        } else {
          throw LoadError("store: unknown record type '" + type + "'");
        }
        ++store.sequence_;
      } catch (const json::exception& e) {
        throw LoadError(std::string("store: malformed template record: ") + e.what());
      }
    }
  }
  return store;
}

void EnrollmentStore::append(const std::filesystem::path& file, const std::string& line) const {
  if (directory_.empty()) return;
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw IoError("store: cannot append to " + file.string());
  out << line << '\n';
  if (!out) throw IoError("store: write failed for " + file.string());
}

void EnrollmentStore::revoke(std::size_t index) {
  EnrollmentRecord& rec = records_[index];
  rec.revoked = true;
  const std::int64_t stamp = clock_ ? clock_() : sequence_;
  ++sequence_;
  json j = {{"schema", kSchemaVersion},
            {"type", "revocation"},
            {"user_id", rec.user_id},
            {"modality", std::string(to_string(rec.modality))},
            {"key_version", rec.key_version},
            {"created_at", stamp}};
  append(templates_path(), j.dump());
}

const EnrollmentRecord& EnrollmentStore::add(CancelableTemplate templ, Modality modality,
                                             const ProjectionBasis& basis) {
  const UserKey& key = basis.origin_key;
  if (templ.user_id != key.user_id || templ.key_version != key.key_version)
    throw KeyError("store: template and key belong to different users or versions");
  if (find(templ.user_id, modality, templ.key_version))
    throw KeyError("store: key version " + std::to_string(templ.key_version) + " already used for " +
                   templ.user_id);

  const std::string id = key_id(key.user_id, modality, key.key_version);
  keys_[id] = KeyRecord{modality, basis};
  json kj = {{"schema", kSchemaVersion},
             {"type", "key"},
             {"user_id", key.user_id},
             {"modality", std::string(to_string(modality))},
             {"key_version", key.key_version},
             {"seed", key.seed},
             {"bit_length", key.bit_length},
             {"feature_dim", basis.matrix.rows()},
             {"basis", matrix_to_hex(basis.matrix)}};
  append(keys_path(), kj.dump());

  for (std::size_t i = 0; i < records_.size(); ++i)
    if (!records_[i].revoked && records_[i].user_id == templ.user_id && records_[i].modality == modality)
      revoke(i);

  EnrollmentRecord rec;
  rec.user_id = templ.user_id;
  rec.modality = modality;
  rec.key_version = templ.key_version;
  rec.created_at = clock_ ? clock_() : sequence_;
  ++sequence_;
  rec.templ = std::move(templ);
  json tj = {{"schema", kSchemaVersion},
             {"type", "template"},
             {"user_id", rec.user_id},
             {"modality", std::string(to_string(modality))},
             {"key_version", rec.key_version},
             {"bit_length", rec.templ.bit_length()},
             {"bits", bits_to_hex(rec.templ.bits)},
             {"created_at", rec.created_at}};
  append(templates_path(), tj.dump());
  records_.push_back(std::move(rec));
  return records_.back();
}

const EnrollmentRecord* EnrollmentStore::active(std::string_view user_id, Modality modality) const {
  for (const auto& rec : records_)
    if (!rec.revoked && rec.user_id == user_id && rec.modality == modality) return &rec;
  return nullptr;
}

const EnrollmentRecord* EnrollmentStore::find(std::string_view user_id, Modality modality,
                                              int key_version) const {
  for (const auto& rec : records_)
    if (rec.user_id == user_id && rec.modality == modality && rec.key_version == key_version)
      return &rec;
  return nullptr;
}

const KeyRecord* EnrollmentStore::key(std::string_view user_id, Modality modality,
                                      int key_version) const {
  const auto it = keys_.find(key_id(user_id, modality, key_version));
  return it == keys_.end() ? nullptr : &it->second;
}

std::vector<const EnrollmentRecord*> EnrollmentStore::history(std::string_view user_id) const {
  std::vector<const EnrollmentRecord*> out;
  for (const auto& rec : records_)
    if (rec.user_id == user_id) out.push_back(&rec);
  return out;
}

int EnrollmentStore::latest_key_version(std::string_view user_id, Modality modality) const {
  int latest = 0;
  for (const auto& rec : records_)
    if (rec.user_id == user_id && rec.modality == modality) latest = std::max(latest, rec.key_version);
  return latest;
}

bool EnrollmentStore::knows(std::string_view user_id) const {
  for (const auto& rec : records_)
    if (rec.user_id == user_id) return true;
  return false;
}

// --- workflows ---------------------------------------------------------------

Eigen::VectorXd mean_features(std::span<const Eigen::VectorXd> features) {
  if (features.empty()) throw DataError("enroll: no samples");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(features.front().size());
  for (const auto& f : features) {
    if (f.size() != sum.size()) throw DimensionError("enroll: feature lengths differ");
    sum += f;
  }
  return sum / static_cast<double>(features.size());
}

const EnrollmentRecord& enroll_features(EnrollmentStore& store, std::string_view user_id,
                                        std::span<const Eigen::VectorXd> features,
                                        const UserKey& key, Modality modality) {
  if (key.user_id != user_id) throw KeyError("enroll: key was issued to '" + key.user_id + "'");
  const Eigen::VectorXd mean = mean_features(features);
  ProjectionBasis basis = make_basis(key, mean.size());
  return store.add(hash_features(mean, basis), modality, basis);
}

const EnrollmentRecord& enroll(EnrollmentStore& store, std::string_view user_id,
                               std::span<const ImageGrid> images, const FdfModel& model,
                               const UserKey& key, Modality modality) {
  if (images.empty()) throw DataError("enroll: no images for '" + std::string(user_id) + "'");
  const auto features = extract_features(model, images);
  return enroll_features(store, user_id, features, key, modality);
}

VerificationDecision verify_features(const EnrollmentStore& store, const Eigen::VectorXd& query,
                                     std::string_view claimed_user_id, Modality modality,
                                     double threshold, std::optional<int> key_version) {
  const EnrollmentRecord* rec = nullptr;
  if (key_version) {
    rec = store.find(claimed_user_id, modality, *key_version);
    if (!rec)
      throw IdentityError("verify: no record for '" + std::string(claimed_user_id) +
                          "' with key version " + std::to_string(*key_version));
  } else {
    rec = store.active(claimed_user_id, modality);
    if (!rec) {
      if (store.latest_key_version(claimed_user_id, modality) > 0)
        throw RevokedError("verify: all records for '" + std::string(claimed_user_id) +
                           "' are revoked");
      throw IdentityError("verify: '" + std::string(claimed_user_id) + "' is not enrolled");
    }
  }
  if (rec->revoked)
    throw RevokedError("verify: key version " + std::to_string(rec->key_version) + " of '" +
                       rec->user_id + "' has been revoked");
  const KeyRecord* key = store.key(rec->user_id, modality, rec->key_version);
  if (!key) throw IdentityError("verify: key record missing for '" + rec->user_id + "'");

  const BitVector q = binarize(project(query, key->basis));
  VerificationDecision d;
  d.score = template_distance(q, rec->templ.bits);
  d.threshold = threshold;
  d.accepted = d.score <= threshold;
  d.user_id = rec->user_id;
  d.modality = modality;
  return d;
}

VerificationDecision verify(const EnrollmentStore& store, const ImageGrid& query,
                            std::string_view claimed_user_id, const FdfModel& model,
                            double threshold, Modality modality, std::optional<int> key_version) {
  if (!store.knows(claimed_user_id))
    throw IdentityError("verify: '" + std::string(claimed_user_id) + "' is not enrolled");
  return verify_features(store, forward(model, query).features, claimed_user_id, modality, threshold,
                         key_version);
}

const EnrollmentRecord& revoke_and_reissue_features(EnrollmentStore& store, const KeyIssuer& issuer,
                                                    std::string_view user_id,
                                                    std::span<const Eigen::VectorXd> features,
                                                    Modality modality) {
  const int latest = store.latest_key_version(user_id, modality);
  if (latest == 0) throw IdentityError("revoke: '" + std::string(user_id) + "' is not enrolled");
  const EnrollmentRecord* previous = store.find(user_id, modality, latest);
  const UserKey key = issuer.issue(user_id, modality, latest + 1, previous->templ.bit_length());
  return enroll_features(store, user_id, features, key, modality);
}

const EnrollmentRecord& revoke_and_reissue(EnrollmentStore& store, const KeyIssuer& issuer,
                                           std::string_view user_id, std::span<const ImageGrid> images,
                                           const FdfModel& model, Modality modality) {
  if (images.empty()) throw DataError("revoke: no images for '" + std::string(user_id) + "'");
  const auto features = extract_features(model, images);
  return revoke_and_reissue_features(store, issuer, user_id, features, modality);
}

Eigen::VectorXd min_max_normalize(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw NormalizationError("min-max: empty vector");
  const double lo = v.minCoeff();
  const double hi = v.maxCoeff();
  if (!(hi > lo)) throw NormalizationError("min-max: constant vector cannot be normalized");
  return (v.array() - lo) / (hi - lo);
}

Eigen::VectorXd fuse_features(std::span<const Eigen::VectorXd> vectors) {
  if (vectors.size() < 2) throw DataError("fuse: need at least two modality vectors");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(vectors.front().size());
  for (const auto& v : vectors) {
    if (v.size() != sum.size()) throw DimensionError("fuse: modality vectors differ in length");
    sum += min_max_normalize(v);
  }
  return sum;
}

Eigen::VectorXd fuse_features(std::span<const Eigen::VectorXd> vectors,
                              std::span<const DimensionBounds> bounds) {
  if (vectors.size() < 2) throw DataError("fuse: need at least two modality vectors");
  if (bounds.size() != vectors.size()) throw DimensionError("fuse: one bounds entry per modality");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(vectors.front().size());
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    const auto& v = vectors[k];
    const auto& b = bounds[k];
    if (v.size() != sum.size() || b.min.size() != sum.size() || b.max.size() != sum.size())
      throw DimensionError("fuse: modality vectors or bounds differ in length");
    const Eigen::ArrayXd range = b.max.array() - b.min.array();
    if ((range <= 0.0).any()) throw NormalizationError("fuse: constant population dimension");
    sum.array() += (v.array() - b.min.array()) / range;
  }
  return sum;
}

} // namespace fdf
