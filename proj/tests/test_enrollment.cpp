#include <doctest.h>

#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fdf/enrollment.hpp"
#include "fdf/evalkit.hpp"
#include "fdf/random.hpp"
#include "test_util.hpp"

using namespace fdf;
using fdf::testing::random_grid;
using fdf::testing::scratch_dir;

namespace {

constexpr Eigen::Index kDim = 256;

// Feature-space stand-in for a corpus: non-negative subject centres plus
// per-sample jitter, shaped like rectified network outputs.
Eigen::VectorXd subject_centre(int subject) { return random_grid(kDim, 1, 1000 + subject, 0.0, 1.0); }

Eigen::VectorXd sample_of(int subject, int sample, double noise = 0.05) {
  CounterRng rng(derive_seed(2000 + subject, sample));
  Eigen::VectorXd v = subject_centre(subject);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::max(0.0, v(i) + noise * rng.normal());
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string double_hex(double v) {
  std::uint64_t u = 0;
  std::memcpy(&u, &v, sizeof(u));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(u));
  return buf;
}

} // namespace

TEST_CASE("modality names") {
  for (Modality m : {Modality::major, Modality::minor, Modality::nail, Modality::fused})
    CHECK(modality_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(modality_from_string("thumb"), DataError);
}

TEST_CASE("key issuance") {
  const KeyIssuer issuer(77);
  const UserKey a = issuer.issue("alice", Modality::major, 1, 128);
  CHECK(a.user_id == "alice");
  CHECK(a.bit_length == 128);
  CHECK(a.seed == issuer.issue("alice", Modality::major, 1, 64).seed);
  CHECK(a.seed != issuer.issue("alice", Modality::major, 2, 128).seed);
  CHECK(a.seed != issuer.issue("alice", Modality::minor, 1, 128).seed);
  CHECK(a.seed != issuer.issue("bob", Modality::major, 1, 128).seed);
  CHECK(a.seed != KeyIssuer(78).issue("alice", Modality::major, 1, 128).seed);
  CHECK_THROWS_AS(issuer.issue("alice", Modality::major, 1, 256), KeyError);
}

TEST_CASE("enroll then verify") {
  EnrollmentStore store;
  const KeyIssuer issuer(1);
  const Eigen::VectorXd f = sample_of(0, 0);
  const std::vector<Eigen::VectorXd> one{f};
  const auto& rec = enroll_features(store, "u0", one, issuer.issue("u0", Modality::major, 1, 64), Modality::major);
  CHECK(rec.templ.bit_length() == 64);
  CHECK_FALSE(rec.revoked);

  const VerificationDecision d = verify_features(store, f, "u0", Modality::major, 0.0);
  CHECK(d.score == 0.0);
  CHECK(d.accepted);

  const VerificationDecision other = verify_features(store, sample_of(1, 0), "u0", Modality::major, 0.1);
  CHECK(other.score > 0.1);
  CHECK_FALSE(other.accepted);
  CHECK(verify_features(store, sample_of(1, 0), "u0", Modality::major, other.score).accepted);

  CHECK_THROWS_AS(verify_features(store, f, "nobody", Modality::major, 0.5), IdentityError);
  CHECK_THROWS_AS(verify_features(store, f, "u0", Modality::nail, 0.5), IdentityError);
  CHECK_THROWS_AS(enroll_features(store, "u1", std::vector<Eigen::VectorXd>{}, issuer.issue("u1", Modality::major, 1, 64),
                                  Modality::major),
                  DataError);
  CHECK_THROWS_AS(enroll_features(store, "u1", one, issuer.issue("u2", Modality::major, 1, 64), Modality::major),
                  KeyError);
}

TEST_CASE("mean template") {
  const KeyIssuer issuer(2);
  const Eigen::VectorXd a = sample_of(3, 0), b = sample_of(3, 1);
  CHECK(mean_features(std::vector<Eigen::VectorXd>{a, b}).isApprox(0.5 * (a + b)));

  EnrollmentStore s1, s2;
  const UserKey key = issuer.issue("u", Modality::major, 1, 128);
  const auto& r1 = enroll_features(s1, "u", std::vector<Eigen::VectorXd>{a}, key, Modality::major);
  const auto& r2 = enroll_features(s2, "u", std::vector<Eigen::VectorXd>{a, a, a}, key, Modality::major);
  CHECK((r1.templ.bits == r2.templ.bits).all());
}

TEST_CASE("revoke and reissue") {
  EnrollmentStore store;
  const KeyIssuer issuer(3);
  const std::vector<Eigen::VectorXd> gallery{sample_of(0, 0), sample_of(0, 1)};
  enroll_features(store, "u0", gallery, issuer.issue("u0", Modality::major, 1, 128), Modality::major);
  const BitVector old_bits = store.active("u0", Modality::major)->templ.bits;

  const auto& fresh = revoke_and_reissue_features(store, issuer, "u0", gallery, Modality::major);
  CHECK(fresh.key_version == 2);
  CHECK(store.find("u0", Modality::major, 1)->revoked);
  CHECK(store.active("u0", Modality::major)->key_version == 2);
  CHECK(store.history("u0").size() == 2);
  CHECK(fresh.templ.bit_length() == 128);
  CHECK_THROWS_AS(verify_features(store, gallery[0], "u0", Modality::major, 1.0, 1), RevokedError);
  CHECK_NOTHROW(verify_features(store, gallery[0], "u0", Modality::major, 1.0, 2));
  CHECK(normalized_hamming(old_bits, fresh.templ.bits) > 0.25);

  revoke_and_reissue_features(store, issuer, "u0", gallery, Modality::major);
  CHECK(store.latest_key_version("u0", Modality::major) == 3);
  int active = 0;
  for (const auto* r : store.history("u0")) active += r->revoked ? 0 : 1;
  CHECK(active == 1);
  CHECK_THROWS_AS(revoke_and_reissue_features(store, issuer, "ghost", gallery, Modality::major), IdentityError);
}

TEST_CASE("property: reissued templates differ from the old ones like coin flips") {
  const KeyIssuer issuer(4);
  double total = 0.0;
  const int users = 300;
  for (int u = 0; u < users; ++u) {
    EnrollmentStore store;
    const std::string id = "u" + std::to_string(u);
    const std::vector<Eigen::VectorXd> gallery{sample_of(u % 7, u)};
    const BitVector before =
        enroll_features(store, id, gallery, issuer.issue(id, Modality::major, 1, 128), Modality::major).templ.bits;
    const BitVector after = revoke_and_reissue_features(store, issuer, id, gallery, Modality::major).templ.bits;
    total += normalized_hamming(before, after);
  }
  CHECK(total / users == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("property: genuine queries under a revoked key score like impostors") {
  const KeyIssuer issuer(5);
  const int subjects = 12;
  EnrollmentStore store;
  std::vector<BitVector> old_templates;
  for (int s = 0; s < subjects; ++s) {
    const std::string id = "s" + std::to_string(s);
    const std::vector<Eigen::VectorXd> gallery{sample_of(s, 0), sample_of(s, 1), sample_of(s, 2)};
    old_templates.push_back(
        enroll_features(store, id, gallery, issuer.issue(id, Modality::major, 1, 128), Modality::major).templ.bits);
  }
  std::vector<double> genuine, impostor, revoked;
  for (int s = 0; s < subjects; ++s)
    for (int p = 3; p < 6; ++p) {
      const Eigen::VectorXd q = sample_of(s, p);
      for (int t = 0; t < subjects; ++t) {
        const double score = verify_features(store, q, "s" + std::to_string(t), Modality::major, 0.0).score;
        (s == t ? genuine : impostor).push_back(score);
      }
    }
  for (int s = 0; s < subjects; ++s) {
    const std::string id = "s" + std::to_string(s);
    const std::vector<Eigen::VectorXd> gallery{sample_of(s, 0), sample_of(s, 1), sample_of(s, 2)};
    revoke_and_reissue_features(store, issuer, id, gallery, Modality::major);
    const KeyRecord* fresh = store.key(id, Modality::major, 2);
    for (int p = 3; p < 6; ++p)
      revoked.push_back(template_distance(binarize(project(sample_of(s, p), fresh->basis)), old_templates[s]));
  }
  const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  CHECK(mean(revoked) >= mean(impostor) - 0.05);
  CHECK(percentile(revoked, 0.05) > percentile(genuine, 0.95));
}

TEST_CASE("store on disk holds no raw features and replays") {
  const auto dir = scratch_dir("store");
  const KeyIssuer issuer(6);
  const Eigen::VectorXd f = sample_of(2, 0);
  {
    EnrollmentStore store = EnrollmentStore::open(dir);
    enroll_features(store, "carol", std::vector<Eigen::VectorXd>{f}, issuer.issue("carol", Modality::minor, 1, 32),
                    Modality::minor);
    revoke_and_reissue_features(store, issuer, "carol", std::vector<Eigen::VectorXd>{f}, Modality::minor);
  }
  const std::string templates = slurp(dir / "templates.jsonl");
  const std::string keys = slurp(dir / "keys.jsonl");
  CHECK(std::count(templates.begin(), templates.end(), '\n') == 3); // template, revocation, template
  CHECK(std::count(keys.begin(), keys.end(), '\n') == 2);
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (f(i) == 0.0) continue; // rectified zeros print as a bare "0"
    const std::string hex = double_hex(f(i));
    CHECK(templates.find(hex) == std::string::npos);
    CHECK(keys.find(hex) == std::string::npos);
    char dec[32];
    std::snprintf(dec, sizeof(dec), "%.12g", f(i));
    CHECK(templates.find(dec) == std::string::npos);
    CHECK(keys.find(dec) == std::string::npos);
  }

  const EnrollmentStore replay = EnrollmentStore::open(dir);
  CHECK(replay.records().size() == 2);
  CHECK(replay.records()[0].revoked);
  CHECK(replay.active("carol", Modality::minor)->key_version == 2);
  CHECK(verify_features(replay, f, "carol", Modality::minor, 0.0).score == 0.0);
  CHECK_THROWS_AS(verify_features(replay, f, "carol", Modality::minor, 0.0, 1), RevokedError);
}

TEST_CASE("corrupt store lines are rejected") {
  const auto dir = scratch_dir("store_corrupt");
  std::ofstream(dir / "templates.jsonl") << "{not json\n";
  CHECK_THROWS_AS(EnrollmentStore::open(dir), LoadError);
}

TEST_CASE("min-max fusion") {
  const Eigen::Vector3d v(2, 4, 6);
  CHECK(min_max_normalize(v) == Eigen::Vector3d(0, 0.5, 1));
  CHECK_THROWS_AS(min_max_normalize(Eigen::Vector3d(1, 1, 1)), NormalizationError);

  const Eigen::VectorXd a = sample_of(0, 0);
  const Eigen::VectorXd fused_self = fuse_features(std::vector<Eigen::VectorXd>{a, a});
  CHECK(fused_self.isApprox(2.0 * min_max_normalize(a)));
  const UserKey key = KeyIssuer(8).issue("x", Modality::fused, 1, 128);
  CHECK((hash_features(fused_self, key).bits == hash_features(min_max_normalize(a), key).bits).all());

  const Eigen::VectorXd b = sample_of(1, 0), c = sample_of(2, 0);
  CHECK(fuse_features(std::vector<Eigen::VectorXd>{a, b, c}).isApprox(fuse_features(std::vector<Eigen::VectorXd>{c, a, b}), 1e-14));
  CHECK_THROWS_AS(fuse_features(std::vector<Eigen::VectorXd>{a}), DataError);
  CHECK_THROWS_AS(fuse_features(std::vector<Eigen::VectorXd>{a, Eigen::VectorXd::Ones(3)}), DimensionError);

  DimensionBounds bounds{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(3, 10.0)};
  const std::vector<DimensionBounds> per_dim{bounds, bounds};
  CHECK(fuse_features(std::vector<Eigen::VectorXd>{v, v}, per_dim).isApprox(Eigen::Vector3d(0.4, 0.8, 1.2)));
}
