#include <doctest.h>

#include <sstream>

#include "fdf/corpus.hpp"
#include "fdf/fdfnet.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace fdf;
using fdf::testing::random_grid;

namespace {

NetworkConfig toy_config() {
  NetworkConfig c;
  c.input_height = 8;
  c.input_width = 16;
  c.fc1_dim = 16;
  c.fc2_dim = 128;
  c.num_classes = 2;
  c.lbc4_count = 6;
  c.lbc5_count = 8;
  return c;
}

bool banks_equal(const FdfModel& a, const FdfModel& b) {
  for (std::size_t s = 0; s < kStageCount; ++s) {
    if (a.stages[s].bank.size() != b.stages[s].bank.size()) return false;
    for (std::size_t k = 0; k < a.stages[s].bank.size(); ++k)
      if (a.stages[s].bank[k] != b.stages[s].bank[k]) return false;
  }
  return true;
}

std::string serialize(const FdfModel& model) {
  std::ostringstream out;
  save_model(model, out);
  return out.str();
}

} // namespace

TEST_CASE("config validation") {
  NetworkConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.flattened_dim() == 512);
  c.input_width = 100;
  CHECK_THROWS_AS(c.validate(), SpecError);
  c = NetworkConfig{};
  c.fc2_dim = 64;
  CHECK_THROWS_AS(c.validate(), SpecError);
  c = NetworkConfig{};
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), SpecError);
  c = NetworkConfig{};
  c.input_height = 30;
  c.input_width = 60;
  CHECK_THROWS_AS(c.validate(), SpecError);
}

TEST_CASE("default model shape chain and parameter budget") {
  NetworkConfig c;
  c.num_classes = 5;
  const FdfModel model = FdfModel::create(c);
  CHECK(model.stages[0].bank.size() == 12);
  CHECK(model.stages[1].bank.size() == 24);
  CHECK(model.stages[2].bank.size() == 36);
  CHECK(model.stages[3].bank.size() == 64);
  CHECK(model.stages[4].bank.size() == 128);
  CHECK(model.fixed_count() == 72 * 15 + 192 * 15);
  const Eigen::Index dense = (512 * 512 + 512) + (256 * 512 + 256) + (5 * 256 + 5);
  CHECK(model.trainable_count() == 12 + 24 + 36 + 64 + 128 + dense);
  CHECK(model.stages[2].mix == Eigen::VectorXd::Constant(36, 1.0 / 36.0));

  const ForwardResult r = forward(model, random_grid(64, 128, 1));
  CHECK(r.features.size() == 256);
  CHECK(r.class_scores.size() == 5);
  CHECK(r.class_scores.sum() == doctest::Approx(1.0));
  CHECK((r.features.array() >= 0.0).all());
  CHECK(r.features.allFinite());
}

TEST_CASE("forward reports the offending stage") {
  const FdfModel model = FdfModel::create(toy_config());
  try {
    forward(model, random_grid(8, 12, 1));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("input") != std::string::npos);
  }
}

TEST_CASE("constant images share one feature vector") {
  NetworkConfig c;
  c.input_height = 32;
  c.input_width = 64;
  const FdfModel model = FdfModel::create(c);
  const Eigen::VectorXd reference = forward(model, Eigen::MatrixXd::Zero(32, 64)).features;
  for (double level : {0.1, 0.5, 0.93, 1.0})
    CHECK(forward(model, Eigen::MatrixXd::Constant(32, 64, level)).features == reference);
}

TEST_CASE("property: illumination offset leaves features unchanged") {
  NetworkConfig c;
  c.num_classes = 4;
  const FdfModel model = FdfModel::create(c);
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    const Eigen::MatrixXd x = random_grid(64, 128, trial, 0.0, 0.85);
    const double offset = 0.05 + 0.025 * static_cast<double>(trial);
    const Eigen::VectorXd a = forward(model, x).features;
    const Eigen::VectorXd b = forward(model, Eigen::MatrixXd(x.array() + offset)).features;
    CHECK((a - b).norm() <= 1e-6 * a.norm());
  }
}

TEST_CASE("extract_features keeps order and determinism") {
  const FdfModel model = FdfModel::create(toy_config());
  const Eigen::MatrixXd a = random_grid(8, 16, 1), b = random_grid(8, 16, 2);
  const std::vector<ImageGrid> images{a, b, a};
  const auto f = extract_features(model, images);
  REQUIRE(f.size() == 3);
  CHECK(f[0] == f[2]);
  CHECK(f[0] != f[1]);
  CHECK(f[1] == forward(model, b).features);
}

TEST_CASE("property: loss gradient matches central finite differences") {
  // The uniform 1/C mixing init is itself a kink: border pixels whose responses
  // are permutations of each other tie exactly. Jitter every trainable value.
  FdfModel model = FdfModel::create(toy_config());
  Eigen::VectorXd params = model.trainable_parameters();
  params.array() *= random_grid(params.size(), 1, 31, 0.5, 1.5).array();
  model.set_trainable_parameters(params);
  const std::vector<LabeledImage> batch{{random_grid(8, 16, 21), 0}, {random_grid(8, 16, 22), 1}};

  const auto report = fdf::testing::check_loss_gradient(model, batch);
  MESSAGE("checked " << report.checked << ", reduced step " << report.reduced_step << ", worst relative error "
                     << report.worst_relative);
  CHECK(report.checked == model.trainable_count());
  CHECK(report.failed == 0);
  CHECK(report.reduced_step * 50 < report.checked);
}

TEST_CASE("training") {
  SyntheticSpec spec;
  spec.num_subjects = 2;
  spec.samples_per_subject = 8;
  spec.height = 32;
  spec.width = 64;
  const auto images = generate_synthetic_images(spec);
  std::vector<LabeledImage> corpus;
  int label = 0;
  for (const auto& [subject, samples] : images) {
    for (const auto& img : samples) corpus.push_back({img, label});
    ++label;
  }

  NetworkConfig c;
  c.input_height = 32;
  c.input_width = 64;
  c.num_classes = 2;
  FdfModel model = FdfModel::create(c);
  const FdfModel fresh = FdfModel::create(c);

  SUBCASE("zero epochs is a no-op") {
    TrainConfig t;
    t.epochs = 0;
    CHECK(train(model, corpus, t).empty());
    CHECK(serialize(model) == serialize(fresh));
  }

  SUBCASE("separable corpus is learned and fixed banks stay put") {
    TrainConfig t;
    t.epochs = 20;
    t.batch_size = 4;
    const TrainingLog log = train(model, corpus, t);
    REQUIRE(log.size() == 20);
    CHECK(log.back().accuracy >= 0.95);
    for (std::size_t e = 1; e < log.size(); ++e) CHECK(log[e].loss <= log[e - 1].loss + 1e-12);
    CHECK(banks_equal(model, fresh));
    CHECK(model.trainable_parameters() != fresh.trainable_parameters());
  }

  SUBCASE("missing class") {
    NetworkConfig three = c;
    three.num_classes = 3;
    FdfModel m3 = FdfModel::create(three);
    CHECK_THROWS_AS(train(m3, corpus, TrainConfig{}), DataError);
  }
}

TEST_CASE("model file round trip") {
  FdfModel model = FdfModel::create(toy_config());
  Eigen::VectorXd p = model.trainable_parameters();
  p += random_grid(p.size(), 1, 5, -0.01, 0.01);
  model.set_trainable_parameters(p);

  const std::string bytes = serialize(model);
  std::istringstream in(bytes);
  const FdfModel loaded = load_model(in);
  CHECK(serialize(loaded) == bytes);
  CHECK(banks_equal(model, loaded));
  const Eigen::MatrixXd x = random_grid(8, 16, 9);
  CHECK(forward(loaded, x).features == forward(model, x).features);
  CHECK(forward(loaded, x).class_scores == forward(model, x).class_scores);

  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_model(truncated), LoadError);

  std::string corrupt = bytes;
  corrupt[bytes.size() / 2] ^= 0x40;
  std::istringstream corrupt_in(corrupt);
  CHECK_THROWS_AS(load_model(corrupt_in), LoadError);

  std::string future = bytes;
  future[8] = 9; // version field follows the 8-byte magic
  std::istringstream future_in(future);
  CHECK_THROWS_AS(load_model(future_in), LoadError);

  std::istringstream garbage("not a model");
  CHECK_THROWS_AS(load_model(garbage), LoadError);
}
