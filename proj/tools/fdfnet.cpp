// fdfnet: command-line front end over the fdf library.
//
// Exit codes: 0 success, 1 operational failure, 2 usage error, 3 metric undefined.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fdf/corpus.hpp"
#include "fdf/experiment.hpp"
#include "fdf/random.hpp"

namespace fs = std::filesystem;
using namespace fdf;

namespace {

constexpr int kExitOperational = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMetric = 3;

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  int bits = 128;

  std::uint64_t stream(std::string_view label) const { return derive_seed(seed, fnv1a(label)); }
  KeyIssuer issuer() const { return KeyIssuer(stream("keys")); }
};

// Options left unset on the command line are filled from the config file,
// keyed by long name with dashes turned into underscores.
void apply_config(CLI::App& app, const Config& config) {
  for (CLI::Option* opt : app.get_options()) {
    if (opt->count() > 0 || opt->get_lnames().empty()) continue;
    std::string key = opt->get_lnames().front();
    std::replace(key.begin(), key.end(), '-', '_');
    if (key == "config" || key == "help") continue;
    if (const auto value = config.get(key)) {
      opt->add_result(*value);
      opt->run_callback();
    }
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

fs::path or_default(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback : fs::path(value);
}

std::vector<ImageGrid> load_queries(const FdfModel& model, const std::vector<std::string>& paths) {
  std::vector<ImageGrid> images;
  for (const std::string& p : paths)
    images.push_back(resize_bilinear(read_pnm(p), model.config.input_height, model.config.input_width));
  return images;
}

struct DataStream {
  FeatureCorpus gallery, probes;
  std::string modality;
};

DataStream extract_stream(const fs::path& data, const fs::path& model_path, std::size_t gallery_size) {
  const FdfModel model = load_model(model_path);
  const DatasetLayout layout = ingest(data);
  const auto split = split_gallery_probe(load_images(layout, model.config.input_height, model.config.input_width),
                                         gallery_size);
  return {extract_corpus_features(model, split.gallery), extract_corpus_features(model, split.probes),
          layout.modality};
}

void write_scores(const ScoreSet& scores, const fs::path& path) {
  std::string text = "label,score\n";
  char buf[64];
  for (double s : scores.genuine) {
    std::snprintf(buf, sizeof buf, "genuine,%.17g\n", s);
    text += buf;
  }
  for (double s : scores.impostor) {
    std::snprintf(buf, sizeof buf, "impostor,%.17g\n", s);
    text += buf;
  }
  write_text(path, text);
}

ScoreSet read_scores(const fs::path& path) {
  std::istringstream in(read_text(path));
  ScoreSet scores;
  std::string line;
  std::getline(in, line);
  if (line != "label,score") throw DataError("scores: expected header 'label,score' in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("scores: malformed line '" + line + "'");
    const std::string label = line.substr(0, comma);
    double value = 0.0;
    try {
      value = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError("scores: malformed value in '" + line + "'");
    }
    if (label == "genuine") scores.genuine.push_back(value);
    else if (label == "impostor") scores.impostor.push_back(value);
    else throw DataError("scores: unknown label '" + label + "'");
  }
  return scores;
}

void report_evaluation(const BiohashEvaluation& result, int bits, const fs::path& metrics_path,
                       const fs::path& roc_path, const std::string& scores_path) {
  write_metrics_report(result.metrics, bits, metrics_path);
  export_roc(result.protocol.scores, roc_path);
  if (!scores_path.empty()) write_scores(result.protocol.scores, scores_path);
  std::cout << metrics_json(result.metrics, bits);
}

EnrollmentStore open_store(const std::string& dir) {
  return dir.empty() ? EnrollmentStore() : EnrollmentStore::open(dir);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finger dorsal feature network: training, cancelable templates, evaluation", "fdfnet"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "root seed for every random stream");
  app.add_option("--bits", g.bits, "cancelable template length")->check(CLI::IsMember({32, 64, 128}));

  // synth
  SyntheticSpec synth;
  std::string synth_out;
  auto* cmd_synth = app.add_subcommand("synth", "write a synthetic labeled corpus");
  cmd_synth->add_option("--out", synth_out, "output directory")->required();
  cmd_synth->add_option("--subjects", synth.num_subjects)->check(CLI::Range(2, 100000));
  cmd_synth->add_option("--samples", synth.samples_per_subject)->check(CLI::Range(1, 100000));
  cmd_synth->add_option("--noise", synth.noise_level)->check(CLI::NonNegativeNumber);
  cmd_synth->add_option("--height", synth.height)->check(CLI::PositiveNumber);
  cmd_synth->add_option("--width", synth.width)->check(CLI::PositiveNumber);
  cmd_synth->add_option("--modality", synth.modality)->check(CLI::IsMember({"major", "minor", "nail"}));

  // augment
  AugmentationSpec aug;
  std::string aug_in, aug_out;
  auto* cmd_augment = app.add_subcommand("augment", "write augmented copies of one image");
  cmd_augment->add_option("--image", aug_in)->required()->check(CLI::ExistingFile);
  cmd_augment->add_option("--out", aug_out)->required();
  cmd_augment->add_option("--count", aug.count)->check(CLI::Range(1, 10000));
  cmd_augment->add_option("--zoom-min", aug.zoom_min);
  cmd_augment->add_option("--zoom-max", aug.zoom_max);
  cmd_augment->add_option("--rotation", aug.rotation_deg);
  cmd_augment->add_option("--elastic", aug.elastic_amplitude);
  cmd_augment->add_option("--brightness", aug.brightness);

  // train
  NetworkConfig net;
  TrainConfig tc;
  std::string train_data, train_model, first_layer = "bubble";
  std::size_t train_gallery = 6;
  int train_augment = 0;
  auto* cmd_train = app.add_subcommand("train", "train the network on the gallery split of a corpus");
  cmd_train->add_option("--data", train_data)->required()->check(CLI::ExistingDirectory);
  cmd_train->add_option("--model", train_model, "output model file (default <data>/model.fdf)");
  cmd_train->add_option("--gallery", train_gallery, "training samples per subject; 0 uses all");
  cmd_train->add_option("--epochs", tc.epochs)->check(CLI::NonNegativeNumber);
  cmd_train->add_option("--learning-rate", tc.learning_rate);
  cmd_train->add_option("--momentum", tc.momentum);
  cmd_train->add_option("--batch-size", tc.batch_size)->check(CLI::PositiveNumber);
  cmd_train->add_option("--augment", train_augment, "augmented copies per training image")
      ->check(CLI::NonNegativeNumber);
  cmd_train->add_option("--input-height", net.input_height);
  cmd_train->add_option("--input-width", net.input_width);
  cmd_train->add_option("--fc1-dim", net.fc1_dim);
  cmd_train->add_option("--fc2-dim", net.fc2_dim);
  cmd_train->add_option("--lbc4-count", net.lbc4_count);
  cmd_train->add_option("--lbc5-count", net.lbc5_count);
  cmd_train->add_option("--lbc-sparsity", net.lbc_sparsity);
  cmd_train->add_option("--first-layer", first_layer)->check(CLI::IsMember({"bubble", "star"}));
  cmd_train->add_flag("--hard-binarize", net.hard_binarize);

  // extract
  std::string ext_model, ext_out;
  std::vector<std::string> ext_images;
  auto* cmd_extract = app.add_subcommand("extract", "print feature vectors as JSON lines");
  cmd_extract->add_option("--model", ext_model)->required()->check(CLI::ExistingFile);
  cmd_extract->add_option("--image", ext_images)->required()->check(CLI::ExistingFile);
  cmd_extract->add_option("--out", ext_out, "write to a file instead of stdout");

  // enroll / verify / revoke share these
  std::string id_model, id_store, id_user, modality_name = "major";
  std::vector<std::string> id_images;
  auto identity_options = [&](CLI::App* cmd, bool many_images) {
    cmd->add_option("--model", id_model)->required()->check(CLI::ExistingFile);
    cmd->add_option("--store", id_store, "template store directory")->required();
    cmd->add_option("--user", id_user)->required();
    cmd->add_option("--image", id_images)->required()->check(CLI::ExistingFile)->expected(1, many_images ? -1 : 1);
    cmd->add_option("--modality", modality_name)->check(CLI::IsMember({"major", "minor", "nail", "fused"}));
  };
  auto* cmd_enroll = app.add_subcommand("enroll", "enroll a user from one or more images");
  identity_options(cmd_enroll, true);
  auto* cmd_verify = app.add_subcommand("verify", "verify one image against a claimed user");
  identity_options(cmd_verify, false);
  std::optional<double> verify_threshold;
  std::string verify_metrics;
  std::optional<int> verify_version;
  cmd_verify->add_option("--threshold", verify_threshold);
  cmd_verify->add_option("--metrics", verify_metrics, "take the threshold from an evaluate report")
      ->check(CLI::ExistingFile);
  cmd_verify->add_option("--key-version", verify_version);
  auto* cmd_revoke = app.add_subcommand("revoke", "revoke a user's template and re-enroll under a new key");
  identity_options(cmd_revoke, true);

  // evaluate
  std::string ev_data, ev_model, ev_out, ev_roc, ev_scores, ev_store;
  std::size_t ev_gallery = 6;
  auto* cmd_evaluate = app.add_subcommand("evaluate", "run the identification protocol on a corpus");
  cmd_evaluate->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);
  cmd_evaluate->add_option("--model", ev_model, "model file (default <data>/model.fdf)");
  cmd_evaluate->add_option("--gallery", ev_gallery)->check(CLI::PositiveNumber);
  cmd_evaluate->add_option("--out", ev_out, "metrics report (default <data>/metrics.json)");
  cmd_evaluate->add_option("--roc", ev_roc, "ROC CSV (default <data>/roc.csv)");
  cmd_evaluate->add_option("--scores", ev_scores, "optional raw score CSV");
  cmd_evaluate->add_option("--store", ev_store, "persist enrolled templates in this directory");

  // fuse
  std::vector<std::string> fu_data, fu_models;
  std::string fu_out = "fused_metrics.json", fu_roc = "fused_roc.csv", fu_scores, fu_store;
  std::size_t fu_gallery = 6;
  auto* cmd_fuse = app.add_subcommand("fuse", "evaluate fused features of several modality corpora");
  cmd_fuse->add_option("--data", fu_data)->required()->check(CLI::ExistingDirectory)->expected(2, -1);
  cmd_fuse->add_option("--model", fu_models, "one per --data (default <data>/model.fdf)")->expected(0, -1);
  cmd_fuse->add_option("--gallery", fu_gallery)->check(CLI::PositiveNumber);
  cmd_fuse->add_option("--out", fu_out);
  cmd_fuse->add_option("--roc", fu_roc);
  cmd_fuse->add_option("--scores", fu_scores);
  cmd_fuse->add_option("--store", fu_store);

  // roc
  std::string roc_scores, roc_out;
  std::size_t roc_grid = 1000;
  auto* cmd_roc = app.add_subcommand("roc", "ROC CSV and EER from a score CSV");
  cmd_roc->add_option("--scores", roc_scores)->required()->check(CLI::ExistingFile);
  cmd_roc->add_option("--out", roc_out)->required();
  cmd_roc->add_option("--grid", roc_grid)->check(CLI::Range(2, 1000000));

  try {
    app.parse(argc, argv);
    if (!g.config.empty()) {
      const Config config = Config::load(g.config);
      apply_config(app, config);
      for (CLI::App* sub : app.get_subcommands()) apply_config(*sub, config);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "fdfnet: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (cmd_synth->parsed()) {
      synth.seed = g.stream("synth");
      const DatasetLayout layout = generate_synthetic(synth, synth_out);
      std::cout << "wrote " << layout.subjects.size() << " subjects x " << synth.samples_per_subject
                << " samples to " << synth_out << '\n';
    } else if (cmd_augment->parsed()) {
      aug.seed = g.stream("augment");
      const auto images = augment(read_pnm(aug_in), aug);
      fs::create_directories(aug_out);
      char name[32];
      for (std::size_t i = 0; i < images.size(); ++i) {
        std::snprintf(name, sizeof name, "aug_%03zu.pgm", i);
        write_pgm(images[i], fs::path(aug_out) / name);
      }
      std::cout << "wrote " << images.size() << " images to " << aug_out << '\n';
    } else if (cmd_train->parsed()) {
      const DatasetLayout layout = ingest(train_data);
      const auto corpus = load_images(layout, net.input_height, net.input_width);
      SubjectSamples<ImageGrid> gallery =
          train_gallery == 0 ? SubjectSamples<ImageGrid>(corpus.begin(), corpus.end())
                             : split_gallery_probe(corpus, train_gallery).gallery;
      std::optional<AugmentationSpec> spec;
      if (train_augment > 0) {
        spec = AugmentationSpec{};
        spec->count = train_augment;
        spec->seed = g.stream("augment");
      }
      net.num_classes = static_cast<Eigen::Index>(gallery.size());
      net.first_layer = first_layer == "star" ? FirstLayerBank::star : FirstLayerBank::bubble;
      net.lbc_seed = g.stream("lbc");
      net.init_seed = g.stream("init");
      tc.shuffle_seed = g.stream("shuffle");
      FdfModel model = FdfModel::create(net);
      const auto set = make_training_set(gallery, spec);
      for (const EpochStats& e : train(model, set, tc))
        std::cout << "epoch " << e.epoch << " loss " << e.loss << " accuracy " << e.accuracy << '\n';
      const fs::path out = or_default(train_model, fs::path(train_data) / "model.fdf");
      save_model(model, out);
      std::cout << "saved " << out.string() << '\n';
    } else if (cmd_extract->parsed()) {
      const FdfModel model = load_model(ext_model);
      std::string text;
      const auto images = load_queries(model, ext_images);
      for (std::size_t i = 0; i < images.size(); ++i) {
        const Eigen::VectorXd f = forward(model, images[i]).features;
        nlohmann::json j = {{"image", ext_images[i]},
                            {"features", std::vector<double>(f.data(), f.data() + f.size())}};
        text += j.dump() + "\n";
      }
      if (ext_out.empty()) std::cout << text;
      else write_text(ext_out, text);
    } else if (cmd_enroll->parsed() || cmd_revoke->parsed()) {
      const FdfModel model = load_model(id_model);
      EnrollmentStore store = EnrollmentStore::open(id_store);
      const Modality modality = modality_from_string(modality_name);
      const auto images = load_queries(model, id_images);
      const EnrollmentRecord* rec = nullptr;
      if (cmd_enroll->parsed()) {
        if (store.active(id_user, modality))
          throw IdentityError("enroll: '" + id_user + "' already has an active template; use revoke");
        const int version = store.latest_key_version(id_user, modality) + 1;
        rec = &enroll(store, id_user, images, model, g.issuer().issue(id_user, modality, version, g.bits), modality);
      } else {
        rec = &revoke_and_reissue(store, g.issuer(), id_user, images, model, modality);
      }
      std::cout << nlohmann::json{{"user", rec->user_id},
                                  {"modality", std::string(to_string(rec->modality))},
                                  {"key_version", rec->key_version},
                                  {"bit_length", rec->templ.bit_length()}}
                       .dump()
                << '\n';
    } else if (cmd_verify->parsed()) {
      double threshold = 0.0;
      if (verify_threshold) threshold = *verify_threshold;
      else if (!verify_metrics.empty())
        threshold = nlohmann::json::parse(read_text(verify_metrics)).at("eer_threshold").get<double>();
      else throw DataError("verify: give --threshold or --metrics");
      const FdfModel model = load_model(id_model);
      const EnrollmentStore store = EnrollmentStore::open(id_store);
      const auto images = load_queries(model, id_images);
      const VerificationDecision d = verify(store, images.front(), id_user, model, threshold,
                                            modality_from_string(modality_name), verify_version);
      std::cout << nlohmann::json{{"user", d.user_id},
                                  {"score", d.score},
                                  {"threshold", d.threshold},
                                  {"accepted", d.accepted}}
                       .dump()
                << '\n';
    } else if (cmd_evaluate->parsed()) {
      const fs::path data = ev_data;
      const DataStream s = extract_stream(data, or_default(ev_model, data / "model.fdf"), ev_gallery);
      EnrollmentStore store = open_store(ev_store);
      const auto result = evaluate_biohash(s.gallery, s.probes, g.bits, g.issuer(),
                                           modality_from_string(s.modality), store);
      report_evaluation(result, g.bits, or_default(ev_out, data / "metrics.json"),
                        or_default(ev_roc, data / "roc.csv"), ev_scores);
    } else if (cmd_fuse->parsed()) {
      if (!fu_models.empty() && fu_models.size() != fu_data.size())
        throw DataError("fuse: need one --model per --data");
      std::vector<FeatureCorpus> gallery, probes;
      for (std::size_t i = 0; i < fu_data.size(); ++i) {
        const fs::path data = fu_data[i];
        DataStream s = extract_stream(data, fu_models.empty() ? data / "model.fdf" : fs::path(fu_models[i]),
                                      fu_gallery);
        gallery.push_back(std::move(s.gallery));
        probes.push_back(std::move(s.probes));
      }
      EnrollmentStore store = open_store(fu_store);
      const auto result = evaluate_biohash(fuse_corpora(gallery), fuse_corpora(probes), g.bits, g.issuer(),
                                           Modality::fused, store);
      report_evaluation(result, g.bits, fu_out, fu_roc, fu_scores);
    } else if (cmd_roc->parsed()) {
      const ScoreSet scores = read_scores(roc_scores);
      export_roc(scores, roc_out, roc_grid);
      const EerResult e = eer(scores);
      std::cout << nlohmann::json{{"eer", e.eer}, {"eer_threshold", e.threshold}}.dump() << '\n';
    }
  } catch (const UndefinedMetricError& e) {
    std::cerr << "fdfnet: metric undefined: " << e.what() << '\n';
    return kExitMetric;
  } catch (const std::exception& e) {
    std::cerr << "fdfnet: " << e.what() << '\n';
    return kExitOperational;
  }
  return 0;
}
