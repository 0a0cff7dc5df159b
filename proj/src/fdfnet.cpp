#include "fdf/fdfnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fdf/random.hpp"

namespace fdf {

namespace {

const char* stage_name(std::size_t s) {
  static const char* names[] = {"conv1", "conv2", "conv3", "lbc4", "lbc5"};
  return names[s];
}

std::string shape(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

DenseLayer<double> make_dense(Eigen::Index in, Eigen::Index out, CounterRng& rng) {
  // He-uniform: U(-sqrt(6 / in), sqrt(6 / in)), zero bias.
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  DenseLayer<double> layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
  for (Eigen::Index c = 0; c < in; ++c)
    for (Eigen::Index r = 0; r < out; ++r) layer.weights(r, c) = rng.uniform(-limit, limit);
  return layer;
}

Eigen::VectorXd flatten_row_major(const Eigen::MatrixXd& map) {
  Eigen::VectorXd flat(map.size());
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < map.rows(); ++r)
    for (Eigen::Index c = 0; c < map.cols(); ++c) flat(i++) = map(r, c);
  return flat;
}

Eigen::MatrixXd unflatten_row_major(const Eigen::VectorXd& flat, Eigen::Index rows,
                                    Eigen::Index cols) {
  Eigen::MatrixXd map(rows, cols);
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) map(r, c) = flat(i++);
  return map;
}

struct StageCache {
  FeatureMap<double> responses; // pre-activation difference maps
  FeatureMap<double> rectified; // bit maps
  Eigen::MatrixXd mixed;
  PoolIndex argmax;
};

struct ForwardCache {
  std::array<StageCache, kStageCount> stages;
  Eigen::VectorXd flat, h1, h2, probs;
  double flat_norm = 0.0; // L2 norm of the flattened map before RMS scaling
};

// The convolutional chain has no biases, so its output scales with image
// contrast and shrinks at every difference stage. FC1 sees the flattened map
// rescaled to unit RMS; an all-zero map (constant image) stays zero.
constexpr double kMinFlatNorm = 1e-300;

Eigen::VectorXd rms_normalize(const Eigen::VectorXd& v, double& norm) {
  norm = v.norm();
  if (norm < kMinFlatNorm) return Eigen::VectorXd::Zero(v.size());
  return v * (std::sqrt(static_cast<double>(v.size())) / norm);
}

Eigen::VectorXd rms_normalize_backward(const Eigen::VectorXd& g, const Eigen::VectorXd& normalized,
                                       double norm) {
  if (norm < kMinFlatNorm) return Eigen::VectorXd::Zero(g.size());
  const double n = static_cast<double>(g.size());
  // normalized = sqrt(n) * x / |x|; unit direction u = normalized / sqrt(n).
  return (std::sqrt(n) / norm) * (g - normalized * (normalized.dot(g) / n));
}

ForwardResult run_forward(const FdfModel& model, const ImageGrid& image, ForwardCache* cache) {
  const NetworkConfig& cfg = model.config;
  if (image.rows() != cfg.input_height || image.cols() != cfg.input_width)
    throw DimensionError("input: expected " + shape(cfg.input_height, cfg.input_width) +
                         " image, got " + shape(image.rows(), image.cols()));

  Eigen::MatrixXd x = image;
  for (std::size_t s = 0; s < kStageCount; ++s) {
    const ConvStage& stage = model.stages[s];
    try {
      FeatureMap<double> responses = conv2d(x, stage.bank);
      FeatureMap<double> rectified = cfg.hard_binarize ? hard_step(responses) : relu(responses);
      Eigen::MatrixXd mixed = combine1x1(rectified, stage.mix);
      PoolIndex argmax;
      x = stage.pooled ? maxpool2(mixed, &argmax) : mixed;
      if (cache) {
        StageCache& sc = cache->stages[s];
        sc.responses = std::move(responses);
        sc.rectified = std::move(rectified);
        sc.mixed = std::move(mixed);
        sc.argmax = std::move(argmax);
      }
    } catch (const DimensionError& e) {
      throw DimensionError(std::string(stage_name(s)) + ": " + e.what());
    }
  }

  ForwardResult result;
  double flat_norm = 0.0;
  Eigen::VectorXd flat = rms_normalize(flatten_row_major(x), flat_norm);
  if (flat.size() != model.dense[0].in_dim())
    throw DimensionError("flatten: produced " + std::to_string(flat.size()) +
                         " values, fc1 expects " + std::to_string(model.dense[0].in_dim()));
  Eigen::VectorXd h1 = dense_forward(model.dense[0], flat, Activation::relu);
  result.features = dense_forward(model.dense[1], h1, Activation::relu);
  result.class_scores = dense_forward(model.dense[2], result.features, Activation::softmax);
  if (cache) {
    cache->flat = std::move(flat);
    cache->flat_norm = flat_norm;
    cache->h1 = std::move(h1);
    cache->h2 = result.features;
    cache->probs = result.class_scores;
  }
  return result;
}

// Accumulates d(-log p_label)/d(params) into `grad` (trainable_parameters layout).
void accumulate_backward(const FdfModel& model, const ForwardCache& cache, int label,
                         Eigen::VectorXd& grad) {
  std::array<Eigen::Index, kStageCount> mix_offset{};
  Eigen::Index offset = 0;
  for (std::size_t s = 0; s < kStageCount; ++s) {
    mix_offset[s] = offset;
    offset += model.stages[s].mix.size();
  }
  std::array<Eigen::Index, kDenseCount> dense_offset{};
  for (std::size_t d = 0; d < kDenseCount; ++d) {
    dense_offset[d] = offset;
    offset += model.dense[d].weights.size() + model.dense[d].biases.size();
  }

  auto add_dense = [&](std::size_t d, const Eigen::VectorXd& g_z, const Eigen::VectorXd& input) {
    const DenseLayer<double>& layer = model.dense[d];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + dense_offset[d], layer.out_dim(), layer.in_dim());
    gw.noalias() += g_z * input.transpose();
    grad.segment(dense_offset[d] + layer.weights.size(), layer.out_dim()) += g_z;
  };

  Eigen::VectorXd g = cache.probs;
  g(label) -= 1.0;
  add_dense(2, g, cache.h2);
  Eigen::VectorXd g_h = model.dense[2].weights.transpose() * g;
  g = g_h.cwiseProduct((cache.h2.array() > 0.0).cast<double>().matrix());
  add_dense(1, g, cache.h1);
  g_h = model.dense[1].weights.transpose() * g;
  g = g_h.cwiseProduct((cache.h1.array() > 0.0).cast<double>().matrix());
  add_dense(0, g, cache.flat);
  const Eigen::VectorXd g_flat =
      rms_normalize_backward(model.dense[0].weights.transpose() * g, cache.flat, cache.flat_norm);

  const StageCache& last = cache.stages[kStageCount - 1];
  const Eigen::Index out_rows = model.stages.back().pooled ? last.mixed.rows() / 2 : last.mixed.rows();
  const Eigen::Index out_cols = model.stages.back().pooled ? last.mixed.cols() / 2 : last.mixed.cols();
  Eigen::MatrixXd g_out = unflatten_row_major(g_flat, out_rows, out_cols);

  for (std::size_t s = kStageCount; s-- > 0;) {
    const ConvStage& stage = model.stages[s];
    const StageCache& sc = cache.stages[s];
    Eigen::MatrixXd g_mixed = stage.pooled ? maxpool2_backward(g_out, sc.argmax, sc.mixed.rows(),
                                                               sc.mixed.cols())
                                           : g_out;
    for (std::size_t c = 0; c < sc.rectified.size(); ++c)
      grad(mix_offset[s] + static_cast<Eigen::Index>(c)) += g_mixed.cwiseProduct(sc.rectified[c]).sum();
    if (s == 0) break;
    if (model.config.hard_binarize) break; // the 0/1 step passes no gradient upstream

    FeatureMap<double> g_resp(sc.responses.size());
    for (std::size_t c = 0; c < sc.responses.size(); ++c)
      g_resp[c] = (stage.mix(static_cast<Eigen::Index>(c)) * g_mixed.array() *
                   (sc.responses[c].array() > 0.0).cast<double>())
                      .matrix();
    g_out = conv2d_input_gradient(g_resp, stage.bank);
  }
}

// --- serialization -----------------------------------------------------------

constexpr char kMagic[8] = {'F', 'D', 'F', 'N', 'E', 'T', 'M', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.append(p, sizeof(T));
  }
  void put_matrix(const Eigen::MatrixXd& m) {
    put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    bytes_.append(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string& bytes() { return bytes_; }

private:
  std::string bytes_;
};

class Reader {
public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  Eigen::MatrixXd get_matrix() {
    const auto rows = get<std::uint32_t>();
    const auto cols = get<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (n > (bytes_.size() - pos_) / sizeof(double)) throw LoadError("model file: truncated matrix");
    Eigen::MatrixXd m(rows, cols);
    std::memcpy(m.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return m;
  }
  Eigen::VectorXd get_vector() {
    Eigen::MatrixXd m = get_matrix();
    if (m.cols() != 1) throw LoadError("model file: expected a column vector");
    return m.col(0);
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw LoadError("model file: unexpected end of data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(std::string_view bytes) { return fnv1a(bytes); }

} // namespace

void NetworkConfig::validate() const {
  if (input_height <= 0 || input_width <= 0) throw SpecError("config: input dims must be positive");
  if (input_height * 2 != input_width)
    throw SpecError("config: input aspect ratio height/width must be 0.5, got " +
                    shape(input_height, input_width));
  if (input_height % 4 != 0 || input_width % 4 != 0)
    throw SpecError("config: input dims must be divisible by 4 for the two 2x2 pools");
  if (fc1_dim <= 0) throw SpecError("config: fc1_dim must be positive");
  if (fc2_dim < 128) throw SpecError("config: fc2_dim must be at least 128");
  if (num_classes < 2) throw SpecError("config: num_classes must be at least 2");
  if (lbc4_count < 1 || lbc5_count < 1) throw SpecError("config: LBC counts must be positive");
}

FdfModel FdfModel::create(const NetworkConfig& config) {
  config.validate();
  FdfModel model;
  model.config = config;
  model.stages[0].bank =
      config.first_layer == FirstLayerBank::star ? make_star_filters() : make_layer_bank(1);
  model.stages[1].bank = make_layer_bank(2);
  model.stages[2].bank = make_layer_bank(3);
  model.stages[3].bank = make_lbc_filters(
      {config.lbc4_count, config.lbc_sparsity, config.lbc_bernoulli_p, derive_seed(config.lbc_seed, 4)});
  model.stages[4].bank = make_lbc_filters(
      {config.lbc5_count, config.lbc_sparsity, config.lbc_bernoulli_p, derive_seed(config.lbc_seed, 5)});
  model.stages[3].pooled = true;
  model.stages[4].pooled = true;
  for (ConvStage& stage : model.stages) {
    const auto n = static_cast<Eigen::Index>(stage.bank.size());
    stage.mix = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  }

  CounterRng rng(config.init_seed);
  model.dense[0] = make_dense(config.flattened_dim(), config.fc1_dim, rng);
  model.dense[1] = make_dense(config.fc1_dim, config.fc2_dim, rng);
  model.dense[2] = make_dense(config.fc2_dim, config.num_classes, rng);
  return model;
}

Eigen::Index FdfModel::trainable_count() const {
  Eigen::Index n = 0;
  for (const ConvStage& s : stages) n += s.mix.size();
  for (const auto& d : dense) n += d.weights.size() + d.biases.size();
  return n;
}

Eigen::Index FdfModel::fixed_count() const {
  Eigen::Index n = 0;
  for (const ConvStage& s : stages)
    for (const Kernel& k : s.bank) n += k.size();
  return n;
}

Eigen::VectorXd FdfModel::trainable_parameters() const {
  Eigen::VectorXd flat(trainable_count());
  Eigen::Index i = 0;
  for (const ConvStage& s : stages) {
    flat.segment(i, s.mix.size()) = s.mix;
    i += s.mix.size();
  }
  for (const auto& d : dense) {
    flat.segment(i, d.weights.size()) = d.weights.reshaped();
    i += d.weights.size();
    flat.segment(i, d.biases.size()) = d.biases;
    i += d.biases.size();
  }
  return flat;
}

void FdfModel::set_trainable_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != trainable_count())
    throw DimensionError("set_trainable_parameters: expected " + std::to_string(trainable_count()) +
                         " values, got " + std::to_string(flat.size()));
  Eigen::Index i = 0;
  for (ConvStage& s : stages) {
    s.mix = flat.segment(i, s.mix.size());
    i += s.mix.size();
  }
  for (auto& d : dense) {
    d.weights.reshaped() = flat.segment(i, d.weights.size());
    i += d.weights.size();
    d.biases = flat.segment(i, d.biases.size());
    i += d.biases.size();
  }
}

ForwardResult forward(const FdfModel& model, const ImageGrid& image) {
  return run_forward(model, image, nullptr);
}

std::vector<Eigen::VectorXd> extract_features(const FdfModel& model,
                                              std::span<const ImageGrid> images) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(images.size());
  for (const ImageGrid& image : images) out.push_back(forward(model, image).features);
  return out;
}

LossGradient loss_gradient(const FdfModel& model, std::span<const LabeledImage> batch) {
  LossGradient result;
  result.gradient = Eigen::VectorXd::Zero(model.trainable_count());
  if (batch.empty()) return result;
  ForwardCache cache;
  for (const LabeledImage& sample : batch) {
    if (sample.label < 0 || sample.label >= model.config.num_classes)
      throw DataError("label " + std::to_string(sample.label) + " outside [0, " +
                      std::to_string(model.config.num_classes) + ")");
    run_forward(model, sample.image, &cache);
    result.loss -= std::log(std::max(cache.probs(sample.label), 1e-300));
    Eigen::Index predicted = 0;
    cache.probs.maxCoeff(&predicted);
    if (predicted == sample.label) ++result.correct;
    accumulate_backward(model, cache, sample.label, result.gradient);
  }
  const double n = static_cast<double>(batch.size());
  result.loss /= n;
  result.gradient /= n;
  return result;
}

TrainingLog train(FdfModel& model, std::span<const LabeledImage> corpus, const TrainConfig& config) {
  TrainingLog log;
  if (config.epochs < 0) throw TrainingError("train: epochs must be non-negative");
  if (config.epochs == 0) return log;
  if (config.batch_size < 1) throw TrainingError("train: batch size must be positive");

  const auto classes = model.config.num_classes;
  std::vector<int> per_class(static_cast<std::size_t>(classes), 0);
  for (const LabeledImage& s : corpus) {
    if (s.label < 0 || s.label >= classes)
      throw DataError("train: label " + std::to_string(s.label) + " outside [0, " +
                      std::to_string(classes) + ")");
    ++per_class[static_cast<std::size_t>(s.label)];
  }
  for (std::size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c] < 1) throw DataError("train: class " + std::to_string(c) + " has no samples");

  Eigen::VectorXd params = model.trainable_parameters();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(params.size());
  std::vector<std::size_t> order(corpus.size());
  std::vector<LabeledImage> batch;
  CounterRng rng(config.shuffle_seed);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(corpus[order[i]]);
      LossGradient lg = loss_gradient(model, batch);
      if (!std::isfinite(lg.loss))
        throw TrainingError("train: non-finite loss in epoch " + std::to_string(epoch));
      loss_sum += lg.loss * static_cast<double>(batch.size());
      correct += lg.correct;
      sgd_step<double>(params, lg.gradient, velocity, config.learning_rate, config.momentum);
      model.set_trainable_parameters(params);
    }
    const double n = static_cast<double>(corpus.size());
    log.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n});
  }
  return log;
}

void save_model(const FdfModel& model, std::ostream& out) {
  const NetworkConfig& c = model.config;
  Writer w;
  w.bytes().append(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::int64_t>(c.input_height);
  w.put<std::int64_t>(c.input_width);
  w.put<std::int64_t>(c.fc1_dim);
  w.put<std::int64_t>(c.fc2_dim);
  w.put<std::int64_t>(c.num_classes);
  w.put<std::uint64_t>(c.lbc_seed);
  w.put<std::uint64_t>(c.init_seed);
  w.put<std::uint8_t>(c.hard_binarize ? 1 : 0);
  w.put<std::uint8_t>(c.first_layer == FirstLayerBank::star ? 1 : 0);
  w.put<std::int32_t>(c.lbc4_count);
  w.put<std::int32_t>(c.lbc5_count);
  w.put<double>(c.lbc_sparsity);
  w.put<double>(c.lbc_bernoulli_p);
  for (const ConvStage& s : model.stages) {
    w.put<std::uint8_t>(s.pooled ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.bank.size()));
    for (const Kernel& k : s.bank) w.put_matrix(k);
    w.put_matrix(s.mix);
  }
  for (const auto& d : model.dense) {
    w.put_matrix(d.weights);
    w.put_matrix(d.biases);
  }
  w.put<std::uint64_t>(checksum(w.bytes()));
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("save_model: write failed");
}

void save_model(const FdfModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_model: cannot open " + path.string());
  save_model(model, out);
}

FdfModel load_model(std::istream& in) {
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string bytes = buffer.str();
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t))
    throw LoadError("model file: too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw LoadError("model file: bad magic");

  const std::string_view body(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof(stored));
  Reader r(body.substr(sizeof(kMagic)));
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw LoadError("model file: unsupported version " + std::to_string(version));
  if (stored != checksum(body)) throw LoadError("model file: checksum mismatch (corrupted)");

  FdfModel model;
  NetworkConfig& c = model.config;
  c.input_height = r.get<std::int64_t>();
  c.input_width = r.get<std::int64_t>();
  c.fc1_dim = r.get<std::int64_t>();
  c.fc2_dim = r.get<std::int64_t>();
  c.num_classes = r.get<std::int64_t>();
  c.lbc_seed = r.get<std::uint64_t>();
  c.init_seed = r.get<std::uint64_t>();
  c.hard_binarize = r.get<std::uint8_t>() != 0;
  c.first_layer = r.get<std::uint8_t>() != 0 ? FirstLayerBank::star : FirstLayerBank::bubble;
  c.lbc4_count = r.get<std::int32_t>();
  c.lbc5_count = r.get<std::int32_t>();
  c.lbc_sparsity = r.get<double>();
  c.lbc_bernoulli_p = r.get<double>();
  try {
    c.validate();
  } catch (const SpecError& e) {
    throw LoadError(std::string("model file: ") + e.what());
  }
  for (ConvStage& s : model.stages) {
    s.pooled = r.get<std::uint8_t>() != 0;
    const auto n = r.get<std::uint32_t>();
    if (n > 4096) throw LoadError("model file: implausible bank size");
    s.bank.reserve(n);
    for (std::uint32_t k = 0; k < n; ++k) s.bank.push_back(r.get_matrix());
    s.mix = r.get_vector();
    if (s.mix.size() != static_cast<Eigen::Index>(n)) throw LoadError("model file: mix length mismatch");
  }
  for (auto& d : model.dense) {
    d.weights = r.get_matrix();
    d.biases = r.get_vector();
    if (d.biases.size() != d.weights.rows()) throw LoadError("model file: bias length mismatch");
  }
  if (!r.done()) throw LoadError("model file: trailing data");
  if (model.dense[0].in_dim() != c.flattened_dim() || model.dense[0].out_dim() != c.fc1_dim ||
      model.dense[1].in_dim() != c.fc1_dim || model.dense[1].out_dim() != c.fc2_dim ||
      model.dense[2].in_dim() != c.fc2_dim || model.dense[2].out_dim() != c.num_classes)
    throw LoadError("model file: dense shapes disagree with config");
  return model;
}

FdfModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("load_model: cannot open " + path.string());
  return load_model(in);
}

} // namespace fdf
