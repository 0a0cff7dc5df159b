#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fdf/filterbank.hpp"
#include "fdf/tensor.hpp"

namespace fdf {

enum class FirstLayerBank { bubble, star };

struct NetworkConfig {
  Eigen::Index input_height = 64;
  Eigen::Index input_width = 128;
  Eigen::Index fc1_dim = 512;
  Eigen::Index fc2_dim = 256;
  Eigen::Index num_classes = 2;
  std::uint64_t lbc_seed = 0x4C42433135ULL;
  std::uint64_t init_seed = 0x494E4954ULL;
  bool hard_binarize = false;
  FirstLayerBank first_layer = FirstLayerBank::bubble;
  int lbc4_count = 64;
  int lbc5_count = 128;
  double lbc_sparsity = 0.5;
  double lbc_bernoulli_p = 0.5;

  /// Throws SpecError when the geometry or dimensions are unusable.
  void validate() const;
  Eigen::Index flattened_dim() const { return (input_height / 4) * (input_width / 4); }
};

/// One convolutional stage: fixed bank, rectification, trainable 1x1 mix, optional 2x2 pool.
struct ConvStage {
  KernelBank bank;
  Eigen::VectorXd mix;
  bool pooled = false;
};

inline constexpr std::size_t kStageCount = 5;
inline constexpr std::size_t kDenseCount = 3;

struct FdfModel {
  NetworkConfig config;
  std::array<ConvStage, kStageCount> stages;
  std::array<DenseLayer<double>, kDenseCount> dense;

  /// Builds the fixed banks from the config seeds and initializes trainable weights.
  static FdfModel create(const NetworkConfig& config);

  Eigen::Index trainable_count() const;
  Eigen::Index fixed_count() const;
  /// Flat view of all trainable scalars: stage mixes in order, then each
  /// dense layer's weights (column-major) followed by its biases.
  Eigen::VectorXd trainable_parameters() const;
  void set_trainable_parameters(const Eigen::VectorXd& flat);
};

struct ForwardResult {
  Eigen::VectorXd features;     // FC2 activations
  Eigen::VectorXd class_scores; // softmax over subjects
};

ForwardResult forward(const FdfModel& model, const ImageGrid& image);

std::vector<Eigen::VectorXd> extract_features(const FdfModel& model,
                                              std::span<const ImageGrid> images);

struct LabeledImage {
  ImageGrid image;
  int label = 0;
};

/// Mean softmax cross-entropy over `batch` and its gradient in trainable_parameters() layout.
struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;
  int correct = 0;
};

LossGradient loss_gradient(const FdfModel& model, std::span<const LabeledImage> batch);

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  std::uint64_t shuffle_seed = 0x53485546ULL;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

using TrainingLog = std::vector<EpochStats>;

/// Updates the 1x1 mixes and dense layers in place; fixed banks are never touched.
TrainingLog train(FdfModel& model, std::span<const LabeledImage> corpus, const TrainConfig& config);

void save_model(const FdfModel& model, std::ostream& out);
void save_model(const FdfModel& model, const std::filesystem::path& path);
FdfModel load_model(std::istream& in);
FdfModel load_model(const std::filesystem::path& path);

} // namespace fdf
