#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fdf/tensor.hpp"

namespace fdf {

/// Reads binary/ASCII PGM (P5/P2) and binary PPM (P6, averaged to gray). Values scaled to [0, 1].
ImageGrid read_pnm(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM; values are clamped to [0, 1] and rounded.
void write_pgm(const ImageGrid& image, const std::filesystem::path& path);

/// Bilinear resampling with pixel-centre alignment.
ImageGrid resize_bilinear(const ImageGrid& image, Eigen::Index rows, Eigen::Index cols);

/// Bilinear sample at fractional (row, col), clamped to the edge.
double sample_bilinear(const ImageGrid& image, double row, double col);

struct DatasetLayout {
  std::filesystem::path root;
  std::string modality = "major";
  std::map<std::string, std::vector<std::filesystem::path>> subjects;
};

/// Scans root/<subject>/<sample>.{pgm,ppm,pnm}; lexicographic order throughout.
/// An optional root/MODALITY file names the modality.
DatasetLayout ingest(const std::filesystem::path& root);

/// Decodes and resizes every sample of every subject.
std::map<std::string, std::vector<ImageGrid>> load_images(const DatasetLayout& layout,
                                                          Eigen::Index rows, Eigen::Index cols);

struct AugmentationSpec {
  int count = 45;
  double zoom_min = 0.9;
  double zoom_max = 1.1;
  double rotation_deg = 10.0;      // symmetric range
  double elastic_amplitude = 1.5;  // pixels, peak displacement at grid nodes
  int elastic_grid = 4;            // coarse displacement grid cells per side
  double brightness = 0.15;        // symmetric additive offset range
  std::uint64_t seed = 0x41554721ULL;

  /// All ranges collapsed: every output equals the input.
  static AugmentationSpec identity(std::uint64_t seed = 0);
};

/// `spec.count` images, each a random zoom + rotation + elastic warp + brightness shift.
std::vector<ImageGrid> augment(const ImageGrid& image, const AugmentationSpec& spec);

struct SyntheticSpec {
  int num_subjects = 20;
  int samples_per_subject = 8;
  double noise_level = 0.03; // pixel noise sigma; geometric jitter is kJitterPerNoise * level pixels
  Eigen::Index height = 64;
  Eigen::Index width = 128;
  std::string modality = "major";
  std::uint64_t seed = 0x53594E54ULL;

  static constexpr double kJitterPerNoise = 20.0;
};

/// Knuckle-like procedural texture of one synthetic subject, before intra-class noise.
ImageGrid synthetic_base(const SyntheticSpec& spec, int subject);
ImageGrid synthetic_sample(const SyntheticSpec& spec, int subject, int sample);

/// In-memory corpus keyed like an ingested layout (subject_000, ...).
std::map<std::string, std::vector<ImageGrid>> generate_synthetic_images(const SyntheticSpec& spec);

/// Writes the corpus as root/subject_XXX/sample_YY.pgm and returns the ingested layout.
DatasetLayout generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& root);

/// Flat key=value configuration file; '#' starts a comment.
class Config {
public:
  Config() = default;
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

private:
  std::map<std::string, std::string> values_;
};

} // namespace fdf
