#include "fdf/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fdf/error.hpp"
#include "fdf/random.hpp"

namespace fdf {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open image " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Header token reader that skips whitespace and '#' comments.
class PnmHeader {
public:
  PnmHeader(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  std::string token() {
    for (;;) {
      while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
      if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) fail("truncated header");
    return bytes_.substr(start, pos_ - start);
  }

  long number() {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      fail("non-numeric header field '" + t + "'");
    return std::stol(t);
  }

  // Binary rasters start after exactly one whitespace byte.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size()) fail("missing raster");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw IngestError("undecodable image " + path_.string() + ": " + why);
  }

private:
  const std::string& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

std::string subject_name(int s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "subject_%03d", s);
  return buf;
}

std::string sample_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%02d.pgm", k);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct Crease {
  double x0, tilt, bend, width, depth;
};

struct TextureParams {
  double freq, angle, phase;
  double freq2, angle2, phase2;
  std::vector<Crease> creases;
};

TextureParams texture_params(const SyntheticSpec& spec, int subject) {
  const std::uint64_t stream = derive_seed(spec.seed, fnv1a(spec.modality));

  // Distinct (frequency, orientation) per subject: a shuffled lattice.
  const int n = std::max(spec.num_subjects, 1);
  const int kf = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int ko = (n + kf - 1) / kf;
  std::vector<int> cells(static_cast<std::size_t>(kf * ko));
  std::iota(cells.begin(), cells.end(), 0);
  CounterRng shuffle(derive_seed(stream, 0xC311));
  for (std::size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[shuffle.below(i)]);
  const int cell = cells[static_cast<std::size_t>(subject % static_cast<int>(cells.size()))];

  CounterRng rng(derive_seed(stream, 0x5B000000ULL + static_cast<std::uint64_t>(subject)));
  TextureParams p;
  p.freq = 0.035 + 0.11 * (static_cast<double>(cell % kf) + 0.5) / kf;
  p.angle = std::numbers::pi * (static_cast<double>(cell / kf) + 0.5) / ko;
  p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.freq2 = rng.uniform(0.03, 0.15);
  p.angle2 = rng.uniform(0.0, std::numbers::pi);
  p.phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int creases = 3 + static_cast<int>(rng.below(3));
  const double w = static_cast<double>(spec.width);
  for (int c = 0; c < creases; ++c)
    p.creases.push_back({rng.uniform(0.12 * w, 0.88 * w), rng.uniform(-0.35, 0.35),
                         rng.uniform(-0.012, 0.012), rng.uniform(1.2, 2.6), rng.uniform(0.15, 0.35)});
  return p;
}

double texture_value(const TextureParams& p, double y, double x, double cy) {
  const double u = x * std::cos(p.angle) + y * std::sin(p.angle);
  const double u2 = x * std::cos(p.angle2) + y * std::sin(p.angle2);
  double v = 0.5 + 0.16 * std::sin(2.0 * std::numbers::pi * p.freq * u + p.phase) +
             0.08 * std::sin(2.0 * std::numbers::pi * p.freq2 * u2 + p.phase2);
  for (const Crease& c : p.creases) {
    const double dy = y - cy;
    const double d = x - (c.x0 + c.tilt * dy + c.bend * dy * dy);
    v -= c.depth * std::exp(-d * d / (2.0 * c.width * c.width));
  }
  return std::clamp(v, 0.0, 1.0);
}

} // namespace

ImageGrid read_pnm(const fs::path& path) {
  const std::string bytes = read_file(path);
  PnmHeader header(bytes, path);
  if (bytes.size() < 2 || bytes[0] != 'P') header.fail("not a PNM file");
  const std::string magic = header.token();
  if (magic != "P2" && magic != "P5" && magic != "P6") header.fail("unsupported format " + magic);
  const long width = header.number();
  const long height = header.number();
  const long maxval = header.number();
  if (width <= 0 || height <= 0) header.fail("non-positive dimensions");
  if (maxval <= 0 || maxval > 65535) header.fail("maxval out of range");
  const int channels = magic == "P6" ? 3 : 1;

  ImageGrid image(height, width);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (magic == "P2") {
    for (long r = 0; r < height; ++r)
      for (long c = 0; c < width; ++c) {
        const long v = header.number();
        if (v > maxval) header.fail("sample exceeds maxval");
        image(r, c) = static_cast<double>(v) * scale;
      }
    return image;
  }

  const std::size_t start = header.raster_start();
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(width * height * channels) * bps;
  if (bytes.size() < start + need) header.fail("truncated raster");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  std::size_t i = 0;
  for (long r = 0; r < height; ++r)
    for (long c = 0; c < width; ++c) {
      double sum = 0.0;
      for (int ch = 0; ch < channels; ++ch) {
        unsigned v = raw[i++];
        if (bps == 2) v = (v << 8) | raw[i++];
        if (v > static_cast<unsigned>(maxval)) header.fail("sample exceeds maxval");
        sum += static_cast<double>(v);
      }
      image(r, c) = sum / channels * scale;
    }
  return image;
}

void write_pgm(const ImageGrid& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::string raster(static_cast<std::size_t>(image.size()), '\0');
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c)
      raster[i++] = static_cast<char>(
          static_cast<unsigned char>(std::lround(std::clamp(image(r, c), 0.0, 1.0) * 255.0)));
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

double sample_bilinear(const ImageGrid& image, double row, double col) {
  const double r = std::clamp(row, 0.0, static_cast<double>(image.rows() - 1));
  const double c = std::clamp(col, 0.0, static_cast<double>(image.cols() - 1));
  const auto r0 = static_cast<Eigen::Index>(std::floor(r));
  const auto c0 = static_cast<Eigen::Index>(std::floor(c));
  const Eigen::Index r1 = std::min(r0 + 1, image.rows() - 1);
  const Eigen::Index c1 = std::min(c0 + 1, image.cols() - 1);
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  if (fr == 0.0 && fc == 0.0) return image(r0, c0);
  return (1.0 - fr) * ((1.0 - fc) * image(r0, c0) + fc * image(r0, c1)) +
         fr * ((1.0 - fc) * image(r1, c0) + fc * image(r1, c1));
}

ImageGrid resize_bilinear(const ImageGrid& image, Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0 || image.size() == 0) throw DimensionError("resize: empty geometry");
  if (rows == image.rows() && cols == image.cols()) return image;
  ImageGrid out(rows, cols);
  const double sr = static_cast<double>(image.rows()) / static_cast<double>(rows);
  const double sc = static_cast<double>(image.cols()) / static_cast<double>(cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      out(r, c) = sample_bilinear(image, (static_cast<double>(r) + 0.5) * sr - 0.5,
                                  (static_cast<double>(c) + 0.5) * sc - 0.5);
  return out;
}

DatasetLayout ingest(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IngestError("dataset root " + root.string() + " is not a directory");
  DatasetLayout layout;
  layout.root = root;
  if (std::ifstream tag(root / "MODALITY"); tag) {
    std::string name;
    std::getline(tag, name);
    if (!trim(name).empty()) layout.modality = trim(name);
  }

  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    std::vector<fs::path> samples;
    for (const auto& file : fs::directory_iterator(entry.path())) {
      if (!file.is_regular_file()) continue;
      if (!has_image_extension(file.path()))
        throw IngestError("non-image file in dataset: " + file.path().string());
      std::ifstream in(file.path(), std::ios::binary);
      char magic[2] = {0, 0};
      in.read(magic, 2);
      if (magic[0] != 'P' || (magic[1] != '2' && magic[1] != '5' && magic[1] != '6'))
        throw IngestError("undecodable image " + file.path().string() + ": not a PGM/PPM file");
      samples.push_back(file.path());
    }
    if (samples.empty()) throw DataError("subject directory " + entry.path().string() + " is empty");
    std::sort(samples.begin(), samples.end());
    layout.subjects.emplace(entry.path().filename().string(), std::move(samples));
  }
  if (layout.subjects.empty()) throw DataError("dataset " + root.string() + " has no subject directories");
  return layout;
}

std::map<std::string, std::vector<ImageGrid>> load_images(const DatasetLayout& layout, Eigen::Index rows,
                                                          Eigen::Index cols) {
  std::map<std::string, std::vector<ImageGrid>> out;
  for (const auto& [subject, paths] : layout.subjects) {
    auto& images = out[subject];
    for (const auto& p : paths) images.push_back(resize_bilinear(read_pnm(p), rows, cols));
  }
  return out;
}

AugmentationSpec AugmentationSpec::identity(std::uint64_t seed) {
  AugmentationSpec s;
  s.zoom_min = s.zoom_max = 1.0;
  s.rotation_deg = 0.0;
  s.elastic_amplitude = 0.0;
  s.brightness = 0.0;
  s.seed = seed;
  return s;
}

std::vector<ImageGrid> augment(const ImageGrid& image, const AugmentationSpec& spec) {
  if (spec.count < 0) throw SpecError("augment: count must be non-negative");
  if (spec.zoom_min <= 0.0 || spec.zoom_max < spec.zoom_min) throw SpecError("augment: invalid zoom range");
  if (spec.elastic_grid < 1) throw SpecError("augment: elastic grid must be positive");

  const Eigen::Index h = image.rows();
  const Eigen::Index w = image.cols();
  const double cy = static_cast<double>(h - 1) / 2.0;
  const double cx = static_cast<double>(w - 1) / 2.0;
  const int g = spec.elastic_grid;

  std::vector<ImageGrid> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int k = 0; k < spec.count; ++k) {
    CounterRng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(k)));
    const double zoom = rng.uniform(spec.zoom_min, spec.zoom_max);
    const double angle = rng.uniform(-spec.rotation_deg, spec.rotation_deg) * std::numbers::pi / 180.0;
    const double offset = rng.uniform(-spec.brightness, spec.brightness);
    Eigen::MatrixXd disp_r(g + 1, g + 1);
    Eigen::MatrixXd disp_c(g + 1, g + 1);
    for (Eigen::Index j = 0; j <= g; ++j)
      for (Eigen::Index i = 0; i <= g; ++i) {
        disp_r(i, j) = rng.uniform(-spec.elastic_amplitude, spec.elastic_amplitude);
        disp_c(i, j) = rng.uniform(-spec.elastic_amplitude, spec.elastic_amplitude);
      }

    const double cs = std::cos(angle);
    const double sn = std::sin(angle);
    ImageGrid result(h, w);
    for (Eigen::Index c = 0; c < w; ++c)
      for (Eigen::Index r = 0; r < h; ++r) {
        const double dy = (static_cast<double>(r) - cy) / zoom;
        const double dx = (static_cast<double>(c) - cx) / zoom;
        double sr = cy + cs * dy - sn * dx;
        double sc = cx + sn * dy + cs * dx;
        if (spec.elastic_amplitude != 0.0) {
          const double gr = static_cast<double>(r) / static_cast<double>(std::max<Eigen::Index>(h - 1, 1)) * g;
          const double gc = static_cast<double>(c) / static_cast<double>(std::max<Eigen::Index>(w - 1, 1)) * g;
          sr += sample_bilinear(disp_r, gr, gc);
          sc += sample_bilinear(disp_c, gr, gc);
        }
        result(r, c) = std::clamp(sample_bilinear(image, sr, sc) + offset, 0.0, 1.0);
      }
    out.push_back(std::move(result));
  }
  return out;
}

ImageGrid synthetic_base(const SyntheticSpec& spec, int subject) {
  const TextureParams p = texture_params(spec, subject);
  const double cy = static_cast<double>(spec.height - 1) / 2.0;
  ImageGrid image(spec.height, spec.width);
  for (Eigen::Index c = 0; c < spec.width; ++c)
    for (Eigen::Index r = 0; r < spec.height; ++r)
      image(r, c) = texture_value(p, static_cast<double>(r), static_cast<double>(c), cy);
  return image;
}

ImageGrid synthetic_sample(const SyntheticSpec& spec, int subject, int sample) {
  const TextureParams p = texture_params(spec, subject);
  const std::uint64_t stream = derive_seed(spec.seed, fnv1a(spec.modality));
  CounterRng rng(derive_seed(derive_seed(stream, 0x5A000000ULL + static_cast<std::uint64_t>(subject)),
                             static_cast<std::uint64_t>(sample)));
  const double jitter = SyntheticSpec::kJitterPerNoise * spec.noise_level;
  const double shift_r = rng.uniform(-jitter, jitter);
  const double shift_c = rng.uniform(-jitter, jitter);
  const double cy = static_cast<double>(spec.height - 1) / 2.0;
  ImageGrid image(spec.height, spec.width);
  for (Eigen::Index c = 0; c < spec.width; ++c)
    for (Eigen::Index r = 0; r < spec.height; ++r) {
      double v = texture_value(p, static_cast<double>(r) + shift_r, static_cast<double>(c) + shift_c, cy);
      if (spec.noise_level > 0.0) v += spec.noise_level * rng.normal();
      image(r, c) = std::clamp(v, 0.0, 1.0);
    }
  return image;
}

std::map<std::string, std::vector<ImageGrid>> generate_synthetic_images(const SyntheticSpec& spec) {
  if (spec.num_subjects < 2) throw SpecError("synthetic: need at least two subjects");
  if (spec.samples_per_subject < 1) throw SpecError("synthetic: need at least one sample per subject");
  if (spec.noise_level < 0.0) throw SpecError("synthetic: noise level must be non-negative");
  std::map<std::string, std::vector<ImageGrid>> corpus;
  for (int s = 0; s < spec.num_subjects; ++s) {
    auto& samples = corpus[subject_name(s)];
    for (int k = 0; k < spec.samples_per_subject; ++k) samples.push_back(synthetic_sample(spec, s, k));
  }
  return corpus;
}

DatasetLayout generate_synthetic(const SyntheticSpec& spec, const fs::path& root) {
  const auto corpus = generate_synthetic_images(spec);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("synthetic: cannot create " + root.string() + ": " + ec.message());
  {
    std::ofstream tag(root / "MODALITY", std::ios::trunc);
    if (!tag) throw IoError("synthetic: cannot write " + (root / "MODALITY").string());
    tag << spec.modality << '\n';
  }
  for (const auto& [subject, samples] : corpus) {
    const fs::path dir = root / subject;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("synthetic: cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t k = 0; k < samples.size(); ++k)
      write_pgm(samples[k], dir / sample_name(static_cast<int>(k)));
  }
  return ingest(root);
}

// --- config ------------------------------------------------------------------

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("config " + path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

long long Config::get_int(const std::string& key, long long fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const long long x = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument(key);
    return x;
  } catch (const std::exception&) {
    throw DataError("config: '" + key + "' is not an integer: " + *v);
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const std::uint64_t x = std::stoull(*v, &used, 0);
    if (used != v->size()) throw std::invalid_argument(key);
    return x;
  } catch (const std::exception&) {
    throw DataError("config: '" + key + "' is not an unsigned integer: " + *v);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double x = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(key);
    return x;
  } catch (const std::exception&) {
    throw DataError("config: '" + key + "' is not a number: " + *v);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw DataError("config: '" + key + "' is not a boolean: " + *v);
}

} // namespace fdf
