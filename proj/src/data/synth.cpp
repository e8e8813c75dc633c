#include "mhal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "../io/binary.hpp"

namespace mhal {

namespace {

constexpr std::array<double, kClasses> kBaseIntensity{0.08, 0.9, 0.75, 0.58, 0.3};
constexpr int kMaxTries = 1000;
constexpr std::uint32_t kTargetSubjectBase = 100000;

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool inside_ellipse(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx, dy = y - e.cy;
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  const double u = (c * dx + s * dy) / e.a, v = (-s * dx + c * dy) / e.b;
  return u * u + v * v <= 1.0;
}

double dist(double x0, double y0, double x1, double y1) { return std::hypot(x1 - x0, y1 - y0); }

// Smooth field from a few Gaussian bumps, scaled so the largest displacement
// on the pixel grid equals `magnitude` (normalized units).
std::vector<double> deformation_field(const SynthConfig& cfg, std::uint64_t seed) {
  const auto H = cfg.height, W = cfg.width;
  std::vector<double> field(static_cast<std::size_t>(2 * H * W), 0.0);
  if (cfg.deformation <= 0) return field;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::normal_distribution<double> amp(0.0, 1.0);
  constexpr int kBumps = 3;
  constexpr double kSigma = 0.5;
  std::array<std::array<double, 4>, kBumps> bumps{};
  for (auto& b : bumps) b = {pos(rng), pos(rng), amp(rng), amp(rng)};
  double peak = 0;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double nx = -1.0 + 2.0 * x / (W - 1), ny = -1.0 + 2.0 * y / (H - 1);
      double dx = 0, dy = 0;
      for (const auto& b : bumps) {
        const double r2 = (nx - b[0]) * (nx - b[0]) + (ny - b[1]) * (ny - b[1]);
        const double k = std::exp(-r2 / (2 * kSigma * kSigma));
        dx += b[2] * k;
        dy += b[3] * k;
      }
      field[y * W + x] = dx;
      field[H * W + y * W + x] = dy;
      peak = std::max(peak, std::hypot(dx, dy));
    }
  if (peak > 0)
    for (auto& v : field) v *= cfg.deformation / peak;
  return field;
}

}  // namespace

void SynthConfig::validate() const {
  if (height < 32 || width < 32) throw std::invalid_argument("synth: image must be at least 32x32");
  if (source_subjects < 1 || target_train < 1 || target_val < 0 || target_test < 1) {
    throw std::invalid_argument("synth: subject counts must be positive");
  }
  if (shots < 1 || shots > source_subjects) throw std::invalid_argument("synth: shots must lie in [1, source_subjects]");
  if (!(gamma > 0) || !(deformation >= 0) || !(noise_sigma >= 0) || !(intensity_jitter >= 0)) {
    throw std::invalid_argument("synth: gamma > 0 and deformation, noise, jitter >= 0 required");
  }
}

const char* domain_name(Domain d) {
  switch (d) {
    case Domain::source: return "source";
    case Domain::target: return "target";
    case Domain::source_like: return "source_like";
  }
  return "unknown";
}

std::span<const float> DomainDataset::image(std::int64_t i) const {
  return std::span<const float>(images).subspan(static_cast<std::size_t>(i * plane()), static_cast<std::size_t>(plane()));
}

std::vector<std::int64_t> DomainDataset::labeled_indices() const {
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < size(); ++i)
    if (labeled[i]) out.push_back(i);
  return out;
}

std::vector<std::int64_t> DomainDataset::unlabeled_indices() const {
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < size(); ++i)
    if (!labeled[i]) out.push_back(i);
  return out;
}

DomainDataset DomainDataset::subset(const std::vector<std::int64_t>& rows) const {
  DomainDataset out;
  out.domain = domain;
  out.h = h;
  out.w = w;
  out.labels = LabelMap(0, h, w);
  for (auto r : rows) {
    if (r < 0 || r >= size()) throw std::out_of_range("dataset subset: row " + std::to_string(r) + " out of range");
    out.push(image(r), subjects[r], labeled[r] ? labels.values.data() + r * plane() : nullptr);
  }
  return out;
}

void DomainDataset::strip_labels() {
  std::fill(labeled.begin(), labeled.end(), std::uint8_t{0});
  std::fill(labels.values.begin(), labels.values.end(), std::uint8_t{0});
}

void DomainDataset::push(std::span<const float> img, std::uint32_t subject, const std::uint8_t* label_plane) {
  if (static_cast<std::int64_t>(img.size()) != plane()) throw ShapeError("dataset push: image size mismatch");
  images.insert(images.end(), img.begin(), img.end());
  subjects.push_back(subject);
  labeled.push_back(label_plane ? 1 : 0);
  if (label_plane) {
    labels.values.insert(labels.values.end(), label_plane, label_plane + plane());
  } else {
    labels.values.insert(labels.values.end(), static_cast<std::size_t>(plane()), std::uint8_t{0});
  }
  labels.batch = size();
  labels.h = h;
  labels.w = w;
}

std::uint8_t class_at(const SubjectGeometry& g, double x, double y) {
  const double d = dist(x, y, g.cx, g.cy);
  if (d <= g.r_inner) return 3;
  if (d <= g.r_outer) return 4;
  if (inside_ellipse(g.aa, x, y)) return 1;
  if (inside_ellipse(g.lac, x, y)) return 2;
  return 0;
}

SubjectGeometry sample_geometry(const SynthConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);
  const double s = std::min(H, W) / 64.0;
  constexpr double kMargin = 3.0;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    SubjectGeometry g{};
    g.cx = W / 2 + uni(-6, 6) * s;
    g.cy = H / 2 + uni(-6, 6) * s;
    g.r_outer = uni(9, 12) * s;
    g.r_inner = g.r_outer - uni(3, 4.5) * s;
    auto ellipse = [&] {
      Ellipse e{};
      e.a = uni(4, 7) * s;
      e.b = uni(3, 5) * s;
      e.theta = uni(0, 3.141592653589793);
      const double ang = uni(0, 2 * 3.141592653589793);
      const double r = g.r_outer + e.a + uni(1.5, 8) * s;
      e.cx = g.cx + r * std::cos(ang);
      e.cy = g.cy + r * std::sin(ang);
      return e;
    };
    g.aa = ellipse();
    g.lac = ellipse();
    auto in_image = [&](const Ellipse& e) {
      return e.cx - e.a >= kMargin && e.cy - e.a >= kMargin && e.cx + e.a <= W - 1 - kMargin &&
             e.cy + e.a <= H - 1 - kMargin;
    };
    if (!in_image(g.aa) || !in_image(g.lac)) continue;
    if (dist(g.aa.cx, g.aa.cy, g.cx, g.cy) < g.r_outer + g.aa.a + 1.5) continue;
    if (dist(g.lac.cx, g.lac.cy, g.cx, g.cy) < g.r_outer + g.lac.a + 1.5) continue;
    if (dist(g.aa.cx, g.aa.cy, g.lac.cx, g.lac.cy) < g.aa.a + g.lac.a + 1.5) continue;
    for (int c = 0; c < kClasses; ++c) {
      g.intensity[c] = std::clamp(kBaseIntensity[c] + uni(-1, 1) * cfg.intensity_jitter, 0.0, 1.0);
    }
    return g;
  }
  throw std::runtime_error("synth: geometry rejection sampling failed after " + std::to_string(kMaxTries) + " tries");
}

RenderedSubject render_subject(const SubjectGeometry& g, Domain domain, const SynthConfig& cfg,
                               std::uint64_t deform_seed, std::uint64_t noise_seed) {
  const auto H = cfg.height, W = cfg.width;
  RenderedSubject out;
  out.image.resize(static_cast<std::size_t>(H * W));
  out.labels.resize(static_cast<std::size_t>(H * W));
  const bool target = domain == Domain::target;
  const auto field = target ? deformation_field(cfg, deform_seed) : std::vector<double>(2 * H * W, 0.0);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const auto i = y * W + x;
      const double sx = x + field[i] * (W - 1) / 2.0;
      const double sy = y + field[H * W + i] * (H - 1) / 2.0;
      const auto c = class_at(g, sx, sy);
      double v = g.intensity[c];
      if (target && cfg.remap_intensity) v = 1.0 - std::pow(v, cfg.gamma);
      if (cfg.noise_sigma > 0) v += noise(rng);
      out.image[i] = static_cast<float>(v);
      out.labels[i] = c;
    }
  return out;
}

SynthBundle generate(const SynthConfig& cfg) {
  cfg.validate();
  auto make = [&](Domain domain, int count, std::uint32_t subject_base, std::uint64_t stream) {
    DomainDataset ds;
    ds.domain = domain;
    ds.h = cfg.height;
    ds.w = cfg.width;
    ds.labels = LabelMap(0, ds.h, ds.w);
    std::vector<RenderedSubject> items(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) {
      const auto base = mix(cfg.seed, stream * 1000003ULL + static_cast<std::uint64_t>(i));
      const auto g = sample_geometry(cfg, mix(base, 1));
      items[i] = render_subject(g, domain, cfg, mix(base, 2), mix(base, 3));
    }
    for (int i = 0; i < count; ++i) {
      ds.push(items[i].image, subject_base + static_cast<std::uint32_t>(i), items[i].labels.data());
    }
    return ds;
  };
  SynthBundle b;
  b.source = make(Domain::source, cfg.source_subjects, 0, 1);
  b.target_train = make(Domain::target, cfg.target_train, kTargetSubjectBase, 2);
  b.target_val = make(Domain::target, cfg.target_val, kTargetSubjectBase + 10000, 3);
  b.target_test = make(Domain::target, cfg.target_test, kTargetSubjectBase + 20000, 4);
  return b;
}

DomainDataset make_source_like(const DomainDataset& target, double gamma) {
  if (!(gamma > 0)) throw std::invalid_argument("make_source_like: gamma must be > 0");
  DomainDataset out = target;
  out.domain = Domain::source_like;
  for (auto& v : out.images) {
    v = static_cast<float>(std::pow(1.0 - std::clamp(static_cast<double>(v), 0.0, 1.0), 1.0 / gamma));
  }
  return out;
}

FewShotSplit few_shot_split(const DomainDataset& source, int k, std::uint64_t seed) {
  std::vector<std::uint32_t> ids = source.subjects;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (k < 1 || k > static_cast<int>(ids.size())) {
    throw std::invalid_argument("few_shot_split: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(ids.size()) + " subjects]");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::uint32_t> chosen(ids.begin(), ids.begin() + k);
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::int64_t> lab, unl;
  for (std::int64_t i = 0; i < source.size(); ++i) {
    const bool pick = std::binary_search(chosen.begin(), chosen.end(), source.subjects[i]);
    if (pick && !source.labeled[i]) throw std::invalid_argument("few_shot_split: chosen subject has no labels");
    (pick ? lab : unl).push_back(i);
  }
  FewShotSplit out{source.subset(lab), source.subset(unl), chosen};
  out.unlabeled.strip_labels();
  return out;
}

namespace {
constexpr char kMagic[4] = {'M', 'H', 'A', 'L'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::uint64_t dataset_file_size(const DomainDataset& ds) {
  const auto n = static_cast<std::uint64_t>(ds.size());
  const auto plane = static_cast<std::uint64_t>(ds.plane());
  const auto nl = static_cast<std::uint64_t>(std::count(ds.labeled.begin(), ds.labeled.end(), std::uint8_t{1}));
  return 4 + 2 + 1 + 1 + 12 + n * 5 + n * plane * sizeof(float) + nl * plane;
}

void save_dataset(const DomainDataset& ds, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u8(sizeof(float));
  w.u8(static_cast<std::uint8_t>(ds.domain));
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.h));
  w.u32(static_cast<std::uint32_t>(ds.w));
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    w.u32(ds.subjects[i]);
    w.u8(ds.labeled[i]);
  }
  w.values(std::span<const float>(ds.images));
  for (std::int64_t i = 0; i < ds.size(); ++i)
    if (ds.labeled[i]) w.bytes(ds.labels.values.data() + i * ds.plane(), static_cast<std::size_t>(ds.plane()));
  w.write_file(path);
}

DomainDataset load_dataset(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path), path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError(path.string() + ": bad magic (not an MHAL dataset)");
  const auto version = r.u16();
  if (version != kVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto width = r.u8();
  if (width != 4 && width != 8) throw FormatError(path.string() + ": bad element width " + std::to_string(width));
  const auto domain = r.u8();
  if (domain > 2) throw FormatError(path.string() + ": bad domain tag " + std::to_string(domain));
  const auto n = r.u32(), h = r.u32(), w = r.u32();
  if (h == 0 || w == 0 || static_cast<std::uint64_t>(h) * w > (1u << 24)) {
    throw FormatError(path.string() + ": implausible image size");
  }
  const std::uint64_t plane = static_cast<std::uint64_t>(h) * w;
  if (static_cast<std::uint64_t>(n) * (5 + plane * width) > r.remaining()) throw FormatError(path.string() + ": truncated file");
  DomainDataset ds;
  ds.domain = static_cast<Domain>(domain);
  ds.h = h;
  ds.w = w;
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.subjects.push_back(r.u32());
    const auto l = r.u8();
    if (l > 1) throw FormatError(path.string() + ": bad labeled flag");
    ds.labeled.push_back(l);
  }
  const auto count = static_cast<std::size_t>(n * plane);
  ds.images = width == 4 ? r.values_as<float, float>(count) : r.values_as<double, float>(count);
  ds.labels = LabelMap(n, h, w);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!ds.labeled[i]) continue;
    r.bytes(ds.labels.values.data() + i * plane, static_cast<std::size_t>(plane));
    for (std::uint64_t j = 0; j < plane; ++j) {
      if (ds.labels.values[i * plane + j] >= kClasses) throw FormatError(path.string() + ": label value out of range");
    }
  }
  r.expect_end();
  return ds;
}

template <class T>
Tensor<T> image_batch(const DomainDataset& ds, const std::vector<std::int64_t>& rows) {
  const auto P = ds.plane();
  std::vector<T> out(static_cast<std::size_t>(rows.size() * P));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= ds.size()) throw std::out_of_range("image_batch: row out of range");
    const auto img = ds.image(rows[k]);
    double mean = 0;
    for (float v : img) mean += v;
    mean /= static_cast<double>(P);
    double var = 0;
    for (float v : img) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(P) + 1e-8);
    for (std::int64_t i = 0; i < P; ++i) out[k * P + i] = static_cast<T>((img[i] - mean) * inv);
  }
  return Tensor<T>::from({static_cast<std::int64_t>(rows.size()), 1, ds.h, ds.w}, std::move(out));
}

LabelMap label_batch(const DomainDataset& ds, const std::vector<std::int64_t>& rows) {
  LabelMap out(static_cast<std::int64_t>(rows.size()), ds.h, ds.w);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (!ds.labeled.at(static_cast<std::size_t>(rows[k]))) {
      throw std::invalid_argument("label_batch: item " + std::to_string(rows[k]) + " has no labels");
    }
    std::copy_n(ds.labels.values.begin() + rows[k] * ds.plane(), ds.plane(), out.values.begin() + k * ds.plane());
  }
  return out;
}

template Tensor<float> image_batch<float>(const DomainDataset&, const std::vector<std::int64_t>&);
template Tensor<double> image_batch<double>(const DomainDataset&, const std::vector<std::int64_t>&);

}  // namespace mhal
