#pragma once

// Procedural two-domain segmentation benchmark: a ring (MYO) around a disc
// (LVC) plus two ellipses (AA, LAC) on a dim background. The target domain
// adds a smooth random deformation, the intensity remap 1 - v^gamma and noise.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mhal/labels.hpp"
#include "mhal/tensor.hpp"

namespace mhal {

inline constexpr int kClasses = 5;
inline constexpr std::array<const char*, kClasses> kClassNames{"BG", "AA", "LAC", "LVC", "MYO"};

struct SynthConfig {
  std::int64_t height = 64, width = 64;
  int source_subjects = 20;  // N labeled + M unlabeled before the few-shot split
  int shots = 4;
  int target_train = 32;
  int target_val = 8;
  int target_test = 20;
  double deformation = 0.08;  // max displacement, normalized units
  double gamma = 1.5;
  bool remap_intensity = true;
  double noise_sigma = 0.03;
  double intensity_jitter = 0.04;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Domain : std::uint8_t { source = 0, target = 1, source_like = 2 };
const char* domain_name(Domain d);

struct DomainDataset {
  Domain domain = Domain::source;
  std::int64_t h = 0, w = 0;
  std::vector<float> images;           // [n, 1, h, w]
  std::vector<std::uint32_t> subjects;
  std::vector<std::uint8_t> labeled;   // 1 where labels are present
  LabelMap labels;                     // [n, h, w]; zeros on unlabeled items

  std::int64_t size() const { return static_cast<std::int64_t>(subjects.size()); }
  std::int64_t plane() const { return h * w; }
  std::span<const float> image(std::int64_t i) const;
  std::vector<std::int64_t> labeled_indices() const;
  std::vector<std::int64_t> unlabeled_indices() const;
  DomainDataset subset(const std::vector<std::int64_t>& rows) const;
  void strip_labels();
  void push(std::span<const float> image, std::uint32_t subject, const std::uint8_t* label_plane);
  bool operator==(const DomainDataset&) const = default;
};

struct Ellipse {
  double cx, cy, a, b, theta;
};

// Geometry of one subject in pixel coordinates.
struct SubjectGeometry {
  double cx, cy, r_outer, r_inner;
  Ellipse aa, lac;
  std::array<double, kClasses> intensity;  // pre-remap, in [0, 1]
};

// Class of the continuous point (x, y) (pixel units, pixel centers at integers).
std::uint8_t class_at(const SubjectGeometry& g, double x, double y);

// Rejection-sampled non-overlapping geometry; throws after 1000 failed tries.
SubjectGeometry sample_geometry(const SynthConfig& cfg, std::uint64_t seed);

struct RenderedSubject {
  std::vector<float> image;
  std::vector<std::uint8_t> labels;
};

// Renders a subject in the given domain. deform_seed drives the target
// deformation, noise_seed the additive noise.
RenderedSubject render_subject(const SubjectGeometry& g, Domain domain, const SynthConfig& cfg,
                               std::uint64_t deform_seed, std::uint64_t noise_seed);

struct SynthBundle {
  DomainDataset source;        // all labeled before the split
  DomainDataset target_train;  // labels kept for the supervised upper bound only
  DomainDataset target_val;
  DomainDataset target_test;
};

SynthBundle generate(const SynthConfig& cfg);

// Inverse style map (1 - clamp(v, 0, 1))^(1/gamma); labels and subjects carried over.
DomainDataset make_source_like(const DomainDataset& target, double gamma);

struct FewShotSplit {
  DomainDataset labeled;
  DomainDataset unlabeled;
  std::vector<std::uint32_t> labeled_subjects;
};

// Picks k subjects (not slices) to keep labeled; the remainder loses its labels.
FewShotSplit few_shot_split(const DomainDataset& source, int k, std::uint64_t seed);

// "MHAL" file: magic, u16 version, u8 element bytes, u8 domain, u32 n, h, w,
// per item {u32 subject, u8 labeled}, float images, then u8 label planes of
// the labeled items only.
void save_dataset(const DomainDataset& ds, const std::filesystem::path& path);
DomainDataset load_dataset(const std::filesystem::path& path);
std::uint64_t dataset_file_size(const DomainDataset& ds);

// Per-image z-score normalized batch [rows, 1, h, w].
template <class T>
Tensor<T> image_batch(const DomainDataset& ds, const std::vector<std::int64_t>& rows);
LabelMap label_batch(const DomainDataset& ds, const std::vector<std::int64_t>& rows);

}  // namespace mhal
