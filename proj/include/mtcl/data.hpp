#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "mtcl/rng.hpp"
#include "mtcl/tensor.hpp"
#include "mtcl/types.hpp"

namespace mtcl {

// One patient: three co-registered volumes plus the two binary labels.
// Volumes are [H, W, D] tensors. Invasion only occurs within high grade;
// synthetic data enforces this strictly, real manifests get a warning.
struct MultiModalSample {
  std::string patient_id;
  Tensor t1c, flairc, adc;
  int label_grade = 0;
  int label_invasion = 0;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};

  const Tensor& volume(Modality m) const {
    switch (m) {
      case Modality::t1c: return t1c;
      case Modality::flairc: return flairc;
      default: return adc;
    }
  }
  Tensor& volume(Modality m) {
    switch (m) {
      case Modality::t1c: return t1c;
      case Modality::flairc: return flairc;
      default: return adc;
    }
  }
};

struct ManifestRow {
  std::string patient_id;
  std::string t1c_path, flairc_path, adc_path;
  int grade = 0;
  int invasion = 0;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;
  std::vector<std::string> warnings;
  std::filesystem::path base_dir;
  uint64_t split_seed = 0;
};

// CSV with header patient_id,t1c_path,flairc_path,adc_path,grade,invasion.
// Paths resolve relative to the manifest location and must exist.
DatasetManifest load_manifest(const std::filesystem::path& csv_path);
void write_manifest(const std::filesystem::path& csv_path, const std::vector<ManifestRow>& rows);

// Raw little-endian f32 array next to a JSON sidecar (same path + ".json")
// carrying {shape, spacing_mm, dtype}.
Tensor load_volume(const std::filesystem::path& raw_path, std::array<double, 3>* spacing_out = nullptr);
void save_volume(const std::filesystem::path& raw_path, const Tensor& volume,
                 const std::array<double, 3>& spacing_mm);

MultiModalSample load_sample(const DatasetManifest& manifest, size_t row);

// Zero-pad in plane to a square (centered), trilinear-resize to the target
// extents, then z-score the volume. Depth is resized directly, not padded.
Tensor preprocess(const Tensor& volume, const std::array<long, 3>& target_shape,
                  bool standardize = true);

Tensor resize_trilinear(const Tensor& volume, const std::array<long, 3>& out_shape);

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double noise_sigma = 0.01;
  double crop_fraction = 0.9;
  bool flip = true;
  bool crop = true;
  bool noise = true;
};

// Training-time augmentation: in-plane flips, random crop-and-resize, then
// additive Gaussian noise. The geometric transform is shared by all three
// modalities; noise is drawn fresh per modality. Labels and shapes never
// change.
MultiModalSample augment(const MultiModalSample& sample, const AugmentConfig& cfg, Rng& rng);

struct SplitResult {
  std::vector<size_t> train_indices, test_indices;
  std::vector<std::string> warnings;
};

// Strata: 0 = low grade, 1 = high grade without invasion, 2 = high grade with
// invasion. Draws without replacement per stratum; train/test partition the
// input.
SplitResult stratified_split(const DatasetManifest& manifest,
                             const std::array<double, 3>& train_fractions, uint64_t seed);
SplitResult stratified_split_counts(const DatasetManifest& manifest,
                                    const std::array<long, 3>& train_counts, uint64_t seed);
SplitResult stratified_split_samples(const std::vector<MultiModalSample>& samples,
                                     const std::array<double, 3>& train_fractions, uint64_t seed);

struct SyntheticSpec {
  long n_samples = 200;
  std::array<long, 3> shape{16, 16, 8};
  double prevalence_grade = 0.3;
  double prevalence_invasion = 0.1;
  double signal_common = 1.0;
  double signal_grade = 0.5;
  double signal_invasion = 0.5;
  double noise_sigma = 0.25;
  uint64_t seed = 1;

  void validate() const;
};

// Gaussian noise plus three planted smooth patterns per modality: a shared
// pattern whose amplitude grows with (grade + invasion), a grade-only pattern
// and an invasion-only pattern. Labels are nested (invasion implies high
// grade) and everything is reproducible from the seed.
std::vector<MultiModalSample> synthesize_dataset(const SyntheticSpec& spec);

// The planted pattern volume, unit RMS. kind: 0 = common, 1 = grade,
// 2 = invasion. Exposed for tests.
Tensor synthetic_pattern(int kind, Modality modality, const std::array<long, 3>& shape);

// Batched model input: [N, 1, H, W, D] per modality.
struct VolumeBatch {
  Tensor t1c, flairc, adc;
  std::vector<int> grade, invasion;
  long size() const { return static_cast<long>(grade.size()); }
  const Tensor& volumes(Modality m) const {
    switch (m) {
      case Modality::t1c: return t1c;
      case Modality::flairc: return flairc;
      default: return adc;
    }
  }
};

VolumeBatch make_batch(const std::vector<const MultiModalSample*>& samples);

}  // namespace mtcl
