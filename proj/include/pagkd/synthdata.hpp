#pragma once

// Two-modality synthetic lesion benchmark. Each instance has a class-coded
// texture frequency inside one or more lesion blobs; the NBI rendering shows
// the texture at full amplitude, the WLI rendering attenuates it by the gap g
// and adds a colour cast, an illumination ramp and pixel noise, all scaled by
// g. Orientation, phase and blob layout are class-independent nuisances.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pagkd/backbone.hpp"
#include "pagkd/config.hpp"
#include "pagkd/dataset.hpp"
#include "pagkd/manifest.hpp"
#include "pagkd/tensor.hpp"

namespace pagkd::synth {

inline constexpr int kNumFolds = 5;

struct GenerateOptions {
  std::size_t classes = 3;
  std::size_t per_class = 120;
  double pairing = 0.4;  // fraction of instances rendered in both modalities
  double gap = 0.5;
  std::uint64_t seed = 0;
  std::size_t side = 32;
  std::size_t channels = 3;
  double nbi_amplitude = 0.35;

  void validate() const;  // throws ConfigError
};

struct Blob {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
};

struct LesionInstance {
  std::size_t instance = 0;  // index within its class
  std::size_t label = 0;
  double frequency = 0.0;    // texture cycles per image side
  double orientation = 0.0;  // radians
  double phase = 0.0;
  std::vector<Blob> blobs;
};

// Class-conditional frequency band [lo, hi]; bands of different classes are
// disjoint, so the frequency alone identifies the class.
std::pair<double, double> frequency_band(std::size_t label);

LesionInstance sample_instance(std::size_t label, std::size_t instance, std::uint64_t seed);

// Lesion support in [0, 1] per pixel, row-major [side x side].
std::vector<double> lesion_mask(const LesionInstance& inst, std::size_t side);

// [channels, side, side]. `nuisance_seed` drives the WLI-only cast, ramp and
// noise; NBI renderings ignore it.
Tensor render(const LesionInstance& inst, Modality modality, const GenerateOptions& options,
              std::uint64_t nuisance_seed);

// Builds manifest and images in memory. Paired instances get class-
// stratified folds 0..4 (split "cv"); unpaired ones alternate WLI/NBI within
// each class and are training-only (split "train", empty fold). Throws
// ConfigError when any fold would be empty (e.g. pairing == 0).
Dataset generate(const GenerateOptions& options);

// generate() plus files: <out>/manifest.csv and <out>/images/<id>.pgkd.
Dataset generate_to(const GenerateOptions& options, const std::filesystem::path& out);

struct GapOptions {
  double margin = 0.05;
  int test_fold = 0;
  TeacherRecipe recipe;
  backbone::BackboneConfig backbone;
  std::uint64_t seed = 0;
  bool throw_on_failure = true;
};

struct GapReport {
  double nbi_auc = 0.0;
  double wli_auc = 0.0;
  double margin = 0.0;
  bool passed = false;
};

// Trains identical classifiers on the NBI and WLI training rows of one fold
// plan and compares macro-AUC on the held-out paired fold of each modality.
// Throws DataQualityError when NBI does not lead by `margin` (unless
// throw_on_failure is false).
GapReport verify_gap(const Dataset& dataset, const GapOptions& options);

}  // namespace pagkd::synth
