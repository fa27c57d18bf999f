#include "pagkd/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "pagkd/archive.hpp"
#include "pagkd/error.hpp"
#include "pagkd/metrics.hpp"
#include "pagkd/trainer.hpp"

namespace pagkd::synth {
namespace {

// Per-modality tissue colour and texture tint (RGB-like channel weights).
constexpr double kWliBase[3] = {0.62, 0.42, 0.38};
constexpr double kNbiBase[3] = {0.35, 0.48, 0.55};
constexpr double kWliTint[3] = {0.9, 0.6, 0.5};
constexpr double kNbiTint[3] = {0.5, 1.0, 0.8};
constexpr double kBandWidth = 1.0;
constexpr double kBandStart = 3.0;
constexpr double kBandStep = 2.0;
// Rendered intensities are centred on 0.5; images are stored centred and
// scaled, as a normalising input pipeline would present them.
constexpr double kInputScale = 4.0;

double channel_value(const double* table, std::size_t c) { return table[c % 3]; }

std::string instance_id(std::size_t label, std::size_t instance) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%zu_i%03zu", label, instance);
  return buf;
}

}  // namespace

void GenerateOptions::validate() const {
  if (classes < 1) throw ConfigError("need at least one class");
  if (per_class < 10) throw ConfigError("need at least 10 instances per class, got " + std::to_string(per_class));
  if (!(pairing >= 0.0 && pairing <= 1.0)) throw ConfigError("pairing fraction must lie in [0, 1]");
  if (!(gap >= 0.0 && gap <= 1.0)) throw ConfigError("gap must lie in [0, 1]");
  if (side < 8 || channels < 1) throw ConfigError("images must be at least 8x8 with one channel");
}

std::pair<double, double> frequency_band(std::size_t label) {
  const double lo = kBandStart + kBandStep * static_cast<double>(label);
  return {lo, lo + kBandWidth};
}

LesionInstance sample_instance(std::size_t label, std::size_t instance, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "instance", label * 1000003ULL + instance));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LesionInstance inst;
  inst.instance = instance;
  inst.label = label;
  const auto [lo, hi] = frequency_band(label);
  inst.frequency = lo + (hi - lo) * unit(rng);
  inst.orientation = std::numbers::pi * unit(rng);
  inst.phase = 2.0 * std::numbers::pi * unit(rng);
  const std::size_t blobs = 1 + std::uniform_int_distribution<std::size_t>(0, 2)(rng);
  for (std::size_t b = 0; b < blobs; ++b) {
    inst.blobs.push_back({0.2 + 0.6 * unit(rng), 0.2 + 0.6 * unit(rng), 0.12 + 0.13 * unit(rng)});
  }
  return inst;
}

std::vector<double> lesion_mask(const LesionInstance& inst, std::size_t side) {
  std::vector<double> mask(side * side, 0.0);
  const double s = static_cast<double>(side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / s, py = (static_cast<double>(y) + 0.5) / s;
      double m = 0.0;
      for (const auto& b : inst.blobs) {
        const double r = std::hypot(px - b.x, py - b.y) / b.radius;
        // flat core with a smooth rim
        m = std::max(m, std::clamp(1.5 - 1.5 * r * r, 0.0, 1.0));
      }
      mask[y * side + x] = m;
    }
  }
  return mask;
}

Tensor render(const LesionInstance& inst, Modality modality, const GenerateOptions& o, std::uint64_t nuisance_seed) {
  const std::size_t side = o.side, ch = o.channels;
  const auto mask = lesion_mask(inst, side);
  const bool nbi = modality == Modality::kNbi;
  const double amplitude = nbi ? o.nbi_amplitude : o.nbi_amplitude * (1.0 - o.gap);
  const double* base = nbi ? kNbiBase : kWliBase;
  const double* tint = nbi ? kNbiTint : kWliTint;

  std::mt19937_64 rng(nuisance_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> cast(ch, 0.0);
  double ramp_dir = 0.0, ramp_amp = 0.0;
  if (!nbi) {
    for (auto& c : cast) c = o.gap * 0.25 * (2.0 * unit(rng) - 1.0);
    ramp_dir = 2.0 * std::numbers::pi * unit(rng);
    ramp_amp = o.gap * 0.35 * unit(rng);
  }
  const double noise_sd = nbi ? 0.0 : o.gap * 0.12;

  const double s = static_cast<double>(side);
  const double cx = std::cos(inst.orientation), sy = std::sin(inst.orientation);
  std::vector<double> data(ch * side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double px = static_cast<double>(x) / s, py = static_cast<double>(y) / s;
      const double texture =
          std::sin(2.0 * std::numbers::pi * inst.frequency * (px * cx + py * sy) + inst.phase);
      const double m = mask[y * side + x];
      const double light = ramp_amp * ((px - 0.5) * std::cos(ramp_dir) + (py - 0.5) * std::sin(ramp_dir));
      for (std::size_t c = 0; c < ch; ++c) {
        // lesions are slightly darker in every modality, textured by class
        double v = channel_value(base, c) - 0.08 * m + amplitude * channel_value(tint, c) * m * texture;
        v += cast[c] + light;
        if (noise_sd > 0.0) v += noise_sd * noise(rng);
        data[(c * side + y) * side + x] = (v - 0.5) * kInputScale;
      }
    }
  }
  return Tensor::from({ch, side, side}, std::move(data));
}

Dataset generate(const GenerateOptions& o) {
  o.validate();
  Dataset ds;
  std::map<std::string, Tensor, std::less<>> images;
  std::vector<std::vector<std::size_t>> fold_members(kNumFolds);
  for (std::size_t c = 0; c < o.classes; ++c) {
    std::mt19937_64 rng(derive_seed(o.seed, "pairing", c));
    std::vector<std::size_t> order(o.per_class);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto paired_count = static_cast<std::size_t>(std::llround(o.pairing * static_cast<double>(o.per_class)));
    std::vector<int> fold(o.per_class, -1);
    std::vector<bool> paired(o.per_class, false);
    for (std::size_t k = 0; k < paired_count; ++k) {
      paired[order[k]] = true;
      fold[order[k]] = static_cast<int>(k % kNumFolds);
    }
    std::size_t unpaired_seen = 0;
    for (std::size_t i = 0; i < o.per_class; ++i) {
      const LesionInstance inst = sample_instance(c, i, o.seed);
      const std::string base = instance_id(c, i);
      auto add = [&](Modality m) {
        ManifestRow row;
        row.id = base + (m == Modality::kWli ? "_wli" : "_nbi");
        row.path = "images/" + row.id + ".pgkd";
        row.label = c;
        row.modality = m;
        if (paired[i]) {
          row.pair_id = "p_" + base;
          row.split = "cv";
          row.fold = fold[i];
        } else {
          row.split = "train";
        }
        images.emplace(row.id, render(inst, m, o, derive_seed(o.seed, row.id)));
        ds.manifest.rows.push_back(std::move(row));
      };
      if (paired[i]) {
        add(Modality::kWli);
        add(Modality::kNbi);
        fold_members[static_cast<std::size_t>(fold[i])].push_back(i);
      } else {
        add(unpaired_seen++ % 2 == 0 ? Modality::kWli : Modality::kNbi);
      }
    }
  }
  for (int f = 0; f < kNumFolds; ++f) {
    if (fold_members[static_cast<std::size_t>(f)].empty()) {
      throw ConfigError("fold " + std::to_string(f) +
                        " has no paired instances; evaluation needs paired data (raise --pairing)");
    }
  }
  ds.manifest.has_fold_column = true;
  ds.images = ImageStore(std::move(images));
  return ds;
}

Dataset generate_to(const GenerateOptions& o, const std::filesystem::path& out) {
  Dataset ds = generate(o);
  std::filesystem::create_directories(out / "images");
  for (const auto& row : ds.manifest.rows) {
    const NamedParam entry{"image", ds.images.image(row.id)};
    write_archive(out / row.path, std::span<const NamedParam>(&entry, 1));
  }
  ds.manifest.write_csv(out / "manifest.csv");
  return ds;
}

GapReport verify_gap(const Dataset& dataset, const GapOptions& o) {
  const auto train = train::training_rows(dataset.manifest.rows, o.test_fold);
  auto auc_for = [&](Modality m) {
    std::vector<ManifestRow> rows;
    for (const auto& r : train) {
      if (r.modality == m) rows.push_back(r);
    }
    auto model = train::train_classifier(rows, dataset.images, o.backbone, o.recipe, derive_seed(o.seed, "gap"),
                                         "student.");
    std::vector<std::string> ids;
    std::vector<std::size_t> labels;
    for (const auto& r : dataset.manifest.rows) {
      if (r.paired() && r.fold && *r.fold == o.test_fold && r.modality == m) {
        ids.push_back(r.id);
        labels.push_back(r.label);
      }
    }
    if (ids.empty()) throw DataError("held-out fold has no images to score");
    std::vector<NamedParam> params(model.model.params().begin(), model.model.params().end());
    Tensor probs = train::run_inference(params, model.model.config(), dataset.images.stack(ids));
    return metrics::compute_metrics(probs, labels).auc;
  };
  GapReport report;
  report.nbi_auc = auc_for(Modality::kNbi);
  report.wli_auc = auc_for(Modality::kWli);
  report.margin = report.nbi_auc - report.wli_auc;
  report.passed = report.margin >= o.margin;
  if (!report.passed && o.throw_on_failure) {
    throw DataQualityError("NBI leads WLI by only " + std::to_string(report.margin) + " macro-AUC (need " +
                           std::to_string(o.margin) + "); regenerate with a larger gap");
  }
  return report;
}

}  // namespace pagkd::synth
