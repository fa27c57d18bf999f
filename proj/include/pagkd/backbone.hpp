#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pagkd/tensor.hpp"

namespace pagkd::backbone {

// Conv classifier shared by teacher and student: per stage a 3x3 conv, ReLU
// and 2x average pooling, then global average pooling and a linear head.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> stages{16, 32, 64};
  std::size_t input_side = 32;
  std::size_t num_classes = 3;
  std::size_t kernel = 3;
  // Non-affine layer norm over each image's [C, H, W] activations after
  // every conv, before the ReLU.
  bool stage_norm = false;

  std::size_t feature_dim() const { return stages.empty() ? 0 : stages.back(); }
  std::size_t feature_side() const { return input_side >> stages.size(); }
  std::size_t positions() const { return feature_side() * feature_side(); }
  // Throws ConfigError if the final map is smaller than 2x2, d is not a
  // multiple of 4, or the input side does not halve cleanly per stage.
  void validate() const;
};

struct ClassifierOutput {
  Tensor features;    // [N, d, h, w]
  Tensor logits;      // [N, C]
  Tensor fc_weights;  // [C, d]
};

class Classifier {
 public:
  // Weights are He-initialised from `seed`. Parameter names are
  // "<prefix>conv<i>.weight", "<prefix>conv<i>.bias", "<prefix>fc.weight",
  // "<prefix>fc.bias".
  Classifier(BackboneConfig config, std::uint64_t seed, std::string prefix = "student.");

  ClassifierOutput forward(const Tensor& images) const;

  const BackboneConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  std::span<NamedParam> params() { return params_; }
  std::span<const NamedParam> params() const { return params_; }
  std::size_t param_count() const;

  const Tensor& fc_weight() const { return params_[params_.size() - 2].tensor; }
  const Tensor& fc_bias() const { return params_.back().tensor; }

  // Copies values from archive entries whose names match this model's
  // parameter names (optionally under a different prefix). Throws LoadError
  // when a parameter is missing or has the wrong shape.
  void load(std::span<const NamedParam> entries, const std::string& source_prefix);
  void load(std::span<const NamedParam> entries) { load(entries, prefix_); }

  // Hash of the parameter archive, for frozenness checks.
  std::uint64_t fingerprint() const;

  void set_trainable(bool trainable);

 private:
  BackboneConfig config_;
  std::string prefix_;
  std::vector<NamedParam> params_;
};

// Read-only handle to a classifier whose parameters no longer take grads.
// Outputs still carry values into downstream modules; nothing reaches the
// weights.
class FrozenClassifier {
 public:
  explicit FrozenClassifier(Classifier model);
  ClassifierOutput forward(const Tensor& images) const { return model_.forward(images); }
  const Classifier& model() const { return model_; }
  std::span<const NamedParam> params() const { return model_.params(); }
  std::uint64_t fingerprint() const { return model_.fingerprint(); }

 private:
  Classifier model_;
};

FrozenClassifier freeze(Classifier model);

// Un-normalised class activation map: sum_d fc[class, d] * features[n, d, :, :]
// -> [N, h, w]. Values only; never recorded on a tape.
Tensor raw_cam(const Tensor& features, const Tensor& fc_weights, std::size_t class_id);

// Per-image min-max normalisation to [0, 1]; a constant map becomes 0.5.
Tensor normalize_cam(const Tensor& cam);

// raw_cam followed by normalize_cam. Throws IndexError for a bad class.
Tensor compute_cam(const ClassifierOutput& out, std::size_t class_id);

// Row-wise softmax of the logits, values only.
Tensor probabilities(const Tensor& logits);

}  // namespace pagkd::backbone
