#include "pagkd/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pagkd/archive.hpp"
#include "pagkd/error.hpp"
#include "pagkd/ops.hpp"

namespace pagkd::backbone {
namespace {

Tensor normal_param(Shape shape, double stddev, std::mt19937_64& rng, std::string name) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  Tensor t = Tensor::from(std::move(shape), std::move(data), true);
  t.set_name(std::move(name));
  return t;
}

Tensor zero_param(Shape shape, std::string name) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  t.set_name(std::move(name));
  return t;
}

}  // namespace

void BackboneConfig::validate() const {
  if (stages.empty()) throw ConfigError("backbone needs at least one stage");
  if (kernel % 2 == 0) throw ConfigError("backbone kernel size must be odd");
  if (num_classes < 1) throw ConfigError("backbone needs at least one class");
  if (input_side % (std::size_t{1} << stages.size()) != 0) {
    throw ConfigError("input side " + std::to_string(input_side) + " does not halve cleanly over " +
                      std::to_string(stages.size()) + " stages");
  }
  if (positions() < 4) {
    throw ConfigError("final feature map must have at least 4 positions, got " + std::to_string(positions()));
  }
  if (feature_dim() % 4 != 0) {
    throw ConfigError("feature dimension d=" + std::to_string(feature_dim()) + " must be divisible by 4");
  }
}

Classifier::Classifier(BackboneConfig config, std::uint64_t seed, std::string prefix)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t cin = config_.in_channels;
  const std::size_t k = config_.kernel;
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const std::size_t cout = config_.stages[s];
    const std::string base = prefix_ + "conv" + std::to_string(s);
    const double he = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    params_.push_back({base + ".weight", normal_param({cout, cin, k, k}, he, rng, base + ".weight")});
    params_.push_back({base + ".bias", zero_param({cout}, base + ".bias")});
    cin = cout;
  }
  const std::size_t d = config_.feature_dim();
  params_.push_back({prefix_ + "fc.weight",
                     normal_param({config_.num_classes, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng,
                                  prefix_ + "fc.weight")});
  params_.push_back({prefix_ + "fc.bias", zero_param({config_.num_classes}, prefix_ + "fc.bias")});
}

ClassifierOutput Classifier::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != config_.input_side ||
      images.dim(3) != config_.input_side) {
    throw DimensionError("classifier expects [N," + std::to_string(config_.in_channels) + "," +
                         std::to_string(config_.input_side) + "," + std::to_string(config_.input_side) +
                         "] images, got " + shape_str(images.shape()));
  }
  Tensor x = images;
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    x = ops::conv2d(x, params_[2 * s].tensor, params_[2 * s + 1].tensor);
    if (config_.stage_norm) {
      const Shape shape = x.shape();
      x = ops::reshape(ops::layer_norm(ops::reshape(x, {shape[0], shape[1] * shape[2] * shape[3]})), shape);
    }
    x = ops::relu(x);
    x = ops::avg_pool2(x);
  }
  Tensor pooled = ops::global_avg_pool(x);
  Tensor logits = ops::linear(pooled, fc_weight(), fc_bias());
  return ClassifierOutput{x, logits, fc_weight()};
}

std::size_t Classifier::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Classifier::load(std::span<const NamedParam> entries, const std::string& source_prefix) {
  for (auto& p : params_) {
    const std::string want = source_prefix + p.name.substr(prefix_.size());
    auto it = std::find_if(entries.begin(), entries.end(), [&](const NamedParam& e) { return e.name == want; });
    if (it == entries.end()) throw LoadError("checkpoint is missing parameter '" + want + "'");
    if (it->tensor.shape() != p.tensor.shape()) {
      throw LoadError("parameter '" + want + "' has shape " + shape_str(it->tensor.shape()) + ", expected " +
                      shape_str(p.tensor.shape()));
    }
    std::copy(it->tensor.data().begin(), it->tensor.data().end(), p.tensor.mutable_data().begin());
  }
}

std::uint64_t Classifier::fingerprint() const { return fnv1a64(encode_archive(params_)); }

void Classifier::set_trainable(bool trainable) {
  for (auto& p : params_) {
    p.tensor.set_requires_grad(trainable);
    p.tensor.clear_grad();
  }
}

FrozenClassifier::FrozenClassifier(Classifier model) : model_(std::move(model)) { model_.set_trainable(false); }

FrozenClassifier freeze(Classifier model) { return FrozenClassifier(std::move(model)); }

Tensor raw_cam(const Tensor& features, const Tensor& fc_weights, std::size_t class_id) {
  if (features.rank() != 4 || fc_weights.rank() != 2 || fc_weights.dim(1) != features.dim(1)) {
    throw DimensionError("raw_cam: features " + shape_str(features.shape()) + " incompatible with fc weights " +
                         shape_str(fc_weights.shape()));
  }
  if (class_id >= fc_weights.dim(0)) {
    throw IndexError("CAM class " + std::to_string(class_id) + " outside [0," +
                     std::to_string(fc_weights.dim(0)) + ")");
  }
  const std::size_t n = features.dim(0), d = features.dim(1), h = features.dim(2), w = features.dim(3);
  const std::size_t hw = h * w;
  std::vector<double> cam(n * hw, 0.0);
  auto f = features.data();
  auto wrow = fc_weights.data().subspan(class_id * d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const double wc = wrow[c];
      const double* fc = f.data() + (i * d + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) cam[i * hw + p] += wc * fc[p];
    }
  return Tensor::from({n, h, w}, std::move(cam));
}

Tensor normalize_cam(const Tensor& cam) {
  if (cam.rank() != 3) throw DimensionError("normalize_cam expects [N,h,w], got " + shape_str(cam.shape()));
  const std::size_t n = cam.dim(0), hw = cam.dim(1) * cam.dim(2);
  std::vector<double> out(cam.data().begin(), cam.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    auto first = out.begin() + static_cast<std::ptrdiff_t>(i * hw);
    auto last = first + static_cast<std::ptrdiff_t>(hw);
    const auto [lo, hi] = std::minmax_element(first, last);
    const double mn = *lo, mx = *hi;
    if (mx > mn) {
      for (auto it = first; it != last; ++it) *it = (*it - mn) / (mx - mn);
    } else {
      std::fill(first, last, 0.5);
    }
  }
  return Tensor::from(cam.shape(), std::move(out));
}

Tensor compute_cam(const ClassifierOutput& out, std::size_t class_id) {
  return normalize_cam(raw_cam(out.features, out.fc_weights, class_id));
}

Tensor probabilities(const Tensor& logits) {
  NoGradScope no_grad;
  return ops::masked_softmax(logits);
}

}  // namespace pagkd::backbone
