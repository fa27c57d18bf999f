#include "pagkd/config.hpp"

#include <fstream>
#include <set>

#include "pagkd/archive.hpp"
#include "pagkd/error.hpp"

namespace pagkd {
namespace {

using nlohmann::json;

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(std::string("unknown key '") + key + "' in " + where);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(tau1 > 0.0 && tau1 < tau2 && tau2 < 1.0)) {
    throw ConfigError("thresholds must satisfy 0 < tau1 < tau2 < 1, got " + std::to_string(tau1) + ", " +
                      std::to_string(tau2));
  }
  if (num_queries == 0) throw ConfigError("num_queries must be at least 1");
  if (reform_period == 0) throw ConfigError("reform_period must be at least 1");
  if (teacher.epochs == 0 || teacher.batch == 0) throw ConfigError("teacher recipe needs epochs and batch >= 1");
  backbone.validate();
  if (enable_pro && use_qformer && num_queries >= backbone.positions() &&
      pairing_mode != grouping::PairingMode::kGroup) {
    throw ConfigError("image-level prototypes need num_queries < h*w = " + std::to_string(backbone.positions()));
  }
}

nlohmann::json TrainConfig::to_json() const {
  return json{
      {"epochs", epochs},
      {"lr", lr},
      {"weight_decay", weight_decay},
      {"batch_budget", batch_budget},
      {"num_queries", num_queries},
      {"qformer_blocks", qformer_blocks},
      {"tau1", tau1},
      {"tau2", tau2},
      {"reform_period", reform_period},
      {"enable_pro", enable_pro},
      {"enable_den", enable_den},
      {"use_qformer", use_qformer},
      {"use_srca", use_srca},
      {"bidirectional", bidirectional},
      {"exclude_positive", exclude_positive},
      {"pairing_mode", std::string(grouping::pairing_mode_name(pairing_mode))},
      {"use_true_pairs", use_true_pairs},
      {"norm_mode", std::string(den::norm_mode_name(norm_mode))},
      {"refinement", refinement.identity ? "identity" : "adaptive"},
      {"refine_iterations", refinement.iterations},
      {"sigma_color", refinement.sigma_color},
      {"sigma_spatial", refinement.sigma_spatial},
      {"seed", seed},
      {"fold", fold},
      {"checkpoint_every", checkpoint_every},
      {"teacher", {{"epochs", teacher.epochs}, {"lr", teacher.lr}, {"weight_decay", teacher.weight_decay},
                   {"batch", teacher.batch}}},
      {"backbone", {{"in_channels", backbone.in_channels}, {"stages", backbone.stages},
                    {"input_side", backbone.input_side}, {"num_classes", backbone.num_classes},
                    {"kernel", backbone.kernel}, {"stage_norm", backbone.stage_norm}}},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"epochs", "lr", "weight_decay", "batch_budget", "num_queries", "qformer_blocks", "tau1", "tau2",
                  "reform_period", "enable_pro", "enable_den", "use_qformer", "use_srca", "bidirectional",
                  "exclude_positive", "pairing_mode", "use_true_pairs", "norm_mode", "refinement", "refine_iterations",
                  "sigma_color", "sigma_spatial", "seed", "fold", "checkpoint_every", "teacher", "backbone"},
                 "config");
  read(j, "epochs", c.epochs);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "batch_budget", c.batch_budget);
  read(j, "num_queries", c.num_queries);
  read(j, "qformer_blocks", c.qformer_blocks);
  read(j, "tau1", c.tau1);
  read(j, "tau2", c.tau2);
  read(j, "reform_period", c.reform_period);
  read(j, "enable_pro", c.enable_pro);
  read(j, "enable_den", c.enable_den);
  read(j, "use_qformer", c.use_qformer);
  read(j, "use_srca", c.use_srca);
  read(j, "bidirectional", c.bidirectional);
  read(j, "exclude_positive", c.exclude_positive);
  read(j, "use_true_pairs", c.use_true_pairs);
  if (j.contains("pairing_mode")) {
    c.pairing_mode = grouping::parse_pairing_mode(j.at("pairing_mode").get<std::string>());
  }
  if (j.contains("norm_mode")) c.norm_mode = den::parse_norm_mode(j.at("norm_mode").get<std::string>());
  if (j.contains("refinement")) {
    const auto mode = j.at("refinement").get<std::string>();
    if (mode != "identity" && mode != "adaptive") {
      throw ConfigError("refinement must be 'adaptive' or 'identity', got '" + mode + "'");
    }
    c.refinement.identity = mode == "identity";
  }
  read(j, "refine_iterations", c.refinement.iterations);
  read(j, "sigma_color", c.refinement.sigma_color);
  read(j, "sigma_spatial", c.refinement.sigma_spatial);
  read(j, "seed", c.seed);
  read(j, "fold", c.fold);
  read(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    reject_unknown(t, {"epochs", "lr", "weight_decay", "batch"}, "teacher");
    read(t, "epochs", c.teacher.epochs);
    read(t, "lr", c.teacher.lr);
    read(t, "weight_decay", c.teacher.weight_decay);
    read(t, "batch", c.teacher.batch);
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    reject_unknown(b, {"in_channels", "stages", "input_side", "num_classes", "kernel", "stage_norm"}, "backbone");
    read(b, "in_channels", c.backbone.in_channels);
    read(b, "stages", c.backbone.stages);
    read(b, "input_side", c.backbone.input_side);
    read(b, "num_classes", c.backbone.num_classes);
    read(b, "kernel", c.backbone.kernel);
    read(b, "stage_norm", c.backbone.stage_norm);
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << to_json().dump(2) << '\n';
}

TrainConfig desk_config() {
  TrainConfig c;
  c.epochs = 20;
  c.lr = 1e-2;
  c.norm_mode = den::NormMode::kPaper;
  c.backbone.stages = {8, 16, 32};
  c.teacher.epochs = 30;
  c.teacher.lr = 3e-3;
  c.checkpoint_every = 0;
  return c;
}

}  // namespace pagkd

namespace pagkd {

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  // splitmix64 finaliser over the mixed inputs
  std::uint64_t z = base ^ (fnv1a64(tag) + 0x9e3779b97f4a7c15ULL * (index + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace pagkd
