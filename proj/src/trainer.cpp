#include "pagkd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "pagkd/archive.hpp"
#include "pagkd/ops.hpp"

namespace pagkd::train {
namespace {

using grouping::PairingMode;

constexpr std::size_t kTeacherChunk = 32;

double grad_norm(std::span<const NamedParam> params) {
  double s = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) s += g * g;
  }
  return std::sqrt(s);
}

// Normalised, refined, tri-thresholded CAM labels per image, using each
// image's own class. `features` [N, d, h, w] values, `fc` [C, d].
std::vector<std::vector<den::CamLabel>> cam_labels(const Tensor& features, const Tensor& fc,
                                                   std::span<const std::size_t> classes, const Tensor& images,
                                                   const TrainConfig& config) {
  const std::size_t n = features.dim(0), d = features.dim(1), h = features.dim(2), w = features.dim(3);
  const std::size_t hw = h * w;
  std::vector<double> raw(n * hw, 0.0);
  const auto f = features.data();
  const auto wfc = fc.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (classes[i] >= fc.dim(0)) throw IndexError("CAM class " + std::to_string(classes[i]) + " out of range");
    for (std::size_t c = 0; c < d; ++c) {
      const double weight = wfc[classes[i] * d + c];
      const double* src = f.data() + (i * d + c) * hw;
      double* dst = raw.data() + i * hw;
      for (std::size_t p = 0; p < hw; ++p) dst[p] += weight * src[p];
    }
  }
  Tensor cam = backbone::normalize_cam(Tensor::from({n, h, w}, std::move(raw)));
  if (!config.refinement.identity && config.refinement.iterations > 0) {
    cam = den::refine_cam(cam, den::downsample_guide(images, h, w), config.refinement);
  }
  std::vector<std::vector<den::CamLabel>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = den::tri_threshold(cam.data().subspan(i * hw, hw), config.tau1, config.tau2);
  }
  return out;
}

Tensor gather_positions(const Tensor& features, std::span<const std::size_t> members) {
  bool contiguous = true;
  for (std::size_t i = 1; i < members.size(); ++i) contiguous = contiguous && members[i] == members[i - 1] + 1;
  if (contiguous) return ops::to_positions(ops::slice(features, members.front(), members.back() + 1));
  std::vector<Tensor> parts;
  for (auto m : members) parts.push_back(ops::slice(features, m, m + 1));
  return ops::to_positions(ops::concat(parts));
}

void check_finite(double value, const char* name, const StepReport& report) {
  if (!std::isfinite(value)) {
    throw TrainingAborted(std::string("non-finite ") + name + " at epoch " + std::to_string(report.epoch) +
                              ", step " + std::to_string(report.step) + ": " + report.to_json().dump(),
                          report);
  }
}

struct BatchView {
  std::vector<std::string> wli_ids;
  std::vector<std::size_t> wli_labels;
  // per class, indices into wli_ids and the NBI group ids
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> wli_groups;
  std::map<std::size_t, std::vector<std::string>> nbi_groups;
};

BatchView view_batch(const grouping::GroupPlan& plan, std::size_t batch) {
  BatchView v;
  for (const auto& g : grouping::batch_groups(plan, batch)) {
    if (g.key.modality == Modality::kNbi) {
      v.nbi_groups[g.key.label] = g.ids;
      continue;
    }
    std::vector<std::size_t> members;
    for (const auto& id : g.ids) {
      members.push_back(v.wli_ids.size());
      v.wli_ids.push_back(id);
      v.wli_labels.push_back(g.key.label);
    }
    v.wli_groups.emplace_back(g.key.label, std::move(members));
  }
  return v;
}

grouping::GroupPlan make_plan(const TrainConfig& config, std::span<const ManifestRow> rows) {
  grouping::PlanOptions opts;
  opts.batch_budget = config.batch_budget;
  opts.reform_period = config.reform_period;
  opts.seed = derive_seed(config.seed, "groups", static_cast<std::uint64_t>(config.fold));
  return grouping::plan_groups(rows, opts);
}

AdamOptions adam_options(const TrainConfig& config) {
  AdamOptions o;
  o.lr = config.lr;
  o.weight_decay = config.weight_decay;
  return o;
}

backbone::BackboneConfig with_classes(backbone::BackboneConfig cfg, std::span<const ManifestRow> rows) {
  for (const auto& r : rows) cfg.num_classes = std::max(cfg.num_classes, r.label + 1);
  return cfg;
}

}  // namespace

nlohmann::json StepReport::to_json() const {
  nlohmann::json rel = nlohmann::json::array();
  for (const auto& r : relations) {
    rel.push_back({{"class", r.label},
                   {"fg_frac_wli", r.stats.fg_frac_dst},
                   {"fg_frac_nbi", r.stats.fg_frac_src},
                   {"amb_frac", r.stats.amb_frac},
                   {"matched_frac", r.stats.matched_frac},
                   {"all_masked_rows", r.stats.all_masked_rows}});
  }
  return {{"epoch", epoch},
          {"step", step},
          {"batch", batch},
          {"L_pro", l_pro},
          {"L_den", l_den},
          {"L_cls", l_cls},
          {"L_total", l_total},
          {"grad_norm_student", grad_norm_student},
          {"grad_norm_qformer", grad_norm_qformer},
          {"grad_norm_srca", grad_norm_srca},
          {"relations", rel}};
}

Tensor classification_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("classification loss: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::map<std::size_t, std::size_t> counts;
  for (auto l : labels) {
    if (l >= logits.dim(1)) {
      throw IndexError("label " + std::to_string(l) + " outside [0," + std::to_string(logits.dim(1)) + ")");
    }
    ++counts[l];
  }
  const double classes = static_cast<double>(counts.size());
  std::vector<double> weights(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    weights[i] = 1.0 / (classes * static_cast<double>(counts[labels[i]]));
  }
  return ops::weighted_sum(ops::cross_entropy(logits, labels), weights);
}

ClassifierTrainResult train_classifier(std::span<const ManifestRow> rows, const ImageStore& images,
                                       const backbone::BackboneConfig& config, const TeacherRecipe& recipe,
                                       std::uint64_t seed, const std::string& prefix) {
  if (rows.empty()) throw DataError("cannot train a classifier on an empty split");
  ClassifierTrainResult result{backbone::Classifier(with_classes(config, rows), derive_seed(seed, "init"), prefix),
                               0.0,
                               {}};
  AdamOptions opts;
  opts.lr = recipe.lr;
  opts.weight_decay = recipe.weight_decay;
  AdamState adam(opts);
  std::mt19937_64 rng(derive_seed(seed, "order"));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += recipe.batch) {
      const std::size_t end = std::min(order.size(), begin + recipe.batch);
      std::vector<std::string> ids;
      std::vector<std::size_t> labels;
      for (std::size_t i = begin; i < end; ++i) {
        ids.push_back(rows[order[i]].id);
        labels.push_back(rows[order[i]].label);
      }
      GradTape tape;
      TapeScope scope(tape);
      auto out = result.model.forward(images.stack(ids));
      Tensor loss = ops::mean(ops::cross_entropy(out.logits, labels));
      if (!std::isfinite(loss.item())) throw NumericalError("classifier training diverged");
      tape.backward(loss);
      adam.step(result.model.params());
      total += loss.item();
      ++batches;
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  std::vector<std::string> ids;
  for (const auto& r : rows) ids.push_back(r.id);
  std::vector<NamedParam> params(result.model.params().begin(), result.model.params().end());
  Tensor probs = run_inference(params, result.model.config(), images.stack(ids));
  std::size_t correct = 0;
  const std::size_t c = probs.dim(1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto row = probs.data().subspan(i * c, c);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred == rows[i].label ? 1 : 0;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  return result;
}

ClassifierTrainResult pretrain_teacher(std::span<const ManifestRow> train_rows, const ImageStore& images,
                                       const TrainConfig& config) {
  std::vector<ManifestRow> nbi;
  for (const auto& r : train_rows) {
    if (r.modality == Modality::kNbi) nbi.push_back(r);
  }
  if (nbi.empty()) throw DataError("no NBI training images for the teacher");
  return train_classifier(nbi, images, config.backbone, config.teacher,
                          derive_seed(config.seed, "teacher", static_cast<std::uint64_t>(config.fold)), "teacher.");
}

Distiller::Distiller(TrainConfig config, const backbone::FrozenClassifier& teacher, const ImageStore& images,
                     std::vector<ManifestRow> train_rows, DistillOptions options)
    : config_(std::move(config)),
      teacher_(teacher),
      images_(images),
      rows_(std::move(train_rows)),
      options_(std::move(options)),
      student_(with_classes(config_.backbone, rows_),
               derive_seed(config_.seed, "student", static_cast<std::uint64_t>(config_.fold)), "student."),
      qformer_(pro::QFormerConfig{config_.num_queries, config_.qformer_blocks, config_.backbone.feature_dim(),
                                  config_.backbone.feature_side(), config_.backbone.feature_side()},
               derive_seed(config_.seed, "qformer", static_cast<std::uint64_t>(config_.fold))),
      srca_(config_.backbone.feature_dim(), derive_seed(config_.seed, "srca", static_cast<std::uint64_t>(config_.fold))),
      adam_(adam_options(config_)),
      plan_(make_plan(config_, rows_)),
      pair_rng_(derive_seed(config_.seed, "pairs", static_cast<std::uint64_t>(config_.fold))) {
  config_.validate();
  if (teacher_.model().config().feature_dim() != student_.config().feature_dim() ||
      teacher_.model().config().feature_side() != student_.config().feature_side()) {
    throw ConfigError("teacher and student must share the backbone architecture");
  }

  // Teacher features and CAM labels for every NBI training image.
  std::vector<std::string> nbi_ids;
  std::vector<std::size_t> nbi_labels;
  std::map<std::string, std::string> nbi_of_pair;
  for (const auto& r : rows_) {
    if (r.modality != Modality::kNbi) continue;
    nbi_ids.push_back(r.id);
    nbi_labels.push_back(r.label);
    nbi_by_class_[r.label].push_back(r.id);
    if (r.paired()) nbi_of_pair[r.pair_id] = r.id;
  }
  for (const auto& r : rows_) {
    if (r.modality != Modality::kWli || !r.paired()) continue;
    auto it = nbi_of_pair.find(r.pair_id);
    if (it != nbi_of_pair.end()) nbi_partner_[r.id] = it->second;
  }
  NoGradScope no_grad;
  std::vector<double> all;
  Shape shape;
  for (std::size_t begin = 0; begin < nbi_ids.size(); begin += kTeacherChunk) {
    const std::size_t end = std::min(nbi_ids.size(), begin + kTeacherChunk);
    std::span<const std::string> ids(nbi_ids.data() + begin, end - begin);
    Tensor imgs = images_.stack(ids);
    auto out = teacher_.forward(imgs);
    auto labels = cam_labels(out.features, out.fc_weights,
                             std::span<const std::size_t>(nbi_labels.data() + begin, end - begin), imgs, config_);
    for (std::size_t i = 0; i < ids.size(); ++i) teacher_cam_[ids[i]] = std::move(labels[i]);
    all.insert(all.end(), out.features.data().begin(), out.features.data().end());
    shape = out.features.shape();
  }
  shape[0] = nbi_ids.size();
  teacher_bank_ = grouping::FeatureBank(nbi_ids, Tensor::from(shape, std::move(all)));
}

std::vector<NamedParam> Distiller::checkpoint() const {
  std::vector<NamedParam> out(student_.params().begin(), student_.params().end());
  out.insert(out.end(), qformer_.params().begin(), qformer_.params().end());
  out.insert(out.end(), srca_.params().begin(), srca_.params().end());
  return out;
}

Distiller::Unit Distiller::make_unit(std::size_t label, const Tensor& features, std::span<const std::size_t> members,
                                     const std::vector<std::vector<den::CamLabel>>& student_cam,
                                     std::span<const std::string> nbi_ids) const {
  Unit u;
  u.label = label;
  u.wli = gather_positions(features, members);
  u.nbi = grouping::form_group(nbi_ids, teacher_bank_);
  for (auto m : members) u.wli_labels.insert(u.wli_labels.end(), student_cam[m].begin(), student_cam[m].end());
  for (const auto& id : nbi_ids) {
    const auto& l = teacher_cam_.find(id)->second;
    u.nbi_labels.insert(u.nbi_labels.end(), l.begin(), l.end());
  }
  return u;
}

Tensor Distiller::prototype(const Tensor& group) const {
  return config_.use_qformer ? qformer_.forward(group) : pro::pooled_prototype(group);
}

Tensor Distiller::pro_loss(const std::vector<Unit>& units) const {
  std::vector<Tensor> wli, nbi;
  for (const auto& u : units) {
    wli.push_back(prototype(u.wli));
    nbi.push_back(prototype(u.nbi));
  }
  return pro::class_contrastive_loss(wli, nbi, config_.exclude_positive);
}

Tensor Distiller::den_loss(const std::vector<Unit>& units, StepReport& report) {
  std::vector<den::DenseTerms> terms;
  for (const auto& u : units) {
    den::RelationMatrix r = den::build_relation(u.wli_labels, u.nbi_labels);
    report.relations.push_back({u.label, r.stats()});
    den::DenseTerms t{u.wli, u.nbi, {}, {}};
    t.nbi_to_wli = srca_.reconstruct(u.nbi, u.wli, config_.use_srca ? &r : nullptr, &audit_);
    if (config_.bidirectional) {
      den::RelationMatrix rt = r.transposed();
      t.wli_to_nbi = srca_.reconstruct(u.wli, u.nbi, config_.use_srca ? &rt : nullptr, &audit_);
    }
    terms.push_back(std::move(t));
  }
  return den::dense_loss(terms, config_.norm_mode, config_.bidirectional);
}

StepReport Distiller::step() {
  StepReport report;
  report.step = step_;
  report.epoch = step_ / steps_per_epoch();
  report.batch = step_ % steps_per_epoch();
  if (report.batch == 0) plan_ = grouping::reform(plan_, report.epoch);
  const BatchView batch = view_batch(plan_, report.batch);

  GradTape tape;
  TapeScope scope(tape);
  Tensor images = images_.stack(batch.wli_ids);
  auto out = student_.forward(images);
  Tensor l_cls = classification_loss(out.logits, batch.wli_labels);
  Tensor total = l_cls;
  report.l_cls = l_cls.item();

  if (config_.enable_pro || config_.enable_den) {
    const auto student_cam = config_.enable_den
                                 ? cam_labels(out.features, out.fc_weights, batch.wli_labels, images, config_)
                                 : std::vector<std::vector<den::CamLabel>>(batch.wli_ids.size());
    // Group-level units, and image-level units for WLI images matched to an
    // NBI image (a true partner where one exists, else a same-class draw).
    std::vector<Unit> group_units, image_units;
    std::size_t group_members = 0;
    for (const auto& [label, members] : batch.wli_groups) {
      std::vector<std::size_t> grouped;
      for (auto m : members) {
        const auto& id = batch.wli_ids[m];
        const auto partner = nbi_partner_.find(id);
        const bool image_level = config_.pairing_mode == PairingMode::kImage ||
                                 (config_.pairing_mode == PairingMode::kMixed && partner != nbi_partner_.end());
        if (!image_level) {
          grouped.push_back(m);
          continue;
        }
        std::string nbi_id;
        if (config_.use_true_pairs && partner != nbi_partner_.end()) {
          nbi_id = partner->second;
        } else {
          const auto& pool = nbi_by_class_.at(label);
          nbi_id = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(pair_rng_)];
        }
        const std::size_t one[] = {m};
        image_units.push_back(make_unit(label, out.features, one, student_cam, std::span<const std::string>(&nbi_id, 1)));
      }
      if (!grouped.empty()) {
        group_members += grouped.size();
        group_units.push_back(make_unit(label, out.features, grouped, student_cam, batch.nbi_groups.at(label)));
      }
    }

    // Mixed batches weight the two granularities by the WLI images they cover.
    const double n_img = static_cast<double>(image_units.size());
    const double n_grp = static_cast<double>(group_members);
    auto combine = [&](auto&& loss_of) {
      std::vector<Tensor> parts;
      if (!group_units.empty()) parts.push_back(ops::scale(loss_of(group_units), n_grp / (n_grp + n_img)));
      if (!image_units.empty()) parts.push_back(ops::scale(loss_of(image_units), n_img / (n_grp + n_img)));
      return parts.size() == 1 ? parts[0] : ops::add(parts[0], parts[1]);
    };
    const bool single = group_units.empty() || image_units.empty();
    if (config_.enable_pro) {
      Tensor l_pro = single ? pro_loss(group_units.empty() ? image_units : group_units)
                            : combine([&](const std::vector<Unit>& u) { return pro_loss(u); });
      report.l_pro = l_pro.item();
      total = ops::add(total, l_pro);
    }
    if (config_.enable_den) {
      Tensor l_den = single ? den_loss(group_units.empty() ? image_units : group_units, report)
                            : combine([&](const std::vector<Unit>& u) { return den_loss(u, report); });
      report.l_den = l_den.item();
      total = ops::add(total, l_den);
    }
  }
  report.l_total = total.item();
  check_finite(report.l_pro, "L_pro", report);
  check_finite(report.l_den, "L_den", report);
  check_finite(report.l_cls, "L_cls", report);
  check_finite(report.l_total, "L_total", report);

  tape.backward(total);
  std::vector<NamedParam> params(student_.params().begin(), student_.params().end());
  report.grad_norm_student = grad_norm(params);
  if (config_.enable_pro && config_.use_qformer) {
    report.grad_norm_qformer = grad_norm(qformer_.params());
    params.insert(params.end(), qformer_.params().begin(), qformer_.params().end());
  }
  if (config_.enable_den) {
    report.grad_norm_srca = grad_norm(srca_.params());
    params.insert(params.end(), srca_.params().begin(), srca_.params().end());
  }
  adam_.step(params);
  // Heads that did not take part keep no stale gradients.
  for (auto& p : qformer_.params()) p.tensor.clear_grad();
  for (auto& p : srca_.params()) p.tensor.clear_grad();

  if (options_.log != nullptr) *options_.log << report.to_json().dump() << '\n';
  ++step_;
  if (!options_.checkpoint_dir.empty() && config_.checkpoint_every > 0 && step_ % steps_per_epoch() == 0) {
    const std::size_t finished = step_ / steps_per_epoch();
    if (finished % config_.checkpoint_every == 0) {
      std::filesystem::create_directories(options_.checkpoint_dir);
      write_archive(options_.checkpoint_dir / ("student_epoch" + std::to_string(finished) + ".pgkd"), checkpoint());
    }
  }
  return report;
}

std::vector<StepReport> Distiller::run() {
  std::vector<StepReport> reports;
  while (step_ < total_steps()) reports.push_back(step());
  return reports;
}

PlainTrainer::PlainTrainer(TrainConfig config, const ImageStore& images, std::vector<ManifestRow> train_rows)
    : config_(std::move(config)),
      images_(images),
      rows_(std::move(train_rows)),
      student_(with_classes(config_.backbone, rows_),
               derive_seed(config_.seed, "student", static_cast<std::uint64_t>(config_.fold)), "student."),
      adam_(adam_options(config_)),
      plan_(make_plan(config_, rows_)) {}

StepReport PlainTrainer::step() {
  StepReport report;
  report.step = step_;
  report.epoch = step_ / plan_.batches_per_epoch;
  report.batch = step_ % plan_.batches_per_epoch;
  if (report.batch == 0) plan_ = grouping::reform(plan_, report.epoch);
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  for (const auto& g : grouping::batch_groups(plan_, report.batch)) {
    if (g.key.modality != Modality::kWli) continue;
    for (const auto& id : g.ids) {
      ids.push_back(id);
      labels.push_back(g.key.label);
    }
  }
  GradTape tape;
  TapeScope scope(tape);
  auto out = student_.forward(images_.stack(ids));
  Tensor loss = classification_loss(out.logits, labels);
  report.l_cls = report.l_total = loss.item();
  check_finite(report.l_total, "L_cls", report);
  tape.backward(loss);
  report.grad_norm_student = grad_norm(student_.params());
  adam_.step(student_.params());
  ++step_;
  return report;
}

std::vector<StepReport> PlainTrainer::run() {
  std::vector<StepReport> reports;
  while (step_ < total_steps()) reports.push_back(step());
  return reports;
}

Tensor run_inference(std::span<const NamedParam> checkpoint, const backbone::BackboneConfig& config,
                     const Tensor& images, std::size_t batch) {
  backbone::BackboneConfig cfg = config;
  for (const auto& p : checkpoint) {
    if (p.name == "student.fc.weight") cfg.num_classes = p.tensor.dim(0);
  }
  backbone::Classifier model(cfg, 0, "student.");
  const std::string source = std::any_of(checkpoint.begin(), checkpoint.end(),
                                         [](const NamedParam& p) { return p.name.rfind("student.", 0) == 0; })
                                 ? "student."
                                 : std::string();
  if (source.empty()) {
    // A bare classifier archive (e.g. a teacher) is accepted under its own prefix.
    std::string prefix;
    for (const auto& p : checkpoint) {
      const auto pos = p.name.find("fc.weight");
      if (pos != std::string::npos) {
        prefix = p.name.substr(0, pos);
        cfg.num_classes = p.tensor.dim(0);
      }
    }
    if (prefix.empty()) throw LoadError("checkpoint has no classifier parameters");
    model = backbone::Classifier(cfg, 0, "student.");
    model.load(checkpoint, prefix);
  } else {
    model.load(checkpoint, source);
  }
  NoGradScope no_grad;
  const std::size_t n = images.dim(0);
  const std::size_t stride = images.numel() / n;
  std::vector<double> probs;
  for (std::size_t begin = 0; begin < n; begin += batch) {
    const std::size_t end = std::min(n, begin + batch);
    Shape shape = images.shape();
    shape[0] = end - begin;
    Tensor chunk = Tensor::from(shape, std::vector<double>(images.data().begin() + begin * stride,
                                                           images.data().begin() + end * stride));
    Tensor p = backbone::probabilities(model.forward(chunk).logits);
    probs.insert(probs.end(), p.data().begin(), p.data().end());
  }
  return Tensor::from({n, cfg.num_classes}, std::move(probs));
}

std::vector<ManifestRow> training_rows(std::span<const ManifestRow> rows, int test_fold) {
  std::vector<ManifestRow> out;
  for (const auto& r : rows) {
    if (!r.paired() || !r.fold || *r.fold != test_fold) out.push_back(r);
  }
  return out;
}

std::vector<ManifestRow> test_rows(std::span<const ManifestRow> rows, int test_fold) {
  std::vector<ManifestRow> out;
  for (const auto& r : rows) {
    if (r.paired() && r.fold && *r.fold == test_fold && r.modality == Modality::kWli) out.push_back(r);
  }
  return out;
}

}  // namespace pagkd::train
