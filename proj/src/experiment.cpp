#include "pagkd/experiment.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "pagkd/error.hpp"
#include "pagkd/archive.hpp"
#include "pagkd/trainer.hpp"

namespace pagkd::experiment {
namespace {

Variant variant(std::string name, TrainConfig config, std::vector<std::string> changed) {
  return Variant{std::move(name), std::move(config), std::move(changed)};
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

const backbone::FrozenClassifier& TeacherCache::get(const Dataset& dataset, const TrainConfig& config) {
  nlohmann::json key{{"seed", config.seed}, {"fold", config.fold}, {"teacher", config.to_json()["teacher"]},
                     {"backbone", config.to_json()["backbone"]}};
  const std::string k = key.dump();
  auto it = teachers_.find(k);
  if (it == teachers_.end()) {
    const auto rows = train::training_rows(dataset.manifest.rows, config.fold);
    auto trained = train::pretrain_teacher(rows, dataset.images, config);
    it = teachers_.emplace(k, backbone::freeze(std::move(trained.model))).first;
  }
  return it->second;
}

CvReport run_cv(const Dataset& dataset, const TrainConfig& config, const CvOptions& options) {
  TeacherCache cache;
  return run_cv(dataset, config, cache, options);
}

CvReport run_cv(const Dataset& dataset, const TrainConfig& config, TeacherCache& teachers, const CvOptions& options) {
  if (!dataset.manifest.has_fold_column) throw ManifestError("manifest has no fold column; cannot cross-validate");
  CvReport report;
  std::vector<metrics::MetricsReport> fold_metrics;
  for (int fold : options.folds) {
    TrainConfig cfg = config;
    cfg.fold = fold;
    const auto train_rows = train::training_rows(dataset.manifest.rows, fold);
    const auto held_out = train::test_rows(dataset.manifest.rows, fold);
    if (held_out.empty()) throw DataError("fold " + std::to_string(fold) + " has no paired WLI test images");
    std::set<std::string> held_out_ids;
    for (const auto& r : dataset.manifest.rows) {
      if (r.paired() && r.fold && *r.fold == fold) held_out_ids.insert(r.id);
    }

    std::set<std::string> touched;
    dataset.images.set_access_log(&touched);
    FoldResult result;
    result.fold = fold;
    try {
      const auto& teacher = teachers.get(dataset, cfg);
      result.teacher_hash_before = teacher.fingerprint();
      train::DistillOptions dopts;
      dopts.log = options.log;
      train::Distiller distiller(cfg, teacher, dataset.images, train_rows, dopts);
      auto steps = distiller.run();
      result.steps = steps.size();
      result.final_loss = steps.empty() ? 0.0 : steps.back().l_total;
      result.audit = distiller.audit();
      result.extra_params = distiller.extra_param_count();
      result.teacher_hash_after = teacher.fingerprint();
      dataset.images.set_access_log(nullptr);

      for (const auto& id : touched) result.test_images_touched_in_training += held_out_ids.count(id);
      if (result.test_images_touched_in_training > 0) {
        throw ProtocolError("fold " + std::to_string(fold) + ": " +
                            std::to_string(result.test_images_touched_in_training) +
                            " held-out images were read during training");
      }

      std::vector<std::string> ids;
      std::vector<std::size_t> labels;
      for (const auto& r : held_out) {
        ids.push_back(r.id);
        labels.push_back(r.label);
      }
      const auto ckpt = distiller.checkpoint();
      Tensor probs = train::run_inference(ckpt, distiller.student().config(), dataset.images.stack(ids));
      result.metrics = metrics::compute_metrics(probs, labels);
    } catch (...) {
      dataset.images.set_access_log(nullptr);
      throw;
    }
    fold_metrics.push_back(result.metrics);
    report.folds.push_back(std::move(result));
  }
  report.aggregate = metrics::aggregate(fold_metrics);
  return report;
}

nlohmann::json CvReport::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) {
    folds_json.push_back({{"fold", f.fold},
                          {"metrics", f.metrics.to_json(true)},
                          {"steps", f.steps},
                          {"final_loss", f.final_loss},
                          {"attention_violations", f.audit.violations},
                          {"attention_matrices", f.audit.matrices},
                          {"teacher_hash_before", hex64(f.teacher_hash_before)},
                          {"teacher_hash_after", hex64(f.teacher_hash_after)},
                          {"extra_params", f.extra_params}});
  }
  return {{"folds", folds_json}, {"aggregate", aggregate.to_json()}};
}

std::vector<Variant> component_variants(const TrainConfig& base) {
  TrainConfig full = base, pro = base, den = base, none = base;
  full.enable_pro = full.enable_den = true;
  pro.enable_pro = true;
  pro.enable_den = false;
  den.enable_pro = false;
  den.enable_den = true;
  none.enable_pro = none.enable_den = false;
  return {variant("baseline", none, {"enable_pro", "enable_den"}), variant("pro_only", pro, {"enable_den"}),
          variant("den_only", den, {"enable_pro"}), variant("full", full, {})};
}

std::vector<Variant> granularity_variants(const TrainConfig& base) {
  TrainConfig group = base, image = base;
  group.enable_pro = group.enable_den = image.enable_pro = image.enable_den = true;
  group.pairing_mode = grouping::PairingMode::kGroup;
  image.pairing_mode = grouping::PairingMode::kImage;
  // The image-level ablation distils from randomly sampled same-class pairs,
  // never from the true pairing.
  image.use_true_pairs = false;
  return {variant("group_level", group, {}), variant("image_level", image, {"pairing_mode", "use_true_pairs"})};
}

std::vector<Variant> subcomponent_variants(const TrainConfig& base) {
  TrainConfig full = base, no_q = base, no_srca = base, no_bi = base;
  no_q.use_qformer = false;
  no_srca.use_srca = false;
  no_bi.bidirectional = false;
  return {variant("full", full, {}), variant("without_qformer", no_q, {"use_qformer"}),
          variant("without_srca", no_srca, {"use_srca"}), variant("without_bidirectional", no_bi, {"bidirectional"})};
}

std::vector<Variant> threshold_variants(const TrainConfig& base) {
  std::vector<Variant> out;
  for (double t1 : {0.1, 0.2, 0.3, 0.4, 0.5}) {
    TrainConfig c = base;
    c.tau1 = t1;
    c.tau2 = 0.7;
    out.push_back(variant("tau1=" + fmt(t1), c, {"tau1"}));
  }
  for (double t2 : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    TrainConfig c = base;
    c.tau1 = 0.3;
    c.tau2 = t2;
    out.push_back(variant("tau2=" + fmt(t2), c, {"tau2"}));
  }
  return out;
}

std::vector<Variant> query_variants(const TrainConfig& base) {
  std::vector<Variant> out;
  for (std::size_t n : {4, 8, 12, 16}) {
    TrainConfig c = base;
    c.num_queries = n;
    out.push_back(variant("num_queries=" + std::to_string(n), c, {"num_queries"}));
  }
  return out;
}

std::vector<Variant> budget_variants(const TrainConfig& base) {
  std::vector<Variant> out;
  for (std::size_t s : {12, 18, 24, 30}) {
    TrainConfig c = base;
    c.batch_budget = s;
    out.push_back(variant("batch_budget=" + std::to_string(s), c, {"batch_budget"}));
  }
  return out;
}

MatrixReport run_matrix(const Dataset& dataset, const std::vector<Variant>& variants, TeacherCache& teachers,
                        const MatrixOptions& options) {
  MatrixReport report;
  for (const auto& v : variants) report.variant_order.push_back(v.name);
  for (auto seed : options.seeds) {
    for (const auto& v : variants) {
      MatrixRow row;
      row.variant = v.name;
      row.seed = seed;
      row.changed = v.changed;
      TrainConfig cfg = v.config;
      cfg.seed = seed;
      row.flags = cfg.to_json();
      try {
        row.report = run_cv(dataset, cfg, teachers, options.cv);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      if (options.progress != nullptr) {
        *options.progress << "[matrix] " << v.name << " seed=" << seed << " "
                          << (row.report ? "auc=" + fmt(row.report->aggregate.auc.mean) : "error: " + row.error)
                          << std::endl;
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::map<std::string, double> MatrixReport::mean_auc() const {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    if (!r.report) continue;
    auto& a = acc[r.variant];
    a.first += r.report->aggregate.auc.mean;
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

std::string MatrixReport::to_csv() const {
  std::ostringstream os;
  os << "variant,seed,changed,enable_pro,enable_den,use_qformer,use_srca,bidirectional,pairing_mode,use_true_pairs,norm_mode,"
        "tau1,tau2,num_queries,batch_budget,accuracy,precision,recall,f1,auc,auc_std,error\n";
  for (const auto& r : rows) {
    std::string changed;
    for (const auto& c : r.changed) changed += (changed.empty() ? "" : ";") + c;
    const auto& f = r.flags;
    os << r.variant << ',' << r.seed << ',' << changed << ',' << f["enable_pro"] << ',' << f["enable_den"] << ','
       << f["use_qformer"] << ',' << f["use_srca"] << ',' << f["bidirectional"] << ','
       << f["pairing_mode"].get<std::string>() << ',' << f["use_true_pairs"] << ',' << f["norm_mode"].get<std::string>() << ','
       << fmt(f["tau1"].get<double>()) << ',' << fmt(f["tau2"].get<double>()) << ',' << f["num_queries"] << ','
       << f["batch_budget"] << ',';
    if (r.report) {
      const auto& a = r.report->aggregate;
      os << fmt(a.accuracy.mean) << ',' << fmt(a.precision.mean) << ',' << fmt(a.recall.mean) << ','
         << fmt(a.f1.mean) << ',' << fmt(a.auc.mean) << ',' << fmt(a.auc.std) << ',';
    } else {
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      os << ",,,,,," << err;
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json MatrixReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"variant", r.variant}, {"seed", r.seed}, {"changed", r.changed}, {"flags", r.flags}};
    if (r.report) j["report"] = r.report->to_json();
    if (!r.error.empty()) j["error"] = r.error;
    rows_json.push_back(std::move(j));
  }
  return {{"rows", rows_json}, {"trend", trend_summary()}};
}

nlohmann::json MatrixReport::trend_summary() const {
  const auto means = mean_auc();
  std::vector<std::pair<std::string, double>> ordered;
  for (const auto& name : variant_order) {
    auto it = means.find(name);
    if (it != means.end()) ordered.emplace_back(name, it->second);
  }
  nlohmann::json j = nlohmann::json::array();
  const double ref = ordered.empty() ? 0.0 : ordered.front().second;
  std::vector<std::pair<std::string, double>> ranked = ordered;
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    j.push_back({{"rank", i + 1}, {"variant", ranked[i].first}, {"mean_auc", ranked[i].second},
                 {"delta_vs_" + (ordered.empty() ? std::string("first") : ordered.front().first),
                  ranked[i].second - ref}});
  }
  return j;
}

}  // namespace pagkd::experiment
