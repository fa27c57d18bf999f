// Command-line entry points: data generation, teacher pretraining,
// distillation, evaluation, cross-validation, ablation matrices, the
// gradient suite and relation-matrix inspection.
//
// Training flags mirror TrainConfig field names. A --config JSON file is
// applied after the flags and overrides them; PAGKD_SEED sets the default
// seed when --seed is not given.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pagkd/archive.hpp"
#include "pagkd/experiment.hpp"
#include "pagkd/gradsuite.hpp"
#include "pagkd/synthdata.hpp"
#include "pagkd/trainer.hpp"

using namespace pagkd;
namespace fs = std::filesystem;

namespace {

// Optional overrides for every TrainConfig field exposed on the command line.
struct ConfigFlags {
  std::string preset = "desk";
  std::string config_file;
  std::optional<std::size_t> epochs, batch_budget, num_queries, qformer_blocks, reform_period, refine_iterations;
  std::optional<double> lr, weight_decay, tau1, tau2;
  std::optional<bool> enable_pro, enable_den, use_qformer, use_srca, bidirectional, exclude_positive, use_true_pairs;
  std::optional<std::string> pairing_mode, norm_mode, refinement;
  std::optional<std::uint64_t> seed;
  std::optional<int> fold;
  std::optional<std::size_t> teacher_epochs;
  std::optional<double> teacher_lr;
  std::optional<std::vector<std::size_t>> stages;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "starting point before flags: desk (reduced scale) or paper")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    app->add_option("--config", config_file, "JSON config applied last; overrides flags");
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--batch-budget", batch_budget);
    app->add_option("--num-queries", num_queries);
    app->add_option("--qformer-blocks", qformer_blocks);
    app->add_option("--tau1", tau1);
    app->add_option("--tau2", tau2);
    app->add_option("--reform-period", reform_period);
    app->add_option("--enable-pro", enable_pro);
    app->add_option("--enable-den", enable_den);
    app->add_option("--use-qformer", use_qformer);
    app->add_option("--use-srca", use_srca);
    app->add_option("--bidirectional", bidirectional);
    app->add_option("--exclude-positive", exclude_positive);
    app->add_option("--use-true-pairs", use_true_pairs);
    app->add_option("--pairing-mode", pairing_mode)->check(CLI::IsMember({"group", "image", "mixed"}));
    app->add_option("--norm-mode", norm_mode)->check(CLI::IsMember({"mean", "paper"}));
    app->add_option("--refinement", refinement)->check(CLI::IsMember({"adaptive", "identity"}));
    app->add_option("--refine-iterations", refine_iterations);
    app->add_option("--seed", seed, "default: $PAGKD_SEED, else 0");
    app->add_option("--fold", fold);
    app->add_option("--teacher-epochs", teacher_epochs);
    app->add_option("--teacher-lr", teacher_lr);
    app->add_option("--stages", stages, "backbone channel widths, e.g. --stages 8 16 32");
  }

  TrainConfig build() const {
    TrainConfig c = preset == "paper" ? TrainConfig{} : desk_config();
    if (const char* env = std::getenv("PAGKD_SEED")) c.seed = std::stoull(env);
    auto set = [](auto& field, const auto& opt) {
      if (opt) field = *opt;
    };
    set(c.epochs, epochs);
    set(c.lr, lr);
    set(c.weight_decay, weight_decay);
    set(c.batch_budget, batch_budget);
    set(c.num_queries, num_queries);
    set(c.qformer_blocks, qformer_blocks);
    set(c.tau1, tau1);
    set(c.tau2, tau2);
    set(c.reform_period, reform_period);
    set(c.enable_pro, enable_pro);
    set(c.enable_den, enable_den);
    set(c.use_qformer, use_qformer);
    set(c.use_srca, use_srca);
    set(c.bidirectional, bidirectional);
    set(c.exclude_positive, exclude_positive);
    set(c.use_true_pairs, use_true_pairs);
    if (pairing_mode) c.pairing_mode = grouping::parse_pairing_mode(*pairing_mode);
    if (norm_mode) c.norm_mode = den::parse_norm_mode(*norm_mode);
    if (refinement) c.refinement.identity = *refinement == "identity";
    set(c.refinement.iterations, refine_iterations);
    set(c.seed, seed);
    set(c.fold, fold);
    set(c.teacher.epochs, teacher_epochs);
    set(c.teacher.lr, teacher_lr);
    set(c.backbone.stages, stages);
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot open config file " + config_file);
      c = TrainConfig::from_json(nlohmann::json::parse(in), c);
    }
    c.validate();
    return c;
  }
};

// Writes `text` to `path`, or to stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

backbone::BackboneConfig backbone_for(const TrainConfig& cfg, const Dataset& ds) {
  backbone::BackboneConfig b = cfg.backbone;
  b.num_classes = ds.manifest.num_classes();
  return b;
}

backbone::FrozenClassifier load_teacher(const std::string& path, const TrainConfig& cfg, const Dataset& ds) {
  backbone::Classifier model(backbone_for(cfg, ds), 0, "teacher.");
  const auto entries = read_archive(path);
  model.load(entries, "teacher.");
  return backbone::freeze(std::move(model));
}

std::vector<experiment::Variant> study(const std::string& name, const TrainConfig& base) {
  if (name == "components") return experiment::component_variants(base);
  if (name == "granularity") return experiment::granularity_variants(base);
  if (name == "subcomponents") return experiment::subcomponent_variants(base);
  if (name == "thresholds") return experiment::threshold_variants(base);
  if (name == "queries") return experiment::query_variants(base);
  if (name == "budget") return experiment::budget_variants(base);
  throw ConfigError("unknown study '" + name + "'");
}

std::vector<int> parse_folds(const std::vector<int>& folds) {
  return folds.empty() ? std::vector<int>{0, 1, 2, 3, 4} : folds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairing-free group-level distillation from an NBI teacher to a WLI student"};
  app.require_subcommand(1);

  // generate-data
  synth::GenerateOptions gen;
  std::string gen_out;
  auto* g = app.add_subcommand("generate-data", "write a synthetic two-modality dataset");
  g->add_option("--classes", gen.classes)->capture_default_str();
  g->add_option("--per-class", gen.per_class)->capture_default_str();
  g->add_option("--pairing", gen.pairing)->capture_default_str();
  g->add_option("--gap", gen.gap)->capture_default_str();
  g->add_option("--side", gen.side)->capture_default_str();
  g->add_option("--seed", gen.seed, "default: $PAGKD_SEED, else 0");
  g->add_option("--out", gen_out)->required();
  bool gen_check_gap = false;
  g->add_flag("--verify-gap", gen_check_gap, "train NBI-only and WLI-only classifiers and check the AUC margin");

  std::string manifest, teacher_path, out, checkpoint, log_path, checkpoint_dir, study_name = "components";
  std::vector<int> folds;
  std::size_t seeds = 1;

  ConfigFlags pt_flags, di_flags, ev_flags, cv_flags, mx_flags, ir_flags;

  auto* pt = app.add_subcommand("pretrain-teacher", "train and save the NBI teacher for one fold");
  pt->add_option("--manifest", manifest)->required();
  pt->add_option("--out", out)->required();
  pt_flags.attach(pt);

  auto* di = app.add_subcommand("distill", "distil a WLI student from a saved teacher");
  di->add_option("--manifest", manifest)->required();
  di->add_option("--teacher", teacher_path)->required();
  di->add_option("--out", out, "final checkpoint (student, qformer, srca)")->required();
  di->add_option("--log", log_path, "JSON-lines step log");
  di->add_option("--checkpoint-dir", checkpoint_dir, "periodic checkpoints every checkpoint_every epochs");
  di_flags.attach(di);

  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on the WLI side of a held-out fold");
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--out", out, "JSON report (default stdout)");
  ev_flags.attach(ev);

  auto* cv = app.add_subcommand("run-cv", "5-fold cross-validation of one configuration");
  cv->add_option("--manifest", manifest)->required();
  cv->add_option("--folds", folds, "subset of folds (default all five)");
  cv->add_option("--out", out, "JSON report (default stdout)");
  cv->add_option("--log", log_path, "JSON-lines step log");
  cv_flags.attach(cv);

  auto* mx = app.add_subcommand("run-matrix", "ablation study over seeds; CSV + JSON with a trend summary");
  mx->add_option("--manifest", manifest)->required();
  mx->add_option("--study", study_name)
      ->check(CLI::IsMember({"components", "granularity", "subcomponents", "thresholds", "queries", "budget"}))
      ->capture_default_str();
  mx->add_option("--seeds", seeds, "seeds 0..N-1 added to the base seed")->capture_default_str();
  mx->add_option("--folds", folds);
  mx->add_option("--out", out, "output prefix; writes <out>.csv and <out>.json")->required();
  mx_flags.attach(mx);

  gradsuite::SuiteOptions gs;
  std::string gs_out;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference sweep over every op and both heads");
  gc->add_option("--seeds", gs.seeds)->capture_default_str();
  gc->add_option("--filter", gs.filter, "only cases whose name contains this text");
  gc->add_option("--tolerance", gs.check.tolerance)->capture_default_str();
  gc->add_option("--out", gs_out, "JSON report (default: table on stdout)");

  auto* ir = app.add_subcommand("inspect-relations", "distil and write per-step relation-matrix statistics as CSV");
  ir->add_option("--manifest", manifest)->required();
  ir->add_option("--teacher", teacher_path, "saved teacher (default: pretrain one)");
  ir->add_option("--out", out, "CSV (default stdout)");
  ir_flags.attach(ir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) {
      if (g->count("--seed") == 0) {
        if (const char* env = std::getenv("PAGKD_SEED")) gen.seed = std::stoull(env);
      }
      auto ds = synth::generate_to(gen, gen_out);
      std::cerr << "wrote " << ds.manifest.rows.size() << " images to " << gen_out << '\n';
      if (gen_check_gap) {
        synth::GapOptions go;
        go.seed = gen.seed;
        go.backbone = desk_config().backbone;
        go.backbone.input_side = gen.side;
        go.recipe = desk_config().teacher;
        auto r = synth::verify_gap(ds, go);
        std::cout << nlohmann::json{{"nbi_auc", r.nbi_auc}, {"wli_auc", r.wli_auc}, {"margin", r.margin},
                                    {"passed", r.passed}}
                         .dump(2)
                  << '\n';
      }
    } else if (*pt) {
      const TrainConfig cfg = pt_flags.build();
      auto ds = Dataset::load(manifest);
      auto result = train::pretrain_teacher(train::training_rows(ds.manifest.rows, cfg.fold), ds.images, cfg);
      write_archive(out, result.model.params());
      std::cerr << "teacher fold " << cfg.fold << ": train accuracy " << result.train_accuracy << ", fingerprint "
                << hex64(result.model.fingerprint()) << '\n';
    } else if (*di) {
      const TrainConfig cfg = di_flags.build();
      auto ds = Dataset::load(manifest);
      auto teacher = load_teacher(teacher_path, cfg, ds);
      const auto before = teacher.fingerprint();
      std::ofstream log;
      train::DistillOptions opts;
      if (!log_path.empty()) {
        log.open(log_path);
        opts.log = &log;
      }
      opts.checkpoint_dir = checkpoint_dir;
      train::Distiller distiller(cfg, teacher, ds.images, train::training_rows(ds.manifest.rows, cfg.fold), opts);
      auto steps = distiller.run();
      write_archive(out, distiller.checkpoint());
      if (teacher.fingerprint() != before) throw Error("teacher parameters changed during distillation");
      std::cerr << steps.size() << " steps, final loss " << (steps.empty() ? 0.0 : steps.back().l_total)
                << ", attention violations " << distiller.audit().violations << ", extra params "
                << distiller.extra_param_count() << '\n';
    } else if (*ev) {
      const TrainConfig cfg = ev_flags.build();
      auto ds = Dataset::load(manifest);
      std::vector<std::string> ids;
      std::vector<std::size_t> labels;
      for (const auto& r : train::test_rows(ds.manifest.rows, cfg.fold)) {
        ids.push_back(r.id);
        labels.push_back(r.label);
      }
      if (ids.empty()) throw DataError("fold " + std::to_string(cfg.fold) + " has no WLI test images");
      const auto entries = read_archive(checkpoint);
      Tensor probs = train::run_inference(entries, backbone_for(cfg, ds), ds.images.stack(ids));
      auto report = metrics::compute_metrics(probs, labels);
      emit(out, report.to_json(true).dump(2) + "\n");
    } else if (*cv) {
      const TrainConfig cfg = cv_flags.build();
      auto ds = Dataset::load(manifest);
      experiment::CvOptions opts;
      opts.folds = parse_folds(folds);
      std::ofstream log;
      if (!log_path.empty()) {
        log.open(log_path);
        opts.log = &log;
      }
      auto report = experiment::run_cv(ds, cfg, opts);
      emit(out, nlohmann::json{{"config", cfg.to_json()}, {"report", report.to_json()}}.dump(2) + "\n");
    } else if (*mx) {
      const TrainConfig cfg = mx_flags.build();
      auto ds = Dataset::load(manifest);
      experiment::TeacherCache cache;
      experiment::MatrixOptions opts;
      opts.seeds.clear();
      for (std::size_t s = 0; s < seeds; ++s) opts.seeds.push_back(cfg.seed + s);
      opts.cv.folds = parse_folds(folds);
      opts.progress = &std::cerr;
      auto report = experiment::run_matrix(ds, study(study_name, cfg), cache, opts);
      emit(out + ".csv", report.to_csv());
      emit(out + ".json", report.to_json().dump(2) + "\n");
      std::cout << report.trend_summary().dump(2) << '\n';
    } else if (*gc) {
      auto reports = gradsuite::run(gs);
      bool ok = true;
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : reports) {
        ok = ok && r.passed;
        j.push_back({{"case", r.name}, {"seeds", r.seeds}, {"checked", r.checked}, {"max_rel_err", r.max_rel_err},
                     {"worst_seed", r.worst_seed}, {"worst", r.worst}, {"passed", r.passed}});
        if (gs_out.empty()) {
          std::cout << (r.passed ? "ok   " : "FAIL ") << r.name << "  max rel err " << r.max_rel_err << " over "
                    << r.checked << " elements\n";
        }
      }
      if (!gs_out.empty()) emit(gs_out, j.dump(2) + "\n");
      return ok ? 0 : 1;
    } else if (*ir) {
      const TrainConfig cfg = ir_flags.build();
      auto ds = Dataset::load(manifest);
      const auto rows = train::training_rows(ds.manifest.rows, cfg.fold);
      std::optional<backbone::FrozenClassifier> teacher;
      if (teacher_path.empty()) {
        teacher.emplace(backbone::freeze(train::pretrain_teacher(rows, ds.images, cfg).model));
      } else {
        teacher.emplace(load_teacher(teacher_path, cfg, ds));
      }
      TrainConfig den_cfg = cfg;
      den_cfg.enable_den = true;
      train::Distiller distiller(den_cfg, *teacher, ds.images, rows);
      std::ostringstream csv;
      csv << "epoch,step,class,fg_frac_wli,fg_frac_nbi,ambiguous_frac,matched_frac,all_masked_rows\n";
      while (distiller.steps_done() < distiller.total_steps()) {
        const auto r = distiller.step();
        for (const auto& rel : r.relations) {
          csv << r.epoch << ',' << r.step << ',' << rel.label << ',' << rel.stats.fg_frac_dst << ','
              << rel.stats.fg_frac_src << ',' << rel.stats.amb_frac << ',' << rel.stats.matched_frac << ','
              << rel.stats.all_masked_rows << '\n';
        }
      }
      emit(out, csv.str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
