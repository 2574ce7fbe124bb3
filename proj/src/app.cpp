#include "segqa/app.hpp"

#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "segqa/nifti.hpp"

namespace segqa::app {

namespace {

using json = nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<TrainingSample> samples_from(const std::vector<fs::path>& manifests,
                                         const PreprocessConfig& cfg) {
    std::vector<TrainingSample> out;
    for (const auto& p : manifests) {
        auto s = load_samples(load_manifest(p), cfg);
        out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    return out;
}

json paths_json(const std::vector<fs::path>& paths) {
    json j = json::array();
    for (const auto& p : paths) j.push_back(p.string());
    return j;
}

json train_options_json(const TrainOptions& t) {
    return {{"max_epochs", t.max_epochs}, {"lr", t.lr},           {"seed", t.seed},
            {"delta", t.delta},           {"patience", t.patience}, {"min_epochs", t.min_epochs},
            {"restore_best", t.restore_best}, {"clip_norm", t.clip_norm}, {"organs", t.organs}};
}

json test_json(const stats::TestResult& t) {
    return {{"kind", stats::to_string(t.kind)},
            {"statistic", t.statistic},
            {"p_value", t.p_value},
            {"df", t.df}};
}

ModelWeights initial_weights(const std::optional<fs::path>& init, const UNetConfig& model,
                             std::uint64_t seed) {
    if (!init) return init_weights(model, seed);
    ModelWeights w = load_weights_file(*init);
    w.config.patch = model.patch;
    return w;
}

}  // namespace

void save_weights_file(const fs::path& path, const ModelWeights& weights) {
    nifti::write_file(path, save_weights(weights));
}

ModelWeights load_weights_file(const fs::path& path) {
    try {
        return load_weights(nifti::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string history_to_ndjson(const TrainHistory& h) {
    std::string out = json{{"epoch", 0}, {"val_dice", h.initial_val_dice}}.dump() + "\n";
    for (const auto& e : h.epochs)
        out += json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_dice", e.val_dice}}
                   .dump() +
               "\n";
    return out;
}

PhantomGenResult phantom_gen(const PhantomGenOptions& opt) {
    PhantomGenResult r;
    r.all = generate_cohort(opt.seed, opt.n, opt.hard_fraction, opt.params, opt.out_dir,
                            opt.cohort_id, Role::kEval);
    if (opt.train_easy == 0) return r;
    if (opt.eval_cohorts.empty())
        throw InvalidArgument("phantom-gen: --train-easy needs at least one eval cohort name");

    CohortManifest train{"train", {}, opt.out_dir};
    for (const auto& name : opt.eval_cohorts) r.eval.push_back({name, {}, opt.out_dir});
    std::size_t dealt = 0;
    for (const auto& e : r.all.entries) {
        if (train.entries.size() < opt.train_easy && !e.hard.value_or(false)) {
            ManifestEntry t = e;
            t.role = Role::kTrain;
            train.entries.push_back(std::move(t));
        } else {
            r.eval[dealt++ % r.eval.size()].entries.push_back(e);
        }
    }
    if (train.entries.size() < opt.train_easy)
        throw InvalidArgument("phantom-gen: only " + std::to_string(train.entries.size()) +
                              " easy studies for --train-easy " + std::to_string(opt.train_easy));
    save_manifest(opt.out_dir / "train.json", train);
    for (const auto& m : r.eval) save_manifest(opt.out_dir / (m.cohort_id + ".json"), m);
    r.train = std::move(train);
    return r;
}

void preprocess_cohort(const CohortManifest& manifest, const PreprocessConfig& cfg,
                       const fs::path& out_dir) {
    for (const auto& e : manifest.entries) {
        const LoadedStudy s = load_study(manifest, e);
        const PreprocessedStudy p = preprocess_study(s.image, s.label, cfg);
        nifti::save(out_dir / e.study_id / "image.nii", p.image, nifti::Datatype::kFloat32);
        nifti::save(out_dir / e.study_id / "soft.nii", p.soft, nifti::Datatype::kFloat32);
        if (p.label) nifti::save(out_dir / e.study_id / "label.nii", *p.label);
    }
}

TrainResult train_command(const TrainCommandOptions& opt) {
    opt.model.validate();
    const ModelWeights init = initial_weights(opt.init_weights, opt.model, opt.init_seed);
    const PreprocessConfig cfg = preprocess_for(init.config);
    const auto train = samples_from(opt.train_manifests, cfg);
    const auto val = samples_from(opt.val_manifests, cfg);

    json config{{"model", init.config.fingerprint()},
                {"patch", {cfg.target.nx, cfg.target.ny, cfg.target.nz}},
                {"train", train_options_json(opt.train)},
                {"init_seed", opt.init_seed},
                {"train_manifests", paths_json(opt.train_manifests)},
                {"val_manifests", paths_json(opt.val_manifests)}};
    config["init_weights"] = opt.init_weights ? json(opt.init_weights->string()) : json();
    write_text(opt.out_dir / "config.json", config.dump(2) + "\n");

    TrainResult result = train_model(init, train, val, opt.train);
    write_text(opt.out_dir / "history.ndjson", history_to_ndjson(result.history));
    save_weights_file(opt.out_dir / "weights.sqw", result.weights);
    const auto& h = result.history;
    json report{{"train_size", train.size()},
                {"val_size", val.empty() ? train.size() : val.size()},
                {"initial_val_dice", h.initial_val_dice},
                {"epochs", h.epochs.size()},
                {"stop_reason", to_string(h.stop_reason)}};
    report["final_val_dice"] = h.epochs.empty() ? json() : json(h.epochs.back().val_dice);
    write_text(opt.out_dir / "report.json", report.dump(2) + "\n");
    return result;
}

CrossValidationResult cv_command(const CvCommandOptions& opt, std::string* ndjson_out) {
    opt.model.validate();
    const ModelWeights init = initial_weights(opt.init_weights, opt.model, opt.init_seed);
    const auto dataset = samples_from(opt.manifests, preprocess_for(init.config));
    const auto organs = opt.train.organs.empty() ? foreground_organs(init.config.num_classes)
                                                 : opt.train.organs;
    auto cv = run_cross_validation(dataset, opt.k, opt.train.seed, organs,
                                   unet_fold_factory(init, opt.train, dataset));
    if (ndjson_out) {
        std::string out;
        for (const auto& fold : cv.folds)
            for (const auto& r : fold) {
                json organs_j = json::object();
                for (const auto& [code, d] : r.dice.per_organ) organs_j[organ::name(code)] = d.dice;
                out += json{{"type", "held_out"}, {"fold", r.fold},
                            {"study_id", r.study_id}, {"mean_dice", r.dice.mean_foreground},
                            {"organs", organs_j}}
                           .dump() +
                       "\n";
            }
        for (std::size_t f = 0; f < cv.fold_means.size(); ++f)
            out += json{{"type", "fold"}, {"fold", f}, {"size", cv.plan.folds[f].size()},
                        {"mean_dice", cv.fold_means[f]}}
                       .dump() +
                   "\n";
        out += json{{"type", "pooled"}, {"k", opt.k}, {"mean_dice", cv.pooled_mean}}.dump() + "\n";
        *ndjson_out = std::move(out);
    }
    return cv;
}

void infer_command(const ModelWeights& weights, const CohortManifest& manifest,
                   const std::string& version, const fs::path& data_dir) {
    if (version.empty()) throw InvalidArgument("infer: version must not be empty");
    const PreprocessConfig cfg = preprocess_for(weights.config);
    for (const auto& e : manifest.entries) {
        const VoxelVolume image = nifti::load_volume(manifest.resolve(e.image));
        const PreprocessedStudy p = preprocess_study(image, std::nullopt, cfg);
        const LabelMap pred = predict_labels(weights, model_input(p));
        const LabelMap restored =
            restore_labels(pred, image.shape(), image.spacing(), image.origin(), cfg);
        nifti::save(data_dir / "predictions" / version / e.study_id / "label.nii", restored);
    }
}

std::vector<Grade> proxy_grade(QaLedger& ledger, const ModelWeights& weights,
                               std::span<const TrainingSample> samples, const std::string& version,
                               const GradeProxy& proxy, std::span<const std::uint16_t> organs,
                               const std::string& rater_id) {
    std::vector<Grade> grades;
    for (const auto& s : samples) {
        grades.push_back(proxy_grade_sample(weights, s, proxy, organs));
        ledger.append({s.study_id, rater_id, grades.back(), version, next_timestamp(ledger)});
    }
    return grades;
}

CohortManifest materialize_corrections(const CohortManifest& failures,
                                       const CohortManifest& source) {
    CohortManifest out = failures;
    for (auto& e : out.entries) {
        const ManifestEntry* src = source.find(e.study_id);
        if (!src) throw NotFoundError("study '" + e.study_id + "' not in " + source.cohort_id);
        if (!src->label)
            throw ValidationError("study '" + e.study_id + "' has no ground truth to copy");
        if (!e.label) e.label = "corrected/" + e.study_id + "/label.nii";
        const fs::path to = out.resolve(*e.label);
        fs::create_directories(to.parent_path());
        fs::copy_file(source.resolve(*src->label), to, fs::copy_options::overwrite_existing);
        e.role = Role::kCorrected;
    }
    return out;
}

RoundCommandResult round_command(const RoundCommandOptions& opt) {
    ModelWeights base = load_weights_file(opt.base_weights);
    base.config.patch = opt.patch;
    base.config.validate();
    const PreprocessConfig cfg = preprocess_for(base.config);
    QaLedger ledger = QaLedger::open(opt.ledger_path);

    const auto train = samples_from(opt.train_manifests, cfg);
    RoundCommandResult result;
    if (opt.corrected_manifest) {
        result.corrected = load_manifest(*opt.corrected_manifest);
    } else if (opt.source_manifest) {
        const CohortManifest source = load_manifest(*opt.source_manifest);
        const auto source_samples = load_samples(source, cfg);
        proxy_grade(ledger, base, source_samples, opt.round.baseline_version, opt.round.proxy,
                    opt.round.grade_organs, opt.round.rater_id);
        const CohortManifest failures =
            export_failure_manifest(ledger, source, opt.round.baseline_version);
        result.corrected = materialize_corrections(failures, source);
        save_manifest(source.base_dir / (failures.cohort_id + ".json"), result.corrected);
    }
    const auto corrected = result.corrected.entries.empty()
                               ? std::vector<TrainingSample>{}
                               : load_samples(result.corrected, cfg);

    std::vector<EvalCohort> eval;
    for (const auto& p : opt.eval_manifests) {
        CohortManifest m = load_manifest(p);
        auto samples = load_samples(m, cfg);
        eval.push_back({std::move(m), std::move(samples)});
    }

    ModelWeights optimized;
    result.report = improvement_round(base, train, corrected, eval, ledger, opt.round, &optimized);
    result.ndjson = report_to_ndjson(result.report);

    json config{{"base_weights", opt.base_weights.string()},
                {"train_manifests", paths_json(opt.train_manifests)},
                {"eval_manifests", paths_json(opt.eval_manifests)},
                {"ledger", opt.ledger_path.string()},
                {"patch", {opt.patch.nx, opt.patch.ny, opt.patch.nz}},
                {"train", train_options_json(opt.round.train)},
                {"proxy", {{"excellent_min", opt.round.proxy.excellent_min},
                           {"fail_below", opt.round.proxy.fail_below}}},
                {"grade_organs", opt.round.grade_organs},
                {"baseline_version", opt.round.baseline_version},
                {"optimized_version", opt.round.optimized_version},
                {"corrected", result.corrected.entries.size()}};
    write_text(opt.out_dir / "config.json", config.dump(2) + "\n");
    write_text(opt.out_dir / "history.ndjson", history_to_ndjson(result.report.retrain_history));
    write_text(opt.out_dir / "report.ndjson", result.ndjson);
    save_weights_file(opt.out_dir / "weights.sqw", optimized);
    return result;
}

std::string report_ndjson(const QaLedger& ledger, std::span<const CohortManifest> cohorts,
                          const std::vector<std::pair<std::string, std::string>>& compare) {
    std::string out;
    for (const auto& c : cohorts) {
        for (const auto& v : ledger.versions()) {
            if (cohort_grades(ledger, c, v).empty()) continue;
            const auto b = quality_breakdown(ledger, c, v);
            out += json{{"type", "quality"}, {"cohort", c.cohort_id}, {"version", v},
                        {"failure_rate", b.fail}, {"excellent", b.excellent},
                        {"usable", b.usable},  {"fail", b.fail}, {"graded", b.graded}}
                       .dump() +
                   "\n";
        }
        for (const auto& [a, b] : compare) {
            json j{{"type", "chi_squared"}, {"cohort", c.cohort_id}, {"a", a}, {"b", b}};
            try {
                j.update(test_json(compare_failure_rates(ledger, c, a, b)));
            } catch (const Error& e) {
                j["error"] = e.what();
            }
            out += j.dump() + "\n";
        }
    }
    return out;
}

std::string dice_report_ndjson(const fs::path& data_dir, std::span<const CohortManifest> cohorts,
                               const std::vector<std::string>& versions) {
    std::string out;
    const auto organs = foreground_organs(4);
    std::map<std::string, std::map<std::string, double>> per_version;  // version -> study -> dice
    for (const auto& c : cohorts)
        for (const auto& e : c.entries) {
            if (!e.label) continue;
            const LabelMap truth = nifti::load_labels(c.resolve(*e.label));
            for (const auto& v : versions) {
                const fs::path pred = data_dir / "predictions" / v / e.study_id / "label.nii";
                if (!fs::exists(pred)) continue;
                const DiceReport r = dice_per_organ(nifti::load_labels(pred), truth, organs);
                json organs_j = json::object();
                for (const auto& [code, d] : r.per_organ) organs_j[organ::name(code)] = d.dice;
                out += json{{"type", "dice"},   {"cohort", c.cohort_id},
                            {"study_id", e.study_id}, {"version", v},
                            {"mean_dice", r.mean_foreground}, {"organs", organs_j}}
                           .dump() +
                       "\n";
                per_version[v][e.study_id] = r.mean_foreground;
            }
        }
    if (versions.size() == 2) {
        std::vector<double> a, b;
        for (const auto& [study, d] : per_version[versions[0]])
            if (const auto it = per_version[versions[1]].find(study);
                it != per_version[versions[1]].end()) {
                a.push_back(d);
                b.push_back(it->second);
            }
        json j{{"type", "paired_t"}, {"a", versions[0]}, {"b", versions[1]}, {"n", a.size()}};
        try {
            j.update(test_json(stats::paired_t_test(b, a)));
        } catch (const Error& e) {
            j["error"] = e.what();
        }
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace segqa::app
