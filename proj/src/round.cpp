#include "segqa/round.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace segqa {

namespace {

using json = nlohmann::json;

struct Evaluated {
    DiceReport all;
    Grade grade;
};

Evaluated evaluate(const ModelWeights& w, const TrainingSample& s, const RoundOptions& opt) {
    const LabelMap pred = predict_labels(w, s.input, s.label.spacing(), s.label.origin());
    const auto organs = foreground_organs(w.config.num_classes);
    const double graded = dice_per_organ(pred, s.label, opt.grade_organs).mean_reference();
    return {dice_per_organ(pred, s.label, organs), opt.proxy.grade(graded)};
}

OptionalTest try_paired(std::span<const double> a, std::span<const double> b) {
    OptionalTest t;
    try {
        t.result = stats::paired_t_test(b, a);
    } catch (const Error& e) {
        t.error = e.what();
    }
    return t;
}

json test_json(const std::string& name, const OptionalTest& t) {
    json j{{"type", "test"}, {"name", name}};
    if (t.result) {
        j["kind"] = stats::to_string(t.result->kind);
        j["statistic"] = t.result->statistic;
        j["p_value"] = t.result->p_value;
        j["df"] = t.result->df;
    } else {
        j["error"] = t.error;
    }
    return j;
}

json breakdown_json(const QualityBreakdown& q) {
    return {{"excellent", q.excellent}, {"usable", q.usable}, {"fail", q.fail}, {"graded", q.graded}};
}

json dice_json(const DiceReport& r) {
    json per = json::object();
    for (const auto& [code, d] : r.per_organ) per[organ::name(code)] = d.dice;
    return {{"mean", r.mean_foreground}, {"organs", per}};
}

}  // namespace

Grade proxy_grade_sample(const ModelWeights& weights, const TrainingSample& sample,
                         const GradeProxy& proxy, std::span<const std::uint16_t> organs) {
    const LabelMap pred =
        predict_labels(weights, sample.input, sample.label.spacing(), sample.label.origin());
    return proxy.grade(dice_per_organ(pred, sample.label, organs).mean_reference());
}

Timestamp next_timestamp(const QaLedger& ledger) {
    const Timestamp now = now_utc();
    if (ledger.size() == 0) return now;
    return std::max(now, ledger.records().back().timestamp);
}

void check_no_leakage(std::span<const TrainingSample> base_train,
                      std::span<const TrainingSample> corrected,
                      std::span<const EvalCohort> eval_cohorts) {
    std::set<std::string> trained;
    for (const auto& s : base_train) trained.insert(s.study_id);
    for (const auto& s : corrected) trained.insert(s.study_id);
    for (const auto& c : eval_cohorts) {
        for (const auto& e : c.manifest.entries)
            if (trained.count(e.study_id))
                throw LeakageError("study '" + e.study_id + "' is in the training data and in " +
                                   "evaluation cohort '" + c.manifest.cohort_id + "'");
        for (const auto& s : c.samples)
            if (trained.count(s.study_id))
                throw LeakageError("study '" + s.study_id + "' is in the training data and in " +
                                   "evaluation cohort '" + c.manifest.cohort_id + "'");
    }
}

ComparisonReport improvement_round(const ModelWeights& base_weights,
                                   std::span<const TrainingSample> base_train,
                                   std::span<const TrainingSample> corrected,
                                   std::span<const EvalCohort> eval_cohorts, QaLedger& ledger,
                                   const RoundOptions& options, ModelWeights* optimized_out) {
    check_no_leakage(base_train, corrected, eval_cohorts);
    if (options.baseline_version == options.optimized_version)
        throw InvalidArgument("baseline and optimized versions must differ");

    ComparisonReport report;
    report.base_train_size = base_train.size();
    report.corrected_added = corrected.size();

    auto grade_all = [&](const ModelWeights& w, const std::string& version,
                         std::vector<Evaluated>& out) {
        for (const auto& c : eval_cohorts)
            for (const auto& s : c.samples) {
                out.push_back(evaluate(w, s, options));
                ledger.append(
                    {s.study_id, options.rater_id, out.back().grade, version, next_timestamp(ledger)});
            }
    };

    std::vector<Evaluated> before;
    grade_all(base_weights, options.baseline_version, before);

    std::vector<TrainingSample> train(base_train.begin(), base_train.end());
    train.insert(train.end(), corrected.begin(), corrected.end());

    std::vector<TrainingSample> all_eval;
    for (const auto& c : eval_cohorts) all_eval.insert(all_eval.end(), c.samples.begin(), c.samples.end());
    std::vector<double> epoch_dice;
    EpochObserver observer;
    const auto organs = foreground_organs(base_weights.config.num_classes);
    if (options.track_epoch_dice && !all_eval.empty()) {
        observer = [&](int, const ModelWeights& w) {
            epoch_dice.push_back(mean_dice(w, all_eval, organs));
        };
    }
    TrainResult retrained = train_model(base_weights, train, {}, options.train, {}, observer);
    report.retrain_history = retrained.history;
    if (!epoch_dice.empty()) {
        double sum = 0.0;
        for (double d : epoch_dice) sum += d;
        report.epoch_averaged_dice = sum / static_cast<double>(epoch_dice.size());
    }

    std::vector<Evaluated> after;
    grade_all(retrained.weights, options.optimized_version, after);

    std::vector<double> dice_before, dice_after;
    std::map<std::uint16_t, std::pair<std::vector<double>, std::vector<double>>> per_organ;
    std::size_t k = 0;
    for (const auto& c : eval_cohorts) {
        for (const auto& s : c.samples) {
            ScanComparison sc{c.manifest.cohort_id, s.study_id, before[k].all, after[k].all,
                              before[k].grade, after[k].grade};
            dice_before.push_back(sc.baseline.mean_foreground);
            dice_after.push_back(sc.optimized.mean_foreground);
            for (const auto& [code, d] : sc.baseline.per_organ) {
                per_organ[code].first.push_back(d.dice);
                per_organ[code].second.push_back(sc.optimized.per_organ.at(code).dice);
            }
            report.scans.push_back(std::move(sc));
            ++k;
        }
        CohortComparison cc;
        cc.cohort_id = c.manifest.cohort_id;
        cc.scans = c.samples.size();
        if (!c.samples.empty()) {
            cc.baseline = quality_breakdown(ledger, c.manifest, options.baseline_version);
            cc.optimized = quality_breakdown(ledger, c.manifest, options.optimized_version);
            try {
                cc.chi_squared.result = compare_failure_rates(
                    ledger, c.manifest, options.baseline_version, options.optimized_version);
            } catch (const Error& e) {
                cc.chi_squared.error = e.what();
            }
        } else {
            cc.chi_squared.error = "empty cohort";
        }
        report.cohorts.push_back(std::move(cc));
    }

    if (!dice_before.empty()) {
        double sb = 0.0, sa = 0.0;
        for (std::size_t i = 0; i < dice_before.size(); ++i) {
            sb += dice_before[i];
            sa += dice_after[i];
        }
        report.baseline_mean_dice = sb / static_cast<double>(dice_before.size());
        report.optimized_mean_dice = sa / static_cast<double>(dice_after.size());
    }
    report.dice_t_test = try_paired(dice_before, dice_after);
    for (const auto& [code, v] : per_organ) report.organ_t_tests[code] = try_paired(v.first, v.second);

    if (optimized_out) *optimized_out = std::move(retrained.weights);
    return report;
}

std::string report_to_ndjson(const ComparisonReport& r) {
    std::string out;
    auto line = [&](const json& j) { out += j.dump() + "\n"; };

    json summary{{"type", "summary"},
                 {"base_train_size", r.base_train_size},
                 {"corrected_added", r.corrected_added},
                 {"baseline_mean_dice", r.baseline_mean_dice},
                 {"optimized_mean_dice", r.optimized_mean_dice},
                 {"retrain_epochs", r.retrain_history.epochs.size()},
                 {"stop_reason", to_string(r.retrain_history.stop_reason)},
                 {"note", "synthetic cohorts; clinical failure rates need the clinical archives"}};
    summary["epoch_averaged_dice"] = r.epoch_averaged_dice ? json(*r.epoch_averaged_dice) : json();
    line(summary);

    for (const auto& c : r.cohorts) {
        json j{{"type", "cohort"},
               {"cohort_id", c.cohort_id},
               {"scans", c.scans},
               {"baseline", breakdown_json(c.baseline)},
               {"optimized", breakdown_json(c.optimized)},
               {"baseline_failure_rate", c.baseline.fail},
               {"optimized_failure_rate", c.optimized.fail}};
        line(j);
        json t = test_json("failure_rate_chi_squared", c.chi_squared);
        t["cohort_id"] = c.cohort_id;
        line(t);
    }
    line(test_json("mean_dice_paired_t", r.dice_t_test));
    for (const auto& [code, t] : r.organ_t_tests) {
        json j = test_json("organ_dice_paired_t", t);
        j["organ"] = organ::name(code);
        line(j);
    }
    for (const auto& s : r.scans) {
        line({{"type", "scan"},
              {"cohort_id", s.cohort_id},
              {"study_id", s.study_id},
              {"baseline", dice_json(s.baseline)},
              {"optimized", dice_json(s.optimized)},
              {"baseline_grade", to_int(s.baseline_grade)},
              {"optimized_grade", to_int(s.optimized_grade)}});
    }
    return out;
}

}  // namespace segqa
