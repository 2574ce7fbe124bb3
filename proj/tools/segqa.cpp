// segqa command-line front end.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "segqa/app.hpp"
#include "segqa/nifti.hpp"
#include "segqa/service.hpp"

using namespace segqa;
namespace fs = std::filesystem;

namespace {

Shape3 to_shape(const std::vector<std::size_t>& v) {
    if (v.size() != 3) throw InvalidArgument("expected three dimensions nx,ny,nz");
    return {v[0], v[1], v[2]};
}

std::vector<CohortManifest> load_all(const std::vector<std::string>& paths) {
    std::vector<CohortManifest> out;
    for (const auto& p : paths) out.push_back(load_manifest(p));
    return out;
}

std::vector<fs::path> as_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path);
    out << text;
}

struct ModelFlags {
    std::vector<std::size_t> patch{16, 16, 16};
    std::size_t base_channels = 4;
    std::size_t depth = 2;

    void add(CLI::App* cmd) {
        cmd->add_option("--patch", patch, "Network grid nx,ny,nz")->delimiter(',')->expected(3);
        cmd->add_option("--base-channels", base_channels, "Channels of the first level");
        cmd->add_option("--depth", depth, "Pooling levels");
    }
    UNetConfig config() const {
        UNetConfig c;
        c.patch = to_shape(patch);
        c.base_channels = base_channels;
        c.depth = depth;
        return c;
    }
};

struct TrainFlags {
    TrainOptions t;
    void add(CLI::App* cmd) {
        t.lr = 0.1;
        cmd->add_option("--epochs", t.max_epochs, "Maximum epochs")->capture_default_str();
        cmd->add_option("--lr", t.lr, "SGD learning rate")->capture_default_str();
        cmd->add_option("--delta", t.delta, "Early-stop Dice improvement threshold")
            ->capture_default_str();
        cmd->add_option("--patience", t.patience, "Early-stop window in epochs")
            ->capture_default_str();
        cmd->add_option("--min-epochs", t.min_epochs, "Epochs before the stop rule is consulted")
            ->capture_default_str();
        t.clip_norm = 2.0;
        t.min_epochs = 30;
        cmd->add_option("--clip-norm", t.clip_norm, "Gradient norm clip (0 disables)")
            ->capture_default_str();
        cmd->add_flag("--restore-best", t.restore_best, "Keep the best-validation-Dice weights");
    }
};

void interactive_grade(QaLedger& ledger, std::span<const CohortManifest> manifests,
                       const std::string& version, const std::string& rater) {
    const auto graded = ledger.effective(version);
    for (const auto& m : manifests)
        for (const auto& e : m.entries) {
            if (graded.count(e.study_id)) continue;
            while (true) {
                std::cout << m.cohort_id << "/" << e.study_id << " (" << version
                          << ") grade [0 excellent, 1 usable, 2 fail, s skip, q quit]: "
                          << std::flush;
                std::string line;
                if (!std::getline(std::cin, line) || line == "q") return;
                if (line == "s") break;
                if (line == "0" || line == "1" || line == "2") {
                    record_grade(ledger, manifests,
                                 {e.study_id, rater, grade_from_int(line[0] - '0'), version,
                                  next_timestamp(ledger)});
                    break;
                }
                std::cout << "please answer 0, 1, 2, s or q\n";
            }
        }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Segmentation quality assurance toolkit"};
    app.set_config("--config", "", "Optional TOML/INI file with flag values");
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
    app.fallthrough();

    // phantom-gen
    auto* gen = app.add_subcommand("phantom-gen", "Write a synthetic cohort with ground truth");
    app::PhantomGenOptions gen_opt;
    std::string gen_out;
    std::vector<std::size_t> gen_dims{40, 40, 24};
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--cohort", gen_opt.cohort_id, "Cohort id and study id prefix");
    gen->add_option("--n", gen_opt.n, "Number of studies")->capture_default_str();
    gen->add_option("--hard-fraction", gen_opt.hard_fraction, "Fraction of hard cases")
        ->capture_default_str();
    gen->add_option("--dims", gen_dims, "Volume size nx,ny,nz")->delimiter(',')->expected(3);
    gen->add_option("--noise", gen_opt.params.noise_sigma, "Noise sigma in HU")
        ->capture_default_str();
    gen->add_option("--train-easy", gen_opt.train_easy,
                    "Also write train.json with this many easy studies");
    gen->add_option("--eval-cohorts", gen_opt.eval_cohorts,
                    "Names of cohorts receiving the remaining studies")
        ->delimiter(',');

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Window, normalize, resample and crop a cohort");
    std::string pre_manifest, pre_out;
    std::vector<std::size_t> pre_target{168, 168, 64};
    double pre_window = 190.0, pre_level = 35.0;
    pre->add_option("--manifest", pre_manifest, "Cohort manifest")->required();
    pre->add_option("--out", pre_out, "Output directory")->required();
    pre->add_option("--target", pre_target, "Output grid nx,ny,nz")->delimiter(',')->expected(3);
    pre->add_option("--window", pre_window, "Window width in HU")->capture_default_str();
    pre->add_option("--level", pre_level, "Window level in HU")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Train a model into a run directory");
    std::vector<std::string> train_manifests, val_manifests;
    std::string train_init, train_out;
    ModelFlags train_model_flags;
    TrainFlags train_flags;
    train->add_option("--train", train_manifests, "Training manifests")->required();
    train->add_option("--val", val_manifests, "Validation manifests (default: training set)");
    train->add_option("--init", train_init, "Weights to transfer-train from");
    train->add_option("--out", train_out, "Run directory")->required();
    train_model_flags.add(train);
    train_flags.add(train);

    // cv
    auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
    std::vector<std::string> cv_manifests;
    std::string cv_init, cv_out;
    std::size_t cv_k = 5;
    ModelFlags cv_model_flags;
    TrainFlags cv_flags;
    cv->add_option("--manifest", cv_manifests, "Labelled manifests")->required();
    cv->add_option("--k", cv_k, "Folds")->capture_default_str();
    cv->add_option("--init", cv_init, "Weights to transfer-train from in every fold");
    cv->add_option("--out", cv_out, "Report file (default stdout)");
    cv_model_flags.add(cv);
    cv_flags.add(cv);

    // infer
    auto* infer = app.add_subcommand("infer", "Write predictions for a cohort");
    std::string infer_weights, infer_manifest, infer_version, infer_data;
    std::vector<std::size_t> infer_patch{16, 16, 16};
    infer->add_option("--weights", infer_weights, "Weight file")->required();
    infer->add_option("--manifest", infer_manifest, "Cohort manifest")->required();
    infer->add_option("--version", infer_version, "Algorithm version label")->required();
    infer->add_option("--data", infer_data, "Data directory")->required();
    infer->add_option("--patch", infer_patch, "Network grid nx,ny,nz")->delimiter(',')->expected(3);

    // grade
    auto* grade = app.add_subcommand("grade", "Record QA grades (terminal fallback)");
    std::string grade_ledger, grade_version, grade_rater = "cli", grade_study, grade_weights;
    std::vector<std::string> grade_manifests;
    int grade_value = -1;
    bool grade_proxy = false;
    std::vector<std::size_t> grade_patch{16, 16, 16};
    GradeProxy proxy_cfg;
    grade->add_option("--ledger", grade_ledger, "Ledger file")->required();
    grade->add_option("--manifest", grade_manifests, "Cohort manifests")->required();
    grade->add_option("--version", grade_version, "Algorithm version being graded")->required();
    grade->add_option("--rater", grade_rater, "Rater id");
    grade->add_option("--study", grade_study, "Grade one study non-interactively");
    grade->add_option("--grade", grade_value, "Grade for --study");
    grade->add_flag("--proxy", grade_proxy, "Grade automatically from Dice against ground truth");
    grade->add_option("--weights", grade_weights, "Model to grade with --proxy");
    grade->add_option("--patch", grade_patch, "Network grid nx,ny,nz")->delimiter(',')->expected(3);
    grade->add_option("--excellent-min", proxy_cfg.excellent_min)->capture_default_str();
    grade->add_option("--fail-below", proxy_cfg.fail_below)->capture_default_str();

    // report
    auto* report = app.add_subcommand("report", "Failure rates, chi-squared and Dice tables");
    std::string report_ledger, report_data;
    std::vector<std::string> report_manifests, report_compare, report_versions;
    report->add_option("--ledger", report_ledger, "Ledger file")->required();
    report->add_option("--manifest", report_manifests, "Cohort manifests")->required();
    report->add_option("--compare", report_compare, "Version pairs a:b for chi-squared");
    report->add_option("--data", report_data, "Data directory with predictions for Dice tables");
    report->add_option("--versions", report_versions, "Prediction versions for Dice tables")
        ->delimiter(',');

    // round
    auto* round = app.add_subcommand("round", "Full improvement round");
    app::RoundCommandOptions round_opt;
    std::string round_weights, round_source, round_corrected, round_ledger, round_out;
    std::vector<std::string> round_train, round_eval;
    std::vector<std::size_t> round_patch{16, 16, 16};
    TrainFlags round_flags;
    bool round_no_epoch = false;
    round->add_option("--weights", round_weights, "Baseline weights")->required();
    round->add_option("--train", round_train, "Baseline training manifests")->required();
    round->add_option("--source", round_source,
                      "Cohort to grade whose failures are corrected from ground truth");
    round->add_option("--corrected", round_corrected, "Manifest of manually corrected failures");
    round->add_option("--eval", round_eval, "Evaluation-only manifests")->required();
    round->add_option("--ledger", round_ledger, "Ledger file")->required();
    round->add_option("--out", round_out, "Run directory")->required();
    round->add_option("--patch", round_patch, "Network grid nx,ny,nz")->delimiter(',')->expected(3);
    round->add_option("--excellent-min", round_opt.round.proxy.excellent_min)->capture_default_str();
    round->add_option("--fail-below", round_opt.round.proxy.fail_below)->capture_default_str();
    round->add_option("--grade-organs", round_opt.round.grade_organs, "Organ codes for the proxy")
        ->delimiter(',');
    round->add_option("--baseline-version", round_opt.round.baseline_version);
    round->add_option("--optimized-version", round_opt.round.optimized_version);
    round->add_flag("--no-epoch-dice", round_no_epoch, "Skip per-epoch cohort evaluation");
    round_flags.add(round);

    // serve
    auto* srv = app.add_subcommand("serve", "Serve the review HTTP API");
    std::string serve_data, serve_host = "127.0.0.1";
    int serve_port = 8080;
    srv->add_option("--data", serve_data, "Data directory")->required();
    srv->add_option("--port", serve_port, "Port")->capture_default_str();
    srv->add_option("--host", serve_host, "Bind address")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            gen_opt.out_dir = gen_out;
            gen_opt.seed = seed;
            gen_opt.params.dims = to_shape(gen_dims);
            const auto r = app::phantom_gen(gen_opt);
            std::size_t hard = 0;
            for (const auto& e : r.all.entries) hard += e.hard.value_or(false);
            std::cout << "wrote " << r.all.entries.size() << " studies (" << hard << " hard) to "
                      << gen_out << "\n";
        } else if (*pre) {
            PreprocessConfig cfg;
            cfg.target = to_shape(pre_target);
            cfg.window = {pre_window, pre_level};
            app::preprocess_cohort(load_manifest(pre_manifest), cfg, pre_out);
        } else if (*train) {
            app::TrainCommandOptions o;
            o.train_manifests = as_paths(train_manifests);
            o.val_manifests = as_paths(val_manifests);
            if (!train_init.empty()) o.init_weights = train_init;
            o.model = train_model_flags.config();
            o.train = train_flags.t;
            o.train.seed = seed;
            o.init_seed = seed;
            o.out_dir = train_out;
            const auto r = app::train_command(o);
            std::cout << "trained " << r.history.epochs.size() << " epochs ("
                      << to_string(r.history.stop_reason) << "), run directory " << train_out
                      << "\n";
        } else if (*cv) {
            app::CvCommandOptions o;
            o.manifests = as_paths(cv_manifests);
            o.k = cv_k;
            if (!cv_init.empty()) o.init_weights = cv_init;
            o.model = cv_model_flags.config();
            o.train = cv_flags.t;
            o.train.seed = seed;
            o.init_seed = seed;
            std::string text;
            app::cv_command(o, &text);
            emit(text, cv_out);
        } else if (*infer) {
            ModelWeights w = app::load_weights_file(infer_weights);
            w.config.patch = to_shape(infer_patch);
            w.config.validate();
            app::infer_command(w, load_manifest(infer_manifest), infer_version, infer_data);
        } else if (*grade) {
            QaLedger ledger = QaLedger::open(grade_ledger);
            const auto manifests = load_all(grade_manifests);
            if (grade_proxy) {
                if (grade_weights.empty()) throw InvalidArgument("--proxy needs --weights");
                ModelWeights w = app::load_weights_file(grade_weights);
                w.config.patch = to_shape(grade_patch);
                w.config.validate();
                const std::vector<std::uint16_t> organs{organ::kLiver, organ::kGallbladder};
                for (const auto& m : manifests) {
                    const auto samples = load_samples(m, preprocess_for(w.config));
                    app::proxy_grade(ledger, w, samples, grade_version, proxy_cfg, organs,
                                     grade_rater);
                }
            } else if (!grade_study.empty()) {
                record_grade(ledger, manifests,
                             {grade_study, grade_rater, grade_from_int(grade_value), grade_version,
                              next_timestamp(ledger)});
            } else {
                interactive_grade(ledger, manifests, grade_version, grade_rater);
            }
        } else if (*report) {
            const QaLedger ledger = QaLedger::open(report_ledger);
            const auto manifests = load_all(report_manifests);
            std::vector<std::pair<std::string, std::string>> pairs;
            for (const auto& c : report_compare) {
                const auto colon = c.find(':');
                if (colon == std::string::npos)
                    throw InvalidArgument("--compare expects a:b, got '" + c + "'");
                pairs.emplace_back(c.substr(0, colon), c.substr(colon + 1));
            }
            std::cout << app::report_ndjson(ledger, manifests, pairs);
            if (!report_data.empty())
                std::cout << app::dice_report_ndjson(report_data, manifests, report_versions);
        } else if (*round) {
            round_opt.base_weights = round_weights;
            round_opt.train_manifests = as_paths(round_train);
            if (!round_source.empty()) round_opt.source_manifest = round_source;
            if (!round_corrected.empty()) round_opt.corrected_manifest = round_corrected;
            round_opt.eval_manifests = as_paths(round_eval);
            round_opt.ledger_path = round_ledger;
            round_opt.out_dir = round_out;
            round_opt.patch = to_shape(round_patch);
            round_opt.round.train = round_flags.t;
            round_opt.round.train.seed = seed;
            round_opt.round.track_epoch_dice = !round_no_epoch;
            std::cout << app::round_command(round_opt).ndjson;
        } else if (*srv) {
            ReviewService service(serve_data);
            std::cout << "serving " << serve_data << " on http://" << serve_host << ":"
                      << serve_port << std::endl;
            serve(service, serve_host, serve_port);
        }
    } catch (const Error& e) {
        std::cerr << "segqa: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "segqa: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
