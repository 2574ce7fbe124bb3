// Acceptance run: one PASS/FAIL line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "segqa/layers.hpp"
#include "segqa/ledger.hpp"
#include "segqa/metrics.hpp"
#include "segqa/nifti.hpp"
#include "segqa/stats.hpp"
#include "segqa/trainer.hpp"
#include "segqa/unet.hpp"
#include "segqa/volume.hpp"

using namespace segqa;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << detail << std::endl;
    if (!ok) ++failures;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------- 1

int sh(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(SEGQA_CLI) + " " + args + " >> " + log.string() + " 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
}

void improvement_round() {
    const fs::path dir = fs::temp_directory_path() / "segqa_acceptance_round";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path log = dir / "log.txt";
    const auto d = [&](const char* f) { return (dir / f).string(); };
    const auto t0 = std::chrono::steady_clock::now();

    bool ok = sh("phantom-gen --out " + d("data") +
                     " --n 60 --hard-fraction 0.3 --train-easy 20 --eval-cohorts A,B --seed 42",
                 log) == 0;
    ok = ok && sh("train --train " + d("data/train.json") + " --out " + d("base") + " --seed 42", log) == 0;
    ok = ok && sh("round --weights " + d("base/weights.sqw") + " --train " + d("data/train.json") +
                      " --source " + d("data/A.json") + " --eval " + d("data/B.json") + " --ledger " +
                      d("qa_ledger.ndjson") + " --out " + d("round") + " --seed 42",
                  log) == 0;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!ok) {
        report(1, false, "command failed, see " + log.string());
        return;
    }

    double base = -1, opt = -1;
    std::optional<double> chi, p;
    std::size_t corrected = 0;
    std::ifstream in(dir / "round" / "report.ndjson");
    std::string line;
    while (std::getline(in, line)) {
        const auto j = json::parse(line);
        if (j["type"] == "summary") corrected = j["corrected_added"];
        if (j["type"] == "cohort" && j["cohort_id"] == "B") {
            base = j["baseline_failure_rate"];
            opt = j["optimized_failure_rate"];
        }
        if (j["type"] == "test" && j["name"] == "failure_rate_chi_squared" && j.contains("statistic")) {
            chi = j["statistic"].get<double>();
            p = j["p_value"].get<double>();
        }
    }
    const double reduction = base > 0 ? (base - opt) / base : 0.0;
    const bool valid_chi = chi && p && std::isfinite(*chi) && *p >= 0.0 && *p <= 1.0;
    const bool pass = base > 0 && opt < base && reduction >= 0.25 && valid_chi && secs < 600.0;
    report(1, pass,
           "cohort B failure rate " + fmt(base) + " -> " + fmt(opt) + " (reduction " + fmt(100 * reduction, 3) +
               "%, need >= 25%), " + std::to_string(corrected) + " corrected, chi2 " +
               (valid_chi ? fmt(*chi) + " p " + fmt(*p) : std::string("invalid")) + ", runtime " +
               fmt(secs, 4) + " s");
    fs::remove_all(dir);
}

// ---------------------------------------------------------------- 2

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& gen, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(gen);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Worst relative error of grad against central differences of f over t.
// Roundoff in the difference is about eps * |f| / h ~ 1e-11, so below 1e-6
// a 1e-4 relative error is not resolvable and the denominator is floored there.
double fd_worst(Tensor& t, const Tensor& grad, const std::function<double()>& f) {
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double keep = t[i];
        t[i] = keep + h;
        const double up = f();
        t[i] = keep - h;
        const double down = f();
        t[i] = keep;
        const double num = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(grad[i] - num) / std::max({std::abs(grad[i]), std::abs(num), 1e-6}));
    }
    return worst;
}

void gradients() {
    std::mt19937_64 gen(2024);
    std::vector<std::pair<std::string, double>> errs;
    using namespace nn;

    {
        Tensor x = random_tensor({2, 8, 8, 8}, gen);
        Tensor k = random_tensor({3, 2, 3, 3, 3}, gen);
        Tensor b = random_tensor({3}, gen);
        const Tensor w = random_tensor({3, 8, 8, 8}, gen);
        auto f = [&] { return dot(conv3d_forward(x, k, b), w); };
        Tensor gk(k.shape()), gb(b.shape());
        const Tensor gx = conv3d_backward(x, k, w, gk, gb);
        errs.push_back({"conv input", fd_worst(x, gx, f)});
        errs.push_back({"conv kernel", fd_worst(k, gk, f)});
        errs.push_back({"conv bias", fd_worst(b, gb, f)});
    }
    {
        Tensor x = random_tensor({2, 8, 8, 8}, gen);
        for (auto& v : x.data())
            if (std::abs(v) < 1e-3) v = 0.5;  // keep away from the kink
        const Tensor w = random_tensor({2, 8, 8, 8}, gen);
        auto f = [&] { return dot(relu_forward(x), w); };
        errs.push_back({"relu", fd_worst(x, relu_backward(relu_forward(x), w), f)});

        const Tensor wp = random_tensor({2, 4, 4, 4}, gen);
        auto fp = [&] { return dot(maxpool2_forward(x).output, wp); };
        errs.push_back({"maxpool", fd_worst(x, maxpool2_backward(maxpool2_forward(x), wp), fp)});

        Tensor s = random_tensor({2, 4, 4, 4}, gen);
        auto fu = [&] { return dot(upsample2_forward(s), w); };
        errs.push_back({"upsample", fd_worst(s, upsample2_backward(w), fu)});

        Tensor a = random_tensor({1, 8, 8, 8}, gen);
        Tensor c = random_tensor({2, 8, 8, 8}, gen);
        const Tensor wc = random_tensor({3, 8, 8, 8}, gen);
        auto fc = [&] { return dot(concat_channels(a, c), wc); };
        const auto [ga, gc] = split_channels(wc, 1);
        errs.push_back({"concat a", fd_worst(a, ga, fc)});
        errs.push_back({"concat b", fd_worst(c, gc, fc)});
    }
    {
        Tensor z = random_tensor({4, 8, 8, 8}, gen, -3.0, 3.0);
        LabelMap l({8, 8, 8});
        std::uniform_int_distribution<int> code(0, 2);  // class 3 absent
        for (auto& v : l.data()) v = static_cast<std::uint16_t>(code(gen));
        const Tensor t = one_hot(l, 4);
        auto f = [&] { return soft_dice_loss(softmax_channels(z), t); };
        const Tensor p = softmax_channels(z);
        errs.push_back({"softmax + soft dice", fd_worst(z, softmax_backward(p, soft_dice_grad(p, t)), f)});
        Tensor pp = p;
        auto fd = [&] { return soft_dice_loss(pp, t); };
        errs.push_back({"soft dice", fd_worst(pp, soft_dice_grad(p, t), fd)});
    }
    {
        UNetConfig c;
        c.base_channels = 2;
        c.patch = {8, 8, 8};
        auto w = init_weights(c, 11);
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        for (auto& p : w.params)
            if (p.value.rank() == 1)
                for (auto& v : p.value.data()) v = u(gen);
        const Tensor x = random_tensor({c.in_channels, 8, 8, 8}, gen, 0.0, 1.0);
        LabelMap l(c.patch);
        std::uniform_int_distribution<int> k(0, static_cast<int>(c.num_classes) - 1);
        for (auto& v : l.data()) v = static_cast<std::uint16_t>(k(gen));
        const Tensor t = nn::one_hot(l, c.num_classes);
        const auto lg = backward(w, x, t);
        double worst = 0.0;
        for (std::size_t i = 0; i < w.params.size(); ++i)
            worst = std::max(worst, fd_worst(w.params[i].value, lg.gradients.params[i].value,
                                             [&] { return model_loss(w, x, t); }));
        errs.push_back({"end-to-end U-Net", worst});
    }
    double worst = 0.0;
    std::string which;
    for (const auto& [name, e] : errs)
        if (e >= worst) {
            worst = e;
            which = name;
        }
    report(2, worst < 1e-4,
           std::to_string(errs.size()) + " gradient checks, worst relative error " + fmt(worst, 3) + " (" + which +
               "), need < 1e-4");
}

// ---------------------------------------------------------------- 3

void dice_oracle() {
    std::size_t mismatches = 0;
    for (unsigned a = 0; a < 256; ++a)
        for (unsigned b = 0; b < 256; ++b) {
            Mask ma({2, 2, 2}), mb({2, 2, 2});
            unsigned inter = 0, na = 0, nb = 0;
            for (unsigned i = 0; i < 8; ++i) {
                const bool x = (a >> i) & 1u, y = (b >> i) & 1u;
                ma.data()[i] = x;
                mb.data()[i] = y;
                inter += x && y;
                na += x;
                nb += y;
            }
            const double want = na + nb == 0 ? 1.0 : 2.0 * inter / static_cast<double>(na + nb);
            mismatches += dice_binary(ma, mb) != want;
        }
    report(3, mismatches == 0, "65536 mask pairs, " + std::to_string(mismatches) + " mismatches");
}

// ---------------------------------------------------------------- 4

void statistics() {
    const std::vector<double> d{1, 2, 3}, zero(3, 0.0);
    const auto t = stats::paired_t_test(d, zero);
    const bool t_ok = std::abs(t.statistic - 3.4641) <= 1e-4;
    const double closed = 1.0 - t.statistic / std::sqrt(t.statistic * t.statistic + 2.0);
    const bool p_ok = std::abs(t.p_value - 0.0742) <= 1e-4 && std::abs(t.p_value - closed) < 1e-10;

    const auto c = stats::chi_squared_2x2({{{260, 1744}, {180, 1824}}});
    const double o[4] = {260, 1744, 180, 1824};
    const double n = 4008, r1 = 2004, r2 = 2004, c1 = 440, c2 = 3568;
    const double e[4] = {r1 * c1 / n, r1 * c2 / n, r2 * c1 / n, r2 * c2 / n};
    double pearson = 0.0;
    for (int i = 0; i < 4; ++i) pearson += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
    const bool chi_ok = c.p_value < 0.001 && std::abs(c.statistic - pearson) < 1e-9;

    // Monte-Carlo null distributions: t from Z / sqrt(V / df), chi-squared(1) from Z^2.
    std::mt19937_64 gen(77);
    std::normal_distribution<double> z;
    std::uniform_int_distribution<int> nn(3, 12), cnt(5, 200);
    const std::size_t draws = 1'000'000;
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        std::vector<double> x(static_cast<std::size_t>(nn(gen))), y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = z(gen) + 0.3;
            y[i] = z(gen);
        }
        const auto r = stats::paired_t_test(x, y);
        const double df = r.df;
        std::size_t hits = 0;
        for (std::size_t k = 0; k < draws; ++k) {
            double v = 0.0;
            for (int j = 0; j < static_cast<int>(df); ++j) {
                const double g = z(gen);
                v += g * g;
            }
            hits += std::abs(z(gen) / std::sqrt(v / df)) >= std::abs(r.statistic);
        }
        worst = std::max(worst, std::abs(static_cast<double>(hits) / draws - r.p_value));

        stats::Table2x2 tab;
        for (auto& row : tab)
            for (auto& v : row) v = cnt(gen);
        const auto cr = stats::chi_squared_2x2(tab);
        hits = 0;
        for (std::size_t k = 0; k < draws; ++k) {
            const double g = z(gen);
            hits += g * g >= cr.statistic;
        }
        worst = std::max(worst, std::abs(static_cast<double>(hits) / draws - cr.p_value));
    }
    report(4, t_ok && p_ok && chi_ok && worst < 1e-3,
           "t " + fmt(t.statistic, 6) + " p " + fmt(t.p_value, 6) + "; chi2 " + fmt(c.statistic, 6) + " (Pearson " +
               fmt(pearson, 6) + ") p " + fmt(c.p_value, 3) + "; Monte-Carlo worst |dp| " + fmt(worst, 3) +
               " over 20+20 instances");
}

// ---------------------------------------------------------------- 5

bool reference_stop(const std::vector<double>& d, double delta, std::size_t patience) {
    if (d.size() <= patience) return false;
    for (std::size_t i = 0; i < patience; ++i) {
        const std::size_t e = d.size() - 1 - i;
        if (!(d[e] - d[e - 1] < delta)) return false;
    }
    return true;
}

void early_stop() {
    const std::vector<double> seq{0.50, 0.60, 0.70, 0.7002, 0.7003, 0.7004, 0.7005};
    int stop_at = 0;
    for (std::size_t e = 1; e <= seq.size() && !stop_at; ++e)
        if (early_stop_check(std::span(seq.data(), e), 0.001, 4)) stop_at = static_cast<int>(e);

    std::mt19937_64 gen(5);
    std::uniform_int_distribution<int> len(0, 15);
    std::uniform_real_distribution<double> step(-0.002, 0.004);
    int mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> d(static_cast<std::size_t>(len(gen)));
        double v = 0.5;
        for (auto& x : d) x = v += step(gen);
        mismatches += early_stop_check(d, 0.001, 4) != reference_stop(d, 0.001, 4);
    }
    report(5, stop_at == 7 && mismatches == 0,
           "hand sequence stops after epoch " + std::to_string(stop_at) + " (need 7); " +
               std::to_string(mismatches) + "/1000 random mismatches");
}

// ---------------------------------------------------------------- 6

void preprocessing() {
    VoxelVolume img({512, 512, 52}, {0.8, 0.8, 5.0});
    LabelMap lab({512, 512, 52});
    for (std::size_t z = 0; z < 52; ++z)
        for (std::size_t y = 0; y < 512; ++y)
            for (std::size_t x = 0; x < 512; ++x) {
                img.at(x, y, z) = static_cast<double>((x + 3 * y + 7 * z) % 400) - 150.0;
                lab.at(x, y, z) = static_cast<std::uint16_t>((x / 100 + y / 150) % 4);
            }
    const auto p = preprocess_study(img, lab, PreprocessConfig{});
    const Shape3 want{168, 168, 64};
    const bool shapes = p.image.shape() == want && p.soft.shape() == want && p.label &&
                        p.label->shape() == want;

    VoxelVolume ramp({8, 3, 2});
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t i = 0; i < 8; ++i) ramp.at(i, y, z) = static_cast<double>(i);
    const auto r = resample_spline(ramp, {15, 3, 2});
    double ramp_err = 0.0;
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t i = 0; i < 15; ++i)
                ramp_err = std::max(ramp_err, std::abs(r.at(i, y, z) - 0.5 * i));

    const WindowSpec w{190, 35};
    const bool level = window_value(35.0, w) == 0.5 && window_value(40.0, {400, 40}) == 0.5;
    report(6, shapes && ramp_err < 1e-6 && level,
           "512x512x52 -> " + p.image.shape().str() + ", ramp error " + fmt(ramp_err, 3) + ", level maps to " +
               fmt(window_value(35.0, w)));
}

// ---------------------------------------------------------------- 7

bool throws_with(const std::function<void()>& f, const std::string& needle, const std::type_info& type) {
    try {
        f();
    } catch (const Error& e) {
        return typeid(e) == type && std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
}

void nifti_io() {
    std::mt19937_64 gen(7);
    std::uniform_int_distribution<int> dim(1, 9);
    std::uniform_real_distribution<double> sp(0.3, 4.0), hu(-1000.0, 1000.0);
    int bad = 0;
    for (int t = 0; t < 200; ++t) {
        const Shape3 s{static_cast<std::size_t>(dim(gen)), static_cast<std::size_t>(dim(gen)),
                       static_cast<std::size_t>(dim(gen))};
        // pixdim is float32 on disk
        const Vec3 spacing{static_cast<float>(sp(gen)), static_cast<float>(sp(gen)),
                           static_cast<float>(sp(gen))};
        switch (t % 3) {
            case 0: {
                VoxelVolume v(s, spacing);
                for (auto& x : v.data()) x = static_cast<float>(hu(gen));
                bad += !(nifti::read_volume(nifti::write(v, nifti::Datatype::kFloat32)) == v);
                break;
            }
            case 1: {
                VoxelVolume v(s, spacing);
                for (auto& x : v.data()) x = std::round(hu(gen));
                bad += !(nifti::read_volume(nifti::write(v, nifti::Datatype::kInt16)) == v);
                break;
            }
            default: {
                LabelMap l(s, spacing);
                for (auto& x : l.data()) x = static_cast<std::uint16_t>(gen() % 256);
                bad += !(nifti::read_labels(nifti::write(l, nifti::Datatype::kUint8)) == l);
            }
        }
    }

    VoxelVolume v({4, 2, 4});
    const auto good = nifti::write(v, nifti::Datatype::kFloat32);
    auto magic = good;
    magic[344] = 'x';
    auto sizeof_hdr = good;
    sizeof_hdr[0] = 0x5b;  // 347
    auto trunc = good;
    trunc.resize(good.size() - 3);
    auto trunc_hdr = good;
    trunc_hdr.resize(200);
    const bool diag =
        throws_with([&] { nifti::read(magic); }, "magic", typeid(FormatError)) &&
        throws_with([&] { nifti::read(sizeof_hdr); }, "sizeof_hdr", typeid(FormatError)) &&
        throws_with([&] { nifti::read(trunc); }, "payload", typeid(LengthError)) &&
        throws_with([&] { nifti::read(trunc_hdr); }, "header", typeid(LengthError));
    report(7, bad == 0 && diag,
           "200 round trips, " + std::to_string(bad) + " mismatches; bad magic, sizeof_hdr and truncation " +
               (diag ? "each give their own diagnostic" : "diagnostics wrong"));
}

// ---------------------------------------------------------------- 8

bool same(const QualityBreakdown& a, const QualityBreakdown& b) {
    return a.excellent == b.excellent && a.usable == b.usable && a.fail == b.fail && a.graded == b.graded;
}

void ledger() {
    const fs::path dir = fs::temp_directory_path() / "segqa_acceptance_ledger";
    fs::remove_all(dir);
    CohortManifest m{"c", {}, dir};
    for (int i = 0; i < 5; ++i)
        m.entries.push_back({"c" + std::to_string(i), "i.nii", "l.nii", Role::kEval, std::nullopt});
    const std::vector<int> grades{0, 1, 2, 2, 0};
    long long ms = 1'700'000'000'000;
    double live_rate = 0;
    QualityBreakdown live_q;
    {
        auto l = QaLedger::open(dir / "qa_ledger.ndjson");
        for (std::size_t i = 0; i < 5; ++i)
            l.append({m.entries[i].study_id, "r1", grade_from_int(grades[i]), "v1",
                      Timestamp(std::chrono::milliseconds(++ms))});
        l.append({"c1", "r2", Grade::kGlobalFail, "v2", Timestamp(std::chrono::milliseconds(++ms))});
        live_rate = failure_rate(l, m, "v1");
        live_q = quality_breakdown(l, m, "v1");
    }
    const auto replay = QaLedger::open(dir / "qa_ledger.ndjson");
    const bool replay_ok = failure_rate(replay, m, "v1") == live_rate && same(quality_breakdown(replay, m, "v1"), live_q);
    const bool rate_ok = live_rate == 0.4;
    std::set<std::string> exported;
    for (const auto& e : export_failure_manifest(replay, m, "v1").entries) exported.insert(e.study_id);
    const bool export_ok = exported == std::set<std::string>{"c2", "c3"};

    const auto plan = kfold_split(51, 5, 1);
    std::vector<int> seen(51, 0);
    std::vector<std::size_t> sizes;
    for (const auto& f : plan.folds) {
        sizes.push_back(f.size());
        for (auto i : f) ++seen[i];
    }
    std::sort(sizes.rbegin(), sizes.rend());
    const bool folds_ok = std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }) &&
                          sizes == std::vector<std::size_t>{11, 10, 10, 10, 10};
    fs::remove_all(dir);
    report(8, replay_ok && rate_ok && export_ok && folds_ok,
           std::string("replay ") + (replay_ok ? "identical" : "differs") + ", failure rate " + fmt(live_rate) +
               ", export {" + [&] {
                   std::string s;
                   for (const auto& x : exported) s += (s.empty() ? "" : ",") + x;
                   return s;
               }() + "}, k-fold " + (folds_ok ? "disjoint cover 11,10,10,10,10" : "wrong"));
}

}  // namespace

int main() {
    const std::vector<std::function<void()>> criteria{
        improvement_round, gradients, dice_oracle, statistics, early_stop, preprocessing, nifti_io, ledger};
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        try {
            criteria[i]();
        } catch (const std::exception& e) {
            report(static_cast<int>(i + 1), false, std::string("threw: ") + e.what());
        }
    }
    return failures == 0 ? 0 : 1;
}
