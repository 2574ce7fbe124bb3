#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "segqa/error.hpp"
#include "segqa/nifti.hpp"
#include "segqa/phantom.hpp"

using namespace segqa;
namespace fs = std::filesystem;

namespace {

PhantomParams single_ball(Shape3 dims) {
    PhantomParams p;
    p.dims = dims;
    p.spacing = {1, 1, 1};
    p.noise_sigma = 0.0;
    p.center_jitter = 0.0;
    p.organs = {OrganSpec{organ::kLiver, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}, 55.0, 1.0, {}}};
    return p;
}

std::size_t count(const LabelMap& l, std::uint16_t code) {
    std::size_t n = 0;
    for (auto v : l.data()) n += v == code;
    return n;
}

double mean_hu(const Phantom& ph, std::uint16_t code) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ph.image.size(); ++i)
        if (ph.label.data()[i] == code) {
            s += ph.image.data()[i];
            ++n;
        }
    return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("same seed gives identical studies") {
    const PhantomParams p;
    const auto a = generate_phantom(7, p);
    const auto b = generate_phantom(7, p);
    CHECK(a.image == b.image);
    CHECK(a.label == b.label);
    CHECK(a.present == b.present);
    const auto c = generate_phantom(8, p);
    CHECK_FALSE(c.image == a.image);
}

TEST_CASE("zero noise gives constant organ intensities") {
    PhantomParams p;
    p.noise_sigma = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto ph = generate_phantom(seed, p);
        for (std::size_t i = 0; i < ph.image.size(); ++i) {
            const auto code = ph.label.data()[i];
            double want = p.background_hu;
            for (const auto& o : p.organs)
                if (o.code == code) want = o.mean_hu;
            CHECK(ph.image.data()[i] == want);
        }
    }
}

TEST_CASE("rasterized ellipsoid volume converges to the analytic volume") {
    const double pi = std::acos(-1.0);
    const auto a = generate_phantom(1, single_ball({32, 32, 32}));
    const double v32 = 4.0 / 3.0 * pi * 8 * 8 * 8;  // about 2145
    CHECK(std::abs(static_cast<double>(count(a.label, organ::kLiver)) - v32) / v32 < 0.05);
    const auto b = generate_phantom(1, single_ball({64, 64, 64}));
    const double v64 = 4.0 / 3.0 * pi * 16 * 16 * 16;
    CHECK(std::abs(static_cast<double>(count(b.label, organ::kLiver)) - v64) / v64 < 0.02);
}

TEST_CASE("hard cases shrink the liver to gallbladder contrast") {
    PhantomParams p;
    p.noise_sigma = 0.0;
    for (auto& o : p.organs)
        if (o.code == organ::kGallbladder) o.presence_prob = 1.0;
    const auto easy = generate_phantom(3, p);
    p.hard_case = true;
    const auto hard = generate_phantom(3, p);
    const double ce = std::abs(mean_hu(easy, organ::kLiver) - mean_hu(easy, organ::kGallbladder));
    const double ch = std::abs(mean_hu(hard, organ::kLiver) - mean_hu(hard, organ::kGallbladder));
    CHECK(ch < ce);
    CHECK(ch == doctest::Approx(0.0));
    CHECK(easy.label == hard.label);
}

TEST_CASE("hard case counts") {
    CHECK(choose_hard_cases(42, 60, 0.3).size() == 18);
    CHECK(choose_hard_cases(42, 60, 0.0).empty());
    CHECK(choose_hard_cases(42, 60, 1.0).size() == 60);
    CHECK(choose_hard_cases(1, 10, 0.25).size() == 3);
    CHECK(choose_hard_cases(42, 60, 0.3) == choose_hard_cases(42, 60, 0.3));
}

TEST_CASE("gallbladder presence rate sits inside binomial 99% bounds") {
    PhantomParams p;
    p.noise_sigma = 0.0;
    const int n = 2000;
    int present = 0;
    for (int i = 0; i < n; ++i) {
        const auto ph = generate_phantom(study_seed(11, static_cast<std::size_t>(i)), p);
        for (auto c : ph.present) present += c == organ::kGallbladder;
    }
    const double rate = static_cast<double>(present) / n;
    const double q = 0.47;
    const double half = 2.5758 * std::sqrt(q * (1 - q) / n);
    CHECK(std::abs(rate - q) <= half);
    CHECK(std::abs(rate - 24.0 / 51.0) <= half);
}

TEST_CASE("cohorts on disk round trip through NIfTI") {
    const auto dir = fs::temp_directory_path() / "segqa_test_phantom";
    fs::remove_all(dir);
    PhantomParams p;
    p.dims = {16, 16, 8};
    const auto m = generate_cohort(5, 10, 0.3, p, dir, "ph");
    CHECK(m.entries.size() == 10);
    CHECK(fs::exists(dir / "manifest.json"));
    const auto hard = choose_hard_cases(5, 10, 0.3);
    std::size_t nhard = 0;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        nhard += e.hard.value_or(false);
        PhantomParams pi = p;
        pi.hard_case = std::find(hard.begin(), hard.end(), i) != hard.end();
        CHECK(e.hard.value_or(false) == pi.hard_case);
        const auto ph = generate_phantom(study_seed(5, i), pi);
        CHECK(nifti::load_volume(m.resolve(e.image)) == ph.image);
        CHECK(nifti::load_labels(m.resolve(*e.label)) == ph.label);
    }
    CHECK(nhard == 3);
    fs::remove_all(dir);
}

TEST_CASE("invalid parameters") {
    PhantomParams p;
    p.noise_sigma = -1.0;
    CHECK_THROWS_AS(generate_phantom(1, p), InvalidArgument);
    p = PhantomParams{};
    p.organs[0].radii.x = 0.0;
    CHECK_THROWS_AS(generate_phantom(1, p), InvalidArgument);
    // a mandatory organ fully carved by a later one
    p = single_ball({16, 16, 16});
    p.organs.push_back({organ::kSpleen, {0.5, 0.5, 0.5}, {0.4, 0.4, 0.4}, 50.0, 1.0, {}});
    CHECK_THROWS_AS(generate_phantom(1, p), DegenerateError);
}
