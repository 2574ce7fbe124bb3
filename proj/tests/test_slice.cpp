#include <random>

#include "doctest.h"
#include "segqa/error.hpp"
#include "segqa/slice.hpp"

using namespace segqa;

TEST_CASE("a constant volume at the level renders as 128") {
    const VoxelVolume v({5, 4, 3}, {1, 1, 1}, {}, 35.0);
    for (Axis a : {Axis::kAxial, Axis::kCoronal, Axis::kSagittal}) {
        const auto s = render_slice(v, std::nullopt, a, 1, WindowSpec{});
        const auto px = base64_decode(s.pixels);
        CHECK(px.size() == s.width * s.height);
        for (auto p : px) CHECK(p == 128);
        REQUIRE(s.overlay.size() == 1);
        CHECK(s.overlay[0] == RleRun{0, static_cast<std::uint32_t>(s.width * s.height)});
    }
    CHECK(quantize_unit(0.5) == 128);
    CHECK(quantize_unit(0.0) == 0);
    CHECK(quantize_unit(1.0) == 255);
}

TEST_CASE("slice dimensions and bounds") {
    const VoxelVolume v({5, 4, 3});
    const auto ax = render_slice(v, std::nullopt, Axis::kAxial, 2, WindowSpec{});
    CHECK(ax.width == 5);
    CHECK(ax.height == 4);
    const auto co = render_slice(v, std::nullopt, Axis::kCoronal, 3, WindowSpec{});
    CHECK(co.width == 5);
    CHECK(co.height == 3);
    const auto sa = render_slice(v, std::nullopt, Axis::kSagittal, 4, WindowSpec{});
    CHECK(sa.width == 4);
    CHECK(sa.height == 3);

    CHECK_THROWS_AS(render_slice(v, std::nullopt, Axis::kAxial, 3, WindowSpec{}), BoundsError);
    try {
        render_slice(v, std::nullopt, Axis::kSagittal, 9, WindowSpec{});
    } catch (const BoundsError& e) {
        CHECK(std::string(e.what()).find("extent 5") != std::string::npos);
    }
    CHECK_THROWS_AS(render_slice(v, LabelMap({5, 4, 4}), Axis::kAxial, 0, WindowSpec{}), ShapeError);
    CHECK(axis_from_string("coronal") == Axis::kCoronal);
    CHECK_THROWS_AS(axis_from_string("oblique"), InvalidArgument);
}

TEST_CASE("pixels equal the quantized window output on a random volume") {
    std::mt19937_64 gen(6);
    std::uniform_real_distribution<double> hu(-200.0, 300.0);
    std::uniform_int_distribution<int> code(0, 3);
    VoxelVolume v({4, 4, 4});
    LabelMap l({4, 4, 4});
    for (auto& x : v.data()) x = hu(gen);
    for (auto& x : l.data()) x = static_cast<std::uint16_t>(code(gen));
    const WindowSpec w{190.0, 35.0};
    const auto windowed = apply_window(v, w);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto ax = render_slice(v, l, Axis::kAxial, k, w);
        const auto px = base64_decode(ax.pixels);
        const auto codes = rle_decode(ax.overlay, 16);
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) {
                CHECK(px[y * 4 + x] == quantize_unit(windowed.at(x, y, k)));
                CHECK(codes[y * 4 + x] == l.at(x, y, k));
            }
        const auto co = render_slice(v, l, Axis::kCoronal, k, w);
        const auto cpx = base64_decode(co.pixels);
        for (std::size_t z = 0; z < 4; ++z)
            for (std::size_t x = 0; x < 4; ++x)
                CHECK(cpx[z * 4 + x] == quantize_unit(windowed.at(x, k, z)));
        const auto sa = render_slice(v, l, Axis::kSagittal, k, w);
        const auto spx = base64_decode(sa.pixels);
        const auto scodes = rle_decode(sa.overlay, 16);
        for (std::size_t z = 0; z < 4; ++z)
            for (std::size_t y = 0; y < 4; ++y) {
                CHECK(spx[z * 4 + y] == quantize_unit(windowed.at(k, y, z)));
                CHECK(scodes[z * 4 + y] == l.at(k, y, z));
            }
    }
}

TEST_CASE("run-length coding") {
    const std::vector<std::uint16_t> codes{0, 0, 0, 2, 2, 3, 0, 0};
    const auto runs = rle_encode(codes);
    CHECK(runs == std::vector<RleRun>{{0, 3}, {2, 2}, {3, 1}, {0, 2}});
    CHECK(rle_decode(runs, 8) == codes);
    CHECK_THROWS_AS(rle_decode(runs, 9), InvalidArgument);
    const std::vector<RleRun> zero{{1, 0}, {0, 8}};
    CHECK_THROWS_AS(rle_decode(zero, 8), InvalidArgument);
    CHECK(rle_encode(std::vector<std::uint16_t>{}).empty());

    std::mt19937_64 gen(3);
    std::uniform_int_distribution<int> c(0, 2), n(0, 200);
    for (int t = 0; t < 200; ++t) {
        std::vector<std::uint16_t> v(static_cast<std::size_t>(n(gen)));
        for (auto& x : v) x = static_cast<std::uint16_t>(c(gen));
        const auto r = rle_encode(v);
        std::size_t sum = 0;
        for (const auto& run : r) sum += run.run;
        CHECK(sum == v.size());
        CHECK(rle_decode(r, v.size()) == v);
    }
}

TEST_CASE("base64 known vectors and round trips") {
    auto enc = [](const std::string& s) {
        return base64_encode(std::vector<std::uint8_t>(s.begin(), s.end()));
    };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foo") == "Zm9v");
    CHECK(enc("foobar") == "Zm9vYmFy");
    const std::vector<std::uint8_t> hi{0xff, 0xfe, 0x00};
    CHECK(base64_encode(hi) == "//4A");
    CHECK_THROWS_AS(base64_decode("Zm9"), FormatError);
    CHECK_THROWS_AS(base64_decode("Zm9*"), FormatError);
    CHECK_THROWS_AS(base64_decode("Z==="), FormatError);

    std::mt19937_64 gen(1);
    std::uniform_int_distribution<int> b(0, 255), n(0, 100);
    for (int t = 0; t < 300; ++t) {
        std::vector<std::uint8_t> v(static_cast<std::size_t>(n(gen)));
        for (auto& x : v) x = static_cast<std::uint8_t>(b(gen));
        CHECK(base64_decode(base64_encode(v)) == v);
    }
}
