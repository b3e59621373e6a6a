#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "lrformer/errors.hpp"
#include "lrformer/io.hpp"
#include "test_util.hpp"

using namespace lrf;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& header, std::vector<std::uint8_t> payload = {}) {
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "lrformer_test_io";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("single white PPM pixel") {
    auto img = parse_ppm(bytes_of("P6\n1 1\n255\n", {255, 255, 255}));
    CHECK(img.shape() == Shape{3, 1, 1});
    for (float v : img.data()) CHECK(v == 1.0f);
}

TEST_CASE("PPM channel layout and header comments") {
    auto img = parse_ppm(bytes_of("P6 # comment\n2 # w\n1\n255\n", {255, 0, 51, 0, 102, 255}));
    CHECK(img.shape() == Shape{3, 1, 2});
    CHECK(img.at({0, 0, 0}) == 1.0f);
    CHECK(img.at({2, 0, 0}) == doctest::Approx(0.2f));
    CHECK(img.at({1, 0, 1}) == doctest::Approx(0.4f));
    CHECK(img.at({2, 0, 1}) == 1.0f);
}

TEST_CASE("image round trip") {
    Tensor img({3, 5, 7});
    auto d = img.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = float((i * 37) % 256) / 255.0f;
    const auto path = (temp_dir() / "img.ppm").string();
    write_image(path, img);
    auto back = read_image(path);
    CHECK(back.shape() == img.shape());
    CHECK(lrf::test::max_abs_diff(back, img) == 0.0);
}

TEST_CASE("hand-crafted PGM mask") {
    auto m = parse_pgm(bytes_of("P5\n2 2\n255\n", {0, 1, 1, 0}));
    CHECK(m.height == 2);
    CHECK(m.width == 2);
    CHECK(m.labels == std::vector<std::int32_t>{0, 1, 1, 0});
    CHECK(m.at(1, 0) == 1);
    const auto path = (temp_dir() / "mask.pgm").string();
    write_mask(path, m);
    CHECK(read_mask(path, 2).labels == m.labels);
    CHECK_THROWS_AS(read_mask(path, 1), DataError);
}

TEST_CASE("malformed netpbm files report byte offsets") {
    CHECK(error_of([] { parse_ppm(bytes_of("P5\n1 1\n255\n", {0})); }).find("bad magic") != std::string::npos);
    CHECK(error_of([] { parse_ppm(bytes_of("P6\n1 1\n255\n", {0})); }).find("truncated payload") != std::string::npos);
    CHECK(error_of([] { parse_ppm(bytes_of("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})); }) ==
          "PPM: maxval 65535 is not 255 at byte 7");
    CHECK(error_of([] { parse_pgm(bytes_of("P5\n2 x\n255\n")); }) == "PGM: expected height at byte 5");
    CHECK(error_of([] { parse_pgm(bytes_of("P5\n2 2\n")); }).find("missing maxval") != std::string::npos);
    CHECK(error_of([] { parse_pgm(bytes_of("P5\n1 1\n255\n", {0, 0})); }) == "PGM: trailing data at byte 12");
    CHECK_THROWS_AS(parse_pgm(bytes_of("P5\n0 1\n255\n")), FormatError);
    CHECK_THROWS_AS(read_image((temp_dir() / "missing.ppm").string()), FormatError);
    CHECK(error_of([] { parse_pgm(bytes_of("P5\n1 2\n255\n", {0, 7}), 2); }).find("byte 12") != std::string::npos);
}

TEST_CASE("weights round trip bit-identically") {
    auto m = build_variant("micro", Task::segmentation, 2, 3);
    const auto bytes = serialize_weights(m.params);
    const auto back = parse_weights(bytes);
    REQUIRE(back.size() == m.params.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        const auto& [n1, t1] = m.params.entries()[i];
        const auto& [n2, t2] = back.entries()[i];
        CHECK(n1 == n2);
        CHECK(t1.shape() == t2.shape());
        CHECK(std::memcmp(t1.data().data(), t2.data().data(), 4 * t1.numel()) == 0);
    }
    CHECK(serialize_weights(back) == bytes);

    const auto path = (temp_dir() / "w.lrw").string();
    save_weights(m.params, path);
    CHECK(read_file(path) == bytes);
    auto loaded = load_model(m.spec, path);
    CHECK(serialize_weights(loaded.params) == bytes);
}

TEST_CASE("weight file size has a closed form") {
    auto spec = variant_spec("micro", Task::segmentation, 2);
    ParamStore ps;
    declare_params(ps, spec);
    std::size_t expected = 4 + 4 + 4;
    for (const auto& [name, t] : ps.entries()) expected += 4 + name.size() + 1 + 4 + 8 * t.rank() + 4 * t.numel();
    CHECK(serialize_weights(ps).size() == expected);
}

TEST_CASE("corrupt weight files are rejected") {
    ParamStore ps;
    ps.add("a.weight", Tensor({2, 3}, 0.5f));
    ps.add("a.bias", Tensor({3}, 0.25f));
    const auto good = serialize_weights(ps);

    auto truncated = good;
    truncated.resize(good.size() - 5);
    CHECK(error_of([&] { parse_weights(truncated); }).find("entry 1 'a.bias' values") != std::string::npos);
    truncated.resize(20);
    CHECK(error_of([&] { parse_weights(truncated); }).find("entry 0 name") != std::string::npos);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(error_of([&] { parse_weights(bad_magic); }).find("bad magic") != std::string::npos);

    auto bad_version = good;
    bad_version[4] = 9;
    CHECK(error_of([&] { parse_weights(bad_version); }).find("unsupported version 9") != std::string::npos);

    auto bad_dtype = good;
    bad_dtype[12 + 4 + 8] = 3;  // dtype byte of the first entry
    CHECK(error_of([&] { parse_weights(bad_dtype); }).find("'a.weight' has unknown dtype code 3") !=
          std::string::npos);

    auto trailing = good;
    trailing.push_back(0);
    CHECK(error_of([&] { parse_weights(trailing); }).find("trailing") != std::string::npos);

    ParamStore dup;
    dup.add("x", Tensor({1}));
    auto dup_bytes = serialize_weights(dup);
    auto entry = std::vector<std::uint8_t>(dup_bytes.begin() + 12, dup_bytes.end());
    dup_bytes.insert(dup_bytes.end(), entry.begin(), entry.end());
    dup_bytes[8] = 2;
    CHECK(error_of([&] { parse_weights(dup_bytes); }).find("duplicate") != std::string::npos);
}

TEST_CASE("weights from another variant do not load") {
    const auto path = (temp_dir() / "micro2.lrw").string();
    save_weights(build_variant("micro", Task::segmentation, 2, 0).params, path);
    CHECK(error_of([&] { load_model(variant_spec("micro", Task::segmentation, 3), path); })
              .find("shape mismatch for 'decoder.classifier.weight'") != std::string::npos);
    CHECK_THROWS_AS(load_model(variant_spec("micro", Task::classification, 2), path), FormatError);
    auto other = variant_spec("micro", Task::segmentation, 2);
    other.stages[0].channels = 32;
    CHECK(error_of([&] { load_model(other, path); }).find("shape mismatch for 'stem.conv.weight'") !=
          std::string::npos);
}
