#include "support.hpp"

#include "canopy/error.hpp"
#include "canopy/predictor.hpp"
#include "canopy/raster.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

using namespace canopy;
using canopy::test::TempDir;

namespace {

std::vector<std::string> lines_of(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

BinaryMask random_mask(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> side(1, 40);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    const int w = side(rng), h = side(rng);
    std::bernoulli_distribution on(density(rng));
    BinaryMask m(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.set(x, y, on(rng));
    }
    return m;
}

std::string fake(const std::string& mode) {
    return std::string(CANOPY_PYTHON) + " " + CANOPY_TEST_SOURCE_DIR +
           "/fake_predictor.py --mode " + mode;
}

PredictorRequest point_request(const std::string& id, const std::filesystem::path& image,
                               std::vector<PointPrompt> points) {
    PredictorRequest r;
    r.request_id = id;
    r.image_path = image.string();
    r.prompts.points = std::move(points);
    return r;
}

} // namespace

TEST_SUITE("predictor") {

TEST_CASE("rle examples") {
    const BinaryMask m(2, 2, {0, 1, 1, 0});
    CHECK(rle_encode(m).runs == std::vector<std::uint64_t>{1, 2, 1});
    CHECK(rle_encode(BinaryMask(2, 2, {1, 1, 1, 1})).runs == std::vector<std::uint64_t>{0, 4});

    CHECK(rle_decode({2, 2, {1, 2, 1}}) == m);
    CHECK(rle_decode({2, 2, {4}}) == BinaryMask(2, 2));
    CHECK_THROWS_AS(rle_decode({2, 2, {1, 2, 2}}), CodecError);
    CHECK_THROWS_AS(rle_decode({2, 2, {1, 0, 3}}), CodecError);
    CHECK_THROWS_AS(rle_decode({2, 2, {}}), CodecError);
}

TEST_CASE("rle round trip on random masks") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 1000; ++i) {
        const auto m = random_mask(rng);
        const auto rle = rle_encode(m);
        std::uint64_t sum = 0;
        for (std::size_t k = 0; k < rle.runs.size(); ++k) {
            if (k > 0) REQUIRE(rle.runs[k] > 0);
            sum += rle.runs[k];
        }
        REQUIRE(sum == static_cast<std::uint64_t>(m.width()) * m.height());
        REQUIRE(rle_decode(rle) == m);
    }
}

TEST_CASE("golden request lines") {
    const auto lines = lines_of(test::golden_dir() / "predictor_request.jsonl");
    REQUIRE(lines.size() == 2);

    PredictorRequest a;
    a.request_id = "scene/tile-3";
    a.image_path = "work/tile-3.png";
    a.prompts.points = {{8, 8}, {24, 8}, {8, 24}, {24, 24}};
    PredictorRequest b;
    b.request_id = "scene/tile-4";
    b.image_path = "work/tile-4.png";
    b.prompts.boxes = {{{10, 12.5, 40, 44.25, Frame::tile_px}, std::nullopt},
                       {{0, 0, 16, 16, Frame::tile_px}, std::nullopt}};
    b.params = {{"model", "sam2-hiera-large"}, {"multimask", "false"}};

    CHECK(serialize_request(a) == lines[0]);
    CHECK(serialize_request(b) == lines[1]);
    CHECK(parse_request(lines[0]) == a);
    CHECK(parse_request(lines[1]) == b);
    for (const auto& line : lines) CHECK(serialize_request(parse_request(line)) == line);
}

TEST_CASE("golden response lines") {
    const auto lines = lines_of(test::golden_dir() / "predictor_response.jsonl");
    REQUIRE(lines.size() == 3);

    PredictorResponse a{"scene/tile-3", {{{4, 3, {1, 2, 2, 2, 5}}, 0.75, std::nullopt}}};
    PredictorResponse b{"scene/tile-4", {{{4, 3, {0, 4, 8}}, 1.0, 0}, {{4, 3, {10, 2}}, 0.5, 1}}};
    PredictorResponse c{"scene/tile-5", {}};
    CHECK(serialize_response(a) == lines[0]);
    CHECK(serialize_response(b) == lines[1]);
    CHECK(serialize_response(c) == lines[2]);
    for (const auto& line : lines) CHECK(serialize_response(parse_response(line)) == line);

    const auto err = lines_of(test::golden_dir() / "predictor_error.jsonl");
    REQUIRE(err.size() == 1);
    try {
        parse_response(err[0]);
        FAIL("expected PredictorError");
    } catch (const PredictorError& e) {
        CHECK(std::string(e.what()).find("CUDA out of memory") != std::string::npos);
    }
}

TEST_CASE("protocol round trip on random values") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> coord(0, 1024), unit(0, 1);
    std::uniform_int_distribution<int> count(0, 6);
    for (int i = 0; i < 300; ++i) {
        PredictorRequest req;
        req.request_id = "img \"" + std::to_string(i) + "\"/tile-" + std::to_string(i);
        req.image_path = "/tmp/dir with space/tile.png";
        for (int k = count(rng); k-- > 0;) req.prompts.points.push_back({coord(rng), coord(rng)});
        for (int k = count(rng); k-- > 0;) {
            const double x = coord(rng), y = coord(rng);
            req.prompts.boxes.push_back(
                {{x, y, x + 1 + coord(rng), y + 1 + coord(rng), Frame::tile_px}, std::nullopt});
        }
        if (i % 3 == 0) req.params["k" + std::to_string(i)] = "v\n" + std::to_string(i);
        const auto line = serialize_request(req);
        REQUIRE(line.find('\n') == std::string::npos);
        REQUIRE(parse_request(line) == req);
        REQUIRE(serialize_request(parse_request(line)) == line);

        PredictorResponse resp;
        resp.request_id = req.request_id;
        for (int k = count(rng); k-- > 0;) {
            const auto m = random_mask(rng);
            std::optional<int> idx;
            if (k % 2) idx = k;
            resp.segments.push_back({rle_encode(m), unit(rng), idx});
        }
        const auto rline = serialize_response(resp);
        REQUIRE(parse_response(rline) == resp);
        REQUIRE(serialize_response(parse_response(rline)) == rline);
    }
}

TEST_CASE("malformed protocol lines") {
    CHECK_THROWS_AS(parse_response("{\"request_id\":\"a\""), ProtocolError);
    CHECK_THROWS_AS(parse_response("[]"), ProtocolError);
    CHECK_THROWS_AS(parse_response("{\"request_id\":\"a\"}"), ProtocolError);
    CHECK_THROWS_AS(
        parse_response("{\"request_id\":\"a\",\"segments\":[{\"rle\":{\"width\":2,\"height\":2,"
                       "\"runs\":[1,-1]},\"score\":0.5,\"prompt_index\":null}]}"),
        ProtocolError);
    CHECK_THROWS_AS(parse_request("{\"image_path\":\"x\"}"), ProtocolError);
    try {
        parse_response("{\"request_id\":\"a\",");
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
}

TEST_CASE("oracle examples") {
    const RasterImage black(32, 32, 3, std::vector<std::uint8_t>(32 * 32 * 3, 0));
    PromptSet points;
    points.points = {{5, 5}, {16, 16}};
    CHECK(oracle_segment(black, points).segments.empty());

    // White 10 x 10 square at (20, 20).
    std::vector<std::uint8_t> px(64 * 64 * 3, 0);
    BinaryMask square(64, 64);
    for (int y = 20; y < 30; ++y) {
        for (int x = 20; x < 30; ++x) {
            square.set(x, y);
            for (int c = 0; c < 3; ++c) px[(y * 64 + x) * 3 + c] = 255;
        }
    }
    const RasterImage sq(64, 64, 3, px);
    PromptSet one;
    one.points = {{25, 25}};
    auto r = oracle_segment(sq, one);
    REQUIRE(r.segments.size() == 1);
    CHECK(rle_decode(r.segments[0].rle) == square);
    CHECK(r.segments[0].score == 1.0);
    CHECK_FALSE(r.segments[0].prompt_index);

    // Disk radius 10: fill ratio against the pixel-count oracle.
    const auto scene = test::make_disk_scene(40, 40, {{20, 20, 10}});
    PromptSet box;
    box.boxes = {{{10, 10, 30, 30, Frame::tile_px}, 0.9}};
    r = oracle_segment(scene.image, box);
    REQUIRE(r.segments.size() == 1);
    CHECK(r.segments[0].prompt_index == 0);
    const auto mask = rle_decode(r.segments[0].rle);
    CHECK(mask.count() == scene.pixel_counts[0]);
    const double oracle = static_cast<double>(scene.pixel_counts[0]) / (20.0 * 20.0);
    CHECK(r.segments[0].score == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(std::abs(r.segments[0].score - 3.14159265358979 / 4) <= 0.05);
}

TEST_CASE("oracle box prompts clip to the box and take precedence") {
    const auto scene = test::make_disk_scene(60, 60, {{20, 20, 10}, {45, 45, 8}});
    PromptSet p;
    p.points = {{45, 45}};
    p.boxes = {{{0, 0, 20, 60, Frame::tile_px}, std::nullopt},
               {{50, 50, 60, 60, Frame::tile_px}, std::nullopt},
               {{0, 40, 10, 60, Frame::tile_px}, std::nullopt}};
    const auto r = oracle_segment(scene.image, p);
    REQUIRE(r.segments.size() == 2); // third box is empty
    CHECK(r.segments[0].prompt_index == 0);
    CHECK(r.segments[1].prompt_index == 1);
    const auto left = rle_decode(r.segments[0].rle);
    for (int y = 0; y < 60; ++y) {
        for (int x = 0; x < 60; ++x) {
            REQUIRE(left.get(x, y) == (x < 20 && test::disk_covers(scene.disks[0], x, y)));
        }
    }
}

TEST_CASE("oracle points: each component once, deterministic, single components") {
    const auto scene = test::make_disk_scene(80, 40, {{15, 20, 9}, {55, 20, 12}});
    PromptSet p;
    p.points = {{15, 20}, {16, 21}, {55, 20}, {2, 2}};
    const auto r = oracle_segment(scene.image, p);
    REQUIRE(r.segments.size() == 2);
    CHECK(serialize_response(r) == serialize_response(oracle_segment(scene.image, p)));
    for (const auto& s : r.segments) {
        const auto m = rle_decode(s.rle);
        CHECK(largest_component(m) == m);
    }
}

TEST_CASE("segment validates requests and responses") {
    const auto scene = test::make_disk_scene(32, 32, {{16, 16, 6}});
    OraclePredictor oracle;
    PredictorRequest empty;
    empty.request_id = "r";
    CHECK_THROWS_AS(segment(oracle, empty, scene.image), ProtocolError);

    auto outside = point_request("r", "x.png", {{40, 4}});
    CHECK_THROWS_AS(segment(oracle, outside, scene.image), ProtocolError);

    auto ok = point_request("r", "x.png", {{16, 16}});
    const auto resp = segment(oracle, ok, scene.image);
    CHECK(resp.request_id == "r");
    CHECK(resp.segments.size() == 1);

    struct Liar : Predictor {
        PredictorResponse reply;
        std::string identity() const override { return "liar"; }
        bool needs_image_file() const override { return false; }
        PredictorResponse predict(const PredictorRequest&, const RasterImage&) override {
            return reply;
        }
    } liar;
    liar.reply = {"other", {}};
    CHECK_THROWS_AS(segment(liar, ok, scene.image), ProtocolError);
    liar.reply = {"r", {{rle_encode(BinaryMask(31, 32)), 0.5, std::nullopt}}};
    CHECK_THROWS_AS(segment(liar, ok, scene.image), ProtocolError);
    liar.reply = {"r", {{rle_encode(BinaryMask(32, 32)), 1.5, std::nullopt}}};
    CHECK_THROWS_AS(segment(liar, ok, scene.image), ProtocolError);

    PredictorRequest boxes = ok;
    boxes.prompts.points.clear();
    boxes.prompts.boxes = {{{10, 10, 20, 20, Frame::tile_px}, std::nullopt}};
    liar.reply = {"r", {{rle_encode(BinaryMask(32, 32)), 0.5, std::nullopt}}};
    CHECK_THROWS_AS(segment(liar, boxes, scene.image), ProtocolError);
    liar.reply = {"r", {{rle_encode(BinaryMask(32, 32)), 0.5, 3}}};
    CHECK_THROWS_AS(segment(liar, boxes, scene.image), ProtocolError);
}

TEST_CASE("make_predictor") {
    CHECK(make_predictor("oracle")->identity() == "oracle:luminance>=128");
    CHECK(make_predictor("oracle:200")->identity() == "oracle:luminance>=200");
    CHECK_THROWS_AS(make_predictor("oracle:abc"), ConfigError);
    CHECK_THROWS_AS(make_predictor("oracle:300"), ConfigError);
    CHECK(make_predictor("python3 serve.py")->identity() == "subprocess:python3 serve.py");
}

TEST_CASE("subprocess predictor agrees with the built-in oracle") {
    TempDir tmp;
    const auto scene = test::make_disk_scene(48, 40, {{12, 12, 7}, {34, 26, 9}, {13, 32, 4}});
    write_png(scene.image, tmp / "tile.png");

    SubprocessPredictor sub(fake("normal"), std::chrono::seconds(60));
    OraclePredictor oracle;
    std::vector<PredictorRequest> requests;
    requests.push_back(point_request("a/tile-0", tmp / "tile.png", {{12, 12}, {34, 26}, {1, 1}}));
    requests.push_back(point_request("a/tile-1", tmp / "tile.png", {{13, 32}, {12, 12}}));
    PredictorRequest boxes;
    boxes.request_id = "a/tile-2";
    boxes.image_path = (tmp / "tile.png").string();
    boxes.prompts.boxes = {{{0, 0, 24, 20, Frame::tile_px}, std::nullopt},
                           {{30.5, 20.5, 48, 40, Frame::tile_px}, std::nullopt}};
    requests.push_back(boxes);

    // Several requests through one process.
    for (const auto& req : requests) {
        const auto a = segment(sub, req);
        const auto b = segment(oracle, req);
        CHECK(a == b);
    }
}

TEST_CASE("subprocess failures surface as predictor errors") {
    TempDir tmp;
    const auto scene = test::make_disk_scene(16, 16, {{8, 8, 4}});
    write_png(scene.image, tmp / "tile.png");
    const auto req = point_request("a/tile-0", tmp / "tile.png", {{8, 8}});

    auto expect = [&](const std::string& mode, std::chrono::milliseconds timeout,
                      const std::string& needle, bool protocol) {
        CAPTURE(mode);
        SubprocessPredictor sub(fake(mode), timeout);
        try {
            segment(sub, req);
            FAIL("expected failure");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::predictor);
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
            if (protocol) CHECK(dynamic_cast<const ProtocolError*>(&e) != nullptr);
        }
    };
    expect("crash", std::chrono::seconds(30), "model exploded", false);
    expect("error", std::chrono::seconds(30), "CUDA out of memory", false);
    expect("garbage", std::chrono::seconds(30), "malformed", true);
    expect("wrong-id", std::chrono::seconds(30), "request", true);
    expect("bad-dims", std::chrono::seconds(30), "", true);

    const auto start = std::chrono::steady_clock::now();
    expect("hang", std::chrono::milliseconds(1500), "timed out", false);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(20));

    SubprocessPredictor missing("/nonexistent/predictor-binary", std::chrono::seconds(10));
    CHECK_THROWS_AS(segment(missing, req), PredictorError);
}

} // TEST_SUITE("predictor")
