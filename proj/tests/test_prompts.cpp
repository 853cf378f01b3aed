#include "canopy/error.hpp"
#include "canopy/prompts.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace canopy;

namespace {

Detection det(double x0, double y0, double x1, double y1, double score) {
    return make_box_detection({x0, y0, x1, y1, Frame::image_px}, score,
                              DetectionSource::external_detector);
}

} // namespace

TEST_SUITE("prompts") {

TEST_CASE("grid_points examples") {
    const std::vector<PointPrompt> four = {{25, 25}, {75, 25}, {25, 75}, {75, 75}};
    CHECK(grid_points(100, 100, 2) == four);

    CHECK(grid_points(37, 91, 1) == std::vector<PointPrompt>{{18.5, 45.5}});

    const auto g = grid_points(512, 512, 32);
    REQUIRE(g.size() == 1024);
    CHECK(g.front() == PointPrompt{8, 8});
    CHECK(g[1].x - g[0].x == 16);
    CHECK(g[32].y - g[0].y == 16);
    CHECK(g.back() == PointPrompt{504, 504});
}

TEST_CASE("grid_points properties") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> side(1, 700), n(1, 40);
    for (int i = 0; i < 300; ++i) {
        const int w = side(rng), h = side(rng), k = n(rng);
        const auto g = grid_points(w, h, k);
        REQUIRE(g.size() == static_cast<std::size_t>(k) * k);
        for (const auto& p : g) {
            REQUIRE(p.x > 0);
            REQUIRE(p.y > 0);
            REQUIRE(p.x < w);
            REQUIRE(p.y < h);
        }
    }
    CHECK_THROWS_AS(grid_points(10, 10, 0), ConfigError);
    CHECK_THROWS_AS(grid_points(0, 10, 2), ConfigError);
}

TEST_CASE("boxes_from_detections examples") {
    const PixelWindow tile{0, 0, 100, 100};
    auto out = boxes_from_detections({det(10, 10, 20, 20, 0.9)}, tile, 0.1);
    REQUIRE(out.size() == 1);
    CHECK(out[0].bbox == BBox{10, 10, 20, 20, Frame::tile_px});
    CHECK(out[0].source_score == 0.9);

    CHECK(boxes_from_detections({det(200, 200, 220, 220, 0.9)}, tile, 0.1).empty());

    // Clipped part 10 x 10 = 100 of 40 x 40 = 1600.
    const double ratio = (100.0 - 90.0) * (100.0 - 90.0) / (40.0 * 40.0);
    CHECK(ratio < 0.5);
    CHECK(boxes_from_detections({det(90, 90, 130, 130, 0.9)}, tile, 0.1).empty());

    CHECK(boxes_from_detections({det(10, 10, 20, 20, 0.05)}, tile, 0.1).empty());
}

TEST_CASE("boxes are translated into the tile and clamped") {
    const PixelWindow tile{100, 200, 50, 50};
    // 60% inside along x.
    const auto out = boxes_from_detections({det(120, 210, 170, 220, 0.5)}, tile, 0.1);
    REQUIRE(out.size() == 1);
    CHECK(out[0].bbox == BBox{20, 10, 50, 20, Frame::tile_px});

    CHECK_THROWS_AS(boxes_from_detections({make_box_detection({0, 0, 1, 1, Frame::world}, 0.5,
                                                              DetectionSource::external_detector)},
                                          tile, 0.1),
                    FrameError);
}

TEST_CASE("boxes_from_detections properties") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> pos(-50, 250), size(1, 80), score(0, 1);
    for (int i = 0; i < 200; ++i) {
        std::vector<Detection> dets;
        for (int k = 0; k < 20; ++k) {
            const double x = pos(rng), y = pos(rng);
            dets.push_back(det(x, y, x + size(rng), y + size(rng), score(rng)));
        }
        const PixelWindow tile{30, 40, 120, 100};
        const auto out = boxes_from_detections(dets, tile, 0.3);
        REQUIRE(out.size() <= dets.size());
        for (const auto& b : out) {
            REQUIRE(b.bbox.frame == Frame::tile_px);
            REQUIRE(b.bbox.valid());
            REQUIRE(b.bbox.xmin >= 0);
            REQUIRE(b.bbox.ymin >= 0);
            REQUIRE(b.bbox.xmax <= tile.width);
            REQUIRE(b.bbox.ymax <= tile.height);
            REQUIRE(*b.source_score >= 0.3);
            // Back in the image frame it lies within some source box.
            const BBox img{b.bbox.xmin + tile.x0, b.bbox.ymin + tile.y0, b.bbox.xmax + tile.x0,
                           b.bbox.ymax + tile.y0};
            bool within = false;
            for (const auto& d : dets) {
                within |= img.xmin >= d.bbox.xmin && img.ymin >= d.bbox.ymin &&
                          img.xmax <= d.bbox.xmax && img.ymax <= d.bbox.ymax;
            }
            REQUIRE(within);
        }
    }
}

} // TEST_SUITE("prompts")
