#include <set>

#include "doctest.h"

#include "mm/trajgeo.hpp"
#include "test_support.hpp"

using namespace mm;
using mmtest::square_mask;

TEST_CASE("extract_bbox on an L-shaped mask") {
    // Foreground: a vertical bar at x=1 for y in [1, 4] plus a foot at (4, 2).
    Tensor mask = Tensor::zeros({6, 6});
    mask.at(1, 1) = 1.0;
    mask.at(2, 1) = 1.0;
    mask.at(3, 1) = 1.0;
    mask.at(4, 1) = 1.0;
    mask.at(4, 2) = 1.0;
    CHECK(extract_bbox(mask) == std::array<int64_t, 4>{1, 1, 2, 4});

    CHECK(extract_bbox(square_mask(8, 8, 3, 2, 2)) == std::array<int64_t, 4>{3, 2, 4, 3});
    // Single pixel: degenerate box.
    CHECK(extract_bbox(square_mask(8, 8, 5, 6, 1)) == std::array<int64_t, 4>{5, 6, 5, 6});

    CHECK_THROWS_AS(extract_bbox(Tensor::zeros({4, 4})), EmptyMask);
    CHECK_THROWS_AS(extract_bbox(Tensor::zeros({2, 3, 4})), ShapeError);
}

TEST_CASE("palette colors are distinct, non-black, bit-spread") {
    const auto palette = assign_palette(255);
    std::set<std::array<int, 3>> seen;
    for (const auto& c : palette) {
        CHECK(seen.insert(c).second);
        CHECK((c[0] != 0 || c[1] != 0 || c[2] != 0));
    }
    // The classic 8-bit spread assigns the id's low bits to the most
    // significant bit of each channel in turn.
    CHECK(palette[0] == std::array<int, 3>{128, 0, 0});
    CHECK(palette[1] == std::array<int, 3>{0, 128, 0});
    CHECK(palette[2] == std::array<int, 3>{128, 128, 0});
    CHECK(palette[3] == std::array<int, 3>{0, 0, 128});

    CHECK(assign_palette(0).empty());
    CHECK_THROWS_AS(assign_palette(256), PaletteExhausted);
}

namespace {

TrajectorySet two_square_traj() {
    // Two 2x2 squares on an 8x8 canvas over 3 frames; object 1 moves right,
    // object 2 sits still.
    TrajectorySet ts;
    ts.T = 3;
    ts.H = 8;
    ts.W = 8;
    for (int id = 1; id <= 2; ++id) {
        ObjectTrack tr;
        tr.object_id = id;
        tr.color = assign_palette(2)[id - 1];
        for (int64_t f = 0; f < 3; ++f) {
            const int64_t x = id == 1 ? f : 5, y = id == 1 ? 0 : 5;
            FrameAnnotation ann;
            ann.frame_index = f;
            ann.mask = square_mask(8, 8, x, y, 2);
            ann.bbox = std::array<int64_t, 4>{x, y, x + 1, y + 1};
            tr.frames.push_back(std::move(ann));
        }
        ts.tracks.push_back(std::move(tr));
    }
    return ts;
}

}  // namespace

TEST_CASE("render_mask_map paints colors on annotated frames only") {
    TrajectorySet ts = two_square_traj();
    ts.tracks[0].frames.pop_back();  // object 1 not annotated on frame 2
    const VideoClip map = render_mask_map(ts);
    REQUIRE(map.shape == std::vector<int64_t>{3, 8, 8, 3});

    const auto c1 = ts.tracks[0].color, c2 = ts.tracks[1].color;
    CHECK(map.at(0, 0, 0, 0) == doctest::Approx(c1[0] / 255.0));
    CHECK(map.at(0, 5, 5, 1) == doctest::Approx(c2[1] / 255.0));
    // Frame 2: object 1 unannotated, its old pixels are background.
    CHECK(map.at(2, 0, 2, 0) == 0.0);
    CHECK(map.at(2, 5, 5, 1) == doctest::Approx(c2[1] / 255.0));
    // Background stays black.
    CHECK(map.at(0, 7, 0, 0) == 0.0);
}

TEST_CASE("render_mask_map: overlapping objects painted in ascending id order") {
    TrajectorySet ts;
    ts.T = 1;
    ts.H = 4;
    ts.W = 4;
    for (int id = 1; id <= 2; ++id) {
        ObjectTrack tr;
        tr.object_id = id;
        tr.color = assign_palette(2)[id - 1];
        FrameAnnotation ann;
        ann.frame_index = 0;
        ann.mask = square_mask(4, 4, 0, 0, 2);  // same pixels for both
        tr.frames.push_back(std::move(ann));
        ts.tracks.push_back(std::move(tr));
    }
    std::swap(ts.tracks[0], ts.tracks[1]);  // storage order must not matter
    const VideoClip map = render_mask_map(ts);
    // Higher id paints last and wins the overlap.
    CHECK(map.at(0, 0, 0, 1) == doctest::Approx(128.0 / 255.0));
    CHECK(map.at(0, 0, 0, 0) == 0.0);
}

TEST_CASE("render_mask_map needs a mask on every annotated frame") {
    TrajectorySet ts = two_square_traj();
    ts.tracks[0].frames[1].mask.reset();  // box-only annotation
    CHECK_THROWS_AS(render_mask_map(ts), InputError);
}

TEST_CASE("render_box_map: frame 0 renders the mask, later frames fill boxes") {
    TrajectorySet ts;
    ts.T = 2;
    ts.H = 8;
    ts.W = 8;
    ObjectTrack tr;
    tr.object_id = 1;
    tr.color = {128, 0, 0};
    // Frame 0: an L-shaped mask whose tight box covers more than the mask.
    Tensor mask = Tensor::zeros({8, 8});
    mask.at(0, 0) = 1.0;
    mask.at(1, 0) = 1.0;
    mask.at(1, 1) = 1.0;
    FrameAnnotation a0;
    a0.frame_index = 0;
    a0.mask = mask;
    tr.frames.push_back(a0);
    FrameAnnotation a1;
    a1.frame_index = 1;
    a1.bbox = std::array<int64_t, 4>{2, 2, 4, 3};
    tr.frames.push_back(a1);
    ts.tracks.push_back(tr);

    const VideoClip map = render_box_map(ts);
    // Frame 0 follows the mask, not its box: (0, 1) is off.
    CHECK(map.at(0, 0, 0, 0) == doctest::Approx(128.0 / 255.0));
    CHECK(map.at(0, 0, 1, 0) == 0.0);
    // Frame 1 is a filled rectangle.
    for (int64_t y = 2; y <= 3; ++y) {
        for (int64_t x = 2; x <= 4; ++x) CHECK(map.at(1, y, x, 0) == doctest::Approx(128.0 / 255.0));
    }
    CHECK(map.at(1, 1, 1, 0) == 0.0);
}

TEST_CASE("render_box_map derives boxes from masks when bbox is absent") {
    TrajectorySet ts = two_square_traj();
    for (auto& tr : ts.tracks) {
        for (auto& fa : tr.frames) fa.bbox.reset();
    }
    const VideoClip map = render_box_map(ts);
    // Square masks: box fill equals the mask fill.
    CHECK(map.at(1, 0, 1, 0) == doctest::Approx(128.0 / 255.0));
    CHECK(map.at(2, 5, 6, 1) == doctest::Approx(128.0 / 255.0));
}

TEST_CASE("render maps reject out-of-canvas annotations") {
    TrajectorySet ts = two_square_traj();
    ts.tracks[0].frames[1].bbox = std::array<int64_t, 4>{5, 5, 8, 8};  // x1 = W
    ts.tracks[0].frames[1].mask.reset();
    CHECK_THROWS_AS(render_box_map(ts), OutOfBounds);

    TrajectorySet ts2 = two_square_traj();
    ts2.tracks[0].frames[1].frame_index = 99;
    CHECK_THROWS_AS(render_mask_map(ts2), OutOfBounds);
}

namespace {

ObjectTrack five_frame_track() {
    ObjectTrack tr;
    tr.object_id = 1;
    tr.color = {128, 0, 0};
    for (int64_t f = 0; f < 5; ++f) {
        FrameAnnotation ann;
        ann.frame_index = f;
        ann.mask = square_mask(8, 8, f, 0, 2);
        ann.bbox = std::array<int64_t, 4>{f, 0, f + 1, 1};
        tr.frames.push_back(std::move(ann));
    }
    return tr;
}

std::vector<int64_t> kept_frames(const ObjectTrack& tr) {
    std::vector<int64_t> out;
    for (const FrameAnnotation& fa : tr.frames) out.push_back(fa.frame_index);
    return out;
}

}  // namespace

TEST_CASE("sparsify keeps evenly spaced frames with pinned endpoints") {
    TrajectorySet ts;
    ts.T = 5;
    ts.H = 8;
    ts.W = 8;
    ts.tracks.push_back(five_frame_track());

    const TrajectorySet s3 = sparsify(ts, 3);
    CHECK(kept_frames(s3.tracks[0]) == std::vector<int64_t>{0, 2, 4});
    // Frame 0 keeps its mask; later kept frames are box-only.
    CHECK(s3.tracks[0].frames[0].mask.has_value());
    CHECK_FALSE(s3.tracks[0].frames[1].mask.has_value());
    CHECK(s3.tracks[0].frames[1].bbox == std::array<int64_t, 4>{2, 0, 3, 1});

    CHECK(kept_frames(sparsify(ts, 2).tracks[0]) == std::vector<int64_t>{0, 4});
    CHECK(kept_frames(sparsify(ts, 1).tracks[0]) == std::vector<int64_t>{0});
    CHECK(kept_frames(sparsify(ts, 5).tracks[0]) == std::vector<int64_t>{0, 1, 2, 3, 4});

    // Even spacing rounds to the nearest position: 4 of 5 picks {0, 1, 3, 4}
    // (4/3 -> 1, 8/3 -> 3).
    CHECK(kept_frames(sparsify(ts, 4).tracks[0]) == std::vector<int64_t>{0, 1, 3, 4});

    CHECK_THROWS_AS(sparsify(ts, 0), InvalidSparsity);
    CHECK_THROWS_AS(sparsify(ts, 10), InvalidSparsity);
    CHECK_THROWS_AS(sparsify(ts, 6), InputError);  // only 5 annotated frames
}

TEST_CASE("validate_trajectory enforces the structural contract") {
    CHECK_NOTHROW(validate_trajectory(two_square_traj()));

    TrajectorySet dup = two_square_traj();
    dup.tracks[1].object_id = 1;
    CHECK_THROWS_AS(validate_trajectory(dup), InputError);

    TrajectorySet order = two_square_traj();
    std::swap(order.tracks[0].frames[0], order.tracks[0].frames[1]);
    CHECK_THROWS_AS(validate_trajectory(order), InputError);

    TrajectorySet nomask = two_square_traj();
    nomask.tracks[0].frames[0].mask.reset();
    CHECK_THROWS_AS(validate_trajectory(nomask), InputError);

    TrajectorySet loose = two_square_traj();
    loose.tracks[0].frames[1].bbox = std::array<int64_t, 4>{0, 0, 5, 5};  // not tight
    CHECK_THROWS_AS(validate_trajectory(loose), InputError);

    TrajectorySet oob = two_square_traj();
    oob.tracks[0].frames[1].mask.reset();
    oob.tracks[0].frames[1].bbox = std::array<int64_t, 4>{-1, 0, 2, 2};
    CHECK_THROWS_AS(validate_trajectory(oob), OutOfBounds);

    TrajectorySet bare = two_square_traj();
    bare.tracks[0].frames[1].mask.reset();
    bare.tracks[0].frames[1].bbox.reset();
    CHECK_THROWS_AS(validate_trajectory(bare), InputError);
}

TEST_CASE("rle round trip and error handling") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor mask({7, 9});
        for (auto& v : mask.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
        const std::string rle = mask_to_rle(mask);
        const Tensor back = mask_from_rle(rle, 7, 9);
        CHECK(mmtest::max_abs_diff(mask, back) == 0.0);
    }

    // Leading run is background; an all-foreground mask starts with "0".
    CHECK(mask_to_rle(Tensor::full({2, 2}, 1.0)) == "0 4");
    CHECK(mask_to_rle(Tensor::zeros({2, 2})) == "4");

    const Tensor m = mask_from_rle("3 4 5", 3, 4);
    CHECK(m[2] == 0.0);
    CHECK(m[3] == 1.0);
    CHECK(m[6] == 1.0);
    CHECK(m[7] == 0.0);

    CHECK_THROWS_AS(mask_from_rle("3 4", 3, 4), InputError);     // covers 7 of 12
    CHECK_THROWS_AS(mask_from_rle("10 10 10", 3, 4), InputError);  // overruns
}

TEST_CASE("trajectory json round trip") {
    const TrajectorySet ts = two_square_traj();
    const std::string text = trajectory_to_json(ts);
    const TrajectorySet back = trajectory_from_json(text);

    CHECK(back.T == ts.T);
    CHECK(back.H == ts.H);
    CHECK(back.W == ts.W);
    REQUIRE(back.tracks.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(back.tracks[i].object_id == ts.tracks[i].object_id);
        CHECK(back.tracks[i].color == ts.tracks[i].color);
        REQUIRE(back.tracks[i].frames.size() == ts.tracks[i].frames.size());
        for (size_t f = 0; f < ts.tracks[i].frames.size(); ++f) {
            CHECK(back.tracks[i].frames[f].bbox == ts.tracks[i].frames[f].bbox);
            REQUIRE(back.tracks[i].frames[f].mask.has_value());
            CHECK(mmtest::max_abs_diff(*back.tracks[i].frames[f].mask,
                                       *ts.tracks[i].frames[f].mask) == 0.0);
        }
    }
    CHECK_NOTHROW(validate_trajectory(back));

    CHECK_THROWS_AS(trajectory_from_json("not json"), InputError);
    CHECK_THROWS_AS(trajectory_from_json("{\"canvas\": [1]}"), InputError);
}

TEST_CASE("box-only annotations survive the json round trip") {
    TrajectorySet ts = two_square_traj();
    ts.tracks[0].frames[2].mask.reset();  // sparse-style annotation
    const TrajectorySet back = trajectory_from_json(trajectory_to_json(ts));
    CHECK_FALSE(back.tracks[0].frames[2].mask.has_value());
    CHECK(back.tracks[0].frames[2].bbox == ts.tracks[0].frames[2].bbox);
}
