#include "doctest.h"

#include "mm/latent3d.hpp"
#include "test_support.hpp"

using namespace mm;

namespace {

Codec fresh_codec(ParamStore& ps, uint64_t seed = 5) {
    Rng rng(seed);
    return Codec(CodecConfig{}, ps, &rng);
}

}  // namespace

TEST_CASE("encode/decode shape contracts on three geometries") {
    ParamStore ps;
    const Codec codec = fresh_codec(ps);
    Rng rng(6);

    const struct {
        int64_t T, H, W;
    } geometries[] = {{4, 8, 8}, {8, 16, 24}, {12, 32, 48}};
    for (const auto& g : geometries) {
        const VideoClip v = rng.uniform_tensor({g.T, g.H, g.W, 3});
        const LatentBlock z = codec.encode(v);
        CHECK(z.data.shape == std::vector<int64_t>{g.T / 4, g.H / 8, g.W / 8, 16});
        CHECK(z.kind == LatentKind::video);
        const VideoClip back = codec.decode(z);
        CHECK(back.shape == v.shape);
        for (double px : back.data) {
            CHECK(px >= 0.0);
            CHECK(px <= 1.0);
        }
    }
}

TEST_CASE("encode is deterministic and kind-tagged") {
    ParamStore ps;
    const Codec codec = fresh_codec(ps);
    Rng rng(7);
    const VideoClip v = rng.uniform_tensor({4, 8, 16, 3});

    const LatentBlock a = codec.encode(v);
    const LatentBlock b = codec.encode(v);
    CHECK(mmtest::max_abs_diff(a.data, b.data) == 0.0);

    CHECK(codec.encode(v, LatentKind::mask).kind == LatentKind::mask);
    CHECK(codec.encode(v, LatentKind::trajectory).kind == LatentKind::trajectory);
}

TEST_CASE("divisibility is enforced") {
    ParamStore ps;
    const Codec codec = fresh_codec(ps);
    Rng rng(8);
    CHECK_THROWS_AS(codec.encode(rng.uniform_tensor({5, 8, 8, 3})), ShapeError);
    CHECK_THROWS_AS(codec.encode(rng.uniform_tensor({4, 9, 8, 3})), ShapeError);
    CHECK_THROWS_AS(codec.encode(rng.uniform_tensor({4, 8, 10, 3})), ShapeError);
    CHECK_THROWS_AS(codec.encode(rng.uniform_tensor({4, 8, 8})), ShapeError);
}

TEST_CASE("decode accepts only video and segment latents") {
    ParamStore ps;
    const Codec codec = fresh_codec(ps);
    Rng rng(9);
    LatentBlock z = codec.encode(rng.uniform_tensor({4, 8, 8, 3}));

    z.kind = LatentKind::segment;
    CHECK_NOTHROW(codec.decode(z));
    for (const LatentKind bad :
         {LatentKind::image, LatentKind::trajectory, LatentKind::mask, LatentKind::noise}) {
        z.kind = bad;
        CHECK_THROWS_AS(codec.decode(z), InputError);
    }
}

TEST_CASE("encode_image fills one temporal slot") {
    ParamStore ps;
    const Codec codec = fresh_codec(ps);
    Rng rng(10);
    const Tensor frame = rng.uniform_tensor({16, 24, 3});
    const LatentBlock zi = codec.encode_image(frame);
    CHECK(zi.data.shape == std::vector<int64_t>{1, 2, 3, 16});
    CHECK(zi.kind == LatentKind::image);

    // A still image repeated temporally encodes like the repeat itself.
    VideoClip repeated({4, 16, 24, 3});
    for (int64_t f = 0; f < 4; ++f) {
        std::copy(frame.data.begin(), frame.data.end(),
                  repeated.data.begin() + f * frame.numel());
    }
    const LatentBlock zv = codec.encode(repeated);
    CHECK(mmtest::max_abs_diff(zi.data, zv.data) < 1e-12);
}

TEST_CASE("pad_image_latent keeps slot zero and zeroes the rest") {
    ParamStore ps;
    const Codec codec = fresh_codec(ps);
    Rng rng(11);
    const LatentBlock zi = codec.encode_image(rng.uniform_tensor({8, 8, 3}));

    const LatentBlock padded = pad_image_latent(zi, 3);
    CHECK(padded.data.shape == std::vector<int64_t>{3, 1, 1, 16});
    CHECK(padded.kind == LatentKind::image);
    for (int64_t c = 0; c < 16; ++c) {
        CHECK(padded.data.at(0, 0, 0, c) == zi.data.at(0, 0, 0, c));
        CHECK(padded.data.at(1, 0, 0, c) == 0.0);
        CHECK(padded.data.at(2, 0, 0, c) == 0.0);
    }

    CHECK_THROWS_AS(pad_image_latent(zi, 0), ShapeError);
    CHECK_THROWS_AS(pad_image_latent(padded, 4), ShapeError);  // already T' = 3
}

TEST_CASE("concat_channels interleaves per cell and checks geometry") {
    LatentBlock a{Tensor::full({2, 1, 2, 16}, 1.0), LatentKind::image};
    LatentBlock b{Tensor::full({2, 1, 2, 16}, 2.0), LatentKind::video};
    const LatentBlock ab = concat_channels(a, b);
    CHECK(ab.data.shape == std::vector<int64_t>{2, 1, 2, 32});
    for (int64_t t = 0; t < 2; ++t) {
        for (int64_t x = 0; x < 2; ++x) {
            CHECK(ab.data.at(t, 0, x, 0) == 1.0);
            CHECK(ab.data.at(t, 0, x, 15) == 1.0);
            CHECK(ab.data.at(t, 0, x, 16) == 2.0);
            CHECK(ab.data.at(t, 0, x, 31) == 2.0);
        }
    }

    LatentBlock c{Tensor::full({2, 2, 2, 16}, 3.0), LatentKind::video};
    CHECK_THROWS_AS(concat_channels(a, c), ShapeError);
    LatentBlock d{Tensor::full({1, 1, 2, 16}, 3.0), LatentKind::video};
    CHECK_THROWS_AS(concat_channels(a, d), ShapeError);
}

TEST_CASE("codec attach mode requires existing weights") {
    ParamStore empty;
    CHECK_THROWS_AS(Codec(CodecConfig{}, empty, nullptr), WeightsError);

    ParamStore ps;
    fresh_codec(ps);
    CHECK_NOTHROW(Codec(CodecConfig{}, ps, nullptr));  // reattach
}

TEST_CASE("codec training reduces reconstruction loss on a tiny clip") {
    ParamStore ps;
    Codec codec = fresh_codec(ps, 13);
    const auto fixture = mmtest::make_squares(4, 8, 16, {mmtest::SquareSpec{1, {200, 40, 40}, 1, 1, 4, 1, 0}});

    CodecTrainConfig cfg;
    cfg.steps = 60;
    cfg.lr = 2e-3;
    cfg.seed = 14;
    const CodecTrainReport report = train_codec(codec, ps, {fixture.clip}, cfg);
    REQUIRE(report.losses.size() == 60);
    CHECK(report.final_loss < report.losses.front());
    CHECK(report.final_loss == report.losses.back());
}
