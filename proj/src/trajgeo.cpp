#include "mm/trajgeo.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mm/errors.hpp"

using nlohmann::json;

namespace mm {

namespace {

bool fg(double v) { return v > 0.5; }

// Pascal-VOC-style bit-spread colormap: id bits fan out across RGB from the
// high bit down, giving well-separated colors; id 0 is black (background).
std::array<int, 3> spread_color(int id) {
    int r = 0, g = 0, b = 0, c = id;
    for (int j = 0; j < 8; ++j) {
        r |= ((c >> 0) & 1) << (7 - j);
        g |= ((c >> 1) & 1) << (7 - j);
        b |= ((c >> 2) & 1) << (7 - j);
        c >>= 3;
    }
    return {r, g, b};
}

void check_mask_shape(const Tensor& mask, int64_t h, int64_t w, int object_id) {
    if (mask.rank() != 2 || mask.shape[0] != h || mask.shape[1] != w) {
        throw OutOfBounds("track " + std::to_string(object_id) + " mask " + mask.shape_str() +
                          " does not fit canvas (" + std::to_string(h) + ", " + std::to_string(w) + ")");
    }
}

void paint_mask(VideoClip& out, int64_t t, const Tensor& mask, const std::array<int, 3>& color) {
    const int64_t h = mask.shape[0], w = mask.shape[1];
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (!fg(mask[y * w + x])) continue;
            double* px = out.data.data() + ((t * h + y) * w + x) * 3;
            px[0] = color[0] / 255.0;
            px[1] = color[1] / 255.0;
            px[2] = color[2] / 255.0;
        }
    }
}

void paint_box(VideoClip& out, int64_t t, const std::array<int64_t, 4>& box, const std::array<int, 3>& color) {
    const int64_t h = out.shape[1], w = out.shape[2];
    for (int64_t y = box[1]; y <= box[3]; ++y) {
        for (int64_t x = box[0]; x <= box[2]; ++x) {
            double* px = out.data.data() + ((t * h + y) * w + x) * 3;
            px[0] = color[0] / 255.0;
            px[1] = color[1] / 255.0;
            px[2] = color[2] / 255.0;
        }
    }
}

void check_box_bounds(const std::array<int64_t, 4>& box, int64_t h, int64_t w, int object_id) {
    if (box[0] < 0 || box[1] < 0 || box[2] >= w || box[3] >= h || box[0] > box[2] || box[1] > box[3]) {
        throw OutOfBounds("track " + std::to_string(object_id) + " box outside canvas");
    }
}

// Tracks sorted ascending by object_id so higher ids paint last.
std::vector<const ObjectTrack*> painting_order(const TrajectorySet& ts) {
    std::vector<const ObjectTrack*> order;
    order.reserve(ts.tracks.size());
    for (const ObjectTrack& tr : ts.tracks) order.push_back(&tr);
    std::sort(order.begin(), order.end(),
              [](const ObjectTrack* a, const ObjectTrack* b) { return a->object_id < b->object_id; });
    return order;
}

std::array<int64_t, 4> annotation_box(const FrameAnnotation& fa, int object_id) {
    if (fa.bbox) return *fa.bbox;
    if (fa.mask) return extract_bbox(*fa.mask);
    throw InputError("track " + std::to_string(object_id) + " frame " + std::to_string(fa.frame_index) +
                     " has neither bbox nor mask");
}

}  // namespace

std::array<int64_t, 4> extract_bbox(const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("extract_bbox expects (H, W), got " + mask.shape_str());
    const int64_t h = mask.shape[0], w = mask.shape[1];
    int64_t x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (!fg(mask[y * w + x])) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    }
    if (x1 < 0) throw EmptyMask("extract_bbox on empty mask");
    return {x0, y0, x1, y1};
}

std::vector<std::array<int, 3>> assign_palette(int n) {
    if (n < 0) throw InputError("assign_palette: negative count");
    if (n > 255) throw PaletteExhausted("assign_palette supports at most 255 objects, got " + std::to_string(n));
    std::vector<std::array<int, 3>> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(spread_color(i + 1));
    return out;
}

VideoClip render_mask_map(const TrajectorySet& ts) {
    VideoClip out = Tensor::zeros({ts.T, ts.H, ts.W, 3});
    for (const ObjectTrack* tr : painting_order(ts)) {
        for (const FrameAnnotation& fa : tr->frames) {
            if (fa.frame_index < 0 || fa.frame_index >= ts.T) {
                throw OutOfBounds("track " + std::to_string(tr->object_id) + " frame index " +
                                  std::to_string(fa.frame_index) + " outside canvas T=" + std::to_string(ts.T));
            }
            if (!fa.mask) {
                throw InputError("render_mask_map: track " + std::to_string(tr->object_id) + " frame " +
                                 std::to_string(fa.frame_index) + " has no mask");
            }
            check_mask_shape(*fa.mask, ts.H, ts.W, tr->object_id);
            paint_mask(out, fa.frame_index, *fa.mask, tr->color);
        }
    }
    return out;
}

VideoClip render_box_map(const TrajectorySet& ts) {
    VideoClip out = Tensor::zeros({ts.T, ts.H, ts.W, 3});
    for (const ObjectTrack* tr : painting_order(ts)) {
        for (const FrameAnnotation& fa : tr->frames) {
            if (fa.frame_index < 0 || fa.frame_index >= ts.T) {
                throw OutOfBounds("track " + std::to_string(tr->object_id) + " frame index " +
                                  std::to_string(fa.frame_index) + " outside canvas T=" + std::to_string(ts.T));
            }
            if (fa.frame_index == 0) {
                // first-frame-mask rule: the box condition still shows the mask here
                if (!fa.mask) {
                    throw InputError("render_box_map: track " + std::to_string(tr->object_id) +
                                     " lacks a frame-0 mask");
                }
                check_mask_shape(*fa.mask, ts.H, ts.W, tr->object_id);
                paint_mask(out, 0, *fa.mask, tr->color);
                continue;
            }
            if (fa.mask) check_mask_shape(*fa.mask, ts.H, ts.W, tr->object_id);
            const std::array<int64_t, 4> box = annotation_box(fa, tr->object_id);
            check_box_bounds(box, ts.H, ts.W, tr->object_id);
            paint_box(out, fa.frame_index, box, tr->color);
        }
    }
    return out;
}

TrajectorySet sparsify(const TrajectorySet& ts, int k) {
    if (k < 1 || k > 9) throw InvalidSparsity("sparsify k must be in [1, 9], got " + std::to_string(k));
    TrajectorySet out;
    out.T = ts.T;
    out.H = ts.H;
    out.W = ts.W;
    for (const ObjectTrack& tr : ts.tracks) {
        const int64_t m = static_cast<int64_t>(tr.frames.size());
        if (m < k) {
            throw InputError("sparsify: track " + std::to_string(tr.object_id) + " has " + std::to_string(m) +
                             " annotated frames, fewer than k=" + std::to_string(k));
        }
        std::set<int64_t> picks;
        if (k == 1) {
            picks.insert(0);
        } else {
            for (int j = 0; j < k; ++j) {
                // even spacing over annotated positions, ties to the lower index
                const double x = static_cast<double>(j) * static_cast<double>(m - 1) / static_cast<double>(k - 1);
                picks.insert(static_cast<int64_t>(std::ceil(x - 0.5)));
            }
        }
        ObjectTrack nt;
        nt.object_id = tr.object_id;
        nt.color = tr.color;
        for (int64_t pos : picks) {
            const FrameAnnotation& fa = tr.frames[static_cast<size_t>(pos)];
            FrameAnnotation kept;
            kept.frame_index = fa.frame_index;
            if (fa.frame_index == 0) {
                kept.mask = fa.mask;  // first-frame-mask rule
                kept.bbox = fa.bbox;
            } else {
                kept.bbox = annotation_box(fa, tr.object_id);
            }
            nt.frames.push_back(std::move(kept));
        }
        out.tracks.push_back(std::move(nt));
    }
    return out;
}

void validate_trajectory(const TrajectorySet& ts) {
    if (ts.T <= 0 || ts.H <= 0 || ts.W <= 0) throw ShapeError("trajectory canvas must be positive");
    std::set<int> ids;
    for (const ObjectTrack& tr : ts.tracks) {
        if (!ids.insert(tr.object_id).second) {
            throw InputError("duplicate object_id " + std::to_string(tr.object_id));
        }
        if (tr.frames.empty()) throw InputError("track " + std::to_string(tr.object_id) + " has no frames");
        int64_t prev = -1;
        for (const FrameAnnotation& fa : tr.frames) {
            if (fa.frame_index <= prev) {
                throw InputError("track " + std::to_string(tr.object_id) + " frame indices not strictly increasing");
            }
            prev = fa.frame_index;
            if (fa.frame_index < 0 || fa.frame_index >= ts.T) {
                throw OutOfBounds("track " + std::to_string(tr.object_id) + " frame index outside canvas");
            }
            if (!fa.bbox && !fa.mask) {
                throw InputError("track " + std::to_string(tr.object_id) + " frame " +
                                 std::to_string(fa.frame_index) + " carries neither bbox nor mask");
            }
            if (fa.mask) check_mask_shape(*fa.mask, ts.H, ts.W, tr.object_id);
            if (fa.bbox) check_box_bounds(*fa.bbox, ts.H, ts.W, tr.object_id);
            if (fa.bbox && fa.mask && *fa.bbox != extract_bbox(*fa.mask)) {
                throw InputError("track " + std::to_string(tr.object_id) + " frame " +
                                 std::to_string(fa.frame_index) + " bbox is not the tight box of its mask");
            }
        }
        if (tr.frames[0].frame_index != 0 || !tr.frames[0].mask) {
            throw InputError("track " + std::to_string(tr.object_id) + " must carry a mask on frame 0");
        }
    }
}

std::string mask_to_rle(const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("mask_to_rle expects (H, W)");
    std::ostringstream ss;
    int64_t run = 0;
    bool cur = false;  // runs alternate starting with background
    bool first = true;
    for (int64_t i = 0; i < mask.numel(); ++i) {
        const bool v = fg(mask[i]);
        if (v == cur) {
            ++run;
            continue;
        }
        if (!first) ss << ' ';
        ss << run;
        first = false;
        cur = v;
        run = 1;
    }
    if (!first) ss << ' ';
    ss << run;
    return ss.str();
}

Tensor mask_from_rle(const std::string& rle, int64_t h, int64_t w) {
    Tensor mask = Tensor::zeros({h, w});
    std::istringstream ss(rle);
    int64_t pos = 0, run = 0;
    bool cur = false;
    while (ss >> run) {
        if (run < 0 || pos + run > h * w) throw InputError("rle overruns mask of " + std::to_string(h * w));
        if (cur) {
            for (int64_t i = 0; i < run; ++i) mask[pos + i] = 1.0;
        }
        pos += run;
        cur = !cur;
    }
    if (pos != h * w) throw InputError("rle covers " + std::to_string(pos) + " of " + std::to_string(h * w));
    return mask;
}

std::string trajectory_to_json(const TrajectorySet& ts) {
    json doc;
    doc["canvas"] = {ts.T, ts.H, ts.W};
    doc["tracks"] = json::array();
    for (const ObjectTrack& tr : ts.tracks) {
        json jt;
        jt["object_id"] = tr.object_id;
        jt["color"] = {tr.color[0], tr.color[1], tr.color[2]};
        jt["frames"] = json::array();
        for (const FrameAnnotation& fa : tr.frames) {
            json jf;
            jf["index"] = fa.frame_index;
            jf["bbox"] = fa.bbox ? json((*fa.bbox)) : json(nullptr);
            jf["mask_rle"] = fa.mask ? json(mask_to_rle(*fa.mask)) : json(nullptr);
            jt["frames"].push_back(std::move(jf));
        }
        doc["tracks"].push_back(std::move(jt));
    }
    return doc.dump(2) + "\n";
}

TrajectorySet trajectory_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("trajectory json parse failed: ") + e.what());
    }
    TrajectorySet ts;
    try {
        const auto canvas = doc.at("canvas");
        ts.T = canvas.at(0).get<int64_t>();
        ts.H = canvas.at(1).get<int64_t>();
        ts.W = canvas.at(2).get<int64_t>();
        for (const json& jt : doc.at("tracks")) {
            ObjectTrack tr;
            tr.object_id = jt.at("object_id").get<int>();
            tr.color = {jt.at("color").at(0).get<int>(), jt.at("color").at(1).get<int>(),
                        jt.at("color").at(2).get<int>()};
            for (const json& jf : jt.at("frames")) {
                FrameAnnotation fa;
                fa.frame_index = jf.at("index").get<int64_t>();
                if (jf.contains("bbox") && !jf.at("bbox").is_null()) {
                    const json& b = jf.at("bbox");
                    fa.bbox = std::array<int64_t, 4>{b.at(0).get<int64_t>(), b.at(1).get<int64_t>(),
                                                     b.at(2).get<int64_t>(), b.at(3).get<int64_t>()};
                }
                if (jf.contains("mask_rle") && !jf.at("mask_rle").is_null()) {
                    fa.mask = mask_from_rle(jf.at("mask_rle").get<std::string>(), ts.H, ts.W);
                }
                tr.frames.push_back(std::move(fa));
            }
            ts.tracks.push_back(std::move(tr));
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("trajectory json malformed: ") + e.what());
    }
    return ts;
}

}  // namespace mm
