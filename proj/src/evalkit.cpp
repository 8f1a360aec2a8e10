#include "mm/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <utility>

#include "json.hpp"

#include "mm/errors.hpp"
#include "mm/parallel.hpp"

namespace mm {

using nlohmann::json;

double frame_iou(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw ShapeError("frame_iou: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const bool fa = a[i] > 0.5, fb = b[i] > 0.5;
        inter += fa && fb;
        uni += fa || fb;
    }
    if (uni == 0) return 1.0;  // agreement on absence
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

Tensor filled_box(const std::array<int64_t, 4>& box, int64_t H, int64_t W) {
    const auto [x0, y0, x1, y1] = box;
    if (x0 < 0 || y0 < 0 || x1 >= W || y1 >= H || x0 > x1 || y0 > y1) {
        throw OutOfBounds("box outside canvas: " + std::to_string(x0) + "," + std::to_string(y0) +
                          "," + std::to_string(x1) + "," + std::to_string(y1));
    }
    Tensor raster = Tensor::zeros({H, W});
    for (int64_t y = y0; y <= y1; ++y) {
        for (int64_t x = x0; x <= x1; ++x) raster.at(y, x) = 1.0;
    }
    return raster;
}

const FrameAnnotation* annotation_at(const ObjectTrack& track, int64_t frame) {
    for (const FrameAnnotation& a : track.frames) {
        if (a.frame_index == frame) return &a;
    }
    return nullptr;
}

// One (object, frame) raster: the mask (or filled box), or all-background
// when the frame is unannotated.
Tensor raster_of(const ObjectTrack& track, int64_t frame, int64_t H, int64_t W, bool as_box) {
    const FrameAnnotation* ann = annotation_at(track, frame);
    if (ann == nullptr) return Tensor::zeros({H, W});
    if (as_box) {
        const std::array<int64_t, 4> box = ann->bbox ? *ann->bbox : extract_bbox(*ann->mask);
        return filled_box(box, H, W);
    }
    if (ann->mask) return *ann->mask;
    return filled_box(*ann->bbox, H, W);  // box-only annotation: best available raster
}

double mean_pair_iou(const TrajectorySet& pred, const TrajectorySet& gt, bool as_box) {
    if (pred.T != gt.T || pred.H != gt.H || pred.W != gt.W) {
        throw ShapeError("trajectory canvases differ");
    }
    std::map<int, const ObjectTrack*> pred_by_id;
    for (const ObjectTrack& t : pred.tracks) pred_by_id[t.object_id] = &t;
    if (pred_by_id.size() != pred.tracks.size() || pred.tracks.size() != gt.tracks.size()) {
        throw InputError("predicted and ground-truth object ids do not match");
    }
    if (gt.tracks.empty() || gt.T <= 0) throw UndefinedScore("no (object, frame) pairs to score");

    double sum = 0.0;
    int64_t count = 0;
    for (const ObjectTrack& gt_track : gt.tracks) {
        const auto it = pred_by_id.find(gt_track.object_id);
        if (it == pred_by_id.end()) {
            throw InputError("prediction is missing object id " + std::to_string(gt_track.object_id));
        }
        for (int64_t f = 0; f < gt.T; ++f) {
            sum += frame_iou(raster_of(*it->second, f, gt.H, gt.W, as_box),
                             raster_of(gt_track, f, gt.H, gt.W, as_box));
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

}  // namespace

double mask_iou(const TrajectorySet& pred, const TrajectorySet& gt) {
    return mean_pair_iou(pred, gt, false);
}

double box_iou(const TrajectorySet& pred, const TrajectorySet& gt) {
    return mean_pair_iou(pred, gt, true);
}

namespace {

const FrameAnnotation& seed_annotation(const ObjectTrack& track) {
    const FrameAnnotation* a0 = annotation_at(track, 0);
    if (a0 == nullptr || !a0->mask) {
        throw InputError("track " + std::to_string(track.object_id) + " has no first-frame mask");
    }
    return *a0;
}

bool masks_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

class OracleTracker : public TrackerClient {
  public:
    explicit OracleTracker(std::vector<TripletRecord> gt) : gt_(std::move(gt)) {}

    TrajectorySet propagate(const VideoClip&, const TrajectorySet& seed) const override {
        for (const TripletRecord& rec : gt_) {
            if (matches(rec.trajectory, seed)) return rec.trajectory;
        }
        throw InputError("oracle tracker: seed matches no stored ground truth");
    }

  private:
    static bool matches(const TrajectorySet& gt, const TrajectorySet& seed) {
        if (gt.T != seed.T || gt.H != seed.H || gt.W != seed.W) return false;
        if (gt.tracks.size() != seed.tracks.size()) return false;
        for (size_t i = 0; i < gt.tracks.size(); ++i) {
            if (gt.tracks[i].object_id != seed.tracks[i].object_id) return false;
            const FrameAnnotation* a = annotation_at(gt.tracks[i], 0);
            const FrameAnnotation* b = annotation_at(seed.tracks[i], 0);
            if (a == nullptr || b == nullptr || !a->mask || !b->mask) return false;
            if (!masks_equal(*a->mask, *b->mask)) return false;
        }
        return true;
    }

    std::vector<TripletRecord> gt_;
};

class FrozenFirstTracker : public TrackerClient {
  public:
    TrajectorySet propagate(const VideoClip&, const TrajectorySet& seed) const override {
        TrajectorySet out = seed;
        for (ObjectTrack& track : out.tracks) {
            FrameAnnotation a0 = seed_annotation(track);
            if (!a0.bbox) a0.bbox = extract_bbox(*a0.mask);
            track.frames.clear();
            for (int64_t f = 0; f < out.T; ++f) {
                FrameAnnotation a = a0;
                a.frame_index = f;
                track.frames.push_back(std::move(a));
            }
        }
        return out;
    }
};

// Per-frame color-threshold re-segmentation by each seed track's palette
// color, the same matching rule the stub segmentation client uses.
class ChromaTracker : public TrackerClient {
  public:
    TrajectorySet propagate(const VideoClip& video, const TrajectorySet& seed) const override {
        check_video(video);
        if (video.dim(0) != seed.T || video.dim(1) != seed.H || video.dim(2) != seed.W) {
            throw InputError("chroma tracker: video does not match the seed canvas");
        }
        TrajectorySet out = seed;
        for (ObjectTrack& track : out.tracks) {
            FrameAnnotation a0 = seed_annotation(track);
            if (!a0.bbox) a0.bbox = extract_bbox(*a0.mask);
            track.frames.clear();
            track.frames.push_back(a0);
            for (int64_t f = 1; f < out.T; ++f) {
                Tensor mask = color_mask(video, f, track.color);
                bool any = false;
                for (double v : mask.data) any = any || v > 0.5;
                if (!any) continue;
                FrameAnnotation a;
                a.frame_index = f;
                a.mask = std::move(mask);
                a.bbox = extract_bbox(*a.mask);
                track.frames.push_back(std::move(a));
            }
        }
        return out;
    }

  private:
    static Tensor color_mask(const VideoClip& video, int64_t f, const std::array<int, 3>& color) {
        const int64_t H = video.dim(1), W = video.dim(2);
        const double tol = 0.5 / 255.0;
        Tensor mask = Tensor::zeros({H, W});
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                bool hit = true;
                for (int c = 0; c < 3 && hit; ++c) {
                    hit = std::abs(video.at(f, y, x, c) - color[c] / 255.0) <= tol;
                }
                if (hit) mask.at(y, x) = 1.0;
            }
        }
        return mask;
    }
};

}  // namespace

std::unique_ptr<TrackerClient> make_oracle_tracker(std::vector<TripletRecord> gt) {
    return std::make_unique<OracleTracker>(std::move(gt));
}

std::unique_ptr<TrackerClient> make_frozen_first_tracker() {
    return std::make_unique<FrozenFirstTracker>();
}

std::unique_ptr<TrackerClient> make_chroma_tracker() {
    return std::make_unique<ChromaTracker>();
}

std::unique_ptr<TrackerClient> make_tracker(const std::string& name,
                                            const std::vector<TripletRecord>& gt) {
    if (name == "oracle") return make_oracle_tracker(gt);
    if (name == "frozen-first" || name == "frozen") return make_frozen_first_tracker();
    if (name == "chroma") return make_chroma_tracker();
    throw InputError("unknown tracker: " + name + " (expected oracle, frozen-first, or chroma)");
}

namespace {

TrajectorySet first_frame_seed(const TrajectorySet& gt) {
    TrajectorySet seed;
    seed.T = gt.T;
    seed.H = gt.H;
    seed.W = gt.W;
    for (const ObjectTrack& track : gt.tracks) {
        ObjectTrack s;
        s.object_id = track.object_id;
        s.color = track.color;
        s.frames.push_back(seed_annotation(track));
        seed.tracks.push_back(std::move(s));
    }
    return seed;
}

}  // namespace

IoUReport evaluate(const std::vector<TripletRecord>& gt,
                   const std::function<VideoClip(const TripletRecord&)>& load_pred,
                   const TrackerClient& tracker, int workers) {
    struct Slot {
        bool scored = false;
        VideoScore score;
        EvalError error;
    };
    std::vector<Slot> slots(gt.size());

    parallel_for(static_cast<int64_t>(gt.size()), workers, [&](int64_t i) {
        const TripletRecord& rec = gt[i];
        Slot& slot = slots[i];
        slot.error.video_ref = rec.video_ref;
        try {
            if (rec.trajectory.tracks.empty()) throw InputError("record annotates no objects");
            const VideoClip pred_clip = load_pred(rec);
            const TrajectorySet pred = tracker.propagate(pred_clip, first_frame_seed(rec.trajectory));
            VideoScore vs;
            vs.video_ref = rec.video_ref;
            const size_t n = rec.trajectory.tracks.size();
            vs.bucket = n > 5 ? "gt5" : std::to_string(n);
            vs.mask_iou = mask_iou(pred, rec.trajectory);
            vs.box_iou = box_iou(pred, rec.trajectory);
            slot.score = std::move(vs);
            slot.scored = true;
        } catch (const std::exception& e) {
            slot.error.error = e.what();
        }
    });

    IoUReport report;
    std::map<std::string, std::pair<double, double>> bucket_sums;
    double sum_mask = 0.0, sum_box = 0.0;
    for (const Slot& slot : slots) {
        if (!slot.scored) {
            report.errors.push_back(slot.error);
            continue;
        }
        const VideoScore& vs = slot.score;
        report.videos.push_back(vs);
        BucketScore& b = report.buckets[vs.bucket];
        b.n_videos += 1;
        auto& [bm, bb] = bucket_sums[vs.bucket];
        bm += vs.mask_iou;
        bb += vs.box_iou;
        sum_mask += vs.mask_iou;
        sum_box += vs.box_iou;
        report.overall.n_videos += 1;
    }
    if (report.overall.n_videos == 0) {
        throw UndefinedScore("evaluate: no video could be scored (" +
                             std::to_string(report.errors.size()) + " failures)");
    }
    report.overall.mask_iou = sum_mask / report.overall.n_videos;
    report.overall.box_iou = sum_box / report.overall.n_videos;
    for (auto& [name, b] : report.buckets) {
        b.mask_iou = bucket_sums[name].first / b.n_videos;
        b.box_iou = bucket_sums[name].second / b.n_videos;
    }
    return report;
}

namespace {

json bucket_to_json(const BucketScore& b) {
    return json{{"n_videos", b.n_videos}, {"mask_iou", b.mask_iou}, {"box_iou", b.box_iou}};
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string iou_report_to_json(const IoUReport& report) {
    json j;
    j["overall"] = bucket_to_json(report.overall);
    j["buckets"] = json::object();
    for (const auto& [name, b] : report.buckets) j["buckets"][name] = bucket_to_json(b);
    j["videos"] = json::array();
    for (const VideoScore& v : report.videos) {
        j["videos"].push_back(json{{"video_ref", v.video_ref},
                                   {"bucket", v.bucket},
                                   {"mask_iou", v.mask_iou},
                                   {"box_iou", v.box_iou}});
    }
    j["errors"] = json::array();
    for (const EvalError& e : report.errors) {
        j["errors"].push_back(json{{"video_ref", e.video_ref}, {"error", e.error}});
    }
    return j.dump(2) + "\n";
}

std::string iou_report_to_csv(const IoUReport& report) {
    std::string out = "bucket,n_videos,mask_iou,box_iou\n";
    for (const auto& [name, b] : report.buckets) {
        out += name + "," + std::to_string(b.n_videos) + "," + fmt6(b.mask_iou) + "," +
               fmt6(b.box_iou) + "\n";
    }
    out += "overall," + std::to_string(report.overall.n_videos) + "," +
           fmt6(report.overall.mask_iou) + "," + fmt6(report.overall.box_iou) + "\n";
    return out;
}

}  // namespace mm
