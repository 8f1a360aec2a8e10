#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mm/datapipe.hpp"
#include "mm/trajgeo.hpp"

namespace mm {

// Intersection over union of two binary rasters; pixels are foreground
// when > 0.5. Two empty rasters agree perfectly: 1.0.
double frame_iou(const Tensor& a, const Tensor& b);

// Mean frame_iou over every (object, frame) pair of the canvas, frame 0
// included. Frames an object does not annotate count as empty rasters.
// Track ids of pred and gt must coincide.
double mask_iou(const TrajectorySet& pred, const TrajectorySet& gt);
// Same, with each annotation rendered as its filled tight box (taken from
// bbox, or derived from the mask when only a mask is given).
double box_iou(const TrajectorySet& pred, const TrajectorySet& gt);

// Propagates first-frame object masks through a video. seed carries the
// canvas, track ids/colors, and one frame-0 annotation per track; the result
// must keep the same ids. Implementations must be safe to call concurrently.
class TrackerClient {
  public:
    virtual ~TrackerClient() = default;
    virtual TrajectorySet propagate(const VideoClip& video, const TrajectorySet& seed) const = 0;
};

// Upper-bound reference: returns the stored ground-truth trajectory whose
// first frame matches the seed (evaluation harness self-test).
std::unique_ptr<TrackerClient> make_oracle_tracker(std::vector<TripletRecord> gt);
// Repeats the frame-0 annotation on every frame (static baseline).
std::unique_ptr<TrackerClient> make_frozen_first_tracker();
// Re-segments each frame by the seed tracks' palette colors; frame 0 keeps
// the seed mask.
std::unique_ptr<TrackerClient> make_chroma_tracker();
std::unique_ptr<TrackerClient> make_tracker(const std::string& name,
                                            const std::vector<TripletRecord>& gt);

// Distribution-level quality scorer slot (FID/FVD-shaped). No bundled
// implementation; external scorers plug in here.
class QualityScorer {
  public:
    virtual ~QualityScorer() = default;
    virtual double score(const std::vector<VideoClip>& generated,
                         const std::vector<VideoClip>& reference) const = 0;
};

struct VideoScore {
    std::string video_ref;
    std::string bucket;
    double mask_iou = 0.0;
    double box_iou = 0.0;
};

struct BucketScore {
    int n_videos = 0;
    double mask_iou = 0.0;
    double box_iou = 0.0;
};

struct EvalError {
    std::string video_ref;
    std::string error;
};

struct IoUReport {
    BucketScore overall;
    std::map<std::string, BucketScore> buckets;  // object-count buckets, non-empty only
    std::vector<VideoScore> videos;              // gt record order
    std::vector<EvalError> errors;               // failed videos, excluded from means
};

// Scores tracker propagation on generated clips against ground truth.
// load_pred maps a record to its generated clip. A per-video failure becomes
// an error entry; if every video fails, UndefinedScore. workers > 1 scores
// videos in parallel with deterministic (record-order) aggregation.
IoUReport evaluate(const std::vector<TripletRecord>& gt,
                   const std::function<VideoClip(const TripletRecord&)>& load_pred,
                   const TrackerClient& tracker, int workers = 1);

std::string iou_report_to_json(const IoUReport& report);
// Table of per-bucket and overall rows: bucket, n_videos, mask_iou, box_iou.
std::string iou_report_to_csv(const IoUReport& report);

}  // namespace mm
