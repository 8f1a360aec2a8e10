#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mm/trajgeo.hpp"

namespace mm {

struct Diagnostics {
    bool computed = false;
    double flow_score = 0.0;                // mean |flow component| over all pixels
    std::vector<double> fg_flow_scores;     // per object, over its mask pixels
    int object_count = 0;
    double area_ratio = 0.0;                // mean annotated-union fraction
};

// One <video, text, trajectory> dataset entry. status is "pending" after
// curation, then "kept" or "rejected" once filtered.
struct TripletRecord {
    std::string video_ref;  // frame directory
    std::string caption;
    TrajectorySet trajectory;
    std::string trajectory_file;  // set when serialized into a manifest
    Diagnostics diagnostics;
    std::string status = "pending";
    std::string reject_reason;
};

struct FilterThresholds {
    double min_flow = 2.0;
    double min_fg_flow = 2.0;
    int min_objects = 1;
    int max_objects = 3;
    double min_area = 0.008;
    double max_area = 0.83;
};

// External model clients are request/response transports speaking JSON, keyed
// by kind: "objects" ({"caption"} -> {"objects": [...]}), "segment"
// ({"video_ref", "phrases"} -> {"tracks": trajectory-JSON}), and "flow"
// ({"video_ref", "frame_a", "frame_b"} -> {"flow_file": raw tensor path}).
class ClientTransport {
  public:
    virtual ~ClientTransport() = default;
    // Throws ClientError on any transport or protocol failure.
    virtual std::string call(const std::string& kind, const std::string& request_json) = 0;
};

// In-process reference stubs: a fixed-lexicon object extractor, an exact-color
// segmenter (objects are solid distinct colors on black), and a per-color
// centroid-displacement flow estimator.
std::unique_ptr<ClientTransport> make_stub_transport();

// HTTP-JSON binding; endpoint for each kind read from
// MM_CLIENT_ENDPOINT_OBJECTS / _SEGMENT / _FLOW.
std::unique_ptr<ClientTransport> make_http_transport();

// Record/replay cache around another transport, keyed by digest of
// kind + request. cache_dir empty -> MM_CACHE_DIR; if that is unset too the
// inner transport is used directly.
std::unique_ptr<ClientTransport> make_cached_transport(std::unique_ptr<ClientTransport> inner,
                                                       std::string cache_dir = "");

// Builds the default transport stack: stubs unless any MM_CLIENT_ENDPOINT_*
// is set, wrapped in the cache when MM_CACHE_DIR is set.
std::unique_ptr<ClientTransport> make_default_transport();

// Caption -> foreground object phrases; the "empty" response maps to an empty
// list. Empty caption is an InputError.
std::vector<std::string> extract_objects(const std::string& caption, ClientTransport& client);

// Mean absolute flow component over the given (H, W, 2) fields; with a mask,
// restricted to foreground pixels, skipping empty-mask fields. All-empty
// masks -> UndefinedScore.
double flow_score(const std::vector<Tensor>& flow_fields, const std::optional<Tensor>& mask = std::nullopt);
// Per-field masks (an object's mask at the field's source frame); null
// entries and empty masks are skipped.
double flow_score_tracked(const std::vector<Tensor>& flow_fields, const std::vector<const Tensor*>& masks);

// Mean over annotated frames of union-foreground fraction.
double area_ratio(const TrajectorySet& ts);

// Applies the filter predicates in order (low_motion, fg_motion,
// object_count, area_ratio); returns the record with status decided.
TripletRecord filter_record(TripletRecord r, const FilterThresholds& th);

// Full curation of one video: extract objects, segment, derive boxes and
// colors, compute diagnostics. Leaves status "pending" (or "rejected" with
// no_foreground / client_error).
TripletRecord curate(const std::string& video_ref, const std::string& caption, ClientTransport& client);

// Object-count buckets "1".."5" and "gt5", each capped (default 100); every
// kept record lands in exactly one bucket. A record with zero objects is an
// InputError.
std::map<std::string, std::vector<size_t>> build_benchmark(const std::vector<TripletRecord>& records,
                                                           size_t bucket_cap = 100);

// JSONL manifest round trip. Trajectories are stored as separate files next
// to the manifest (dir/trajectories/<n>.json) and referenced by path.
void write_manifest(const std::string& path, const std::vector<TripletRecord>& records);
std::vector<TripletRecord> read_manifest(const std::string& path);
// Caption manifests: {"video_ref": ..., "caption": ...} per line.
std::vector<std::pair<std::string, std::string>> read_caption_manifest(const std::string& path);

}  // namespace mm
