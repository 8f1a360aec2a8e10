#include "mm/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

#include "mm/digest.hpp"
#include "mm/errors.hpp"
#include "mm/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mm {

namespace {

constexpr double kColorTol = 0.5 / 255.0;  // exact 8-bit colors after PPM round trip

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

// ---- stub transport ----

// Distinct non-black colors of a clip, in first-appearance order scanning
// frames then pixels. Deterministic for a given video.
std::vector<std::array<double, 3>> distinct_colors(const VideoClip& v) {
    std::vector<std::array<double, 3>> colors;
    const int64_t n = v.numel() / 3;
    for (int64_t i = 0; i < n; ++i) {
        const double r = v[i * 3], g = v[i * 3 + 1], b = v[i * 3 + 2];
        if (r < kColorTol && g < kColorTol && b < kColorTol) continue;  // background
        bool known = false;
        for (const auto& c : colors) {
            if (std::abs(c[0] - r) < kColorTol && std::abs(c[1] - g) < kColorTol && std::abs(c[2] - b) < kColorTol) {
                known = true;
                break;
            }
        }
        if (!known) colors.push_back({r, g, b});
    }
    return colors;
}

Tensor color_mask(const VideoClip& v, int64_t t, const std::array<double, 3>& c) {
    const int64_t h = v.shape[1], w = v.shape[2];
    Tensor mask = Tensor::zeros({h, w});
    for (int64_t i = 0; i < h * w; ++i) {
        const double* px = v.data.data() + (t * h * w + i) * 3;
        if (std::abs(px[0] - c[0]) < kColorTol && std::abs(px[1] - c[1]) < kColorTol &&
            std::abs(px[2] - c[2]) < kColorTol) {
            mask[i] = 1.0;
        }
    }
    return mask;
}

bool mask_centroid(const Tensor& mask, double* cy, double* cx) {
    const int64_t h = mask.shape[0], w = mask.shape[1];
    double sy = 0, sx = 0;
    int64_t n = 0;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (mask[y * w + x] > 0.5) {
                sy += static_cast<double>(y);
                sx += static_cast<double>(x);
                ++n;
            }
        }
    }
    if (n == 0) return false;
    *cy = sy / n;
    *cx = sx / n;
    return true;
}

class StubTransport : public ClientTransport {
  public:
    std::string call(const std::string& kind, const std::string& request_json) override {
        json req;
        try {
            req = json::parse(request_json);
        } catch (const json::exception& e) {
            throw ClientError(std::string("bad client request: ") + e.what());
        }
        try {
            if (kind == "objects") return objects(req).dump();
            if (kind == "segment") return segment(req).dump();
            if (kind == "flow") return flow(req).dump();
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw ClientError("stub " + kind + " failed: " + e.what());
        }
        throw ClientError("unknown client kind: " + kind);
    }

  private:
    json objects(const json& req) {
        // fixed lexicon: phrases are caption words that name segmentable things
        static const std::set<std::string> lexicon = {
            "dog",  "ball",   "cat",    "car",   "person", "bird",     "horse", "boat",
            "square", "circle", "box",  "disk",  "blob",   "triangle", "ship",  "kite"};
        std::string caption = req.at("caption").get<std::string>();
        for (char& c : caption) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        std::istringstream ss(caption);
        std::vector<std::string> found;
        std::string word;
        while (ss >> word) {
            while (!word.empty() && !std::isalnum(static_cast<unsigned char>(word.back()))) word.pop_back();
            if (lexicon.count(word) && std::find(found.begin(), found.end(), word) == found.end()) {
                found.push_back(word);
            }
        }
        if (found.empty()) return json{{"objects", json::array({"empty"})}};
        return json{{"objects", found}};
    }

    json segment(const json& req) {
        const VideoClip v = read_frame_dir(req.at("video_ref").get<std::string>());
        const auto phrases = req.at("phrases").get<std::vector<std::string>>();
        const auto colors = distinct_colors(v);
        const size_t n = std::min(phrases.size(), colors.size());
        const int64_t T = v.shape[0], H = v.shape[1], W = v.shape[2];

        TrajectorySet ts;
        ts.T = T;
        ts.H = H;
        ts.W = W;
        for (size_t i = 0; i < n; ++i) {
            ObjectTrack tr;
            tr.object_id = static_cast<int>(i);
            // color identity is assigned by the curation step; report the
            // source color here so tests can see what was matched
            tr.color = {static_cast<int>(std::lround(colors[i][0] * 255)),
                        static_cast<int>(std::lround(colors[i][1] * 255)),
                        static_cast<int>(std::lround(colors[i][2] * 255))};
            for (int64_t t = 0; t < T; ++t) {
                Tensor mask = color_mask(v, t, colors[i]);
                bool any = false;
                for (double m : mask.data) {
                    if (m > 0.5) {
                        any = true;
                        break;
                    }
                }
                if (!any) continue;
                FrameAnnotation fa;
                fa.frame_index = t;
                fa.mask = std::move(mask);
                tr.frames.push_back(std::move(fa));
            }
            if (!tr.frames.empty()) ts.tracks.push_back(std::move(tr));
        }
        return json{{"tracks", json::parse(trajectory_to_json(ts))}};
    }

    json flow(const json& req) {
        const std::string ref = req.at("video_ref").get<std::string>();
        const int64_t a = req.at("frame_a").get<int64_t>();
        const int64_t b = req.at("frame_b").get<int64_t>();
        const VideoClip v = read_frame_dir(ref);
        if (a < 0 || b < 0 || a >= v.shape[0] || b >= v.shape[0]) throw ClientError("flow frame out of range");
        const int64_t H = v.shape[1], W = v.shape[2];

        // per-color rigid displacement: each colored region moves by the
        // displacement of its centroid between the two frames
        Tensor field = Tensor::zeros({H, W, 2});
        for (const auto& c : distinct_colors(v)) {
            Tensor ma = color_mask(v, a, c);
            Tensor mb = color_mask(v, b, c);
            double ay, ax, by, bx;
            if (!mask_centroid(ma, &ay, &ax) || !mask_centroid(mb, &by, &bx)) continue;
            const double dy = by - ay, dx = bx - ax;
            for (int64_t i = 0; i < H * W; ++i) {
                if (ma[i] > 0.5) {
                    field[i * 2] = dx;
                    field[i * 2 + 1] = dy;
                }
            }
        }
        std::string dir = env_or_empty("MM_CACHE_DIR");
        if (dir.empty()) dir = (fs::temp_directory_path() / "mm_stub_flow").string();
        fs::create_directories(dir);
        const std::string key = sha256_hex(ref + "#" + std::to_string(a) + "#" + std::to_string(b));
        const std::string path = (fs::path(dir) / ("flow_" + key.substr(0, 16) + ".tnsr")).string();
        write_tensor_file(path, field);
        return json{{"flow_file", path}};
    }
};

// ---- http transport ----

class HttpTransport : public ClientTransport {
  public:
    std::string call(const std::string& kind, const std::string& request_json) override {
        std::string env_name = "MM_CLIENT_ENDPOINT_";
        for (char c : kind) env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        const std::string endpoint = env_or_empty(env_name.c_str());
        if (endpoint.empty()) throw ClientError("no endpoint configured: set " + env_name);

        // endpoint form: http://host:port/path
        std::string rest = endpoint;
        const auto scheme = rest.find("://");
        if (scheme != std::string::npos) rest = rest.substr(scheme + 3);
        std::string path = "/";
        const auto slash = rest.find('/');
        if (slash != std::string::npos) {
            path = rest.substr(slash);
            rest = rest.substr(0, slash);
        }
        httplib::Client cli(("http://" + rest).c_str());
        cli.set_connection_timeout(5);
        cli.set_read_timeout(30);
        auto res = cli.Post(path.c_str(), request_json, "application/json");
        if (!res) throw ClientError("client " + kind + " unreachable at " + endpoint);
        if (res->status != 200) {
            throw ClientError("client " + kind + " returned status " + std::to_string(res->status));
        }
        return res->body;
    }
};

// ---- record/replay cache ----

class CachedTransport : public ClientTransport {
  public:
    CachedTransport(std::unique_ptr<ClientTransport> inner, std::string dir)
        : inner_(std::move(inner)), dir_(std::move(dir)) {}

    std::string call(const std::string& kind, const std::string& request_json) override {
        const std::string key = sha256_hex(kind + "\n" + request_json);
        const fs::path file = fs::path(dir_) / (kind + "_" + key.substr(0, 24) + ".json");
        if (fs::exists(file)) return read_text(file.string());
        std::string response = inner_->call(kind, request_json);
        fs::create_directories(dir_);
        if (kind == "flow") {
            // keep the referenced tensor alive inside the cache as well
            try {
                json r = json::parse(response);
                const std::string src = r.at("flow_file").get<std::string>();
                const fs::path dst = fs::path(dir_) / ("flowdata_" + key.substr(0, 24) + ".tnsr");
                if (fs::absolute(src) != fs::absolute(dst)) fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
                r["flow_file"] = dst.string();
                response = r.dump();
            } catch (const json::exception& e) {
                throw ClientError(std::string("flow response malformed: ") + e.what());
            }
        }
        write_text_atomic(file.string(), response);
        return response;
    }

  private:
    std::unique_ptr<ClientTransport> inner_;
    std::string dir_;
};

json call_json(ClientTransport& client, const std::string& kind, const json& request) {
    const std::string body = client.call(kind, request.dump());
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw ClientError(kind + " response is not JSON: " + e.what());
    }
}

}  // namespace

std::unique_ptr<ClientTransport> make_stub_transport() { return std::make_unique<StubTransport>(); }
std::unique_ptr<ClientTransport> make_http_transport() { return std::make_unique<HttpTransport>(); }

std::unique_ptr<ClientTransport> make_cached_transport(std::unique_ptr<ClientTransport> inner,
                                                       std::string cache_dir) {
    if (cache_dir.empty()) cache_dir = env_or_empty("MM_CACHE_DIR");
    if (cache_dir.empty()) return inner;
    return std::make_unique<CachedTransport>(std::move(inner), std::move(cache_dir));
}

std::unique_ptr<ClientTransport> make_default_transport() {
    const bool any_http = !env_or_empty("MM_CLIENT_ENDPOINT_OBJECTS").empty() ||
                          !env_or_empty("MM_CLIENT_ENDPOINT_SEGMENT").empty() ||
                          !env_or_empty("MM_CLIENT_ENDPOINT_FLOW").empty();
    std::unique_ptr<ClientTransport> base = any_http ? make_http_transport() : make_stub_transport();
    return make_cached_transport(std::move(base));
}

std::vector<std::string> extract_objects(const std::string& caption, ClientTransport& client) {
    if (caption.empty()) throw InputError("extract_objects on empty caption");
    json r = call_json(client, "objects", json{{"caption", caption}});
    std::vector<std::string> objects;
    try {
        objects = r.at("objects").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ClientError(std::string("objects response malformed: ") + e.what());
    }
    std::vector<std::string> out;
    for (std::string& o : objects) {
        if (o != "empty") out.push_back(std::move(o));
    }
    return out;
}

double flow_score_tracked(const std::vector<Tensor>& flow_fields, const std::vector<const Tensor*>& masks) {
    if (flow_fields.empty()) throw InputError("flow_score needs at least one field");
    if (masks.size() != flow_fields.size()) throw InputError("one mask slot per flow field required");
    double acc = 0.0;
    int64_t n = 0;
    for (size_t f = 0; f < flow_fields.size(); ++f) {
        const Tensor& field = flow_fields[f];
        if (field.rank() != 3 || field.shape[2] != 2) {
            throw ShapeError("flow field must be (H, W, 2), got " + field.shape_str());
        }
        const Tensor* mask = masks[f];
        if (mask && (mask->rank() != 2 || mask->shape[0] != field.shape[0] || mask->shape[1] != field.shape[1])) {
            throw ShapeError("flow mask " + mask->shape_str() + " does not match field " + field.shape_str());
        }
        const int64_t pixels = field.shape[0] * field.shape[1];
        for (int64_t i = 0; i < pixels; ++i) {
            if (mask && (*mask)[i] < 0.5) continue;
            acc += std::abs(field[i * 2]) + std::abs(field[i * 2 + 1]);
            n += 2;
        }
    }
    if (n == 0) throw UndefinedScore("flow_score over empty masks");
    return acc / static_cast<double>(n);
}

double flow_score(const std::vector<Tensor>& flow_fields, const std::optional<Tensor>& mask) {
    std::vector<const Tensor*> masks(flow_fields.size(), mask ? &*mask : nullptr);
    return flow_score_tracked(flow_fields, masks);
}

double area_ratio(const TrajectorySet& ts) {
    if (ts.H <= 0 || ts.W <= 0) throw ShapeError("area_ratio needs a positive canvas");
    // union of all objects' foreground per annotated frame
    std::map<int64_t, Tensor> unions;
    for (const ObjectTrack& tr : ts.tracks) {
        for (const FrameAnnotation& fa : tr.frames) {
            auto [it, fresh] = unions.try_emplace(fa.frame_index, Tensor::zeros({ts.H, ts.W}));
            Tensor& u = it->second;
            if (fa.mask) {
                for (int64_t i = 0; i < u.numel(); ++i) {
                    if ((*fa.mask)[i] > 0.5) u[i] = 1.0;
                }
            } else if (fa.bbox) {
                const auto& b = *fa.bbox;
                for (int64_t y = b[1]; y <= b[3]; ++y) {
                    for (int64_t x = b[0]; x <= b[2]; ++x) u[y * ts.W + x] = 1.0;
                }
            }
        }
    }
    if (unions.empty()) throw UndefinedScore("area_ratio on an unannotated trajectory");
    double acc = 0.0;
    for (const auto& [frame, u] : unions) {
        int64_t fg = 0;
        for (double v : u.data) fg += v > 0.5 ? 1 : 0;
        acc += static_cast<double>(fg) / static_cast<double>(ts.H * ts.W);
    }
    return acc / static_cast<double>(unions.size());
}

TripletRecord filter_record(TripletRecord r, const FilterThresholds& th) {
    if (!r.diagnostics.computed) throw InputError("filter_record before diagnostics were computed");
    const Diagnostics& d = r.diagnostics;
    auto reject = [&](const char* reason) {
        r.status = "rejected";
        r.reject_reason = reason;
        return r;
    };
    if (d.flow_score < th.min_flow) return reject("low_motion");
    for (double fg : d.fg_flow_scores) {
        if (fg < th.min_fg_flow) return reject("fg_motion");
    }
    if (d.object_count < th.min_objects || d.object_count > th.max_objects) return reject("object_count");
    if (d.area_ratio < th.min_area || d.area_ratio > th.max_area) return reject("area_ratio");
    r.status = "kept";
    r.reject_reason.clear();
    return r;
}

TripletRecord curate(const std::string& video_ref, const std::string& caption, ClientTransport& client) {
    TripletRecord rec;
    rec.video_ref = video_ref;
    rec.caption = caption;
    try {
        const std::vector<std::string> phrases = extract_objects(caption, client);
        if (phrases.empty()) {
            rec.status = "rejected";
            rec.reject_reason = "no_foreground";
            return rec;
        }

        json seg = call_json(client, "segment", json{{"video_ref", video_ref}, {"phrases", phrases}});
        TrajectorySet raw;
        try {
            raw = trajectory_from_json(seg.at("tracks").dump());
        } catch (const json::exception& e) {
            throw ClientError(std::string("segment response malformed: ") + e.what());
        }

        // keep only tracks seeded by a frame-0 mask, then give each kept
        // track its palette color and tight per-frame boxes
        TrajectorySet ts;
        ts.T = raw.T;
        ts.H = raw.H;
        ts.W = raw.W;
        for (ObjectTrack& tr : raw.tracks) {
            if (tr.frames.empty() || tr.frames[0].frame_index != 0 || !tr.frames[0].mask) continue;
            ts.tracks.push_back(std::move(tr));
        }
        if (ts.tracks.empty()) {
            rec.status = "rejected";
            rec.reject_reason = "no_foreground";
            return rec;
        }
        const auto palette = assign_palette(static_cast<int>(ts.tracks.size()));
        for (size_t i = 0; i < ts.tracks.size(); ++i) {
            ts.tracks[i].object_id = static_cast<int>(i);
            ts.tracks[i].color = palette[i];
            for (FrameAnnotation& fa : ts.tracks[i].frames) {
                if (fa.mask) fa.bbox = extract_bbox(*fa.mask);
            }
        }
        validate_trajectory(ts);
        rec.trajectory = std::move(ts);

        // diagnostics: dense flow between consecutive frames
        if (rec.trajectory.T < 2) throw ClientError("curate needs at least 2 frames for flow");
        std::vector<Tensor> fields;
        for (int64_t t = 0; t + 1 < rec.trajectory.T; ++t) {
            json f = call_json(client, "flow",
                               json{{"video_ref", video_ref}, {"frame_a", t}, {"frame_b", t + 1}});
            std::string flow_file;
            try {
                flow_file = f.at("flow_file").get<std::string>();
            } catch (const json::exception& e) {
                throw ClientError(std::string("flow response malformed: ") + e.what());
            }
            fields.push_back(read_tensor_file(flow_file));
        }
        rec.diagnostics.flow_score = flow_score(fields);
        for (const ObjectTrack& tr : rec.trajectory.tracks) {
            std::vector<const Tensor*> masks(fields.size(), nullptr);
            for (const FrameAnnotation& fa : tr.frames) {
                if (fa.mask && fa.frame_index < static_cast<int64_t>(fields.size())) {
                    masks[static_cast<size_t>(fa.frame_index)] = &*fa.mask;
                }
            }
            rec.diagnostics.fg_flow_scores.push_back(flow_score_tracked(fields, masks));
        }
        rec.diagnostics.object_count = static_cast<int>(rec.trajectory.tracks.size());
        rec.diagnostics.area_ratio = area_ratio(rec.trajectory);
        rec.diagnostics.computed = true;
        rec.status = "pending";
    } catch (const ClientError& e) {
        rec.status = "rejected";
        rec.reject_reason = "client_error";
        rec.caption = caption;
    }
    return rec;
}

std::map<std::string, std::vector<size_t>> build_benchmark(const std::vector<TripletRecord>& records,
                                                           size_t bucket_cap) {
    std::map<std::string, std::vector<size_t>> buckets{{"1", {}}, {"2", {}}, {"3", {}}, {"4", {}}, {"5", {}},
                                                       {"gt5", {}}};
    for (size_t i = 0; i < records.size(); ++i) {
        const TripletRecord& r = records[i];
        if (r.status != "kept") continue;
        const int n = static_cast<int>(r.trajectory.tracks.size());
        if (n == 0) throw InputError("kept record " + r.video_ref + " has zero objects");
        const std::string key = n > 5 ? "gt5" : std::to_string(n);
        if (buckets[key].size() < bucket_cap) buckets[key].push_back(i);
    }
    return buckets;
}

namespace {

json diagnostics_to_json(const Diagnostics& d) {
    return json{{"flow_score", d.flow_score},
                {"fg_flow_scores", d.fg_flow_scores},
                {"object_count", d.object_count},
                {"area_ratio", d.area_ratio}};
}

Diagnostics diagnostics_from_json(const json& j) {
    Diagnostics d;
    d.flow_score = j.at("flow_score").get<double>();
    d.fg_flow_scores = j.at("fg_flow_scores").get<std::vector<double>>();
    d.object_count = j.at("object_count").get<int>();
    d.area_ratio = j.at("area_ratio").get<double>();
    d.computed = true;
    return d;
}

}  // namespace

void write_manifest(const std::string& path, const std::vector<TripletRecord>& records) {
    const fs::path dir = fs::path(path).parent_path();
    const fs::path traj_dir = dir / "trajectories";
    std::ostringstream out;
    size_t n = 0;
    std::vector<std::pair<std::string, std::string>> traj_files;  // path, content
    for (const TripletRecord& r : records) {
        json line;
        line["video_ref"] = r.video_ref;
        line["caption"] = r.caption;
        if (!r.trajectory.tracks.empty()) {
            const std::string tf = (traj_dir / (std::to_string(n) + ".json")).string();
            traj_files.emplace_back(tf, trajectory_to_json(r.trajectory));
            line["trajectory_file"] = tf;
        } else {
            line["trajectory_file"] = nullptr;
        }
        line["diagnostics"] = r.diagnostics.computed ? diagnostics_to_json(r.diagnostics) : json(nullptr);
        line["status"] = r.status;
        line["reject_reason"] = r.reject_reason.empty() ? json(nullptr) : json(r.reject_reason);
        out << line.dump() << "\n";
        ++n;
    }
    if (!traj_files.empty()) fs::create_directories(traj_dir);
    for (const auto& [tf, content] : traj_files) write_text_atomic(tf, content);
    if (!dir.empty()) fs::create_directories(dir);
    write_text_atomic(path, out.str());
}

std::vector<TripletRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open manifest: " + path);
    std::vector<TripletRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError("manifest line " + std::to_string(records.size() + 1) + " malformed: " + e.what());
        }
        TripletRecord r;
        r.video_ref = j.at("video_ref").get<std::string>();
        r.caption = j.at("caption").get<std::string>();
        if (j.contains("trajectory_file") && !j.at("trajectory_file").is_null()) {
            r.trajectory_file = j.at("trajectory_file").get<std::string>();
            r.trajectory = trajectory_from_json(read_text(r.trajectory_file));
        }
        if (j.contains("diagnostics") && !j.at("diagnostics").is_null()) {
            r.diagnostics = diagnostics_from_json(j.at("diagnostics"));
        }
        r.status = j.at("status").get<std::string>();
        if (j.contains("reject_reason") && !j.at("reject_reason").is_null()) {
            r.reject_reason = j.at("reject_reason").get<std::string>();
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<std::pair<std::string, std::string>> read_caption_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open caption manifest: " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError("caption manifest malformed: " + std::string(e.what()));
        }
        out.emplace_back(j.at("video_ref").get<std::string>(), j.at("caption").get<std::string>());
    }
    return out;
}

}  // namespace mm
