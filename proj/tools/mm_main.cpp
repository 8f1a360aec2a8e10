// mm: command-line front end for the trajectory-controlled video generation
// toolkit. Subcommands cover the whole workflow: dataset curation and
// filtering, benchmark construction, condition rendering, codec and stage
// training, sampling, and IoU evaluation.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mm/datapipe.hpp"
#include "mm/digest.hpp"
#include "mm/errors.hpp"
#include "mm/evalkit.hpp"
#include "mm/io.hpp"
#include "mm/parallel.hpp"
#include "mm/seghead.hpp"
#include "mm/stages.hpp"
#include "mm/trajcontrol.hpp"

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "0.1.0";

// Validation failures (bad configs, malformed inputs, out-of-range requests)
// exit 1; failures of the run itself (weights, numerics, clients, I/O) exit 2.
int error_exit_code(const std::exception& e) {
    if (dynamic_cast<const mm::InputError*>(&e) || dynamic_cast<const mm::InvalidSparsity*>(&e) ||
        dynamic_cast<const mm::ShapeError*>(&e) || dynamic_cast<const mm::OutOfBounds*>(&e) ||
        dynamic_cast<const mm::EmptyMask*>(&e) || dynamic_cast<const mm::PaletteExhausted*>(&e) ||
        dynamic_cast<const mm::StepError*>(&e) || dynamic_cast<const mm::UndefinedScore*>(&e)) {
        return 1;
    }
    return 2;
}

struct RunInfo {
    std::string command;
    json options = json::object();
    std::string config_digest;  // raw config file bytes, or the options JSON
    uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

class ManifestWriter {
  public:
    explicit ManifestWriter(RunInfo info) : info_(std::move(info)), t0_(Clock::now()) {}

    // Written once at run end; atomic via write-then-rename.
    void commit(const std::string& path) const {
        RunInfo mi = info_;
        if (mi.config_digest.empty()) mi.config_digest = mm::sha256_hex(mi.options.dump());
        const double wall = std::chrono::duration<double>(Clock::now() - t0_).count();
        json j{{"command", mi.command},   {"config_digest", mi.config_digest},
               {"seed", mi.seed},         {"inputs", mi.inputs},
               {"outputs", mi.outputs},   {"tool_version", kToolVersion},
               {"wall_seconds", wall},    {"options", mi.options}};
        std::filesystem::create_directories(std::filesystem::path(path).parent_path().string().empty()
                                                ? "."
                                                : std::filesystem::path(path).parent_path().string());
        mm::write_text_atomic(path, j.dump(2) + "\n");
    }

    RunInfo& info() { return info_; }

  private:
    using Clock = std::chrono::steady_clock;
    RunInfo info_;
    Clock::time_point t0_;
};

mm::ConditionKind parse_kind(const std::string& kind) {
    if (kind == "sparse") return mm::ConditionKind::sparse_box;
    return mm::condition_kind_from(kind);
}

// Records that survived curation/filtering; "pending" records have not been
// filtered yet and still count as usable.
std::vector<mm::TripletRecord> usable_records(std::vector<mm::TripletRecord> records) {
    std::vector<mm::TripletRecord> out;
    for (mm::TripletRecord& r : records) {
        if (r.status != "rejected") out.push_back(std::move(r));
    }
    return out;
}

std::string clip_name(std::string ref) {
    while (!ref.empty() && (ref.back() == '/' || ref.back() == '\\')) ref.pop_back();
    const std::string name = std::filesystem::path(ref).filename().string();
    return name.empty() ? ref : name;
}

mm::Tensor first_frame(const mm::VideoClip& clip) {
    const int64_t H = clip.dim(1), W = clip.dim(2);
    mm::Tensor frame({H, W, 3});
    std::copy(clip.data.begin(), clip.data.begin() + H * W * 3, frame.data.begin());
    return frame;
}

// ---- render ----

struct RenderOpts {
    std::string trajectory, out, kind = "mask";
    int k = 0;
};

int run_render(const RenderOpts& o) {
    ManifestWriter mw({.command = "render",
                       .options = {{"trajectory", o.trajectory}, {"kind", o.kind}, {"k", o.k}},
                       .inputs = {o.trajectory},
                       .outputs = {o.out}});
    const mm::TrajectorySet ts = mm::trajectory_from_json(mm::read_text(o.trajectory));
    const mm::VideoClip cond = mm::make_condition(ts, parse_kind(o.kind), o.k);
    mm::write_frame_dir(o.out, cond);
    std::cout << "rendered " << cond.dim(0) << " condition frames to " << o.out << "\n";
    mw.commit(o.out + "/run_manifest.json");
    return 0;
}

// ---- train ----

struct TrainOpts {
    std::string config, data, out;
    uint64_t seed = 0;
    bool seed_set = false;
    int steps = 0;
    bool override_lambda = false;
};

int run_train(const TrainOpts& o) {
    const std::string cfg_text = mm::read_text(o.config);
    mm::StageConfig cfg = mm::stage_config_from_json(cfg_text);
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (o.seed_set) cfg.seed = o.seed;
    if (o.steps > 0) cfg.steps_override = o.steps;
    if (o.override_lambda) cfg.override_lambda = true;

    ManifestWriter mw({.command = "train",
                       .options = {{"config", o.config}, {"data", o.data},
                                   {"steps_override", cfg.steps_override},
                                   {"override_lambda", cfg.override_lambda}},
                       .config_digest = mm::sha256_hex(cfg_text),
                       .seed = cfg.seed,
                       .inputs = {o.config, o.data},
                       .outputs = {cfg.out_dir}});

    const std::vector<mm::TripletRecord> data = usable_records(mm::read_manifest(o.data));
    const mm::TrainReport rep = mm::train_stage(cfg, data);
    std::cout << "stage " << rep.stage_id << " (" << rep.init_label << "): "
              << rep.steps.size() << " steps, probe loss " << rep.probe_loss_initial << " -> "
              << rep.probe_loss_final << "\ncheckpoint: " << rep.checkpoint_dir << "\n";
    mw.commit(cfg.out_dir + "/run_manifest.json");
    return 0;
}

// ---- train-codec ----

struct TrainCodecOpts {
    std::string data, out;
    int steps = 200;
    double lr = 1e-3;
    uint64_t seed = 0;
};

int run_train_codec(const TrainCodecOpts& o) {
    ManifestWriter mw({.command = "train-codec",
                       .options = {{"data", o.data}, {"steps", o.steps}, {"lr", o.lr}},
                       .seed = o.seed,
                       .inputs = {o.data},
                       .outputs = {o.out}});

    const std::vector<mm::TripletRecord> data = usable_records(mm::read_manifest(o.data));
    if (data.empty()) throw mm::InputError("train-codec: no usable records in " + o.data);
    // The codec must reconstruct both real clips and rendered condition
    // videos, so both go into the training mix.
    std::vector<mm::VideoClip> clips;
    for (const mm::TripletRecord& rec : data) {
        clips.push_back(mm::read_frame_dir(rec.video_ref));
        if (!rec.trajectory.tracks.empty()) clips.push_back(mm::render_mask_map(rec.trajectory));
    }

    mm::ParamStore ps;
    mm::Rng rng(o.seed);
    mm::CodecConfig ccfg;
    mm::Codec codec(ccfg, ps, &rng);
    mm::CodecTrainConfig tcfg;
    tcfg.steps = o.steps;
    tcfg.lr = o.lr;
    tcfg.seed = o.seed;
    const mm::CodecTrainReport rep = mm::train_codec(codec, ps, clips, tcfg);

    const std::string ckpt = o.out + "/checkpoint";
    mm::save_checkpoint(ckpt, ps);
    mm::write_text_atomic(ckpt + "/config.json",
                          mm::checkpoint_spec_to_json({mm::DitConfig{}, ccfg, 0, 0.0}));
    json jr{{"steps", rep.losses.size()}, {"final_loss", rep.final_loss}};
    mm::write_text_atomic(o.out + "/report.json", jr.dump(2) + "\n");
    std::cout << "codec: " << rep.losses.size() << " steps, final loss " << rep.final_loss
              << "\ncheckpoint: " << ckpt << "\n";
    mw.commit(o.out + "/run_manifest.json");
    return 0;
}

// ---- pipeline ----

struct PipelineOpts {
    std::string config, data, out;
};

int run_pipeline_cmd(const PipelineOpts& o) {
    const std::string cfg_text = mm::read_text(o.config);
    json j;
    try {
        j = json::parse(cfg_text);
    } catch (const json::exception& e) {
        throw mm::InputError(std::string("pipeline config is not valid JSON: ") + e.what());
    }
    const json stages_json = j.is_array() ? j : j.value("stages", json::array());
    std::vector<mm::StageConfig> cfgs;
    for (const json& sj : stages_json) cfgs.push_back(mm::stage_config_from_json(sj.dump()));
    for (mm::StageConfig& cfg : cfgs) {
        if (cfg.out_dir.empty()) {
            if (o.out.empty()) throw mm::InputError("pipeline: stages lack out_dir and no --out given");
            cfg.out_dir = o.out + "/stage" + std::to_string(cfg.stage_id);
        }
    }

    ManifestWriter mw({.command = "pipeline",
                       .options = {{"config", o.config}, {"data", o.data}},
                       .config_digest = mm::sha256_hex(cfg_text),
                       .seed = cfgs.empty() ? 0 : cfgs.front().seed,
                       .inputs = {o.config, o.data},
                       .outputs = {}});
    for (const mm::StageConfig& cfg : cfgs) mw.info().outputs.push_back(cfg.out_dir);

    const std::vector<mm::TripletRecord> data = usable_records(mm::read_manifest(o.data));
    const std::vector<mm::TrainReport> reports = mm::run_pipeline(cfgs, data);
    for (const mm::TrainReport& rep : reports) {
        std::cout << "stage " << rep.stage_id << " (" << rep.init_label << "): probe loss "
                  << rep.probe_loss_initial << " -> " << rep.probe_loss_final << "\n";
    }
    const std::string root =
        o.out.empty() ? std::filesystem::path(cfgs.front().out_dir).parent_path().string() : o.out;
    mw.commit((root.empty() ? std::string(".") : root) + "/run_manifest.json");
    return 0;
}

// ---- generate ----

struct GenerateOpts {
    std::string checkpoint, image, trajectory, out, kind = "mask";
    int k = 0;
    int steps = 50;
    double guidance = 6.0;
    double control_scale = 1.0;
    uint64_t seed = 0;
};

int run_generate(const GenerateOpts& o) {
    ManifestWriter mw({.command = "generate",
                       .options = {{"checkpoint", o.checkpoint}, {"image", o.image},
                                   {"trajectory", o.trajectory}, {"kind", o.kind},
                                   {"k", o.k}, {"steps", o.steps}, {"guidance", o.guidance},
                                   {"control_scale", o.control_scale}},
                       .seed = o.seed,
                       .inputs = {o.checkpoint, o.image, o.trajectory},
                       .outputs = {o.out}});

    const mm::CheckpointSpec spec = mm::read_checkpoint_spec(o.checkpoint);
    mm::ParamStore ps;
    mm::load_checkpoint(o.checkpoint, ps);
    const mm::Codec codec(spec.codec, ps, nullptr);
    const mm::Denoiser base(spec.model, ps, nullptr);
    std::unique_ptr<mm::ControlBranch> branch;
    if (!ps.names("control.").empty()) {
        branch = std::make_unique<mm::ControlBranch>(spec.model, ps);
    }

    const mm::Tensor image = mm::read_ppm(o.image);
    const mm::TrajectorySet ts = mm::trajectory_from_json(mm::read_text(o.trajectory));
    if (image.dim(0) != ts.H || image.dim(1) != ts.W) {
        throw mm::InputError("generate: image size does not match the trajectory canvas");
    }
    const mm::VideoClip cond = mm::make_condition(ts, parse_kind(o.kind), o.k);
    const mm::LatentBlock z_traj = codec.encode(cond, mm::LatentKind::trajectory);
    const mm::LatentBlock z_img =
        mm::pad_image_latent(codec.encode_image(image), z_traj.data.dim(0));

    mm::SampleConfig scfg;
    scfg.n_steps = o.steps;
    scfg.guidance = o.guidance;
    scfg.control_scale = o.control_scale;
    scfg.seed = o.seed;
    const mm::VideoClip video = mm::sample_with_control(base, branch.get(), codec, z_img, z_traj, scfg);
    mm::write_frame_dir(o.out, video);
    std::cout << "generated " << video.dim(0) << " frames to " << o.out << "\n";
    mw.commit(o.out + "/run_manifest.json");
    return 0;
}

// ---- curate ----

struct CurateOpts {
    std::string captions, out;
    int workers = 1;
};

int run_curate(const CurateOpts& o) {
    ManifestWriter mw({.command = "curate",
                       .options = {{"captions", o.captions}, {"workers", o.workers}},
                       .inputs = {o.captions},
                       .outputs = {o.out}});
    const auto caps = mm::read_caption_manifest(o.captions);
    const std::unique_ptr<mm::ClientTransport> transport = mm::make_default_transport();
    std::vector<mm::TripletRecord> records(caps.size());
    mm::parallel_for(static_cast<int64_t>(caps.size()), o.workers, [&](int64_t i) {
        records[i] = mm::curate(caps[i].first, caps[i].second, *transport);
    });
    mm::write_manifest(o.out, records);
    int pending = 0, rejected = 0;
    for (const mm::TripletRecord& r : records) (r.status == "rejected" ? rejected : pending)++;
    std::cout << "curated " << records.size() << " records (" << pending << " pending, "
              << rejected << " rejected) to " << o.out << "\n";
    mw.commit(o.out + ".run.json");
    return 0;
}

// ---- filter ----

struct FilterOpts {
    std::string in, out;
    mm::FilterThresholds th;
};

int run_filter(const FilterOpts& o) {
    ManifestWriter mw({.command = "filter",
                       .options = {{"in", o.in}, {"min_flow", o.th.min_flow},
                                   {"min_fg_flow", o.th.min_fg_flow},
                                   {"min_objects", o.th.min_objects},
                                   {"max_objects", o.th.max_objects},
                                   {"min_area", o.th.min_area}, {"max_area", o.th.max_area}},
                       .inputs = {o.in},
                       .outputs = {o.out}});
    std::vector<mm::TripletRecord> records = mm::read_manifest(o.in);
    int kept = 0;
    std::map<std::string, int> reasons;
    for (mm::TripletRecord& rec : records) {
        // Curation-time rejects (no foreground, client failure) carry no
        // diagnostics and stay rejected.
        if (rec.status == "rejected" && !rec.diagnostics.computed) {
            reasons[rec.reject_reason]++;
            continue;
        }
        rec = mm::filter_record(std::move(rec), o.th);
        if (rec.status == "kept") {
            kept++;
        } else {
            reasons[rec.reject_reason]++;
        }
    }
    mm::write_manifest(o.out, records);
    std::cout << "kept " << kept << " of " << records.size() << " records\n";
    for (const auto& [reason, count] : reasons) std::cout << "  rejected " << count << ": " << reason << "\n";
    mw.commit(o.out + ".run.json");
    return 0;
}

// ---- bench-build ----

struct BenchOpts {
    std::string in, out;
    size_t cap = 100;
};

int run_bench_build(const BenchOpts& o) {
    ManifestWriter mw({.command = "bench-build",
                       .options = {{"in", o.in}, {"bucket_cap", o.cap}},
                       .inputs = {o.in},
                       .outputs = {o.out}});
    const std::vector<mm::TripletRecord> records = mm::read_manifest(o.in);
    const std::map<std::string, std::vector<size_t>> buckets = mm::build_benchmark(records, o.cap);
    std::filesystem::create_directories(o.out);
    std::vector<mm::TripletRecord> combined;
    for (const auto& [name, indices] : buckets) {
        std::vector<mm::TripletRecord> bucket_records;
        for (size_t idx : indices) bucket_records.push_back(records[idx]);
        mm::write_manifest(o.out + "/bucket_" + name + ".jsonl", bucket_records);
        combined.insert(combined.end(), bucket_records.begin(), bucket_records.end());
        std::cout << "bucket " << name << ": " << indices.size() << " videos\n";
    }
    mm::write_manifest(o.out + "/benchmark.jsonl", combined);
    mw.commit(o.out + "/run_manifest.json");
    return 0;
}

// ---- evaluate ----

struct EvaluateOpts {
    std::string benchmark, pred_dir, tracker = "oracle", report, csv;
    int workers = 1;
};

int run_evaluate(const EvaluateOpts& o) {
    ManifestWriter mw({.command = "evaluate",
                       .options = {{"benchmark", o.benchmark}, {"pred_dir", o.pred_dir},
                                   {"tracker", o.tracker}, {"workers", o.workers}},
                       .inputs = {o.benchmark},
                       .outputs = {o.report}});
    // Rejected rows ride along in filtered manifests for bookkeeping; they are
    // not part of the benchmark and must not produce error entries.
    std::vector<mm::TripletRecord> records;
    for (mm::TripletRecord& r : mm::read_manifest(o.benchmark)) {
        if (r.status != "rejected") records.push_back(std::move(r));
    }
    const std::unique_ptr<mm::TrackerClient> tracker = mm::make_tracker(o.tracker, records);
    const std::string pred_dir = o.pred_dir;
    const auto load_pred = [&pred_dir](const mm::TripletRecord& rec) {
        // Without --pred-dir the ground-truth clip doubles as the prediction
        // (harness self-tests).
        if (pred_dir.empty()) return mm::read_frame_dir(rec.video_ref);
        return mm::read_frame_dir(pred_dir + "/" + clip_name(rec.video_ref));
    };
    const mm::IoUReport report = mm::evaluate(records, load_pred, *tracker, o.workers);
    mm::write_text_atomic(o.report, mm::iou_report_to_json(report));
    if (!o.csv.empty()) mm::write_text_atomic(o.csv, mm::iou_report_to_csv(report));
    std::cout << "scored " << report.overall.n_videos << " videos (" << report.errors.size()
              << " errors): mask_iou " << report.overall.mask_iou << ", box_iou "
              << report.overall.box_iou << "\n";
    mw.commit(o.report + ".run.json");
    return 0;
}

// ---- dump-latent-seg ----

struct DumpSegOpts {
    std::string checkpoint, video, trajectory, out;
    int t = 0;  // 0 -> the schedule midpoint
    uint64_t seed = 0;
};

int run_dump_latent_seg(const DumpSegOpts& o) {
    ManifestWriter mw({.command = "dump-latent-seg",
                       .options = {{"checkpoint", o.checkpoint}, {"video", o.video},
                                   {"trajectory", o.trajectory}, {"t", o.t}},
                       .seed = o.seed,
                       .inputs = {o.checkpoint, o.video, o.trajectory},
                       .outputs = {o.out}});

    const mm::CheckpointSpec spec = mm::read_checkpoint_spec(o.checkpoint);
    mm::ParamStore ps;
    mm::load_checkpoint(o.checkpoint, ps);
    const mm::Codec codec(spec.codec, ps, nullptr);
    const mm::Denoiser base(spec.model, ps, nullptr);
    const mm::ControlBranch branch(spec.model, ps);
    const mm::SegHead seghead(spec.model, ps, nullptr);

    const mm::VideoClip clip = mm::read_frame_dir(o.video);
    const mm::TrajectorySet ts = mm::trajectory_from_json(mm::read_text(o.trajectory));
    if (ts.T != clip.dim(0) || ts.H != clip.dim(1) || ts.W != clip.dim(2)) {
        throw mm::InputError("dump-latent-seg: trajectory canvas does not match the video");
    }

    const mm::Tensor x0 = codec.encode(clip).data;
    const mm::LatentBlock z_img =
        mm::pad_image_latent(codec.encode_image(first_frame(clip)), x0.dim(0));
    const mm::LatentBlock z_traj = codec.encode(mm::render_mask_map(ts), mm::LatentKind::trajectory);

    const int n_train = spec.model.n_train_steps;
    const int t = o.t > 0 ? o.t : n_train / 2;
    const mm::NoiseSchedule sched = mm::make_cosine_schedule(n_train);
    const double ab = mm::alpha_bar_at(sched, t);
    mm::Rng rng(o.seed);
    const mm::Tensor x_t = mm::add_noise_alpha(x0, rng.normal_tensor(x0.shape), ab);

    mm::NoGradGuard ng;
    const mm::DenoiserForward fwd = mm::full_forward(base, branch, z_img, x_t, z_traj,
                                                     static_cast<double>(t) / n_train, 1.0);
    const mm::Var z_seg = seghead.forward(fwd.features);
    std::filesystem::create_directories(o.out);
    mm::write_tensor_file(o.out + "/z_seg.tnsr", z_seg.val());
    const mm::VideoClip decoded = codec.decode({z_seg.val(), mm::LatentKind::segment});
    mm::write_frame_dir(o.out + "/decoded", decoded);
    std::cout << "wrote mask latent " << z_seg.val().shape_str() << " and its decode to " << o.out
              << "\n";
    mw.commit(o.out + "/run_manifest.json");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajectory-controlled image-to-video toolkit"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    RenderOpts render_opts;
    CLI::App* render = app.add_subcommand("render", "render a trajectory file to a condition video");
    render->add_option("--trajectory", render_opts.trajectory, "trajectory JSON file")->required();
    render->add_option("--out", render_opts.out, "output frame directory")->required();
    render->add_option("--kind", render_opts.kind, "condition kind: mask, box, or sparse")
        ->check(CLI::IsMember({"mask", "box", "sparse"}));
    render->add_option("--k", render_opts.k, "frames kept per track for --kind sparse");

    TrainOpts train_opts;
    CLI::App* train = app.add_subcommand("train", "run one training stage from a config");
    train->add_option("--config", train_opts.config, "stage config JSON")->required();
    train->add_option("--data", train_opts.data, "training manifest (JSONL)")->required();
    train->add_option("--out", train_opts.out, "override the config's out_dir");
    CLI::Option* train_seed = train->add_option("--seed", train_opts.seed, "override the config's seed");
    train->add_option("--steps", train_opts.steps, "override the step count");
    train->add_flag("--override-lambda", train_opts.override_lambda,
                    "allow a lambda_seg off the stage schedule");

    TrainCodecOpts codec_opts;
    CLI::App* train_codec = app.add_subcommand("train-codec", "train the latent codec");
    train_codec->add_option("--data", codec_opts.data, "training manifest (JSONL)")->required();
    train_codec->add_option("--out", codec_opts.out, "output directory")->required();
    train_codec->add_option("--steps", codec_opts.steps, "optimizer steps");
    train_codec->add_option("--lr", codec_opts.lr, "learning rate");
    train_codec->add_option("--seed", codec_opts.seed, "rng seed");

    PipelineOpts pipeline_opts;
    CLI::App* pipeline = app.add_subcommand("pipeline", "run the three-stage training chain");
    pipeline->add_option("--config", pipeline_opts.config, "pipeline config JSON")->required();
    pipeline->add_option("--data", pipeline_opts.data, "training manifest (JSONL)")->required();
    pipeline->add_option("--out", pipeline_opts.out, "root for per-stage out_dirs");

    GenerateOpts gen_opts;
    CLI::App* generate = app.add_subcommand("generate", "sample a video from image + trajectory");
    generate->add_option("--checkpoint", gen_opts.checkpoint, "checkpoint directory")->required();
    generate->add_option("--image", gen_opts.image, "first-frame PPM image")->required();
    generate->add_option("--trajectory", gen_opts.trajectory, "trajectory JSON file")->required();
    generate->add_option("--out", gen_opts.out, "output frame directory")->required();
    generate->add_option("--kind", gen_opts.kind, "condition kind: mask, box, or sparse")
        ->check(CLI::IsMember({"mask", "box", "sparse"}));
    generate->add_option("--k", gen_opts.k, "frames kept per track for --kind sparse");
    generate->add_option("--steps", gen_opts.steps, "denoising steps");
    generate->add_option("--guidance", gen_opts.guidance, "classifier-free guidance scale");
    generate->add_option("--control-scale", gen_opts.control_scale, "residual injection scale");
    generate->add_option("--seed", gen_opts.seed, "sampling seed");

    CurateOpts curate_opts;
    CLI::App* curate = app.add_subcommand("curate", "annotate a caption manifest into records");
    curate->add_option("--captions", curate_opts.captions, "caption manifest (JSONL)")->required();
    curate->add_option("--out", curate_opts.out, "output record manifest (JSONL)")->required();
    curate->add_option("--workers", curate_opts.workers, "parallel curation workers")
        ->check(CLI::PositiveNumber);

    FilterOpts filter_opts;
    CLI::App* filter = app.add_subcommand("filter", "apply the motion/count/area filters");
    filter->add_option("--in", filter_opts.in, "input record manifest")->required();
    filter->add_option("--out", filter_opts.out, "output record manifest")->required();
    filter->add_option("--min-flow", filter_opts.th.min_flow, "global motion threshold");
    filter->add_option("--min-fg-flow", filter_opts.th.min_fg_flow, "per-object motion threshold");
    filter->add_option("--min-objects", filter_opts.th.min_objects, "minimum object count");
    filter->add_option("--max-objects", filter_opts.th.max_objects, "maximum object count");
    filter->add_option("--min-area", filter_opts.th.min_area, "minimum union-area ratio");
    filter->add_option("--max-area", filter_opts.th.max_area, "maximum union-area ratio");

    BenchOpts bench_opts;
    CLI::App* bench = app.add_subcommand("bench-build", "bucket kept records into a benchmark");
    bench->add_option("--in", bench_opts.in, "filtered record manifest")->required();
    bench->add_option("--out", bench_opts.out, "benchmark output directory")->required();
    bench->add_option("--bucket-cap", bench_opts.cap, "max videos per bucket");

    EvaluateOpts eval_opts;
    CLI::App* evaluate = app.add_subcommand("evaluate", "score tracker propagation IoU");
    evaluate->add_option("--benchmark", eval_opts.benchmark, "benchmark manifest (JSONL)")->required();
    evaluate->add_option("--pred-dir", eval_opts.pred_dir,
                         "directory of generated clips (defaults to ground-truth clips)");
    evaluate->add_option("--tracker", eval_opts.tracker, "oracle, frozen-first, or chroma")
        ->check(CLI::IsMember({"oracle", "frozen-first", "frozen", "chroma"}));
    evaluate->add_option("--report", eval_opts.report, "output report JSON")->required();
    evaluate->add_option("--csv", eval_opts.csv, "optional CSV table");
    evaluate->add_option("--workers", eval_opts.workers, "parallel scoring workers")
        ->check(CLI::PositiveNumber);

    DumpSegOpts dump_opts;
    CLI::App* dump = app.add_subcommand("dump-latent-seg", "write the predicted mask latent");
    dump->add_option("--checkpoint", dump_opts.checkpoint, "checkpoint directory")->required();
    dump->add_option("--video", dump_opts.video, "input frame directory")->required();
    dump->add_option("--trajectory", dump_opts.trajectory, "trajectory JSON file")->required();
    dump->add_option("--out", dump_opts.out, "output directory")->required();
    dump->add_option("--t", dump_opts.t, "diffusion timestep (default: schedule midpoint)");
    dump->add_option("--seed", dump_opts.seed, "noise seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }
    train_opts.seed_set = train_seed->count() > 0;

    try {
        if (app.got_subcommand(render)) return run_render(render_opts);
        if (app.got_subcommand(train)) return run_train(train_opts);
        if (app.got_subcommand(train_codec)) return run_train_codec(codec_opts);
        if (app.got_subcommand(pipeline)) return run_pipeline_cmd(pipeline_opts);
        if (app.got_subcommand(generate)) return run_generate(gen_opts);
        if (app.got_subcommand(curate)) return run_curate(curate_opts);
        if (app.got_subcommand(filter)) return run_filter(filter_opts);
        if (app.got_subcommand(bench)) return run_bench_build(bench_opts);
        if (app.got_subcommand(evaluate)) return run_evaluate(eval_opts);
        if (app.got_subcommand(dump)) return run_dump_latent_seg(dump_opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return error_exit_code(e);
    }
    std::cerr << "no subcommand given\n" << app.help();
    return 1;
}
