#include "mm/stages.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <utility>

#include "json.hpp"

#include "mm/errors.hpp"
#include "mm/io.hpp"
#include "mm/trajgeo.hpp"

namespace mm {

using nlohmann::json;

std::string condition_kind_name(ConditionKind kind) {
    switch (kind) {
        case ConditionKind::mask: return "mask";
        case ConditionKind::box: return "box";
        case ConditionKind::sparse_box: return "sparse_box";
    }
    throw InputError("unknown condition kind");
}

ConditionKind condition_kind_from(const std::string& name) {
    if (name == "mask") return ConditionKind::mask;
    if (name == "box") return ConditionKind::box;
    if (name == "sparse_box") return ConditionKind::sparse_box;
    throw InputError("unknown condition kind: " + name);
}

void validate_stage_config(const StageConfig& cfg) {
    if (cfg.stage_id < 1 || cfg.stage_id > 3) {
        throw InputError("stage_id must be 1, 2, or 3, got " + std::to_string(cfg.stage_id));
    }
    if (cfg.model.in_channels != 32 || cfg.model.out_channels != 16) {
        throw InputError("denoiser must consume 32 latent channels (image + video) and emit 16");
    }

    const ConditionKind expected_kind = cfg.stage_id == 1   ? ConditionKind::mask
                                        : cfg.stage_id == 2 ? ConditionKind::box
                                                            : ConditionKind::sparse_box;
    if (cfg.condition_kind != expected_kind) {
        throw InputError("stage " + std::to_string(cfg.stage_id) + " trains on " +
                         condition_kind_name(expected_kind) + " conditions, got " +
                         condition_kind_name(cfg.condition_kind));
    }

    const double expected_lambda = cfg.stage_id == 1 ? 0.0 : 0.5;
    if (cfg.lambda_seg != expected_lambda && !cfg.override_lambda) {
        throw InputError("stage " + std::to_string(cfg.stage_id) + " uses lambda_seg = " +
                         std::to_string(expected_lambda) +
                         "; set override_lambda to deviate deliberately");
    }
    if (cfg.lambda_seg < 0.0) throw InputError("lambda_seg must be non-negative");

    if (cfg.stage_id == 3) {
        if (cfg.sparsity_k != 0 && (cfg.sparsity_k < 1 || cfg.sparsity_k > 9)) {
            throw InvalidSparsity("sparsity_k must be in [1, 9] (or 0 to sample per example), got " +
                                  std::to_string(cfg.sparsity_k));
        }
    } else if (cfg.sparsity_k != 0) {
        throw InputError("sparsity_k only applies to stage 3");
    }

    if (cfg.init_from.empty()) {
        throw InputError("init_from must be \"scratch\" or a checkpoint directory");
    }
    if (cfg.init_from == "scratch" && cfg.stage_id > 1 && !cfg.ablation) {
        throw InputError("stage " + std::to_string(cfg.stage_id) +
                         " initializes from the previous stage's checkpoint; set ablation "
                         "for a deliberate scratch (w/o PT) run");
    }
    if (cfg.init_from == "scratch" && cfg.codec_checkpoint.empty()) {
        throw InputError("scratch training needs codec_checkpoint (run train-codec first)");
    }

    if (cfg.optimizer.algorithm != "adamw") {
        throw InputError("unsupported optimizer: " + cfg.optimizer.algorithm);
    }
    if (cfg.optimizer.lr <= 0.0) throw InputError("optimizer.lr must be positive");
    if (cfg.optimizer.batch < 1) throw InputError("optimizer.batch must be at least 1");
    if (cfg.optimizer.epochs < 1 && cfg.steps_override <= 0) {
        throw InputError("optimizer.epochs must be at least 1 (or set steps_override)");
    }
    if (cfg.optimizer.clip_norm <= 0.0) throw InputError("optimizer.clip_norm must be positive");
    if (cfg.steps_override < 0) throw InputError("steps_override must be non-negative");
    if (cfg.out_dir.empty()) throw InputError("out_dir is required");
}

namespace {

json optimizer_to_json(const OptimizerConfig& o) {
    return json{{"algorithm", o.algorithm}, {"lr", o.lr},
                {"batch", o.batch},         {"epochs", o.epochs},
                {"clip_norm", o.clip_norm}, {"weight_decay", o.weight_decay}};
}

OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig o;
    o.algorithm = j.value("algorithm", o.algorithm);
    o.lr = j.value("lr", o.lr);
    o.batch = j.value("batch", o.batch);
    o.epochs = j.value("epochs", o.epochs);
    o.clip_norm = j.value("clip_norm", o.clip_norm);
    o.weight_decay = j.value("weight_decay", o.weight_decay);
    return o;
}

json dit_to_json(const DitConfig& m) {
    return json{{"hidden_dim", m.hidden_dim},     {"n_blocks", m.n_blocks},
                {"n_heads", m.n_heads},           {"patch", m.patch},
                {"in_channels", m.in_channels},   {"out_channels", m.out_channels},
                {"n_train_steps", m.n_train_steps}, {"final_layernorm", m.final_layernorm}};
}

DitConfig dit_from_json(const json& j) {
    DitConfig m;
    m.hidden_dim = j.value("hidden_dim", m.hidden_dim);
    m.n_blocks = j.value("n_blocks", m.n_blocks);
    m.n_heads = j.value("n_heads", m.n_heads);
    m.patch = j.value("patch", m.patch);
    m.in_channels = j.value("in_channels", m.in_channels);
    m.out_channels = j.value("out_channels", m.out_channels);
    m.n_train_steps = j.value("n_train_steps", m.n_train_steps);
    m.final_layernorm = j.value("final_layernorm", m.final_layernorm);
    return m;
}

json codec_to_json(const CodecConfig& c) {
    return json{{"temporal_factor", c.temporal_factor},
                {"spatial_factor", c.spatial_factor},
                {"latent_channels", c.latent_channels},
                {"hidden_widths", c.hidden_widths}};
}

CodecConfig codec_from_json(const json& j) {
    CodecConfig c;
    c.temporal_factor = j.value("temporal_factor", c.temporal_factor);
    c.spatial_factor = j.value("spatial_factor", c.spatial_factor);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.hidden_widths = j.value("hidden_widths", c.hidden_widths);
    return c;
}

}  // namespace

std::string stage_config_to_json(const StageConfig& cfg) {
    json j{{"stage_id", cfg.stage_id},
           {"condition_kind", condition_kind_name(cfg.condition_kind)},
           {"lambda_seg", cfg.lambda_seg},
           {"init_from", cfg.init_from},
           {"codec_checkpoint", cfg.codec_checkpoint},
           {"optimizer", optimizer_to_json(cfg.optimizer)},
           {"sparsity_k", cfg.sparsity_k},
           {"seed", cfg.seed},
           {"steps_override", cfg.steps_override},
           {"override_lambda", cfg.override_lambda},
           {"ablation", cfg.ablation},
           {"joint_base_training", cfg.joint_base_training},
           {"model", dit_to_json(cfg.model)},
           {"codec", codec_to_json(cfg.codec)},
           {"out_dir", cfg.out_dir}};
    return j.dump(2) + "\n";
}

StageConfig stage_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("stage config is not valid JSON: ") + e.what());
    }
    try {
        StageConfig cfg;
        cfg.stage_id = j.value("stage_id", cfg.stage_id);
        if (j.contains("condition_kind")) {
            cfg.condition_kind = condition_kind_from(j.at("condition_kind").get<std::string>());
        } else {
            cfg.condition_kind = cfg.stage_id == 1   ? ConditionKind::mask
                                 : cfg.stage_id == 2 ? ConditionKind::box
                                                     : ConditionKind::sparse_box;
        }
        cfg.lambda_seg = j.contains("lambda_seg") ? j.at("lambda_seg").get<double>()
                                                  : (cfg.stage_id == 1 ? 0.0 : 0.5);
        cfg.init_from = j.value("init_from", cfg.init_from);
        cfg.codec_checkpoint = j.value("codec_checkpoint", cfg.codec_checkpoint);
        if (j.contains("optimizer")) cfg.optimizer = optimizer_from_json(j.at("optimizer"));
        cfg.sparsity_k = j.value("sparsity_k", cfg.sparsity_k);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.steps_override = j.value("steps_override", cfg.steps_override);
        cfg.override_lambda = j.value("override_lambda", cfg.override_lambda);
        cfg.ablation = j.value("ablation", cfg.ablation);
        cfg.joint_base_training = j.value("joint_base_training", cfg.joint_base_training);
        if (j.contains("model")) cfg.model = dit_from_json(j.at("model"));
        if (j.contains("codec")) cfg.codec = codec_from_json(j.at("codec"));
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        return cfg;
    } catch (const json::exception& e) {
        throw InputError(std::string("stage config field error: ") + e.what());
    }
}

VideoClip make_condition(const TrajectorySet& ts, ConditionKind kind, int sparsity_k) {
    switch (kind) {
        case ConditionKind::mask: return render_mask_map(ts);
        case ConditionKind::box: return render_box_map(ts);
        case ConditionKind::sparse_box: return render_box_map(sparsify(ts, sparsity_k));
    }
    throw InputError("unknown condition kind");
}

namespace {

double scalar_of(const Var& v) { return v.val().data.at(0); }

std::map<std::string, std::string> namespace_digests(const ParamStore& ps) {
    std::map<std::string, std::string> out;
    for (const char* ns : {"base", "control", "seghead", "codec"}) {
        const std::string prefix = std::string(ns) + ".";
        if (!ps.names(prefix).empty()) out[ns] = params_digest(ps, prefix);
    }
    return out;
}

// Largest sparsity the clip's annotations support (every track needs at least
// k annotated frames).
int max_sparsity(const TrajectorySet& ts) {
    int64_t m = 9;
    for (const ObjectTrack& track : ts.tracks) {
        m = std::min<int64_t>(m, static_cast<int64_t>(track.frames.size()));
    }
    return static_cast<int>(std::max<int64_t>(1, m));
}

Tensor first_frame(const VideoClip& clip) {
    const int64_t H = clip.dim(1), W = clip.dim(2);
    Tensor frame({H, W, 3});
    std::copy(clip.data.begin(), clip.data.begin() + H * W * 3, frame.data.begin());
    return frame;
}

// Fixed diffusion-loss measurement: one record, three timesteps, frozen
// noise. Comparing this before and after training shows actual fit progress
// independent of the per-step (t, eps) lottery.
struct Probe {
    Tensor x0;
    LatentBlock z_img;
    LatentBlock z_traj;
    std::vector<int> ts;
    std::vector<Tensor> eps;
};

double run_probe(const Probe& p, const Denoiser& base, const ControlBranch& branch,
                 const NoiseSchedule& sched) {
    NoGradGuard ng;
    double total = 0.0;
    for (size_t i = 0; i < p.ts.size(); ++i) {
        const double ab = alpha_bar_at(sched, p.ts[i]);
        const Tensor x_t = add_noise_alpha(p.x0, p.eps[i], ab);
        const double tau = static_cast<double>(p.ts[i]) / sched.n_steps;
        DenoiserForward fwd = full_forward(base, branch, p.z_img, x_t, p.z_traj, tau, 1.0);
        total += diffusion_loss_alpha(p.x0, x_t, fwd.v.val(), ab);
    }
    return total / static_cast<double>(p.ts.size());
}

void write_stage_failure(const std::string& out_dir, int stage_id, const std::string& what) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) return;  // marker is best-effort; the exception still propagates
    json j{{"stage_id", stage_id}, {"error", what}};
    try {
        write_text_atomic(out_dir + "/FAILED", j.dump(2) + "\n");
    } catch (const Error&) {
    }
}

}  // namespace

std::string train_report_to_json(const TrainReport& report) {
    json j{{"stage_id", report.stage_id},
           {"init_from", report.init_from},
           {"init_label", report.init_label},
           {"data_seed", report.data_seed},
           {"wall_seconds", report.wall_seconds},
           {"checkpoint_dir", report.checkpoint_dir},
           {"n_steps", report.steps.size()},
           {"probe_loss_initial", report.probe_loss_initial},
           {"probe_loss_final", report.probe_loss_final},
           {"init_digests", report.init_digests},
           {"final_digests", report.final_digests}};
    if (!report.steps.empty()) {
        const StepLog& last = report.steps.back();
        j["final_step"] = json{{"step", last.step},
                               {"l_diff", last.l_diff},
                               {"l_seg", last.l_seg},
                               {"total", last.total},
                               {"cond_dropped", last.cond_dropped}};
    }
    return j.dump(2) + "\n";
}

TrainReport train_stage(const StageConfig& cfg, const std::vector<TripletRecord>& dataset) {
    validate_stage_config(cfg);
    if (dataset.empty()) throw InputError("train_stage: dataset is empty");
    const auto wall0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(cfg.out_dir);

    ParamStore ps;
    if (!cfg.codec_checkpoint.empty()) load_checkpoint(cfg.codec_checkpoint, ps);
    const bool scratch = cfg.init_from == "scratch";
    if (!scratch) load_checkpoint(cfg.init_from, ps);
    if (ps.names("codec.").empty()) {
        throw WeightsError("train_stage: no codec weights; provide codec_checkpoint or an init "
                           "checkpoint that carries them");
    }
    Codec codec(cfg.codec, ps, nullptr);

    Rng winit(cfg.seed ^ 0x5eedf00dULL);
    std::unique_ptr<Denoiser> base;
    std::unique_ptr<ControlBranch> branch;
    if (scratch) {
        base = std::make_unique<Denoiser>(cfg.model, ps, &winit);
        branch = std::make_unique<ControlBranch>(ControlBranch::init_from_base(*base, ps));
    } else {
        base = std::make_unique<Denoiser>(cfg.model, ps, nullptr);
        branch = std::make_unique<ControlBranch>(cfg.model, ps);
    }
    std::unique_ptr<SegHead> seghead;
    if (cfg.lambda_seg > 0.0) {
        // Chained checkpoints from stage 2 on already carry the head; stage 2
        // itself grows it fresh.
        Rng* seg_rng = ps.names("seghead.").empty() ? &winit : nullptr;
        seghead = std::make_unique<SegHead>(cfg.model, ps, seg_rng);
    }

    ps.set_requires_grad("codec.", false);
    ps.set_requires_grad("base.", cfg.joint_base_training);
    ps.set_requires_grad("control.", true);
    if (seghead) ps.set_requires_grad("seghead.", true);

    std::vector<std::string> trainable;
    for (const std::string& name : ps.names()) {
        if (ps.at(name).requires_grad()) trainable.push_back(name);
    }
    if (trainable.empty()) throw WeightsError("train_stage: nothing is trainable");

    AdamWConfig ocfg;
    ocfg.lr = cfg.optimizer.lr;
    ocfg.weight_decay = cfg.optimizer.weight_decay;
    AdamW opt(ps, trainable, ocfg);

    // Encode every record once up front; training re-uses the cached latents.
    const int64_t n = static_cast<int64_t>(dataset.size());
    std::vector<Tensor> x0s(n);
    std::vector<LatentBlock> z_imgs(n), z_masks(n);
    std::vector<int> max_ks(n, 9);
    std::vector<std::map<int, LatentBlock>> z_conds(n);
    for (int64_t i = 0; i < n; ++i) {
        const TripletRecord& rec = dataset[i];
        const VideoClip clip = read_frame_dir(rec.video_ref);
        const TrajectorySet& traj = rec.trajectory;
        if (traj.T != clip.dim(0) || traj.H != clip.dim(1) || traj.W != clip.dim(2)) {
            throw InputError("train_stage: trajectory canvas does not match " + rec.video_ref);
        }
        x0s[i] = codec.encode(clip).data;
        z_imgs[i] = pad_image_latent(codec.encode_image(first_frame(clip)), x0s[i].dim(0));
        if (seghead) z_masks[i] = codec.encode(render_mask_map(traj), LatentKind::mask);
        max_ks[i] = max_sparsity(traj);
    }
    auto cond_latent = [&](int64_t idx, int k) -> const LatentBlock& {
        auto it = z_conds[idx].find(k);
        if (it == z_conds[idx].end()) {
            const VideoClip cond = make_condition(dataset[idx].trajectory, cfg.condition_kind, k);
            it = z_conds[idx].emplace(k, codec.encode(cond, LatentKind::trajectory)).first;
        }
        return it->second;
    };

    const NoiseSchedule sched = make_cosine_schedule(cfg.model.n_train_steps);
    const int n_train = cfg.model.n_train_steps;
    const LossWeights weights{cfg.lambda_seg, 1.0};

    TrainReport report;
    report.stage_id = cfg.stage_id;
    report.data_seed = cfg.seed;
    report.init_from = cfg.init_from;
    report.init_label = !scratch ? "chained" : (cfg.stage_id > 1 ? "w/o PT" : "scratch");
    report.init_digests = namespace_digests(ps);

    Probe probe;
    probe.x0 = x0s[0];
    probe.z_img = z_imgs[0];
    {
        int k_probe = 0;
        if (cfg.condition_kind == ConditionKind::sparse_box) {
            k_probe = std::min(cfg.sparsity_k > 0 ? cfg.sparsity_k : 5, max_ks[0]);
        }
        probe.z_traj = cond_latent(0, k_probe);
    }
    probe.ts = {std::max(1, n_train / 10), std::max(1, n_train / 2), std::max(1, 9 * n_train / 10)};
    Rng probe_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (size_t i = 0; i < probe.ts.size(); ++i) probe.eps.push_back(probe_rng.normal_tensor(probe.x0.shape));
    report.probe_loss_initial = run_probe(probe, *base, *branch, sched);

    const int total_steps =
        cfg.steps_override > 0 ? cfg.steps_override : cfg.optimizer.epochs * static_cast<int>(n);
    Rng rng(cfg.seed);
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    int64_t pos = n;  // forces a shuffle before the first draw

    try {
        for (int step = 0; step < total_steps; ++step) {
            StepLog log;
            log.step = step;

            ps.zero_grads();
            int updates_in_batch = 0;
            for (int b = 0; b < cfg.optimizer.batch; ++b) {
                if (pos >= n) {
                    rng.shuffle(order);
                    pos = 0;
                }
                const int64_t idx = order[pos++];

                // Draw order is part of the determinism contract: sparsity,
                // condition dropout, timestep, noise.
                int k = 0;
                if (cfg.condition_kind == ConditionKind::sparse_box) {
                    k = cfg.sparsity_k > 0 ? cfg.sparsity_k : static_cast<int>(rng.uniform_int(2, 9));
                    k = std::min(k, max_ks[idx]);
                }
                const bool dropped = rng.uniform() < 0.1;
                const int t = static_cast<int>(rng.uniform_int(1, n_train));
                const Tensor eps = rng.normal_tensor(x0s[idx].shape);

                const double ab = alpha_bar_at(sched, t);
                const double tau = static_cast<double>(t) / n_train;
                const Tensor x_t = add_noise_alpha(x0s[idx], eps, ab);

                // Condition dropout means the step sees neither the trajectory
                // residuals nor the global condition vector. With the base
                // frozen and no seg head that leaves nothing trainable, so the
                // example is evaluated without touching the optimizer.
                const bool trains = !dropped || cfg.joint_base_training || seghead != nullptr;
                std::unique_ptr<NoGradGuard> ng;
                if (!trains) ng = std::make_unique<NoGradGuard>();

                DenoiserForward fwd;
                if (dropped) {
                    const LatentBlock noisy{x_t, LatentKind::noise};
                    const Var z32(concat_channels(z_imgs[idx], noisy).data, false);
                    fwd = base->forward(z32, tau, CondMode::null_cond);
                } else {
                    fwd = full_forward(*base, *branch, z_imgs[idx], x_t, cond_latent(idx, k), tau,
                                       1.0, CondMode::global);
                }
                Var l_diff = diffusion_loss_var(x0s[idx], x_t, fwd.v, ab);
                Var l_seg = seghead ? seg_loss_var(seghead->forward(fwd.features), z_masks[idx].data)
                                    : Var(Tensor::scalar(0.0), false);
                Var total = total_loss_var(l_diff, l_seg, weights);

                if (trains) {
                    // Per-example graphs accumulate grads; scale to the batch
                    // mean before backward so batch > 1 averages.
                    backward(cfg.optimizer.batch > 1
                                 ? scale(total, 1.0 / cfg.optimizer.batch)
                                 : total);
                    ++updates_in_batch;
                }
                log.l_diff += scalar_of(l_diff) / cfg.optimizer.batch;
                log.l_seg += scalar_of(l_seg) / cfg.optimizer.batch;
                log.total += scalar_of(total) / cfg.optimizer.batch;
                log.cond_dropped = log.cond_dropped || dropped;
            }

            if (updates_in_batch > 0) {
                clip_global_norm(ps, trainable, cfg.optimizer.clip_norm);
                opt.step();
            }
            report.steps.push_back(log);
        }
    } catch (const NumericsError&) {
        // Leave the blown-up weights on disk for inspection, then surface the
        // failure unchanged.
        save_checkpoint(cfg.out_dir + "/abort_checkpoint", ps);
        throw;
    }

    report.probe_loss_final = run_probe(probe, *base, *branch, sched);
    report.final_digests = namespace_digests(ps);

    report.checkpoint_dir = cfg.out_dir + "/checkpoint";
    save_checkpoint(report.checkpoint_dir, ps);
    write_text_atomic(report.checkpoint_dir + "/config.json",
                      checkpoint_spec_to_json({cfg.model, cfg.codec, cfg.stage_id, cfg.lambda_seg}));

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

    write_text_atomic(cfg.out_dir + "/report.json", train_report_to_json(report));
    std::string lines;
    for (const StepLog& s : report.steps) {
        json j{{"step", s.step},   {"l_diff", s.l_diff},
               {"l_seg", s.l_seg}, {"total", s.total},
               {"cond_dropped", s.cond_dropped}};
        lines += j.dump() + "\n";
    }
    write_text_atomic(cfg.out_dir + "/steps.jsonl", lines);
    return report;
}

std::string checkpoint_spec_to_json(const CheckpointSpec& spec) {
    json j{{"model", dit_to_json(spec.model)},
           {"codec", codec_to_json(spec.codec)},
           {"stage_id", spec.stage_id},
           {"lambda_seg", spec.lambda_seg}};
    return j.dump(2) + "\n";
}

CheckpointSpec read_checkpoint_spec(const std::string& checkpoint_dir) {
    const std::string text = read_text(checkpoint_dir + "/config.json");
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError("checkpoint config.json is not valid JSON: " + std::string(e.what()));
    }
    try {
        CheckpointSpec spec;
        if (j.contains("model")) spec.model = dit_from_json(j.at("model"));
        if (j.contains("codec")) spec.codec = codec_from_json(j.at("codec"));
        spec.stage_id = j.value("stage_id", spec.stage_id);
        spec.lambda_seg = j.value("lambda_seg", spec.lambda_seg);
        return spec;
    } catch (const json::exception& e) {
        throw InputError("checkpoint config.json field error: " + std::string(e.what()));
    }
}

std::vector<TrainReport> run_pipeline(const std::vector<StageConfig>& cfgs,
                                      const std::vector<TripletRecord>& dataset) {
    if (cfgs.size() != 3) throw InputError("run_pipeline expects exactly three stage configs");
    for (int i = 0; i < 3; ++i) {
        if (cfgs[i].stage_id != i + 1) throw InputError("pipeline stages must be ordered 1, 2, 3");
    }

    std::vector<TrainReport> reports;
    std::string prev_ckpt;
    for (const StageConfig& given : cfgs) {
        StageConfig cfg = given;
        if (!prev_ckpt.empty() && !cfg.ablation) {
            // The chain is the default; a config may name the upstream
            // checkpoint explicitly but must then name the right one.
            if (cfg.init_from.empty() || cfg.init_from == "scratch" || cfg.init_from == "previous") {
                cfg.init_from = prev_ckpt;
            } else if (cfg.init_from != prev_ckpt) {
                throw InputError("stage " + std::to_string(cfg.stage_id) +
                                 " init_from does not match the previous stage's checkpoint; "
                                 "set ablation to break the chain deliberately");
            }
        }
        try {
            reports.push_back(train_stage(cfg, dataset));
        } catch (const std::exception& e) {
            write_stage_failure(cfg.out_dir, cfg.stage_id, e.what());
            throw;
        }
        prev_ckpt = reports.back().checkpoint_dir;
    }
    return reports;
}

}  // namespace mm
