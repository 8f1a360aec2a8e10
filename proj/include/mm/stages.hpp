#pragma once

#include <map>
#include <string>
#include <vector>

#include "mm/datapipe.hpp"
#include "mm/ditcore.hpp"
#include "mm/seghead.hpp"
#include "mm/trajcontrol.hpp"

namespace mm {

enum class ConditionKind { mask, box, sparse_box };

std::string condition_kind_name(ConditionKind kind);
ConditionKind condition_kind_from(const std::string& name);

struct OptimizerConfig {
    std::string algorithm = "adamw";
    double lr = 1e-3;  // toy default; full-scale runs want 1e-5
    int batch = 1;
    int epochs = 1;
    double clip_norm = 1.0;
    double weight_decay = 0.01;
};

struct StageConfig {
    int stage_id = 1;
    ConditionKind condition_kind = ConditionKind::mask;
    double lambda_seg = 0.0;
    std::string init_from = "scratch";  // "scratch" or a checkpoint directory
    std::string codec_checkpoint;       // may be empty when init_from carries codec weights
    OptimizerConfig optimizer;
    int sparsity_k = 0;  // stage3: 0 samples k from [2, 9] per example
    uint64_t seed = 0;
    int steps_override = 0;  // 0 -> epochs * |dataset| steps
    bool override_lambda = false;
    bool ablation = false;  // permits scratch init at stage > 1 ("w/o PT")
    bool joint_base_training = false;
    DitConfig model;
    CodecConfig codec;
    std::string out_dir;
};

// Enforces the per-stage condition/lambda schedule (mask+0, box+0.5,
// sparse_box+0.5), chained-init rule, and sparsity bounds. Throws InputError.
void validate_stage_config(const StageConfig& cfg);

StageConfig stage_config_from_json(const std::string& text);
std::string stage_config_to_json(const StageConfig& cfg);

struct StepLog {
    int step = 0;
    double l_diff = 0.0;
    double l_seg = 0.0;
    double total = 0.0;
    bool cond_dropped = false;
};

struct TrainReport {
    int stage_id = 0;
    std::vector<StepLog> steps;
    double wall_seconds = 0.0;
    std::string checkpoint_dir;
    uint64_t data_seed = 0;
    std::string init_from;
    std::string init_label;  // "scratch", "chained", or "w/o PT"
    // Diffusion loss on a frozen probe set (fixed record, timesteps, noise),
    // measured before the first and after the last optimizer step.
    double probe_loss_initial = 0.0;
    double probe_loss_final = 0.0;
    std::map<std::string, std::string> init_digests;   // namespace -> digest
    std::map<std::string, std::string> final_digests;
};

std::string train_report_to_json(const TrainReport& report);

// Renders the stage's condition video: mask, box, or sparsified box; in every
// kind frame 0 shows the mask.
VideoClip make_condition(const TrajectorySet& ts, ConditionKind kind, int sparsity_k);

// One training stage over the dataset. Writes out_dir/checkpoint (all
// parameter namespaces plus config.json), out_dir/report.json, and
// out_dir/steps.jsonl. Deterministic for fixed cfg + dataset + seed.
TrainReport train_stage(const StageConfig& cfg, const std::vector<TripletRecord>& dataset);

// Sequential three-stage chain, threading checkpoints. A stage failure writes
// out_dir/FAILED with the stage id before rethrowing.
std::vector<TrainReport> run_pipeline(const std::vector<StageConfig>& cfgs,
                                      const std::vector<TripletRecord>& dataset);

// Model geometry stored alongside checkpoint weights (config.json), so
// sampling-side commands can rebuild the nets that produced them.
struct CheckpointSpec {
    DitConfig model;
    CodecConfig codec;
    int stage_id = 0;
    double lambda_seg = 0.0;
};

CheckpointSpec read_checkpoint_spec(const std::string& checkpoint_dir);
std::string checkpoint_spec_to_json(const CheckpointSpec& spec);

}  // namespace mm
