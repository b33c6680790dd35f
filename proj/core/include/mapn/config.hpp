#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mapn/data.hpp"
#include "mapn/models.hpp"

namespace mapn {

struct ModelConfig {
    NetKind net = NetKind::dccnn;
    PnKind pn = PnKind::pn4;
    bool shared_learners = false;
    int cascades = 2;
    int blocks = 3;
    int channels = 16;
    bool residual = true;
    bool final_activation = false;
    bool soft_dc = false;
    int unet_levels = 4;
    int unet_base_channels = 8;
    double leaky_slope = 0.01;
    int se_ratio = 2;
};

struct DataConfig {
    std::string source = "phantom";  // "phantom" or "ingest"
    /// anatomy label -> directory of .pgm slices, used when source == "ingest"
    std::map<std::string, std::string> ingest_dirs;
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::int64_t train_per_anatomy = 24;
    std::int64_t val_per_anatomy = 8;
    bool truncate_to_min = false;
    std::uint64_t seed = 7;
};

struct MaskConfig {
    int acceleration = 4;
    /// 0 selects the conventional default for the acceleration.
    double center_fraction = 0.0;
    /// Draw a new training mask every epoch instead of one per anatomy.
    bool resample_per_epoch = false;
    double effective_center_fraction() const;
};

struct ScheduleConfig {
    /// 0 selects the regime default (oaon 10, maon 30, mapn 30).
    int epochs = 0;
    /// -1 selects the regime default (mapn 10, otherwise 0).
    int warmup_epochs = -1;
    int batch_size = 4;
    double lr = 0.01;
    bool reset_moments_after_warmup = false;
    /// Checkpoint every this many epochs (0 disables periodic checkpoints).
    int checkpoint_every = 1;
};

struct ExperimentConfig {
    std::string preset = "desk";
    Regime regime = Regime::maon;
    std::vector<std::string> anatomies{"knee", "brain", "cardiac"};
    /// Training anatomy for oaon runs.
    std::string oaon_anatomy = "knee";
    ModelConfig model;
    DataConfig data;
    MaskConfig mask;
    ScheduleConfig schedule;
    std::uint64_t seed = 1;
    std::string warm_start;
    bool cold_start = false;
    std::string output_dir = "runs/desk";

    int epochs() const;
    int warmup_epochs() const;
    ModelSpec model_spec() const;
    /// Anatomies this run trains on (one for oaon).
    std::vector<std::string> training_anatomies() const;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

ExperimentConfig desk_preset();
/// Full-width networks at 320x320; usable for parameter counting only (the FFT is radix-2).
ExperimentConfig paper_preset();
ExperimentConfig preset(std::string_view name);

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Fields missing from `j` keep the values of `base`. Unknown or mistyped fields raise
/// ConfigError with their JSON path.
ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Parses JSON text, reporting syntax errors with line and column.
ExperimentConfig parse_config(std::string_view text, const ExperimentConfig& base);
/// Applies a dotted override such as "schedule.epochs=12" or "model.pn=pn3".
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

std::string canonical_json(const ExperimentConfig& cfg);
/// FNV-1a over the canonical JSON without output_dir.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace mapn
