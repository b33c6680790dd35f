#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mapn/adam.hpp"
#include "mapn/checkpoint.hpp"
#include "mapn/config.hpp"
#include "mapn/data.hpp"
#include "mapn/models.hpp"

namespace mapn {

struct StepOptions {
    /// Warm-up: anatomy-shared 3x3 convolutions are not updated.
    bool freeze_shared_conv3x3 = false;
    /// Identifies the batch in diagnostics.
    std::string batch_id;
};

struct StepResult {
    double loss = 0.0;
    /// Per-slice metrics of the training forward pass.
    std::vector<double> psnr;
    std::vector<double> ssim;
};

/// One Adam step on an anatomy-pure batch: switches `model` to `anatomy`, runs the
/// forward pass in training mode, and backpropagates the L1 loss against the
/// fully-sampled images. Throws NumericError naming the batch when the loss is not finite.
StepResult train_step(Model& model, Adam& adam, const std::vector<const Slice*>& batch, int anatomy,
                      const kspace::SamplingMask& mask, const StepOptions& options = {});

struct AnatomyMetrics {
    std::string label;
    std::int64_t count = 0;
    double psnr = 0.0;
    double psnr_std = 0.0;
    double ssim = 0.0;
    double ssim_std = 0.0;
    double loss = 0.0;
};

/// Reconstructs `slices` in evaluation mode with `anatomy` active and averages the
/// magnitude PSNR/SSIM and the L1 loss.
AnatomyMetrics evaluate(Model& model, const std::vector<Slice>& slices, const kspace::SamplingMask& mask, int anatomy,
                        int batch_size = 4);

/// Metrics of the zero-filled reconstruction ifft2(mask * fft2(x)).
AnatomyMetrics evaluate_zero_filled(const std::vector<Slice>& slices, const kspace::SamplingMask& mask);

struct MetricDelta {
    std::string label;
    double psnr = 0.0;
    double ssim = 0.0;
};

/// Per-anatomy differences run - baseline, matched by label.
std::vector<MetricDelta> delta(const std::vector<AnatomyMetrics>& run, const std::vector<AnatomyMetrics>& baseline);

/// Initialises `model` from a checkpoint of a multi-anatomy network. Shared tensors are
/// copied by name. Each anatomy-specific tensor takes the checkpoint's tensor of the same
/// name, whether it was shared or specific to the same anatomy (or to the checkpoint's
/// first anatomy); tensors absent from the checkpoint keep their initial values.
/// Returns the keys that were initialised from the checkpoint. Throws ConfigError with
/// a shape diff when tensors disagree or shared 3x3 convolutions are missing.
std::vector<std::string> warm_start(Model& model, const Checkpoint& source);

struct TrainState {
    int epoch = 0;  // epochs completed
    std::int64_t global_step = 0;
    Adam adam;
    double best_val_psnr = -1.0;
    int best_epoch = -1;
};

/// Everything a run derives from its config: corpus, masks and the anatomy mapping.
struct RunSetup {
    ExperimentConfig config;
    Corpus corpus;
    /// Corpus anatomy index for each model anatomy slot.
    std::vector<int> trained;
    std::vector<kspace::SamplingMask> val_masks;  // per corpus anatomy
    SkipReport skips;

    /// Model anatomy slot used when processing corpus anatomy `corpus_index`.
    int model_anatomy(int corpus_index) const;
    kspace::SamplingMask train_mask(int corpus_index, int epoch) const;
};

RunSetup prepare_run(const ExperimentConfig& config);

struct RunOptions {
    bool resume = false;
    /// Stop after this many completed epochs (for tests and staged runs); -1 runs to the end.
    int stop_after_epochs = -1;
    std::function<void(const std::string&)> log;
};

struct RunResult {
    std::filesystem::path dir;
    std::string config_hash;
    int epochs_completed = 0;
    int best_epoch = -1;
    /// Best-checkpoint metrics per evaluated anatomy.
    std::vector<AnatomyMetrics> eval;
};

/// Trains one regime end to end and writes config.json, masks.txt, metrics.csv,
/// last.ckpt, best.ckpt and summary.json into the config's output directory.
RunResult run_regime(const ExperimentConfig& config, const RunOptions& options = {});

/// Loads a checkpoint file, or best.ckpt inside a run directory.
Checkpoint load_run_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model stored in a run directory's checkpoint.
Model load_run_model(const std::filesystem::path& run_dir, const std::string& which = "best.ckpt");

}  // namespace mapn
