#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mapn/kspace.hpp"
#include "mapn/registry.hpp"

namespace mapn {

enum class Regime { oaon, maon, mapn };

const char* to_string(Regime r);
Regime regime_from_string(std::string_view s);

/// Parameters of a synthetic anatomy: a body ellipse holding smaller structures whose
/// intensities follow a gamma law, modulated by a sinusoidal texture.
struct AnatomyProfile {
    std::string label;
    double body_intensity = 0.5;
    double body_rx = 0.8;
    double body_ry = 0.6;
    int structures = 4;
    double structure_mean = 0.6;
    double structure_std = 0.15;
    double structure_radius_min = 0.08;
    double structure_radius_max = 0.25;
    double eccentricity_max = 0.5;
    /// Maximum offset of structure centres from the body centre, as a fraction of the body radius.
    double spread = 0.6;
    double texture_frequency = 6.0;
    double texture_amplitude = 0.1;
    double rim_intensity = 0.0;
    double noise = 0.01;
};

AnatomyProfile knee_profile();
AnatomyProfile brain_profile();
AnatomyProfile cardiac_profile();
/// Default profile for "knee", "brain" or "cardiac"; throws ConfigError otherwise.
AnatomyProfile default_profile(std::string_view label);

/// Nonnegative real magnitude image, row-major.
struct GrayImage {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<double> pixels;
};

enum class Split { train, val };
const char* to_string(Split s);

struct Slice {
    kspace::ComplexImage image;
    AnatomyId anatomy;
    Split split = Split::train;
    std::int64_t index = 0;
    std::string provenance;
};

struct SkipReport {
    std::vector<std::string> entries;
    bool empty() const noexcept { return entries.empty(); }
};

std::vector<GrayImage> generate_raw_phantoms(const AnatomyProfile& profile, std::int64_t count, std::int64_t height,
                                             std::int64_t width, std::uint64_t seed);

/// Centre crop or zero pad to the target extent, per-slice z-score, clip to [-6, 6],
/// zero phase. Throws DataError for a slice with zero standard deviation.
kspace::ComplexImage preprocess(const GrayImage& raw, std::int64_t height, std::int64_t width);

constexpr double kClipLimit = 6.0;

/// Generated and preprocessed phantoms. Slices that fail preprocessing are listed in `skips`.
std::vector<Slice> generate_phantoms(const AnatomyProfile& profile, const AnatomyId& anatomy, std::int64_t count,
                                     std::int64_t height, std::int64_t width, std::uint64_t seed,
                                     SkipReport* skips = nullptr);

struct Batch {
    int anatomy = 0;
    std::vector<std::int64_t> indices;
};

struct BatchPlan {
    std::vector<Batch> batches;
};

struct PlanSource {
    int anatomy = 0;
    std::int64_t count = 0;
};

/// One epoch of single-anatomy mini-batches. Each anatomy's slices are shuffled with its
/// own seeded stream. Multi-anatomy regimes interleave anatomies strictly round-robin.
/// Unequal slice counts are an error unless `truncate_to_min` is set.
BatchPlan make_epoch_plan(const std::vector<PlanSource>& sources, int batch_size, std::uint64_t seed, Regime regime,
                          bool truncate_to_min = false);

/// Reads a binary (P5) or ASCII (P2) portable graymap with maxval up to 65535.
GrayImage read_pgm(const std::filesystem::path& path);
/// Writes a 16-bit binary graymap, mapping [lo, hi] linearly to [0, 65535].
void write_pgm(const std::filesystem::path& path, const GrayImage& img, double lo, double hi);
/// Writes an 8-bit binary graymap, mapping [lo, hi] linearly to [0, 255].
void write_pgm8(const std::filesystem::path& path, const GrayImage& img, double lo, double hi);

/// Ingests every .pgm file in `dir` (sorted by name) as slices of `anatomy`. Unreadable
/// or degenerate files are recorded in `skips` and the remaining files are kept.
std::vector<Slice> ingest_external(const std::filesystem::path& dir, const AnatomyId& anatomy, std::int64_t height,
                                   std::int64_t width, SkipReport* skips = nullptr);

struct AnatomyData {
    AnatomyId anatomy;
    std::vector<Slice> train;
    std::vector<Slice> val;
};

/// Per-anatomy train/val slices for one experiment.
struct Corpus {
    std::uint64_t seed = 0;
    std::vector<AnatomyData> anatomies;
};

Corpus make_phantom_corpus(const std::vector<std::string>& labels, std::int64_t train_per_anatomy,
                           std::int64_t val_per_anatomy, std::int64_t height, std::int64_t width, std::uint64_t seed);

/// Directory of binary slice files plus manifest.json (label, split, seed, checksum).
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
/// Throws DataError when a file is missing or its checksum does not match the manifest.
Corpus load_corpus(const std::filesystem::path& dir);

/// Stable hash of the validation slices, used to verify that runs share an evaluation set.
std::string validation_fingerprint(const Corpus& corpus);

}  // namespace mapn
