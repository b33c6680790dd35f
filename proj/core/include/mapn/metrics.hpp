#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mapn/data.hpp"
#include "mapn/models.hpp"

namespace mapn::metrics {

/// Reported in place of +inf when the two images are identical.
constexpr double kPsnrCap = 99.0;

/// Both images are rescaled by the target's min/max, so the data range is 1.
/// Results are capped at kPsnrCap.
double psnr(const std::vector<double>& recon, const std::vector<double>& target);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean of the local SSIM map over all fully contained windows, computed on images
/// rescaled by the target's min/max. Throws DataError when the image is smaller than the window.
double ssim(const std::vector<double>& recon, const std::vector<double>& target, std::int64_t height,
            std::int64_t width, const SsimOptions& options = {});

/// |recon - target| on target-rescaled images, clipped at `clip`.
GrayImage error_map(const std::vector<double>& recon, const std::vector<double>& target, std::int64_t height,
                    std::int64_t width, double clip = 0.1);

/// Rescales `img` by the min/max of `reference`.
std::vector<double> rescale_to(const std::vector<double>& img, const std::vector<double>& reference);

struct WeightRow {
    std::string block;
    int cascade = -1;
    int index = -1;
    std::string anatomy;
    std::string learner;  // bn_gamma, bn_beta, adapter1x1, se_fc1, se_fc2
    double mean = 0.0;
};

/// Mean value of every anatomy-specific learner tensor, per block and anatomy. Empty for
/// models without specific learners.
std::vector<WeightRow> learner_weight_summary(const Model& model);
void write_weight_summary(const std::filesystem::path& path, const std::vector<WeightRow>& rows);

struct CountRow {
    std::string fashion;  // OAON, MAON, MAPN
    std::string model;    // DCCNN, DCCNN+PN1, ...
    std::int64_t shared = 0;
    std::int64_t specific = 0;
    std::int64_t sum = 0;
};

/// Parameter accounting for the one-network, multi-anatomy and parameterized settings
/// of a DCCNN with `anatomies` anatomies, built from `base` with each PN kind.
std::vector<CountRow> count_report(const ModelSpec& base, int anatomies = 3);
void write_count_report(const std::filesystem::path& path, const std::vector<CountRow>& rows);
std::string format_count_report(const std::vector<CountRow>& rows);

}  // namespace mapn::metrics
