#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mapn/config.hpp"
#include "mapn/training.hpp"

namespace mapn::cli {

enum ExitCode { ok = 0, usage = 1, config_error = 2, data_error = 3, numeric_error = 4 };

/// Output root for runs without an explicit output directory; MAPN_OUTPUT_ROOT overrides "runs".
std::filesystem::path output_root();

/// Default run directory name, e.g. desk-maon-dccnn-pn0-s1.
std::string default_run_name(const ExperimentConfig& cfg);

RunResult cmd_run(const ExperimentConfig& cfg, const RunOptions& options);

struct TableRow {
    std::string regime;
    std::string model;
    std::string trained_on;
    std::vector<AnatomyMetrics> metrics;
    std::vector<MetricDelta> delta;
};

/// Rows for each run directory with deltas against `baseline`. Throws DataError when a run
/// was evaluated on a different validation set than the baseline.
std::vector<TableRow> cmd_table(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& baseline);
void write_table(std::ostream& out, const std::vector<TableRow>& rows);

/// Writes reconstructions, error maps and the learner-weight summary under <run>/figures.
/// Returns notices (for example an empty weight summary).
std::vector<std::string> cmd_figures(const std::filesystem::path& run_dir);

std::string cmd_count(const std::string& scale);

int main(int argc, char** argv);

}  // namespace mapn::cli
