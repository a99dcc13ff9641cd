#pragma once

#include <string>
#include <vector>

#include "fedlora/config.hpp"
#include "fedlora/federation.hpp"

namespace fedlora {

inline constexpr const char* kRoundsHeader =
    "round,client,split,loss,accuracy,precision,recall,f1,uplink_bytes,downlink_bytes";

/// The files one run produces inside its output directory.
struct OutputBundle {
    std::string rounds_path;   // rounds.csv
    std::string summary_path;  // summary.txt
    std::string config_path;   // config_echo.cfg
    std::vector<std::string> adapter_paths;
};

std::string render_rounds_csv(const std::vector<RoundReport>& reports);
std::string render_summary(const ExperimentResult& result, const ExperimentConfig& cfg);

OutputBundle emit_outputs(const ExperimentResult& result, const ParsedConfig& cfg,
                          const std::string& dir);

/// Cross product of the sweep axes; labels are filesystem-safe.
struct SweepRun {
    std::string label;
    ParsedConfig config;
};

std::vector<SweepRun> expand_sweep(const ParsedConfig& cfg);

// Preset configs are plain .cfg files shipped in the presets directory;
// resolution order: --preset-dir flag, FEDLORA_PRESET_DIR, ./presets.
std::vector<std::string> preset_names();
std::string find_preset_file(const std::string& name, const std::string& preset_dir_flag);

/// Recompute a summary from an existing rounds table.
std::string summarize_rounds_csv(const std::string& csv_text);

int run_cli(int argc, const char* const* argv);

}  // namespace fedlora
