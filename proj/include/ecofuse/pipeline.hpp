#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ecofuse/dataset.hpp"
#include "ecofuse/energy.hpp"
#include "ecofuse/fusion.hpp"
#include "ecofuse/metrics.hpp"
#include "ecofuse/stacking.hpp"

namespace ecofuse::pipeline {

struct EnergyConfig {
    energy::PowerSource source = energy::PowerSource::counters();
    double sampling_period_s = 1.0;
    double grid_intensity = energy::kDefaultGridIntensity;
    double duration_s = 0.0;  // synthetic duration for standalone energy reports
};

// One JSON document configures a run; every CLI flag overrides its field.
// All randomness fans out from `seed` via labeled derivation, so a fixed
// config reproduces every output byte (energy self-report excepted).
struct PipelineConfig {
    std::vector<std::filesystem::path> model_prob_paths;
    std::filesystem::path label_path;
    std::filesystem::path class_list_path;  // empty: classes from the first model
    double split_fraction = 0.2;
    std::filesystem::path split_path;  // explicit split indices; empty: derive from seed
    std::uint64_t seed = 0;
    std::vector<std::string> strategies = {"simple", "weighted", "stacking"};
    std::vector<stacking::MetaKind> meta_kinds = {stacking::MetaKind::logistic};
    std::vector<std::size_t> combination_sizes;  // empty: one combination of all models
    fusion::OptimizerConfig optimizer;
    stacking::MetaHyper meta_hyper;
    bool optimize_on_test = false;  // objective on the test split, as published
    int histogram_bins = 20;
    EnergyConfig energy;
    std::filesystem::path output_dir;
};

PipelineConfig config_from_json_text(const std::string& text,
                                     const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

struct LoadedData {
    data::AlignedBundle bundle;
    data::SplitIndices split;
};

// Loads the configured probability files and labels, aligns them, and either
// loads the explicit split or derives one from the root seed.
LoadedData load_and_split(const PipelineConfig& config);

struct StrategyResult {
    std::string combination;  // model ids joined with '+'
    std::string strategy;     // simple | weighted | stacking:<kind>
    std::vector<std::string> model_ids;
    metrics::MetricsReport metrics;
    metrics::ConfidenceHistogram histogram;
    std::size_t n_test = 0;
};

struct RunArtifacts {
    std::filesystem::path run_dir;
    std::vector<StrategyResult> results;
    std::vector<std::pair<std::string, fusion::OptimizeResult>> weights;
    std::vector<std::pair<std::string, stacking::MetaModel>> meta_models;
    energy::EmissionsReport run_energy;
    std::vector<std::string> notes;
    std::vector<std::filesystem::path> files;  // relative to run_dir, manifest last
};

// Loads, aligns, splits, runs every configured strategy over every model
// combination, measures its own energy session end-to-end, and writes
// metrics/predictions/weights/meta-models plus a checksummed manifest.
// The output directory must be empty or absent; on failure nothing is left.
RunArtifacts run_pipeline(const PipelineConfig& config);

// format: json | csv | text-table | svg-histogram.
std::vector<std::filesystem::path> emit_report(const RunArtifacts& artifacts,
                                               const std::string& format);

struct ManifestEntry {
    std::string path;
    std::string checksum;  // fnv1a-64 hex; empty when volatile
    bool is_volatile = false;
};

struct Manifest {
    std::string tool_version;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<ManifestEntry> files;
    std::vector<std::string> notes;
};

Manifest load_manifest(const std::filesystem::path& run_dir);

// Side-by-side accuracy-per-strategy and energy tables over >= 2 finished
// runs, including pairwise strategy deltas and the first-vs-rest energy
// ratio. format: text | json.
std::filesystem::path compare_command(const std::vector<std::filesystem::path>& run_dirs,
                                      const std::filesystem::path& out_file,
                                      const std::string& format = "text");

// fnv1a-64 of a file's bytes, 16 hex digits; the manifest checksum.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace ecofuse::pipeline
