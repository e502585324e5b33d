#pragma once

// Experiment runner: YAML configuration, scenario presets, seed sweeps and
// CSV/JSON export.

#include "catuda/datasets.hpp"
#include "catuda/eval.hpp"
#include "catuda/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace catuda {

enum class Scenario { imbalanced_gaussians, multimode, idx_digits };

struct IdxDigitsParams {
    std::filesystem::path source_images;
    std::filesystem::path source_labels;
    std::filesystem::path target_images;
    std::filesystem::path target_labels;
    std::size_t source_subsample = 2000;
    std::size_t target_subsample = 1800;
};

struct Ablations {
    bool no_Lc = false;
    bool no_La = false;
    bool no_rRevGrad_threshold = false;  // p = 0
    bool no_teacher = false;             // student labels its own targets
    bool marginal_only = false;          // alpha = 0 and p = 0: plain adversarial alignment

    std::vector<std::string> names() const;
};

struct ExperimentConfig {
    Scenario scenario = Scenario::imbalanced_gaussians;
    ImbalancedGaussianParams imbalanced;
    MultimodeParams multimode;
    IdxDigitsParams idx;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    Ablations ablation;
    std::filesystem::path output_dir = "runs";
    std::size_t eval_every = 100;
};

std::string to_string(Scenario s);

/// Defaults for a scenario before any user keys are applied.
ExperimentConfig preset(Scenario scenario);

/// Parses YAML text: the scenario preset first, then every key in the text on
/// top. Throws ConfigError with the field path and line.
ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The fully resolved configuration as YAML, defaults included.
std::string resolved_yaml(const ExperimentConfig& cfg);

/// SHA-256 (hex) of the resolved configuration, output_dir excluded.
std::string config_hash(const ExperimentConfig& cfg);

/// TrainConfig with ablations applied and the seed set.
TrainConfig effective_train_config(const ExperimentConfig& cfg, std::uint64_t seed);

DomainDataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

/// `iteration,target_acc,source_acc,cluster_acc,jsd_proxy,selection_rate,l_y,l_c,l_a,l_d`
void write_metrics_csv(std::ostream& os, const std::vector<RunMetrics>& metrics);

/// `domain,true_class,pseudo_class,confidence,f0,...` with eval-mode features.
/// Target rows carry the teacher's label and confidence; source rows carry the
/// student's own prediction.
void write_features_csv(std::ostream& os, const TrainState& state, const TrainConfig& cfg,
                        const DomainDataset& ds);

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<RunMetrics> metrics;
    RunMetrics final_metrics;
};

struct ExperimentResult {
    std::vector<SeedResult> seeds;
    double mean_target_accuracy = 0.0;
    double std_target_accuracy = 0.0;  // population
    std::string cell;                  // "mean ± std" in percent
    std::string config_hash;
    std::optional<std::string> error;  // set when a seed aborted
};

/// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

/// "99.1 ± 0.4" from fractions.
std::string table_cell(double mean, double std);

/// Trains every seed in memory. Files are written only when `write_outputs`.
/// A TrainingAbort on one seed is recorded in `error`; completed seeds and
/// their files are kept.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs,
                                std::ostream* log = nullptr);

/// summary.json content.
std::string summary_json(const ExperimentConfig& cfg, const ExperimentResult& result);

}  // namespace catuda
