#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sasoftmax/data.hpp"
#include "sasoftmax/eval.hpp"
#include "sasoftmax/trainer.hpp"

namespace sas {

// Flat key = value configuration covering data generation, the split,
// training and the seed list used by ablations and sweeps. Lines starting
// with '#' are comments. Unknown keys are rejected.
struct ExperimentConfig {
    SynthConfig synth;
    double train_fraction = 2.0 / 3.0;
    std::uint64_t split_seed = 1;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{1, 2, 3};

    void set(const std::string& key, const std::string& value);
    void validate() const;
    // Canonical text with every key, in a fixed order; parsing it back
    // yields the same configuration.
    std::string to_text() const;

    static const std::vector<std::string>& keys();
    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::string& path);
};

struct SplitData {
    Dataset train;
    Dataset test;
};

SplitData prepare_data(const ExperimentConfig& config);

struct RunMetrics {
    LossVariant variant = LossVariant::Softmax;
    std::uint64_t seed = 0;
    double rank1_vis_nir = 0.0;
    double map_vis_nir = 0.0;
    double rank1_nir_vis = 0.0;
    double map_nir_vis = 0.0;
    double intra_cosine = 0.0;   // mean same-identity cross-modality cosine (test)
    double inter_cosine = 0.0;
    double hist_overlap = 0.0;   // shared mass of the intra/inter histograms
    double cos_vis_nir = 0.0;    // mean cos(P_v, P_n); 0 without a modality head
    double cos_vis_identity = 0.0;
    double cos_nir_identity = 0.0;
    double initial_loss = 0.0;
    double final_loss = 0.0;

    double mean_rank1() const { return 0.5 * (rank1_vis_nir + rank1_nir_vis); }
    double mean_map() const { return 0.5 * (map_vis_nir + map_nir_vis); }
};

struct RunOutput {
    TrainResult result;
    EvalReport vis_nir;
    EvalReport nir_vis;
    RunMetrics metrics;
};

// Trains `train_config` on `data.train` and evaluates both directions on
// `data.test`.
RunOutput run_experiment(const SplitData& data, const TrainConfig& train_config);

// Runs fn(i) for i in [0, count) on up to `jobs` threads. Each index is
// handled exactly once; callers store results by index.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

const std::vector<LossVariant>& ablation_variants();

struct AblationResult {
    std::vector<RunMetrics> runs;  // variant-major, seeds in config order
};

AblationResult run_ablation(const ExperimentConfig& config, const std::vector<LossVariant>& variants,
                            int jobs = 1);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

MeanStd mean_std(const std::vector<double>& values);

struct VariantSummary {
    LossVariant variant;
    int runs = 0;
    MeanStd rank1_vis_nir, map_vis_nir, rank1_nir_vis, map_nir_vis;
    MeanStd rank1, map;  // averaged over both directions
    MeanStd intra_cosine, hist_overlap, cos_vis_nir;
};

std::vector<VariantSummary> summarize(const AblationResult& result);

// Per-run rows: `variant,seed,rank1_vis_nir,map_vis_nir,...`
std::string ablation_runs_csv(const AblationResult& result);
std::string ablation_summary_csv(const std::vector<VariantSummary>& summary);
std::string ablation_markdown(const std::vector<VariantSummary>& summary);

enum class SweepParameter { Alpha, Beta, AmMargin, CircleGamma };

const char* sweep_parameter_name(SweepParameter p);
SweepParameter parse_sweep_parameter(const std::string& name);
// SAS_FM_AST for alpha and beta, AM_SOFTMAX for am_margin, CIRCLE for circle_gamma.
LossVariant sweep_default_variant(SweepParameter p);
void apply_sweep_value(TrainConfig& config, SweepParameter p, double value);

struct SweepPoint {
    double value = 0.0;
    RunMetrics metrics;
};

struct SweepResult {
    SweepParameter parameter;
    std::vector<SweepPoint> points;  // grid-major, seeds in config order
};

SweepResult run_sweep(const ExperimentConfig& config, SweepParameter parameter,
                      const std::vector<double>& grid, int jobs = 1);

// Per-run rows plus a per-grid-point summary.
std::string sweep_runs_csv(const SweepResult& result);
std::string sweep_summary_csv(const SweepResult& result);
std::string sweep_markdown(const SweepResult& result);

// Mean of both-direction mAP over the seeds at each grid value, in grid order.
std::vector<std::pair<double, double>> sweep_mean_map(const SweepResult& result);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace sas
