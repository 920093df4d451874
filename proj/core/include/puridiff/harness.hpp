#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "puridiff/attacks.hpp"
#include "puridiff/certification.hpp"
#include "puridiff/classifier.hpp"
#include "puridiff/dataset.hpp"
#include "puridiff/diffusion.hpp"
#include "puridiff/metrics.hpp"
#include "puridiff/purifier.hpp"

namespace puridiff {

// Directional thresholds checked by the eval subcommands in --check mode.
namespace thresholds {
inline constexpr double kDefenseAdvGainPoints = 30.0;
inline constexpr double kDefenseCleanDropPoints = 15.0;
inline constexpr double kSweepSmallestEpsGainPoints = 20.0;
inline constexpr double kAdaptiveGainPoints = 40.0;
inline constexpr double kOodMeanGainPoints = 10.0;
inline constexpr double kQualityMinMeanSsim = 0.6;
inline constexpr double kTstarCleanTolerancePoints = 2.0;
inline constexpr int kTstarCleanMaxViolations = 2;
}  // namespace thresholds

struct DatasetSpec {
    std::string kind = "shape_images";  // or "gaussian_mixture"
    int n_per_class = 150;
    int side = 16;
    int n_classes = 4;
    double spread = 0.1;

    LabeledDataset generate(uint64_t seed) const;
};

struct ClassifierSpec {
    std::string arch = "small_conv";
    int epochs = 40;
};

struct DiffusionSpec {
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.05;
    int epochs = 400;
};

struct NamedAttack {
    std::string name;
    AttackSpec spec;
};

struct AdaptiveSpec {
    int samples = 32;
    int steps = 25;
    double epsilon = 8.0 / 255.0;
};

struct CertificationSpec {
    CertifyParams params;
    int num_points = 20;
    bool use_purifier = false;
    ExtendedRadiusParams extended;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ClassifierSpec classifier;
    DiffusionSpec diffusion;
    std::vector<NamedAttack> attacks;  // defaults: linf 8/255, l2 128/255
    GuidanceConfig guidance;           // t_star <= 0 resolves to 0.3 T
    CertificationSpec certification;
    AdaptiveSpec adaptive;
    std::vector<double> epsilon_grid;
    std::vector<int> tstar_grid;
    bool joint_grid = false;  // optional (epsilon, t_star) surface
    int eval_samples = 150;
    int sweep_samples = 150;
    int ood_samples = 100;
    int quality_samples = 64;
    int quality_grid_cols = 8;
    uint64_t master_seed = 1234;

    std::string dataset_path;     // checkpoint/dataset paths used by the CLI
    std::string classifier_path;
    std::string diffusion_path;

    int resolved_t_star() const;
    void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig load_config(const std::string& path);   // JSON file
ExperimentConfig parse_config(const std::string& text);  // JSON text
std::string dump_config(const ExperimentConfig& cfg);    // canonical JSON

// One experiment cell measurement. Identifier fields are never empty;
// non-applicable ones carry "-".
struct ResultRow {
    std::string dataset = "-";
    std::string model = "-";
    std::string attack = "-";      // "clean", attack name, or "-"
    std::string defense = "-";     // "on" / "off"
    std::string corruption = "-";  // corruption family or "-"
    int severity = 0;
    double epsilon = 0.0;
    int t_star = 0;
    std::string metric = "accuracy";
    double value = 0.0;
    int n = 0;
    double stderr_value = 0.0;

    std::string cell_id() const;
};

std::string rows_to_jsonl(const std::vector<ResultRow>& rows);
std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_jsonl(const std::string& text);
void sort_rows(std::vector<ResultRow>& rows);

// Bundles the trained artifacts every evaluation consumes.
struct EvalContext {
    const ExperimentConfig* cfg = nullptr;
    const ClassifierModel* clf = nullptr;
    const DiffusionModel* diff = nullptr;
    LabeledDataset eval_data;  // held-out evaluation set
    int workers = 1;

    GuidanceConfig resolved_guidance() const;
    PurifierPipeline pipeline(bool differentiable = false) const;
};

EvalContext make_eval_context(const ExperimentConfig& cfg, const ClassifierModel& clf,
                              const DiffusionModel& diff, int workers);

// Purifier-defended predictions, sharded over fixed-size chunks so the
// result is independent of the worker count.
std::vector<int> defended_predict(const EvalContext& ctx, const Tensor& batch, uint64_t seed);
Tensor purify_batch(const EvalContext& ctx, const Tensor& batch, uint64_t seed);

// Table 1 analog: clean / per-attack accuracy, defense off and on.
std::vector<ResultRow> run_defense_eval(const EvalContext& ctx);
// Fig. 2 analog: accuracy vs perturbation budget, both norms.
std::vector<ResultRow> run_epsilon_sweep(const EvalContext& ctx);
// Fig. 3 analog: accuracy vs forward depth (plus optional joint grid).
std::vector<ResultRow> run_tstar_sweep(const EvalContext& ctx);
// Table 2 analog: exact-gradient adaptive attack through the pipeline.
std::vector<ResultRow> run_adaptive_eval(const EvalContext& ctx);
// Table 3 analog: 5 corruption families x 5 severities, defense off/on.
std::vector<ResultRow> run_ood_eval(const EvalContext& ctx);

struct QualityOutputs {
    std::vector<MetricReport> reports;
    // image grid rows: clean, adversarial, purified, amplified adversarial
    // perturbation, amplified residual perturbation
    std::vector<std::vector<double>> grid_images;
    int grid_rows = 0, grid_cols = 0, side = 0;
};
QualityOutputs run_quality_eval(const EvalContext& ctx);

inline constexpr double kPerturbationAmplification = 10.0;

// Deterministic CSV + fixed-width text tables; missing cells print "-".
struct ReportFiles {
    std::string csv;
    std::string defense_table;
    std::string adaptive_table;
    std::string ood_table;
};
ReportFiles report(std::vector<ResultRow> rows);

// threshold checks used by --check (return failure descriptions; empty = pass)
std::vector<std::string> check_defense_rows(const std::vector<ResultRow>& rows);
std::vector<std::string> check_epsilon_sweep_rows(const std::vector<ResultRow>& rows);
std::vector<std::string> check_tstar_sweep_rows(const std::vector<ResultRow>& rows);
std::vector<std::string> check_adaptive_rows(const std::vector<ResultRow>& rows);
std::vector<std::string> check_ood_rows(const std::vector<ResultRow>& rows);

// chunked parallel map; chunk boundaries are fixed so outputs do not depend
// on the worker count
void parallel_chunks(int n_items, int chunk, int workers,
                     const std::function<void(int lo, int hi)>& fn);

}  // namespace puridiff
