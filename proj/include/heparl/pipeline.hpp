#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heparl/cohort.hpp"
#include "heparl/fqi.hpp"
#include "heparl/ope.hpp"
#include "heparl/state.hpp"
#include "heparl/stats.hpp"

namespace heparl {

/// Patient-grouped fold assignment: all of a patient's observations share a
/// fold. Patients are shuffled by seed and dealt round-robin.
struct FoldAssignment {
    int n_folds = 5;
    std::uint64_t seed = 0;
    std::map<std::string, int> fold_of;
};

FoldAssignment assign_folds(const RawCohort& cohort, int n_folds, std::uint64_t seed);

/// Whether the missingness indicators enter the policy-optimization state
/// (OPPO) and the evaluation-side state (OPPE). The (true, false)
/// combination is rejected as confounded.
struct ExperimentArm {
    bool oppo_uses_indicators = false;
    bool oppe_uses_indicators = false;

    std::string label() const;
};

void validate_arm(const ExperimentArm& arm);

/// No/No, No/Yes, Yes/Yes — the three reported arms.
std::vector<ExperimentArm> experiment_arms();

struct SimSource {
    int n_patients = 500;
    MissingnessConfig missingness{MissingnessMechanism::InformativeOrdering, 0.3, 1.0};
    SimOverrides overrides;
};

struct RunConfig {
    std::string csv_path;  // empty: simulate `sim` below
    SimSource sim;
    std::uint64_t seed = 1;
    int n_folds = 5;
    double gamma = 0.99;
    int fqi_iterations = 30;
    ExtraTreesParams trees;      // shared by FQI and the behavior model
    int n_actions = 5;
    double ope_epsilon = 0.25;   // evaluation-policy softening
    double ope_floor = 1e-3;     // behavior propensity floor
    std::string out_dir = ".";

    void validate() const;
};

/// Everything run_fold derives from the raw cohort for one train/validation
/// split. Validation observations never reach the imputer, the
/// normalization statistics, the dose bins, or FQI training.
struct FoldData {
    ActionScheme scheme;
    ImputerModel imputer;
    NormalizationStats normalization;
    TransitionSet train_plain, train_indicators;
    TransitionSet val_plain, val_indicators;
};

FoldData prepare_fold(const RawCohort& cohort, const FoldAssignment& assignment, int fold,
                      const RunConfig& config);

struct FoldArmResult {
    // one entry per OpeMethod in kAllOpeMethods order; nullopt = estimator
    // failed (degenerate weights), recorded instead of aborting
    std::array<std::optional<double>, 4> estimates;
    std::array<std::string, 4> errors;
    double behavior_return = 0.0;
};

FoldArmResult run_fold(const RawCohort& cohort, const FoldAssignment& assignment, int fold,
                       const ExperimentArm& arm, const RunConfig& config);

struct ArmReport {
    ExperimentArm arm;
    // [method][fold]
    std::array<std::vector<std::optional<double>>, 4> fold_values;
    std::array<std::optional<double>, 4> mean;
    std::array<std::optional<double>, 4> stddev;
};

struct ExperimentReport {
    std::vector<ArmReport> arms;
    std::vector<double> baseline_folds;
    double baseline_mean = 0.0;
    double baseline_std = 0.0;
    std::vector<TestResult> dynamics;
};

/// The full cross-validated experiment on a given cohort: 3 arms x 4
/// estimators with per-fold values, the on-policy baseline, and the
/// aPTT-dynamics report.
ExperimentReport run_experiment(const RawCohort& cohort, const RunConfig& config);

/// Convenience: simulates or loads the cohort named by the config first.
ExperimentReport run_experiment(const RunConfig& config);

RawCohort resolve_cohort(const RunConfig& config);

/// ope_report.csv, ope_folds.csv, dynamics_report.csv under out_dir.
void write_report_files(const ExperimentReport& report, const std::string& out_dir);
std::string format_report_table(const ExperimentReport& report);

/// Self-contained policy artifact: the fitted Q plus the preprocessing
/// needed to reproduce its inputs on new cohorts (imputer, normalization,
/// dose bins, indicator flag, gamma). Round-trips bit-exactly.
struct PolicyBundle {
    std::vector<std::string> lab_names;
    std::vector<std::uint8_t> lab_maskable;
    bool use_indicators = false;
    double gamma = 0.99;
    ImputerModel imputer;
    NormalizationStats normalization;
    ActionScheme scheme;
    QEnsemble q;
};

void save_policy_bundle(const PolicyBundle& bundle, const std::string& path);
PolicyBundle load_policy_bundle(const std::string& path);

/// Fits a bundle on an entire cohort (no folds): LOCF + imputer +
/// normalization + dose bins + FQI.
PolicyBundle train_policy(const RawCohort& cohort, bool use_indicators,
                          const RunConfig& config);

/// Applies a bundle's preprocessing to a cohort and returns transitions in
/// the bundle's feature layout.
TransitionSet bundle_transitions(const PolicyBundle& bundle, const RawCohort& cohort,
                                 bool use_indicators);

} // namespace heparl
