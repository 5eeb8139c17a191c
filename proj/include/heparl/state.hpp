#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heparl/catalog.hpp"
#include "heparl/cohort.hpp"

namespace heparl {

/// indicators[patient][observation][maskable lab] — 1 iff the raw slot was
/// missing. Always computed before any imputation.
using IndicatorSet = std::vector<std::vector<std::vector<std::uint8_t>>>;

IndicatorSet add_missingness_indicators(const RawCohort& cohort,
                                        const LabCatalog& catalog = default_catalog());

/// LOCF output: the partially imputed cohort plus the residual mask marking
/// slots that had no prior value to carry (leading missingness).
struct LocfCohort {
    RawCohort cohort;
    IndicatorSet residual_missing;
};

LocfCohort locf_impute(const RawCohort& cohort,
                       const LabCatalog& catalog = default_catalog());

/// Fully dense cohort after imputation; same layout as RawCohort but every
/// lab value present.
struct DenseObservation {
    double timestamp = 0.0;
    std::vector<double> values;
    double dose = 0.0;
};

struct DensePatient {
    std::string patient_id;
    std::vector<DenseObservation> observations;
};

struct DenseCohort {
    std::vector<DensePatient> patients;
};

/// Per-lab linear model used by the chained-equations imputer.
struct LabRegression {
    bool mean_only = true;          // degenerate target: predict the mean
    double intercept = 0.0;
    std::vector<double> coef;       // over the other labs, catalog order
};

/// Chained-equations imputation model. Fitted on training folds only;
/// application is a deterministic, row-local function of the model and the
/// observed values, so one patient's imputations never depend on another's.
struct ImputerModel {
    std::vector<std::string> lab_names;     // layout check against the catalog
    std::vector<double> fallback_mean;      // per lab, over training observations
    std::vector<LabRegression> regressions; // per maskable lab, maskable order
    int rounds_used = 1;
    double tolerance = 1e-3;
};

struct ImputerOptions {
    double tolerance = 1e-3;
    int max_rounds = 10;
    double ridge = 1e-6;
};

ImputerModel fit_imputer(const LocfCohort& train,
                         const LabCatalog& catalog = default_catalog(),
                         const ImputerOptions& options = {});

DenseCohort apply_imputer(const ImputerModel& model, const LocfCohort& cohort,
                          const LabCatalog& catalog = default_catalog());

/// z-normalization statistics, fitted on training-fold dense data and kept
/// beside the imputer so validation folds reuse the same transform.
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stddev; // 1.0 where the training column is constant
};

NormalizationStats fit_normalization(const DenseCohort& train);

/// Dose discretization: bin 0 is reserved for dose == 0; positive doses are
/// split by training-fold quantile edges. edges[0] == 0 by construction, so
/// bin(dose) = #\{edges < dose\}.
struct ActionScheme {
    int n_actions = 5;
    std::vector<double> edges; // n_actions - 1 strictly increasing values

    int discretize(double dose) const;
};

ActionScheme fit_action_scheme(const RawCohort& cohort, int n_actions = 5);

/// Reward for landing at an observation: -1 per step, -1 if aPTT left
/// [40, 80] s, -1 if anti-Xa left [0.3, 0.7] IU/mL (closed intervals).
int compute_reward(double aptt, double anti_xa);

constexpr double kApttLow = 40.0, kApttHigh = 80.0;
constexpr double kAntiXaLow = 0.3, kAntiXaHigh = 0.7;

/// Patient state: imputed features (z-normalized when stats are supplied)
/// plus one binary indicator per maskable lab. `indicators` is empty when
/// the transition set was built without missingness information.
struct StateVector {
    std::vector<double> features;
    std::vector<std::uint8_t> indicators;

    std::size_t dimension() const { return features.size() + indicators.size(); }
    std::vector<double> to_input() const;
    void write_input(double* out) const;
};

struct Transition {
    StateVector state;
    int action = 0;
    double reward = 0.0;
    StateVector next_state;
    bool terminal = false;
    std::string patient_id;
    int step = 0;
};

struct TransitionSet {
    std::size_t n_features = 0;
    std::size_t n_indicators = 0; // 0 when built without indicators
    int n_actions = 0;
    std::vector<Transition> transitions;

    std::size_t state_dimension() const { return n_features + n_indicators; }
};

/// Builds one transition per consecutive observation pair. The reward is
/// computed from the next observation's raw aPTT/anti-Xa (never maskable,
/// hence identical in the dense cohort); the last pair of each trajectory is
/// terminal.
TransitionSet build_transitions(const DenseCohort& cohort, const IndicatorSet& indicators,
                                const ActionScheme& scheme, bool use_indicators,
                                const NormalizationStats* normalization = nullptr,
                                const LabCatalog& catalog = default_catalog());

/// Debug/interop export: patient_id,step,action,reward,terminal,<state...>,
/// <next state...>.
void write_transitions_csv(const TransitionSet& set, const std::string& path);

} // namespace heparl
