#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "heparl/catalog.hpp"

namespace heparl {

/// One observation window: the time a physician requested aPTT and anti-Xa
/// together, the concurrent labs that came back (absent = missing), and the
/// UFH infusion rate set at that time.
struct RawObservation {
    double timestamp = 0.0;                      // hours since admission
    std::vector<std::optional<double>> values;   // per catalog lab
    double dose = 0.0;                           // units/kg/hr, >= 0
};

struct RawPatient {
    std::string patient_id;
    std::vector<RawObservation> observations;
};

struct RawCohort {
    std::vector<RawPatient> patients;
};

enum class MissingnessMechanism {
    MCAR,                // each maskable slot masked independently
    MarSeverity,         // masking probability decreases with latent severity
    InformativeOrdering, // liver labs present only above a severity threshold
};

struct MissingnessConfig {
    MissingnessMechanism mechanism = MissingnessMechanism::MCAR;
    double base_rate = 0.3;        // in [0,1]
    double severity_coupling = 1.0; // >= 0
};

MissingnessMechanism parse_mechanism(const std::string& name);
std::string mechanism_name(MissingnessMechanism m);

/// Ground truth retained by the simulator: the latent severity path and the
/// pre-masking value of every lab at every observation. Oracle for
/// imputation and missingness-informativeness checks.
struct SimTruthPatient {
    std::string patient_id;
    std::vector<double> severity;                // per observation
    std::vector<std::vector<double>> true_values; // [obs][lab]
};

struct SimTruth {
    std::vector<SimTruthPatient> patients;
};

/// Simulator knobs that are not part of the missingness mechanism. Defaults
/// match the cohort used by the cross-validation experiment.
struct SimOverrides {
    double mean_trajectory_length = 10.0; // geometric, clamped to [2, 50]
    double liver_threshold = 0.6;         // informative-ordering severity cutoff
};

/// Generates a synthetic UFH-dosing cohort with a known latent-severity
/// model. Deterministic for fixed (n_patients, config, seed); patients are
/// independent given per-patient derived seeds.
std::pair<RawCohort, SimTruth> simulate_cohort(int n_patients,
                                               const MissingnessConfig& config,
                                               std::uint64_t seed,
                                               const SimOverrides& overrides = {});

/// Cohort CSV: header patient_id,timestamp,dose,aPTT,antiXa,<maskable...>,
/// one row per observation, empty cell = missing. Rows may appear in any
/// order; they are grouped by patient_id and sorted by timestamp.
RawCohort load_cohort_csv(const std::string& path,
                          const LabCatalog& catalog = default_catalog());
void write_cohort_csv(const RawCohort& cohort, const std::string& path,
                      const LabCatalog& catalog = default_catalog());

/// SimTruth CSV: cohort layout with no empty cells plus a severity column.
void write_truth_csv(const RawCohort& cohort, const SimTruth& truth,
                     const std::string& path,
                     const LabCatalog& catalog = default_catalog());

/// Checks cohort invariants (unique ids, >= 2 observations per patient,
/// strictly increasing timestamps, aPTT/anti-Xa always present).
void validate_cohort(const RawCohort& cohort,
                     const LabCatalog& catalog = default_catalog());

} // namespace heparl
