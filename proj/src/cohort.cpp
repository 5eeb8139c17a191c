#include "heparl/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "heparl/csv.hpp"
#include "heparl/errors.hpp"
#include "heparl/rng.hpp"

namespace heparl {

namespace {

// Affine severity model per lab: value = intercept + slope * severity + N(0, sd).
// Liver labs (TBILI/AST/ALT) carry a strong, low-noise severity signal; the
// rest are noisier so their values alone identify severity only weakly.
struct LabModel {
    double intercept, slope, sd;
};

const std::map<std::string, LabModel>& lab_models() {
    static const std::map<std::string, LabModel> models = {
        {"PT", {12.0, 6.0, 2.5}},    {"INR", {1.0, 1.2, 0.25}},
        {"TBILI", {0.5, 2.2, 0.18}}, {"CR", {0.7, 1.6, 0.5}},
        {"AST", {22.0, 90.0, 9.0}},  {"ALT", {20.0, 80.0, 8.0}},
        {"PLT", {260.0, -130.0, 60.0}}, {"CRP", {4.0, 70.0, 35.0}},
        {"RDW", {13.0, 3.0, 1.6}},   {"HGB", {13.5, -3.0, 1.8}},
        {"WBC", {7.0, 7.0, 3.5}},    {"FBN", {380.0, 80.0, 110.0}},
        {"ESR", {12.0, 50.0, 25.0}},
    };
    return models;
}

// aPTT responds to the running UFH rate on top of a severity-shifted
// baseline; its noise grows with severity, which is what makes aPTT
// dynamics wilder in sicker (liver-lab-positive) windows.
constexpr double kApttIntercept = 22.0;
constexpr double kApttSeveritySlope = 18.0;
constexpr double kApttDoseGain = 2.4;
constexpr double kApttNoiseBase = 4.0;
constexpr double kApttNoiseSeveritySlope = 9.0;

constexpr double kAntiXaDoseGain = 0.04;
constexpr double kAntiXaNoiseSd = 0.055;

constexpr double kSeverityStepSd = 0.07;
constexpr double kHoldProbability = 0.04;

double reflect_unit(double x) {
    while (x < 0.0 || x > 1.0) {
        if (x < 0.0) x = -x;
        if (x > 1.0) x = 2.0 - x;
    }
    return x;
}

bool is_liver_lab(const std::string& name) {
    return name == "TBILI" || name == "AST" || name == "ALT";
}

std::string patient_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%05d", i + 1);
    return buf;
}

} // namespace

MissingnessMechanism parse_mechanism(const std::string& name) {
    if (name == "MCAR" || name == "mcar") return MissingnessMechanism::MCAR;
    if (name == "MAR-severity" || name == "mar-severity") return MissingnessMechanism::MarSeverity;
    if (name == "informative-ordering") return MissingnessMechanism::InformativeOrdering;
    throw ValidationError("unknown missingness mechanism: " + name);
}

std::string mechanism_name(MissingnessMechanism m) {
    switch (m) {
        case MissingnessMechanism::MCAR: return "MCAR";
        case MissingnessMechanism::MarSeverity: return "MAR-severity";
        case MissingnessMechanism::InformativeOrdering: return "informative-ordering";
    }
    return "?";
}

std::pair<RawCohort, SimTruth> simulate_cohort(int n_patients,
                                               const MissingnessConfig& config,
                                               std::uint64_t seed,
                                               const SimOverrides& overrides) {
    if (n_patients < 1) throw ValidationError("n_patients must be >= 1");
    if (config.base_rate < 0.0 || config.base_rate > 1.0) {
        throw ValidationError("base_rate must lie in [0,1]");
    }
    if (config.severity_coupling < 0.0) {
        throw ValidationError("severity_coupling must be >= 0");
    }
    if (overrides.mean_trajectory_length < 2.0) {
        throw ValidationError("mean trajectory length must be >= 2");
    }

    const LabCatalog& catalog = default_catalog();
    const std::size_t n_labs = catalog.size();
    const std::size_t aptt = catalog.aptt_index();
    const std::size_t antixa = catalog.antixa_index();

    RawCohort cohort;
    SimTruth truth;
    cohort.patients.reserve(n_patients);
    truth.patients.reserve(n_patients);

    for (int p = 0; p < n_patients; ++p) {
        auto rng = make_engine(mix_seed(seed, static_cast<std::uint64_t>(p)));
        std::normal_distribution<double> unit_normal(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        // Geometric trajectory length (support >= 1), clamped to [2, 50].
        std::geometric_distribution<int> length_dist(1.0 / overrides.mean_trajectory_length);
        int length = std::clamp(length_dist(rng) + 1, 2, 50);

        RawPatient patient;
        patient.patient_id = patient_name(p);
        SimTruthPatient truth_patient;
        truth_patient.patient_id = patient.patient_id;

        double severity = 0.15 + 0.7 * unit(rng);
        double time = 0.0;
        double prev_dose = 0.0; // no UFH running before the first window
        double last_nonzero_dose = 12.5;

        for (int t = 0; t < length; ++t) {
            if (t > 0) {
                time += 2.0 + std::exponential_distribution<double>(1.0 / 4.0)(rng);
                severity = reflect_unit(severity + kSeverityStepSd * unit_normal(rng));
            }

            std::vector<double> true_values(n_labs, 0.0);
            for (std::size_t li = 0; li < n_labs; ++li) {
                const auto& lab = catalog.labs()[li];
                if (li == aptt) {
                    double sd = kApttNoiseBase + kApttNoiseSeveritySlope * severity;
                    double v = kApttIntercept + kApttSeveritySlope * severity +
                               kApttDoseGain * prev_dose + sd * unit_normal(rng);
                    true_values[li] = std::max(v, 5.0);
                } else if (li == antixa) {
                    double v = kAntiXaDoseGain * prev_dose + kAntiXaNoiseSd * unit_normal(rng);
                    true_values[li] = std::max(v, 0.01);
                } else {
                    const LabModel& m = lab_models().at(lab.name);
                    double v = m.intercept + m.slope * severity + m.sd * unit_normal(rng);
                    true_values[li] = std::max(v, 0.01);
                }
            }

            // Clinician titration on the last aPTT; occasional holds give the
            // zero-dose action support in the logged data.
            double dose;
            if (unit(rng) < kHoldProbability) {
                dose = 0.0;
            } else {
                double base = (t == 0) ? 12.5 + 2.5 * unit_normal(rng) : last_nonzero_dose;
                double aptt_now = true_values[aptt];
                double adjust;
                if (t == 0) {
                    adjust = 0.0;
                } else if (aptt_now < 40.0) {
                    adjust = 1.5 + 2.0 * unit(rng);
                } else if (aptt_now > 80.0) {
                    adjust = -1.5 - 2.0 * unit(rng);
                } else {
                    adjust = -0.8 + 1.6 * unit(rng);
                }
                dose = std::clamp(base + adjust, 2.0, 24.0);
                last_nonzero_dose = dose;
            }

            // Masking of maskable labs per mechanism.
            std::vector<std::optional<double>> values(n_labs);
            for (std::size_t li = 0; li < n_labs; ++li) {
                const auto& lab = catalog.labs()[li];
                bool missing = false;
                if (lab.maskable) {
                    switch (config.mechanism) {
                        case MissingnessMechanism::MCAR:
                            missing = unit(rng) < config.base_rate;
                            break;
                        case MissingnessMechanism::MarSeverity: {
                            double p_miss = config.base_rate *
                                (1.0 + config.severity_coupling * (0.5 - severity));
                            missing = unit(rng) < std::clamp(p_miss, 0.0, 1.0);
                            break;
                        }
                        case MissingnessMechanism::InformativeOrdering:
                            if (is_liver_lab(lab.name)) {
                                missing = severity <= overrides.liver_threshold;
                            } else {
                                missing = unit(rng) < config.base_rate;
                            }
                            break;
                    }
                }
                if (!missing) values[li] = true_values[li];
            }

            RawObservation obs;
            obs.timestamp = time;
            obs.values = std::move(values);
            obs.dose = dose;
            patient.observations.push_back(std::move(obs));
            truth_patient.severity.push_back(severity);
            truth_patient.true_values.push_back(std::move(true_values));
            prev_dose = dose;
        }

        cohort.patients.push_back(std::move(patient));
        truth.patients.push_back(std::move(truth_patient));
    }

    return {std::move(cohort), std::move(truth)};
}

void validate_cohort(const RawCohort& cohort, const LabCatalog& catalog) {
    std::set<std::string> ids;
    for (const auto& patient : cohort.patients) {
        if (patient.patient_id.empty()) throw ValidationError("empty patient_id");
        if (!ids.insert(patient.patient_id).second) {
            throw ValidationError("duplicate patient_id: " + patient.patient_id);
        }
        if (patient.observations.size() < 2) {
            throw ValidationError("patient " + patient.patient_id +
                                  " has fewer than 2 observations");
        }
        double prev_time = -1.0;
        for (const auto& obs : patient.observations) {
            if (!(obs.timestamp >= 0.0) || !std::isfinite(obs.timestamp)) {
                throw ValidationError("invalid timestamp for patient " + patient.patient_id);
            }
            if (obs.timestamp <= prev_time) {
                throw ValidationError("non-monotone timestamps for patient " +
                                      patient.patient_id);
            }
            prev_time = obs.timestamp;
            if (obs.values.size() != catalog.size()) {
                throw ValidationError("observation lab layout mismatch for patient " +
                                      patient.patient_id);
            }
            if (!(obs.dose >= 0.0) || !std::isfinite(obs.dose)) {
                throw ValidationError("invalid dose for patient " + patient.patient_id);
            }
            if (!obs.values[catalog.aptt_index()] || !obs.values[catalog.antixa_index()]) {
                throw ValidationError("required lab missing (aPTT/antiXa) for patient " +
                                      patient.patient_id);
            }
        }
    }
}

namespace {

std::vector<std::string> cohort_header(const LabCatalog& catalog) {
    std::vector<std::string> header = {"patient_id", "timestamp", "dose"};
    for (const auto& lab : catalog.labs()) header.push_back(lab.name);
    return header;
}

} // namespace

RawCohort load_cohort_csv(const std::string& path, const LabCatalog& catalog) {
    csv::Table table = csv::read_file(path);
    auto expected = cohort_header(catalog);
    if (table.header != expected) {
        std::string want;
        for (size_t i = 0; i < expected.size(); ++i) {
            if (i) want += ',';
            want += expected[i];
        }
        throw ValidationError("cohort CSV header mismatch in " + path +
                              " (missing required columns?); expected: " + want);
    }

    // Rows grouped by patient_id (first-appearance order), sorted by time.
    std::vector<std::string> order;
    std::map<std::string, RawPatient> patients;
    for (size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string context = path + " row " + std::to_string(r + 2);
        const std::string& id = row[0];
        if (id.empty()) throw ValidationError("empty patient_id in " + context);
        RawObservation obs;
        obs.timestamp = csv::parse_double(row[1], context);
        obs.dose = csv::parse_double(row[2], context);
        obs.values.resize(catalog.size());
        for (std::size_t li = 0; li < catalog.size(); ++li) {
            const std::string& cell = row[3 + li];
            if (cell.empty()) {
                if (!catalog.labs()[li].maskable) {
                    throw ValidationError("required lab missing (" + catalog.labs()[li].name +
                                          ") in " + context);
                }
                continue;
            }
            obs.values[li] = csv::parse_double(cell, context);
        }
        auto [it, inserted] = patients.try_emplace(id);
        if (inserted) {
            it->second.patient_id = id;
            order.push_back(id);
        }
        it->second.observations.push_back(std::move(obs));
    }

    RawCohort cohort;
    for (const auto& id : order) {
        RawPatient& patient = patients[id];
        std::stable_sort(patient.observations.begin(), patient.observations.end(),
                         [](const RawObservation& a, const RawObservation& b) {
                             return a.timestamp < b.timestamp;
                         });
        cohort.patients.push_back(std::move(patient));
    }
    validate_cohort(cohort, catalog);
    return cohort;
}

void write_cohort_csv(const RawCohort& cohort, const std::string& path,
                      const LabCatalog& catalog) {
    csv::Table table;
    table.header = cohort_header(catalog);
    for (const auto& patient : cohort.patients) {
        for (const auto& obs : patient.observations) {
            std::vector<std::string> row;
            row.reserve(table.header.size());
            row.push_back(patient.patient_id);
            row.push_back(csv::format_double(obs.timestamp));
            row.push_back(csv::format_double(obs.dose));
            for (const auto& value : obs.values) {
                row.push_back(value ? csv::format_double(*value) : std::string());
            }
            table.rows.push_back(std::move(row));
        }
    }
    csv::write_file(path, table);
}

void write_truth_csv(const RawCohort& cohort, const SimTruth& truth,
                     const std::string& path, const LabCatalog& catalog) {
    if (truth.patients.size() != cohort.patients.size()) {
        throw ValidationError("SimTruth does not cover the cohort");
    }
    csv::Table table;
    table.header = cohort_header(catalog);
    table.header.push_back("severity");
    for (std::size_t p = 0; p < cohort.patients.size(); ++p) {
        const auto& patient = cohort.patients[p];
        const auto& truth_patient = truth.patients[p];
        if (truth_patient.true_values.size() != patient.observations.size()) {
            throw ValidationError("SimTruth does not cover patient " + patient.patient_id);
        }
        for (std::size_t t = 0; t < patient.observations.size(); ++t) {
            std::vector<std::string> row;
            row.push_back(patient.patient_id);
            row.push_back(csv::format_double(patient.observations[t].timestamp));
            row.push_back(csv::format_double(patient.observations[t].dose));
            for (double v : truth_patient.true_values[t]) {
                row.push_back(csv::format_double(v));
            }
            row.push_back(csv::format_double(truth_patient.severity[t]));
            table.rows.push_back(std::move(row));
        }
    }
    csv::write_file(path, table);
}

} // namespace heparl
