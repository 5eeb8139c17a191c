#include "heparl/state.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "heparl/csv.hpp"
#include "heparl/errors.hpp"

namespace heparl {

IndicatorSet add_missingness_indicators(const RawCohort& cohort, const LabCatalog& catalog) {
    const auto& maskable = catalog.maskable_indices();
    IndicatorSet indicators(cohort.patients.size());
    for (std::size_t p = 0; p < cohort.patients.size(); ++p) {
        const auto& patient = cohort.patients[p];
        indicators[p].resize(patient.observations.size());
        for (std::size_t t = 0; t < patient.observations.size(); ++t) {
            const auto& obs = patient.observations[t];
            auto& row = indicators[p][t];
            row.resize(maskable.size());
            for (std::size_t mi = 0; mi < maskable.size(); ++mi) {
                row[mi] = obs.values[maskable[mi]] ? 0 : 1;
            }
        }
    }
    return indicators;
}

LocfCohort locf_impute(const RawCohort& cohort, const LabCatalog& catalog) {
    LocfCohort out;
    out.cohort = cohort;
    out.residual_missing.resize(cohort.patients.size());
    const auto& maskable = catalog.maskable_indices();
    for (std::size_t p = 0; p < out.cohort.patients.size(); ++p) {
        auto& patient = out.cohort.patients[p];
        out.residual_missing[p].assign(patient.observations.size(),
                                       std::vector<std::uint8_t>(maskable.size(), 0));
        for (std::size_t mi = 0; mi < maskable.size(); ++mi) {
            const std::size_t li = maskable[mi];
            std::optional<double> carried; // never carries across patients
            for (std::size_t t = 0; t < patient.observations.size(); ++t) {
                auto& slot = patient.observations[t].values[li];
                if (slot) {
                    carried = slot;
                } else if (carried) {
                    slot = carried;
                } else {
                    out.residual_missing[p][t][mi] = 1;
                }
            }
        }
    }
    return out;
}

namespace {

struct FlatMatrix {
    std::vector<double> values;             // row-major, n_rows x n_labs
    std::vector<std::uint8_t> residual;     // 1 where mean-initialized
    std::size_t n_rows = 0;
    std::size_t n_labs = 0;

    double& at(std::size_t r, std::size_t c) { return values[r * n_labs + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * n_labs + c]; }
    std::uint8_t res(std::size_t r, std::size_t c) const { return residual[r * n_labs + c]; }
};

FlatMatrix flatten(const LocfCohort& locf, const LabCatalog& catalog) {
    FlatMatrix m;
    m.n_labs = catalog.size();
    for (const auto& patient : locf.cohort.patients) {
        m.n_rows += patient.observations.size();
    }
    m.values.assign(m.n_rows * m.n_labs, 0.0);
    m.residual.assign(m.n_rows * m.n_labs, 0);
    std::size_t r = 0;
    for (std::size_t p = 0; p < locf.cohort.patients.size(); ++p) {
        const auto& patient = locf.cohort.patients[p];
        for (std::size_t t = 0; t < patient.observations.size(); ++t, ++r) {
            const auto& obs = patient.observations[t];
            for (std::size_t li = 0; li < m.n_labs; ++li) {
                if (obs.values[li]) {
                    m.values[r * m.n_labs + li] = *obs.values[li];
                } else {
                    m.residual[r * m.n_labs + li] = 1;
                }
            }
        }
    }
    return m;
}

double predict_row(const LabRegression& reg, double fallback_mean,
                   const double* row, std::size_t n_labs, std::size_t target) {
    if (reg.mean_only) return fallback_mean;
    double y = reg.intercept;
    std::size_t k = 0;
    for (std::size_t li = 0; li < n_labs; ++li) {
        if (li == target) continue;
        y += reg.coef[k++] * row[li];
    }
    return y;
}

/// Ridge least squares of column `target` on all other labs, over the rows
/// where `target` is not residual-missing. Predictors use current values
/// (imputed entries included), targets only genuine post-LOCF values.
LabRegression fit_lab_regression(const FlatMatrix& m, std::size_t target, double ridge,
                                 double fallback_mean) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < m.n_rows; ++r) {
        if (!m.res(r, target)) rows.push_back(r);
    }
    LabRegression reg;
    if (rows.size() < 2) {
        reg.intercept = fallback_mean;
        return reg;
    }

    const std::size_t d = m.n_labs - 1;
    Eigen::MatrixXd design(rows.size(), d);
    Eigen::VectorXd y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::size_t k = 0;
        for (std::size_t li = 0; li < m.n_labs; ++li) {
            if (li == target) continue;
            design(i, k++) = m.at(rows[i], li);
        }
        y(i) = m.at(rows[i], target);
    }

    const double y_mean = y.mean();
    if ((y.array() - y_mean).abs().maxCoeff() < 1e-12) {
        reg.intercept = y_mean; // degenerate design: constant lab
        return reg;
    }

    Eigen::RowVectorXd x_mean = design.colwise().mean();
    design.rowwise() -= x_mean;
    Eigen::VectorXd yc = y.array() - y_mean;
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += ridge;
    Eigen::VectorXd beta = gram.ldlt().solve(design.transpose() * yc);

    reg.mean_only = false;
    reg.coef.assign(beta.data(), beta.data() + d);
    reg.intercept = y_mean - x_mean * beta;
    return reg;
}

} // namespace

ImputerModel fit_imputer(const LocfCohort& train, const LabCatalog& catalog,
                         const ImputerOptions& options) {
    FlatMatrix m = flatten(train, catalog);
    const auto& maskable = catalog.maskable_indices();

    ImputerModel model;
    model.tolerance = options.tolerance;
    for (const auto& lab : catalog.labs()) model.lab_names.push_back(lab.name);

    // Training means over genuinely observed (post-LOCF) entries.
    model.fallback_mean.assign(m.n_labs, 0.0);
    for (std::size_t li = 0; li < m.n_labs; ++li) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < m.n_rows; ++r) {
            if (!m.res(r, li)) {
                sum += m.at(r, li);
                ++n;
            }
        }
        model.fallback_mean[li] = n ? sum / static_cast<double>(n) : 0.0;
    }

    // Mean-initialize the residual-missing slots.
    for (std::size_t r = 0; r < m.n_rows; ++r) {
        for (std::size_t li = 0; li < m.n_labs; ++li) {
            if (m.res(r, li)) m.at(r, li) = model.fallback_mean[li];
        }
    }

    model.regressions.assign(maskable.size(), LabRegression{});
    for (int round = 1; round <= options.max_rounds; ++round) {
        double max_delta = 0.0;
        for (std::size_t mi = 0; mi < maskable.size(); ++mi) {
            const std::size_t li = maskable[mi];
            model.regressions[mi] =
                fit_lab_regression(m, li, options.ridge, model.fallback_mean[li]);
            for (std::size_t r = 0; r < m.n_rows; ++r) {
                if (!m.res(r, li)) continue;
                double updated = predict_row(model.regressions[mi], model.fallback_mean[li],
                                             &m.values[r * m.n_labs], m.n_labs, li);
                max_delta = std::max(max_delta, std::abs(updated - m.at(r, li)));
                m.at(r, li) = updated;
            }
        }
        model.rounds_used = round;
        if (max_delta < options.tolerance) break;
    }
    return model;
}

DenseCohort apply_imputer(const ImputerModel& model, const LocfCohort& locf,
                          const LabCatalog& catalog) {
    if (model.lab_names.size() != catalog.size()) {
        throw ValidationError("imputer/catalog mismatch: lab count differs");
    }
    for (std::size_t li = 0; li < catalog.size(); ++li) {
        if (model.lab_names[li] != catalog.labs()[li].name) {
            throw ValidationError("imputer/catalog mismatch at lab " +
                                  catalog.labs()[li].name);
        }
    }

    const auto& maskable = catalog.maskable_indices();
    DenseCohort dense;
    dense.patients.reserve(locf.cohort.patients.size());
    std::vector<double> row(catalog.size());

    for (std::size_t p = 0; p < locf.cohort.patients.size(); ++p) {
        const auto& patient = locf.cohort.patients[p];
        DensePatient dp;
        dp.patient_id = patient.patient_id;
        dp.observations.reserve(patient.observations.size());
        for (std::size_t t = 0; t < patient.observations.size(); ++t) {
            const auto& obs = patient.observations[t];
            bool any_residual = false;
            for (std::size_t li = 0; li < catalog.size(); ++li) {
                if (obs.values[li]) {
                    row[li] = *obs.values[li];
                } else {
                    row[li] = model.fallback_mean[li];
                    any_residual = true;
                }
            }
            if (any_residual) {
                // Row-local chained update, same schedule as the fit.
                for (int round = 0; round < model.rounds_used; ++round) {
                    double max_delta = 0.0;
                    for (std::size_t mi = 0; mi < maskable.size(); ++mi) {
                        const std::size_t li = maskable[mi];
                        if (obs.values[li]) continue;
                        double updated = predict_row(model.regressions[mi],
                                                     model.fallback_mean[li], row.data(),
                                                     catalog.size(), li);
                        max_delta = std::max(max_delta, std::abs(updated - row[li]));
                        row[li] = updated;
                    }
                    if (max_delta < model.tolerance) break;
                }
            }
            DenseObservation dob;
            dob.timestamp = obs.timestamp;
            dob.dose = obs.dose;
            dob.values = row;
            dp.observations.push_back(std::move(dob));
        }
        dense.patients.push_back(std::move(dp));
    }
    return dense;
}

NormalizationStats fit_normalization(const DenseCohort& train) {
    NormalizationStats stats;
    std::size_t n_labs = 0;
    std::size_t n_rows = 0;
    for (const auto& patient : train.patients) {
        for (const auto& obs : patient.observations) {
            if (!n_labs) n_labs = obs.values.size();
            ++n_rows;
        }
    }
    if (!n_rows) throw ValidationError("cannot fit normalization on an empty cohort");
    stats.mean.assign(n_labs, 0.0);
    stats.stddev.assign(n_labs, 0.0);
    for (const auto& patient : train.patients) {
        for (const auto& obs : patient.observations) {
            for (std::size_t li = 0; li < n_labs; ++li) stats.mean[li] += obs.values[li];
        }
    }
    for (auto& v : stats.mean) v /= static_cast<double>(n_rows);
    for (const auto& patient : train.patients) {
        for (const auto& obs : patient.observations) {
            for (std::size_t li = 0; li < n_labs; ++li) {
                double d = obs.values[li] - stats.mean[li];
                stats.stddev[li] += d * d;
            }
        }
    }
    for (auto& v : stats.stddev) {
        v = std::sqrt(v / static_cast<double>(n_rows));
        if (v < 1e-12) v = 1.0;
    }
    return stats;
}

int ActionScheme::discretize(double dose) const {
    if (!(dose >= 0.0) || !std::isfinite(dose)) {
        throw ValidationError("dose must be a non-negative finite number");
    }
    int bin = 0;
    for (double edge : edges) {
        if (edge < dose) ++bin;
    }
    return bin;
}

ActionScheme fit_action_scheme(const RawCohort& cohort, int n_actions) {
    if (n_actions < 1) throw ValidationError("n_actions must be >= 1");
    ActionScheme scheme;
    scheme.n_actions = n_actions;
    if (n_actions == 1) return scheme;

    // Only doses that become actions (a patient's last observation never
    // acts on a successor).
    std::vector<double> positive;
    for (const auto& patient : cohort.patients) {
        for (std::size_t t = 0; t + 1 < patient.observations.size(); ++t) {
            double dose = patient.observations[t].dose;
            if (dose > 0.0) positive.push_back(dose);
        }
    }
    if (positive.empty()) {
        throw ValidationError("cannot fit dose bins: no positive doses in training data");
    }
    std::sort(positive.begin(), positive.end());

    auto quantile = [&](double q) {
        double pos = q * static_cast<double>(positive.size() - 1);
        std::size_t lo = static_cast<std::size_t>(pos);
        double frac = pos - static_cast<double>(lo);
        if (lo + 1 >= positive.size()) return positive.back();
        return positive[lo] * (1.0 - frac) + positive[lo + 1] * frac;
    };

    scheme.edges.push_back(0.0); // bin 0 is the zero-dose bin
    for (int j = 1; j + 1 < n_actions; ++j) {
        double e = quantile(static_cast<double>(j) / static_cast<double>(n_actions - 1));
        double prev = scheme.edges.back();
        if (e <= prev) e = std::nextafter(prev, prev + 1.0) + 1e-9 * std::max(1.0, std::abs(prev));
        scheme.edges.push_back(e);
    }
    return scheme;
}

int compute_reward(double aptt, double anti_xa) {
    if (!std::isfinite(aptt) || !std::isfinite(anti_xa)) {
        throw ValidationError("compute_reward requires finite inputs");
    }
    int reward = -1;
    if (aptt < kApttLow || aptt > kApttHigh) --reward;
    if (anti_xa < kAntiXaLow || anti_xa > kAntiXaHigh) --reward;
    return reward;
}

std::vector<double> StateVector::to_input() const {
    std::vector<double> out(dimension());
    write_input(out.data());
    return out;
}

void StateVector::write_input(double* out) const {
    std::copy(features.begin(), features.end(), out);
    double* p = out + features.size();
    for (auto i : indicators) *p++ = static_cast<double>(i);
}

TransitionSet build_transitions(const DenseCohort& cohort, const IndicatorSet& indicators,
                                const ActionScheme& scheme, bool use_indicators,
                                const NormalizationStats* normalization,
                                const LabCatalog& catalog) {
    if (indicators.size() != cohort.patients.size()) {
        throw ValidationError("indicator set does not align with cohort");
    }
    TransitionSet set;
    set.n_features = catalog.size();
    set.n_indicators = use_indicators ? catalog.n_maskable() : 0;
    set.n_actions = scheme.n_actions;

    auto make_state = [&](const DenseObservation& obs,
                          const std::vector<std::uint8_t>& ind) {
        StateVector s;
        s.features.resize(obs.values.size());
        for (std::size_t li = 0; li < obs.values.size(); ++li) {
            double v = obs.values[li];
            if (normalization) {
                v = (v - normalization->mean[li]) / normalization->stddev[li];
            }
            s.features[li] = v;
        }
        if (use_indicators) s.indicators = ind;
        return s;
    };

    for (std::size_t p = 0; p < cohort.patients.size(); ++p) {
        const auto& patient = cohort.patients[p];
        if (patient.observations.size() < 2) {
            throw ValidationError("patient " + patient.patient_id +
                                  " has fewer than 2 observations");
        }
        if (indicators[p].size() != patient.observations.size()) {
            throw ValidationError("indicator set does not align with patient " +
                                  patient.patient_id);
        }
        for (std::size_t t = 0; t + 1 < patient.observations.size(); ++t) {
            const auto& here = patient.observations[t];
            const auto& next = patient.observations[t + 1];
            Transition tr;
            tr.state = make_state(here, indicators[p][t]);
            tr.next_state = make_state(next, indicators[p][t + 1]);
            tr.action = scheme.discretize(here.dose);
            tr.reward = compute_reward(next.values[catalog.aptt_index()],
                                       next.values[catalog.antixa_index()]);
            tr.terminal = (t + 2 == patient.observations.size());
            tr.patient_id = patient.patient_id;
            tr.step = static_cast<int>(t);
            set.transitions.push_back(std::move(tr));
        }
    }
    return set;
}

void write_transitions_csv(const TransitionSet& set, const std::string& path) {
    csv::Table table;
    table.header = {"patient_id", "step", "action", "reward", "terminal"};
    const std::size_t dim = set.state_dimension();
    for (std::size_t i = 0; i < dim; ++i) table.header.push_back("s" + std::to_string(i));
    for (std::size_t i = 0; i < dim; ++i) table.header.push_back("ns" + std::to_string(i));
    for (const auto& tr : set.transitions) {
        std::vector<std::string> row;
        row.reserve(table.header.size());
        row.push_back(tr.patient_id);
        row.push_back(std::to_string(tr.step));
        row.push_back(std::to_string(tr.action));
        row.push_back(csv::format_double(tr.reward));
        row.push_back(tr.terminal ? "1" : "0");
        auto s = tr.state.to_input();
        auto ns = tr.next_state.to_input();
        for (double v : s) row.push_back(csv::format_double(v));
        for (double v : ns) row.push_back(csv::format_double(v));
        table.rows.push_back(std::move(row));
    }
    csv::write_file(path, table);
}

} // namespace heparl
