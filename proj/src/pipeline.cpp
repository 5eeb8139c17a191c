#include "heparl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "heparl/csv.hpp"
#include "heparl/errors.hpp"
#include "heparl/rng.hpp"
#include "heparl/serial_util.hpp"

namespace heparl {

FoldAssignment assign_folds(const RawCohort& cohort, int n_folds, std::uint64_t seed) {
    if (n_folds < 1) throw ValidationError("number of folds must be >= 1");
    if (cohort.patients.size() < static_cast<std::size_t>(n_folds)) {
        throw ValidationError("fewer patients than folds");
    }
    std::vector<std::string> ids;
    ids.reserve(cohort.patients.size());
    for (const auto& patient : cohort.patients) ids.push_back(patient.patient_id);

    auto rng = make_engine(seed);
    std::shuffle(ids.begin(), ids.end(), rng);

    FoldAssignment assignment;
    assignment.n_folds = n_folds;
    assignment.seed = seed;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        assignment.fold_of[ids[i]] = static_cast<int>(i % n_folds);
    }
    return assignment;
}

std::string ExperimentArm::label() const {
    std::string s = oppo_uses_indicators ? "Yes" : "No";
    s += "/";
    s += oppe_uses_indicators ? "Yes" : "No";
    return s;
}

void validate_arm(const ExperimentArm& arm) {
    if (arm.oppo_uses_indicators && !arm.oppe_uses_indicators) {
        throw ValidationError(
            "arm Yes/No (indicators in OPPO but not OPPE) is rejected: evaluating an "
            "indicator-aware policy without indicator-aware evaluation is confounded");
    }
}

std::vector<ExperimentArm> experiment_arms() {
    return {{false, false}, {false, true}, {true, true}};
}

void RunConfig::validate() const {
    if (n_folds < 2) throw ValidationError("cross-validation requires >= 2 folds");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in [0, 1)");
    if (fqi_iterations < 1) throw ValidationError("fqi_iterations must be >= 1");
    if (trees.n_trees < 1) throw ValidationError("n_trees must be >= 1");
    if (trees.n_min_leaf < 1) throw ValidationError("n_min_leaf must be >= 1");
    if (n_actions < 1) throw ValidationError("n_actions must be >= 1");
    if (!(ope_epsilon >= 0.0 && ope_epsilon <= 1.0)) {
        throw ValidationError("ope_epsilon must lie in [0, 1]");
    }
    if (!(ope_floor > 0.0)) throw ValidationError("ope_floor must be > 0");
    if (csv_path.empty()) {
        if (sim.n_patients < n_folds) throw ValidationError("fewer patients than folds");
        if (sim.missingness.base_rate < 0.0 || sim.missingness.base_rate > 1.0) {
            throw ValidationError("base_rate must lie in [0,1]");
        }
    }
}

namespace {

RawCohort select_patients(const RawCohort& cohort, const FoldAssignment& assignment,
                          int fold, bool in_fold) {
    RawCohort subset;
    for (const auto& patient : cohort.patients) {
        auto it = assignment.fold_of.find(patient.patient_id);
        if (it == assignment.fold_of.end()) {
            throw ValidationError("patient missing from fold assignment: " +
                                  patient.patient_id);
        }
        if ((it->second == fold) == in_fold) subset.patients.push_back(patient);
    }
    return subset;
}

std::uint64_t fqi_seed(const RunConfig& config, int fold, bool indicators) {
    return mix_seed(config.seed, 0x100u + 4u * static_cast<unsigned>(fold) +
                                     (indicators ? 1u : 0u));
}

std::uint64_t behavior_seed(const RunConfig& config, int fold, bool indicators) {
    return mix_seed(config.seed, 0x200u + 4u * static_cast<unsigned>(fold) +
                                     (indicators ? 1u : 0u));
}

struct ArmModels {
    QEnsemble q;
    BehaviorModel mu;
};

FoldArmResult evaluate_arm(const FoldData& data, const ExperimentArm& arm,
                           const ArmModels& models, const RunConfig& config) {
    const TransitionSet& val_pi = arm.oppo_uses_indicators ? data.val_indicators
                                                           : data.val_plain;
    const TransitionSet& val_mu = arm.oppe_uses_indicators ? data.val_indicators
                                                           : data.val_plain;
    auto trajectories = build_eval_trajectories(val_pi, val_mu);

    EvalPolicy pi(models.q, config.ope_epsilon);
    FoldArmResult result;
    result.behavior_return = behavior_return(trajectories, config.gamma);
    for (std::size_t m = 0; m < 4; ++m) {
        try {
            result.estimates[m] =
                estimate(trajectories, pi, models.mu, config.gamma, kAllOpeMethods[m]).value;
        } catch (const DegenerateWeightsError& err) {
            result.errors[m] = err.what();
        }
    }
    return result;
}

ArmModels fit_arm_models(const FoldData& data, const ExperimentArm& arm,
                         const RunConfig& config, int fold) {
    const TransitionSet& train_pi = arm.oppo_uses_indicators ? data.train_indicators
                                                             : data.train_plain;
    const TransitionSet& train_mu = arm.oppe_uses_indicators ? data.train_indicators
                                                             : data.train_plain;
    FqiConfig fqi_config;
    fqi_config.gamma = config.gamma;
    fqi_config.n_iterations = config.fqi_iterations;
    fqi_config.trees = config.trees;
    fqi_config.trees.seed = fqi_seed(config, fold, arm.oppo_uses_indicators);

    ExtraTreesParams mu_params = config.trees;
    mu_params.seed = behavior_seed(config, fold, arm.oppe_uses_indicators);

    ArmModels models;
    models.q = fitted_q_iteration(train_pi, fqi_config);
    models.mu = fit_behavior_policy(train_mu, mu_params, config.ope_floor);
    return models;
}

} // namespace

FoldData prepare_fold(const RawCohort& cohort, const FoldAssignment& assignment, int fold,
                      const RunConfig& config) {
    if (fold < 0 || fold >= assignment.n_folds) {
        throw ValidationError("fold index out of range");
    }
    RawCohort train = select_patients(cohort, assignment, fold, false);
    RawCohort val = select_patients(cohort, assignment, fold, true);
    if (train.patients.empty() || val.patients.empty()) {
        throw ValidationError("fold split left an empty train or validation set");
    }

    FoldData data;
    // Indicators are computed on the raw cohort, before any imputation.
    IndicatorSet train_ind = add_missingness_indicators(train);
    IndicatorSet val_ind = add_missingness_indicators(val);

    LocfCohort train_locf = locf_impute(train);
    LocfCohort val_locf = locf_impute(val);

    data.imputer = fit_imputer(train_locf);
    DenseCohort train_dense = apply_imputer(data.imputer, train_locf);
    DenseCohort val_dense = apply_imputer(data.imputer, val_locf);

    data.normalization = fit_normalization(train_dense);
    data.scheme = fit_action_scheme(train, config.n_actions);

    data.train_plain =
        build_transitions(train_dense, train_ind, data.scheme, false, &data.normalization);
    data.train_indicators =
        build_transitions(train_dense, train_ind, data.scheme, true, &data.normalization);
    data.val_plain =
        build_transitions(val_dense, val_ind, data.scheme, false, &data.normalization);
    data.val_indicators =
        build_transitions(val_dense, val_ind, data.scheme, true, &data.normalization);
    return data;
}

FoldArmResult run_fold(const RawCohort& cohort, const FoldAssignment& assignment, int fold,
                       const ExperimentArm& arm, const RunConfig& config) {
    validate_arm(arm);
    FoldData data = prepare_fold(cohort, assignment, fold, config);
    ArmModels models = fit_arm_models(data, arm, config, fold);
    return evaluate_arm(data, arm, models, config);
}

namespace {

struct Moments {
    std::optional<double> mean;
    std::optional<double> stddev;
};

Moments moments(const std::vector<std::optional<double>>& values) {
    std::vector<double> present;
    for (const auto& v : values) {
        if (v) present.push_back(*v);
    }
    Moments m;
    if (present.empty()) return m;
    double mean = std::accumulate(present.begin(), present.end(), 0.0) /
                  static_cast<double>(present.size());
    m.mean = mean;
    if (present.size() < 2) {
        m.stddev = 0.0;
        return m;
    }
    double ss = 0.0;
    for (double v : present) ss += (v - mean) * (v - mean);
    m.stddev = std::sqrt(ss / static_cast<double>(present.size() - 1));
    return m;
}

} // namespace

RawCohort resolve_cohort(const RunConfig& config) {
    if (!config.csv_path.empty()) return load_cohort_csv(config.csv_path);
    auto [cohort, truth] = simulate_cohort(config.sim.n_patients, config.sim.missingness,
                                           mix_seed(config.seed, 1), config.sim.overrides);
    (void)truth;
    return cohort;
}

ExperimentReport run_experiment(const RawCohort& cohort, const RunConfig& config) {
    config.validate();
    validate_cohort(cohort);
    FoldAssignment assignment = assign_folds(cohort, config.n_folds, mix_seed(config.seed, 2));

    ExperimentReport report;
    const auto arms = experiment_arms();
    report.arms.resize(arms.size());
    for (std::size_t a = 0; a < arms.size(); ++a) {
        report.arms[a].arm = arms[a];
        for (auto& fv : report.arms[a].fold_values) fv.resize(config.n_folds);
    }
    report.baseline_folds.resize(config.n_folds, 0.0);

    for (int fold = 0; fold < config.n_folds; ++fold) {
        FoldData data = prepare_fold(cohort, assignment, fold, config);

        // The FQI model depends on the arm only through the OPPO flag and
        // the behavior model only through the OPPE flag; share fits.
        std::array<std::optional<QEnsemble>, 2> q_by_flag;
        std::array<std::optional<BehaviorModel>, 2> mu_by_flag;
        for (std::size_t a = 0; a < arms.size(); ++a) {
            const ExperimentArm& arm = arms[a];
            ArmModels models;
            const int qi = arm.oppo_uses_indicators ? 1 : 0;
            const int mi = arm.oppe_uses_indicators ? 1 : 0;
            if (!q_by_flag[qi]) {
                FqiConfig fqi_config;
                fqi_config.gamma = config.gamma;
                fqi_config.n_iterations = config.fqi_iterations;
                fqi_config.trees = config.trees;
                fqi_config.trees.seed = fqi_seed(config, fold, arm.oppo_uses_indicators);
                const TransitionSet& train =
                    arm.oppo_uses_indicators ? data.train_indicators : data.train_plain;
                q_by_flag[qi] = fitted_q_iteration(train, fqi_config);
            }
            if (!mu_by_flag[mi]) {
                ExtraTreesParams mu_params = config.trees;
                mu_params.seed = behavior_seed(config, fold, arm.oppe_uses_indicators);
                const TransitionSet& train =
                    arm.oppe_uses_indicators ? data.train_indicators : data.train_plain;
                mu_by_flag[mi] = fit_behavior_policy(train, mu_params, config.ope_floor);
            }
            models.q = *q_by_flag[qi];
            models.mu = *mu_by_flag[mi];
            FoldArmResult result = evaluate_arm(data, arm, models, config);
            for (std::size_t m = 0; m < 4; ++m) {
                report.arms[a].fold_values[m][fold] = result.estimates[m];
            }
            report.baseline_folds[fold] = result.behavior_return;
        }
    }

    for (auto& arm_report : report.arms) {
        for (std::size_t m = 0; m < 4; ++m) {
            Moments mom = moments(arm_report.fold_values[m]);
            arm_report.mean[m] = mom.mean;
            arm_report.stddev[m] = mom.stddev;
        }
    }
    {
        std::vector<std::optional<double>> baseline(report.baseline_folds.begin(),
                                                    report.baseline_folds.end());
        Moments mom = moments(baseline);
        report.baseline_mean = mom.mean.value_or(0.0);
        report.baseline_std = mom.stddev.value_or(0.0);
    }
    report.dynamics = run_dynamics_report(cohort);
    return report;
}

ExperimentReport run_experiment(const RunConfig& config) {
    config.validate();
    return run_experiment(resolve_cohort(config), config);
}

namespace {

std::string yes_no(bool v) { return v ? "yes" : "no"; }

std::string opt_cell(const std::optional<double>& v) {
    return v ? csv::format_double(*v) : std::string();
}

} // namespace

void write_report_files(const ExperimentReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto path = [&](const char* name) {
        return (std::filesystem::path(out_dir) / name).string();
    };

    csv::Table summary;
    summary.header = {"oppo_missingness", "oppe_missingness", "method", "mean", "std"};
    for (const auto& arm : report.arms) {
        for (std::size_t m = 0; m < 4; ++m) {
            summary.rows.push_back({yes_no(arm.arm.oppo_uses_indicators),
                                    yes_no(arm.arm.oppe_uses_indicators),
                                    method_name(kAllOpeMethods[m]), opt_cell(arm.mean[m]),
                                    opt_cell(arm.stddev[m])});
        }
    }
    summary.rows.push_back({"-", "-", "behavior", csv::format_double(report.baseline_mean),
                            csv::format_double(report.baseline_std)});
    csv::write_file(path("ope_report.csv"), summary);

    csv::Table folds;
    folds.header = {"oppo_missingness", "oppe_missingness", "method", "fold", "value"};
    for (const auto& arm : report.arms) {
        for (std::size_t m = 0; m < 4; ++m) {
            for (std::size_t f = 0; f < arm.fold_values[m].size(); ++f) {
                folds.rows.push_back({yes_no(arm.arm.oppo_uses_indicators),
                                      yes_no(arm.arm.oppe_uses_indicators),
                                      method_name(kAllOpeMethods[m]), std::to_string(f),
                                      opt_cell(arm.fold_values[m][f])});
            }
        }
    }
    for (std::size_t f = 0; f < report.baseline_folds.size(); ++f) {
        folds.rows.push_back({"-", "-", "behavior", std::to_string(f),
                              csv::format_double(report.baseline_folds[f])});
    }
    csv::write_file(path("ope_folds.csv"), folds);

    write_dynamics_csv(report.dynamics, path("dynamics_report.csv"));
}

std::string format_report_table(const ExperimentReport& report) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-5s %-5s | %-18s %-18s %-18s %-18s\n", "OPPO",
                  "OPPE", "Standard IS", "Standard WIS", "Stepwise IS", "Stepwise WIS");
    out << line;
    out << std::string(88, '-') << '\n';
    for (const auto& arm : report.arms) {
        std::string cells[4];
        for (std::size_t m = 0; m < 4; ++m) {
            if (arm.mean[m]) {
                char cell[64];
                std::snprintf(cell, sizeof(cell), "%.3f +/- %.3f", *arm.mean[m],
                              arm.stddev[m].value_or(0.0));
                cells[m] = cell;
            } else {
                cells[m] = "n/a";
            }
        }
        std::snprintf(line, sizeof(line), "%-5s %-5s | %-18s %-18s %-18s %-18s\n",
                      arm.arm.oppo_uses_indicators ? "Yes" : "No",
                      arm.arm.oppe_uses_indicators ? "Yes" : "No", cells[0].c_str(),
                      cells[1].c_str(), cells[2].c_str(), cells[3].c_str());
        out << line;
    }
    std::snprintf(line, sizeof(line), "behavior baseline: %.3f +/- %.3f\n",
                  report.baseline_mean, report.baseline_std);
    out << line;
    return out.str();
}

namespace {

void save_regression(std::ostream& out, const LabRegression& reg) {
    out << "reg " << (reg.mean_only ? 1 : 0) << ' ';
    serial::write_hex(out, reg.intercept);
    out << ' ' << reg.coef.size();
    for (double c : reg.coef) {
        out << ' ';
        serial::write_hex(out, c);
    }
    out << '\n';
}

LabRegression load_regression(std::istream& in) {
    serial::expect_token(in, "reg");
    LabRegression reg;
    reg.mean_only = serial::read_int(in, "mean_only") != 0;
    reg.intercept = serial::read_double(in, "intercept");
    const long n = serial::read_int(in, "n_coef");
    reg.coef.resize(n);
    for (long i = 0; i < n; ++i) reg.coef[i] = serial::read_double(in, "coef");
    return reg;
}

} // namespace

void save_policy_bundle(const PolicyBundle& bundle, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open policy file for writing: " + path);
    out << "heparl-policy 1\n";
    out << "labs " << bundle.lab_names.size() << '\n';
    for (std::size_t i = 0; i < bundle.lab_names.size(); ++i) {
        out << bundle.lab_names[i] << ' ' << int(bundle.lab_maskable[i]) << '\n';
    }
    out << "use_indicators " << (bundle.use_indicators ? 1 : 0) << '\n';
    out << "gamma ";
    serial::write_hex(out, bundle.gamma);
    out << '\n';

    out << "scheme " << bundle.scheme.n_actions << ' ' << bundle.scheme.edges.size();
    for (double e : bundle.scheme.edges) {
        out << ' ';
        serial::write_hex(out, e);
    }
    out << '\n';

    out << "normalization";
    for (std::size_t i = 0; i < bundle.normalization.mean.size(); ++i) {
        out << ' ';
        serial::write_hex(out, bundle.normalization.mean[i]);
        out << ' ';
        serial::write_hex(out, bundle.normalization.stddev[i]);
    }
    out << '\n';

    out << "imputer " << bundle.imputer.rounds_used << ' ';
    serial::write_hex(out, bundle.imputer.tolerance);
    out << '\n';
    out << "means";
    for (double m : bundle.imputer.fallback_mean) {
        out << ' ';
        serial::write_hex(out, m);
    }
    out << '\n';
    out << "regressions " << bundle.imputer.regressions.size() << '\n';
    for (const auto& reg : bundle.imputer.regressions) save_regression(out, reg);

    bundle.q.save(out);
    if (!out) throw ValidationError("write failed: " + path);
}

PolicyBundle load_policy_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open policy file: " + path);
    serial::expect_token(in, "heparl-policy");
    if (serial::read_int(in, "version") != 1) {
        throw ValidationError("unsupported policy file version");
    }
    PolicyBundle bundle;
    serial::expect_token(in, "labs");
    const long n_labs = serial::read_int(in, "n_labs");
    for (long i = 0; i < n_labs; ++i) {
        bundle.lab_names.push_back(serial::read_token(in, "lab name"));
        bundle.lab_maskable.push_back(
            static_cast<std::uint8_t>(serial::read_int(in, "maskable")));
    }
    serial::expect_token(in, "use_indicators");
    bundle.use_indicators = serial::read_int(in, "use_indicators") != 0;
    serial::expect_token(in, "gamma");
    bundle.gamma = serial::read_double(in, "gamma");

    serial::expect_token(in, "scheme");
    bundle.scheme.n_actions = static_cast<int>(serial::read_int(in, "n_actions"));
    const long n_edges = serial::read_int(in, "n_edges");
    for (long i = 0; i < n_edges; ++i) {
        bundle.scheme.edges.push_back(serial::read_double(in, "edge"));
    }

    serial::expect_token(in, "normalization");
    bundle.normalization.mean.resize(n_labs);
    bundle.normalization.stddev.resize(n_labs);
    for (long i = 0; i < n_labs; ++i) {
        bundle.normalization.mean[i] = serial::read_double(in, "norm mean");
        bundle.normalization.stddev[i] = serial::read_double(in, "norm std");
    }

    serial::expect_token(in, "imputer");
    bundle.imputer.rounds_used = static_cast<int>(serial::read_int(in, "rounds"));
    bundle.imputer.tolerance = serial::read_double(in, "tolerance");
    bundle.imputer.lab_names = bundle.lab_names;
    serial::expect_token(in, "means");
    bundle.imputer.fallback_mean.resize(n_labs);
    for (long i = 0; i < n_labs; ++i) {
        bundle.imputer.fallback_mean[i] = serial::read_double(in, "fallback mean");
    }
    serial::expect_token(in, "regressions");
    const long n_reg = serial::read_int(in, "n_regressions");
    for (long i = 0; i < n_reg; ++i) bundle.imputer.regressions.push_back(load_regression(in));

    bundle.q = QEnsemble::load(in);
    return bundle;
}

PolicyBundle train_policy(const RawCohort& cohort, bool use_indicators,
                          const RunConfig& config) {
    validate_cohort(cohort);
    const LabCatalog& catalog = default_catalog();

    PolicyBundle bundle;
    for (const auto& lab : catalog.labs()) {
        bundle.lab_names.push_back(lab.name);
        bundle.lab_maskable.push_back(lab.maskable ? 1 : 0);
    }
    bundle.use_indicators = use_indicators;
    bundle.gamma = config.gamma;

    IndicatorSet indicators = add_missingness_indicators(cohort);
    LocfCohort locf = locf_impute(cohort);
    bundle.imputer = fit_imputer(locf);
    DenseCohort dense = apply_imputer(bundle.imputer, locf);
    bundle.normalization = fit_normalization(dense);
    bundle.scheme = fit_action_scheme(cohort, config.n_actions);

    TransitionSet transitions = build_transitions(dense, indicators, bundle.scheme,
                                                  use_indicators, &bundle.normalization);
    FqiConfig fqi_config;
    fqi_config.gamma = config.gamma;
    fqi_config.n_iterations = config.fqi_iterations;
    fqi_config.trees = config.trees;
    fqi_config.trees.seed = mix_seed(config.seed, 0x300);
    bundle.q = fitted_q_iteration(transitions, fqi_config);
    return bundle;
}

TransitionSet bundle_transitions(const PolicyBundle& bundle, const RawCohort& cohort,
                                 bool use_indicators) {
    validate_cohort(cohort);
    IndicatorSet indicators = add_missingness_indicators(cohort);
    LocfCohort locf = locf_impute(cohort);
    DenseCohort dense = apply_imputer(bundle.imputer, locf);
    return build_transitions(dense, indicators, bundle.scheme, use_indicators,
                             &bundle.normalization);
}

} // namespace heparl
