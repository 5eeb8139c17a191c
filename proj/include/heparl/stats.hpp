#pragma once

#include <span>
#include <string>
#include <vector>

#include "heparl/catalog.hpp"
#include "heparl/cohort.hpp"

namespace heparl {

/// |aPTT_{t+1} - aPTT_{t-1}| over interior observations, split by whether a
/// given concurrent lab was missing at t.
struct DynamicsSamples {
    std::vector<double> missing;
    std::vector<double> not_missing;
};

DynamicsSamples build_dynamics_samples(const RawCohort& cohort, const std::string& lab,
                                       const LabCatalog& catalog = default_catalog());

struct MannWhitneyResult {
    double u = 0.0;      // U statistic of the first sample (midranks)
    double p = 0.0;      // one-sided, H1: x stochastically less than y
    bool exact = false;  // exact enumeration used (tie-free, small samples)
};

/// One-sided Mann-Whitney U test of H1 "x tends to be smaller than y".
/// Exact p by enumeration when |x|+|y| <= 16 and the pooled sample is
/// tie-free; otherwise normal approximation with tie-corrected variance and
/// continuity correction. Throws ValidationError("insufficient data") on an
/// empty sample.
MannWhitneyResult mann_whitney_one_sided(std::span<const double> x,
                                         std::span<const double> y);

/// min(1, m*p) per entry; order-preserving. Each p must lie in [0,1] and m
/// must cover the number of tests.
std::vector<double> bonferroni_adjust(std::span<const double> p_values, int m);

struct TestResult {
    std::string lab;
    bool testable = false;  // false when either arm is empty
    std::size_t n_missing = 0;
    std::size_t n_not_missing = 0;
    double median_missing = 0.0;
    double median_not_missing = 0.0;
    double u_statistic = 0.0;
    double p_value = 1.0;
    double p_adjusted = 1.0;
    bool significant = false;
};

/// One row per maskable lab, catalog order, Bonferroni-adjusted over the
/// full lab family. Untestable labs (an empty arm) are flagged rather than
/// failing the report.
std::vector<TestResult> run_dynamics_report(const RawCohort& cohort, double alpha = 0.05,
                                            const LabCatalog& catalog = default_catalog());

void write_dynamics_csv(const std::vector<TestResult>& results, const std::string& path);
std::string format_dynamics_table(const std::vector<TestResult>& results);

double median(std::vector<double> values);

} // namespace heparl
