#include "heparl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "heparl/csv.hpp"
#include "heparl/errors.hpp"

namespace heparl {

DynamicsSamples build_dynamics_samples(const RawCohort& cohort, const std::string& lab,
                                       const LabCatalog& catalog) {
    const std::size_t li = catalog.index_of(lab);
    if (!catalog.labs()[li].maskable) {
        throw ValidationError("lab is not maskable: " + lab);
    }
    const std::size_t aptt = catalog.aptt_index();
    DynamicsSamples samples;
    for (const auto& patient : cohort.patients) {
        const auto& obs = patient.observations;
        for (std::size_t t = 1; t + 1 < obs.size(); ++t) {
            double delta = std::abs(*obs[t + 1].values[aptt] - *obs[t - 1].values[aptt]);
            if (obs[t].values[li]) {
                samples.not_missing.push_back(delta);
            } else {
                samples.missing.push_back(delta);
            }
        }
    }
    return samples;
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Midranks of the pooled sample; returns the rank sum of the first sample
/// and the tie term sum(t^3 - t) over tie groups.
struct RankInfo {
    double rank_sum_x = 0.0;
    double tie_term = 0.0;
    bool has_ties = false;
};

RankInfo midranks(std::span<const double> x, std::span<const double> y) {
    struct Entry {
        double value;
        bool from_x;
    };
    std::vector<Entry> pooled;
    pooled.reserve(x.size() + y.size());
    for (double v : x) pooled.push_back({v, true});
    for (double v : y) pooled.push_back({v, false});
    std::sort(pooled.begin(), pooled.end(),
              [](const Entry& a, const Entry& b) { return a.value < b.value; });

    RankInfo info;
    std::size_t i = 0;
    while (i < pooled.size()) {
        std::size_t j = i;
        while (j < pooled.size() && pooled[j].value == pooled[i].value) ++j;
        const double tied = static_cast<double>(j - i);
        // ranks i+1 .. j averaged
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (pooled[k].from_x) info.rank_sum_x += rank;
        }
        if (j - i > 1) {
            info.has_ties = true;
            info.tie_term += tied * tied * tied - tied;
        }
        i = j;
    }
    return info;
}

/// Exact null distribution of the rank sum of a size-k subset of ranks
/// {1..n}: count[s] = number of k-subsets with rank sum s.
std::vector<double> rank_sum_counts(std::size_t n, std::size_t k) {
    const std::size_t max_sum = n * (n + 1) / 2;
    std::vector<std::vector<double>> dp(k + 1, std::vector<double>(max_sum + 1, 0.0));
    dp[0][0] = 1.0;
    for (std::size_t rank = 1; rank <= n; ++rank) {
        for (std::size_t kk = std::min(k, rank); kk >= 1; --kk) {
            auto& row = dp[kk];
            const auto& prev = dp[kk - 1];
            for (std::size_t s = max_sum; s >= rank; --s) {
                if (prev[s - rank] != 0.0) row[s] += prev[s - rank];
            }
        }
    }
    return dp[k];
}

} // namespace

MannWhitneyResult mann_whitney_one_sided(std::span<const double> x,
                                         std::span<const double> y) {
    if (x.empty() || y.empty()) {
        throw ValidationError("insufficient data: Mann-Whitney requires non-empty samples");
    }
    const double nx = static_cast<double>(x.size());
    const double ny = static_cast<double>(y.size());
    const double n = nx + ny;

    RankInfo ranks = midranks(x, y);
    MannWhitneyResult result;
    result.u = ranks.rank_sum_x - nx * (nx + 1.0) / 2.0;

    if (!ranks.has_ties && x.size() + y.size() <= 16) {
        // Full enumeration of the rank assignments via the subset rank-sum
        // distribution: p = P(RankSum_x <= observed).
        auto counts = rank_sum_counts(x.size() + y.size(), x.size());
        const double observed = ranks.rank_sum_x;
        double below = 0.0, total = 0.0;
        for (std::size_t s = 0; s < counts.size(); ++s) {
            total += counts[s];
            if (static_cast<double>(s) <= observed + 1e-9) below += counts[s];
        }
        result.exact = true;
        result.p = below / total;
        return result;
    }

    const double mean_u = nx * ny / 2.0;
    double variance = nx * ny / 12.0 * ((n + 1.0) - ranks.tie_term / (n * (n - 1.0)));
    if (variance <= 0.0) {
        result.p = 1.0; // all pooled values identical
        return result;
    }
    // Continuity-corrected one-sided (less) normal approximation.
    double z = (result.u + 0.5 - mean_u) / std::sqrt(variance);
    result.p = normal_cdf(z);
    return result;
}

std::vector<double> bonferroni_adjust(std::span<const double> p_values, int m) {
    if (m < static_cast<int>(p_values.size())) {
        throw ValidationError("Bonferroni family size smaller than the number of tests");
    }
    std::vector<double> adjusted;
    adjusted.reserve(p_values.size());
    for (double p : p_values) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("p-value outside [0,1]");
        }
        adjusted.push_back(std::min(1.0, static_cast<double>(m) * p));
    }
    return adjusted;
}

double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<TestResult> run_dynamics_report(const RawCohort& cohort, double alpha,
                                            const LabCatalog& catalog) {
    const int family = static_cast<int>(catalog.n_maskable());
    std::vector<TestResult> results;
    for (std::size_t li : catalog.maskable_indices()) {
        const std::string& lab = catalog.labs()[li].name;
        DynamicsSamples samples = build_dynamics_samples(cohort, lab, catalog);
        TestResult row;
        row.lab = lab;
        row.n_missing = samples.missing.size();
        row.n_not_missing = samples.not_missing.size();
        row.median_missing = median(samples.missing);
        row.median_not_missing = median(samples.not_missing);
        if (!samples.missing.empty() && !samples.not_missing.empty()) {
            // H1: aPTT dynamics are smaller when the lab is missing.
            auto mw = mann_whitney_one_sided(samples.missing, samples.not_missing);
            row.testable = true;
            row.u_statistic = mw.u;
            row.p_value = mw.p;
            row.p_adjusted = std::min(1.0, family * mw.p);
            row.significant = row.p_adjusted < alpha;
        }
        results.push_back(std::move(row));
    }
    return results;
}

void write_dynamics_csv(const std::vector<TestResult>& results, const std::string& path) {
    csv::Table table;
    table.header = {"lab", "median_missing", "median_not_missing", "u", "p", "p_adj",
                    "significant"};
    for (const auto& r : results) {
        std::vector<std::string> row;
        row.push_back(r.lab);
        if (r.testable) {
            row.push_back(csv::format_double(r.median_missing));
            row.push_back(csv::format_double(r.median_not_missing));
            row.push_back(csv::format_double(r.u_statistic));
            row.push_back(csv::format_double(r.p_value));
            row.push_back(csv::format_double(r.p_adjusted));
            row.push_back(r.significant ? "true" : "false");
        } else {
            // untestable lab: empty cells, mirroring the missing-value rule
            row.insert(row.end(), 5, std::string());
            row.push_back("false");
        }
        table.rows.push_back(std::move(row));
    }
    csv::write_file(path, table);
}

std::string format_dynamics_table(const std::vector<TestResult>& results) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-6s %14s %18s %12s %12s %6s\n", "lab",
                  "median_missing", "median_not_missing", "p", "p_adj", "sig");
    out << line;
    for (const auto& r : results) {
        if (!r.testable) {
            std::snprintf(line, sizeof(line), "%-6s %14s %18s %12s %12s %6s\n",
                          r.lab.c_str(), "-", "-", "-", "-", "-");
        } else {
            std::snprintf(line, sizeof(line), "%-6s %14.3f %18.3f %12.3e %12.3e %6s\n",
                          r.lab.c_str(), r.median_missing, r.median_not_missing, r.p_value,
                          r.p_adjusted, r.significant ? "*" : "");
        }
        out << line;
    }
    return out.str();
}

} // namespace heparl
