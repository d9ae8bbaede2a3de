#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbeval/rng.hpp"

namespace fbeval::stats {

// Row-major r x c grid of nonnegative counts.
class ContingencyTable {
public:
    ContingencyTable(std::size_t rows, std::size_t cols);
    ContingencyTable(std::initializer_list<std::initializer_list<std::uint64_t>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::uint64_t& at(std::size_t r, std::size_t c) { return counts_[r * cols_ + c]; }
    std::uint64_t at(std::size_t r, std::size_t c) const { return counts_[r * cols_ + c]; }
    std::uint64_t total() const;
    std::uint64_t row_sum(std::size_t r) const;
    std::uint64_t col_sum(std::size_t c) const;
    bool square() const { return rows_ == cols_; }

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<std::uint64_t> counts_;
};

// Builds a k x k agreement table from two aligned label vectors in [0, k).
ContingencyTable agreement_table(std::span<const int> first, std::span<const int> second,
                                 std::size_t k);

// Prevalence- and bias-adjusted kappa: 2 p_o - 1.
double pabak(double observed_agreement);

struct KappaResult {
    double kappa = 0.0;
    double observed = 0.0;
    double expected = 0.0;
    // Expected agreement is 1 (a single class on both sides); kappa reported as 0.
    bool degenerate = false;
};

KappaResult cohen_kappa(const ContingencyTable& table);

// Nominal Krippendorff's alpha. labels[u][a] is annotator a's label for unit u,
// or nullopt when missing. Units with fewer than two labels are not pairable.
double krippendorff_alpha_nominal(const std::vector<std::vector<std::optional<int>>>& labels);

struct BinaryTestResult {
    std::optional<double> chi_square;    // absent when a margin is zero
    std::optional<double> chi_square_p;
    double fisher_exact_p = 1.0;
};

// Pearson chi-square (1 df, optional Yates correction) and two-sided Fisher exact.
BinaryTestResult binary_tests(const ContingencyTable& table, bool continuity_correction = false);

// Two-sided Fisher exact: sum of probabilities of all tables with the observed
// margins whose probability does not exceed the observed table's.
double fisher_exact_two_sided(const ContingencyTable& table);

// Upper tail of the chi-square distribution.
double chi_square_sf(double statistic, double degrees_of_freedom);

struct MannWhitneyResult {
    double u = 0.0;  // U statistic of the first sample
    double p = 1.0;  // two-sided
    bool exact = false;
};

struct MannWhitneyOptions {
    // Exact null distribution is used when n1 * n2 <= this limit.
    std::size_t exact_limit = 400;
    bool continuity_correction = true;
};

MannWhitneyResult mann_whitney_u(std::span<const double> first, std::span<const double> second,
                                 const MannWhitneyOptions& options = {});

struct KruskalWallisResult {
    double h = 0.0;
    std::size_t df = 0;
    double p = 1.0;
    // Every observation identical; p set to 1 by convention.
    bool degenerate = false;
};

KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

enum class Correction { none, bonferroni, holm };

// Adjusted p-values in the input order.
std::vector<double> adjust_p_values(std::span<const double> p, Correction correction);

struct PairwiseTest {
    std::size_t first = 0;
    std::size_t second = 0;
    double statistic = 0.0;
    double p = 1.0;
};

struct OrdinalTestsResult {
    KruskalWallisResult kruskal_wallis;
    std::vector<PairwiseTest> pairwise;
    std::string note;
};

OrdinalTestsResult ordinal_tests(const std::vector<std::vector<double>>& groups,
                                 Correction correction = Correction::none);

struct BinaryGroupsResult {
    std::optional<double> chi_square;
    std::optional<double> chi_square_p;
    std::vector<PairwiseTest> pairwise;  // Fisher exact per pair
};

// Binary outcome across groups: overall r x 2 chi-square plus pairwise Fisher tests.
// successes[i] out of totals[i].
BinaryGroupsResult binary_group_tests(std::span<const std::uint64_t> successes,
                                      std::span<const std::uint64_t> totals,
                                      Correction correction = Correction::none);

struct CIReport {
    double point_estimate = 0.0;  // mean of the draws
    double lower = 0.0;           // 2.5th percentile
    double upper = 0.0;           // 97.5th percentile
    std::size_t iterations = 0;
    std::uint64_t seed = 0;

    double half_width() const { return (upper - lower) / 2.0; }
    bool operator==(const CIReport&) const = default;
};

// Percentile with linear interpolation between order statistics (q in [0, 1]).
double percentile(std::span<const double> sorted, double q);

CIReport summarize_draws(std::vector<double> draws, std::uint64_t seed);

// Iteration b draws from Rng(derive_seed(seed, b)), so the draws do not
// depend on the order in which iterations run.
CIReport percentile_bootstrap(const std::function<double(Rng&)>& sampler, std::size_t iterations,
                              std::uint64_t seed);

}  // namespace fbeval::stats
