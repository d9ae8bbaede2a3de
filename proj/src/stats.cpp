#include "fbeval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>

#include "fbeval/error.hpp"

namespace fbeval::stats {

ContingencyTable::ContingencyTable(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), counts_(rows * cols, 0) {
    if (rows == 0 || cols == 0) throw InvalidArgument("contingency table must be non-empty");
}

ContingencyTable::ContingencyTable(std::initializer_list<std::initializer_list<std::uint64_t>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
    if (rows_ == 0 || cols_ == 0) throw InvalidArgument("contingency table must be non-empty");
    for (const auto& row : rows) {
        if (row.size() != cols_) throw InvalidArgument("ragged contingency table");
        counts_.insert(counts_.end(), row.begin(), row.end());
    }
}

std::uint64_t ContingencyTable::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ContingencyTable::row_sum(std::size_t r) const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < cols_; ++c) s += at(r, c);
    return s;
}

std::uint64_t ContingencyTable::col_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t r = 0; r < rows_; ++r) s += at(r, c);
    return s;
}

ContingencyTable agreement_table(std::span<const int> first, std::span<const int> second,
                                 std::size_t k) {
    if (first.size() != second.size()) throw InvalidArgument("label vectors differ in length");
    ContingencyTable table(k, k);
    for (std::size_t i = 0; i < first.size(); ++i) {
        if (first[i] < 0 || second[i] < 0 || static_cast<std::size_t>(first[i]) >= k ||
            static_cast<std::size_t>(second[i]) >= k) {
            throw InvalidArgument("label out of range");
        }
        ++table.at(static_cast<std::size_t>(first[i]), static_cast<std::size_t>(second[i]));
    }
    return table;
}

double pabak(double observed_agreement) {
    if (!(observed_agreement >= 0.0 && observed_agreement <= 1.0)) {
        throw InvalidArgument("observed agreement must lie in [0, 1]");
    }
    return 2.0 * observed_agreement - 1.0;
}

KappaResult cohen_kappa(const ContingencyTable& table) {
    if (!table.square()) throw InvalidArgument("Cohen's kappa needs a square table");
    const auto n = static_cast<double>(table.total());
    if (n == 0.0) throw InvalidArgument("Cohen's kappa of an empty table");
    KappaResult out;
    for (std::size_t i = 0; i < table.rows(); ++i) {
        out.observed += static_cast<double>(table.at(i, i)) / n;
        out.expected += (static_cast<double>(table.row_sum(i)) / n) *
                        (static_cast<double>(table.col_sum(i)) / n);
    }
    if (std::abs(1.0 - out.expected) < 1e-15) {
        out.degenerate = true;
        out.kappa = 0.0;
        return out;
    }
    out.kappa = (out.observed - out.expected) / (1.0 - out.expected);
    return out;
}

double krippendorff_alpha_nominal(const std::vector<std::vector<std::optional<int>>>& labels) {
    // Coincidence matrix over pairable values.
    std::map<std::pair<int, int>, double> coincidence;
    std::map<int, double> marginal;
    double n = 0.0;
    for (const auto& unit : labels) {
        std::vector<int> values;
        for (const auto& v : unit) {
            if (v) values.push_back(*v);
        }
        const std::size_t m = values.size();
        if (m < 2) continue;
        const double w = 1.0 / static_cast<double>(m - 1);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                if (i != j) coincidence[{values[i], values[j]}] += w;
            }
            marginal[values[i]] += 1.0;
        }
        n += static_cast<double>(m);
    }
    if (n == 0.0) throw InvalidArgument("Krippendorff's alpha needs at least one co-annotated unit");
    double observed_disagreement = 0.0;
    for (const auto& [cell, count] : coincidence) {
        if (cell.first != cell.second) observed_disagreement += count;
    }
    double expected_disagreement = 0.0;
    for (const auto& [c, nc] : marginal) {
        for (const auto& [k, nk] : marginal) {
            if (c != k) expected_disagreement += nc * nk;
        }
    }
    if (expected_disagreement == 0.0) {
        throw InvalidArgument("Krippendorff's alpha undefined: only one category observed");
    }
    return 1.0 - (n - 1.0) * observed_disagreement / expected_disagreement;
}

double chi_square_sf(double statistic, double degrees_of_freedom) {
    if (degrees_of_freedom <= 0) throw InvalidArgument("chi-square needs positive degrees of freedom");
    if (statistic <= 0.0) return 1.0;
    boost::math::chi_squared_distribution<double> dist(degrees_of_freedom);
    return boost::math::cdf(boost::math::complement(dist, statistic));
}

namespace {

struct PearsonResult {
    double statistic = 0.0;
    std::size_t df = 0;
};

std::optional<PearsonResult> pearson_chi_square(const ContingencyTable& t, bool yates) {
    const auto n = static_cast<double>(t.total());
    if (n == 0.0) return std::nullopt;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (t.row_sum(r) == 0) return std::nullopt;
    }
    for (std::size_t c = 0; c < t.cols(); ++c) {
        if (t.col_sum(c) == 0) return std::nullopt;
    }
    PearsonResult out;
    out.df = (t.rows() - 1) * (t.cols() - 1);
    if (out.df == 0) return std::nullopt;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
            const double expected =
                static_cast<double>(t.row_sum(r)) * static_cast<double>(t.col_sum(c)) / n;
            double diff = std::abs(static_cast<double>(t.at(r, c)) - expected);
            if (yates) diff = std::max(0.0, diff - 0.5);
            out.statistic += diff * diff / expected;
        }
    }
    return out;
}

double log_choose(std::uint64_t n, std::uint64_t k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

void require_2x2(const ContingencyTable& table) {
    if (table.rows() != 2 || table.cols() != 2) throw InvalidArgument("expected a 2x2 table");
}

}  // namespace

double fisher_exact_two_sided(const ContingencyTable& table) {
    require_2x2(table);
    const std::uint64_t r0 = table.row_sum(0);
    const std::uint64_t r1 = table.row_sum(1);
    const std::uint64_t c0 = table.col_sum(0);
    const std::uint64_t n = r0 + r1;
    if (n == 0) throw InvalidArgument("Fisher exact test of an empty table");
    // Top-left cell ranges over [lo, hi] with margins fixed (hypergeometric).
    const std::uint64_t lo = c0 > r1 ? c0 - r1 : 0;
    const std::uint64_t hi = std::min(r0, c0);
    const double log_denominator = log_choose(n, c0);
    auto log_prob = [&](std::uint64_t a) {
        return log_choose(r0, a) + log_choose(r1, c0 - a) - log_denominator;
    };
    const double observed = log_prob(table.at(0, 0));
    // Relative slack so tables tied in probability with the observed one count.
    const double slack = 1e-7;
    double p = 0.0;
    for (std::uint64_t a = lo; a <= hi; ++a) {
        const double lp = log_prob(a);
        if (lp <= observed + slack) p += std::exp(lp);
    }
    return std::min(1.0, p);
}

BinaryTestResult binary_tests(const ContingencyTable& table, bool continuity_correction) {
    require_2x2(table);
    BinaryTestResult out;
    if (auto chi = pearson_chi_square(table, continuity_correction)) {
        out.chi_square = chi->statistic;
        out.chi_square_p = chi_square_sf(chi->statistic, 1.0);
    }
    out.fisher_exact_p = fisher_exact_two_sided(table);
    return out;
}

namespace {

// Midranks of the pooled sample, doubled so ties stay integral.
struct PooledRanks {
    std::vector<std::int64_t> doubled;   // per pooled position (first sample, then second)
    std::vector<std::size_t> tie_sizes;  // size of each tie group
};

PooledRanks pooled_ranks(const std::vector<double>& pooled) {
    std::vector<std::size_t> order(pooled.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
    PooledRanks out;
    out.doubled.assign(pooled.size(), 0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        // ranks i+1 .. j+1, doubled midrank = (i+1)+(j+1)
        const auto doubled_mid = static_cast<std::int64_t>(i + j + 2);
        for (std::size_t k = i; k <= j; ++k) out.doubled[order[k]] = doubled_mid;
        out.tie_sizes.push_back(j - i + 1);
        i = j + 1;
    }
    return out;
}

double tie_term(const std::vector<std::size_t>& tie_sizes) {
    double s = 0.0;
    for (std::size_t t : tie_sizes) {
        const auto td = static_cast<double>(t);
        s += td * td * td - td;
    }
    return s;
}

// Exact two-sided p for the doubled rank sum of the first sample, counting
// every assignment of n1 pooled positions to the first sample.
double exact_rank_sum_p(const std::vector<std::int64_t>& doubled, std::size_t n1,
                        std::int64_t observed) {
    const std::size_t n = doubled.size();
    std::int64_t max_sum = 0;
    for (auto r : doubled) max_sum += r;
    // ways[j][s]: number of j-subsets of the positions seen so far with sum s.
    std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(doubled[i]);
        for (std::size_t j = std::min(n1, i + 1); j >= 1; --j) {
            auto& dst = ways[j];
            const auto& src = ways[j - 1];
            for (std::size_t s = dst.size(); s-- > r;) {
                if (src[s - r] != 0.0) dst[s] += src[s - r];
            }
        }
    }
    // Centre of the distribution is n1 (n + 1) in doubled units.
    const auto centre2 = static_cast<std::int64_t>(n1 * (n + 1));
    const std::int64_t observed_dev = std::llabs(observed - centre2);
    double total = 0.0;
    double extreme = 0.0;
    for (std::size_t s = 0; s < ways[n1].size(); ++s) {
        const double w = ways[n1][s];
        if (w == 0.0) continue;
        total += w;
        if (std::llabs(static_cast<std::int64_t>(s) - centre2) >= observed_dev) extreme += w;
    }
    return std::min(1.0, extreme / total);
}

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> first, std::span<const double> second,
                                 const MannWhitneyOptions& options) {
    if (first.empty() || second.empty()) throw InvalidArgument("Mann-Whitney U needs two non-empty samples");
    const std::size_t n1 = first.size();
    const std::size_t n2 = second.size();
    std::vector<double> pooled(first.begin(), first.end());
    pooled.insert(pooled.end(), second.begin(), second.end());
    const PooledRanks ranks = pooled_ranks(pooled);
    std::int64_t rank_sum2 = 0;
    for (std::size_t i = 0; i < n1; ++i) rank_sum2 += ranks.doubled[i];

    MannWhitneyResult out;
    out.u = static_cast<double>(rank_sum2) / 2.0 - static_cast<double>(n1 * (n1 + 1)) / 2.0;

    const double n = static_cast<double>(n1 + n2);
    if (ranks.tie_sizes.size() == 1) {
        out.p = 1.0;
        out.exact = n1 * n2 <= options.exact_limit;
        return out;
    }
    if (n1 * n2 <= options.exact_limit) {
        out.exact = true;
        // The null distribution is enumerated for the smaller sample; the
        // two-sided deviation is the same for either sample's rank sum.
        if (n1 <= n2) {
            out.p = exact_rank_sum_p(ranks.doubled, n1, rank_sum2);
        } else {
            std::vector<std::int64_t> reordered(ranks.doubled.begin() + static_cast<std::ptrdiff_t>(n1),
                                                ranks.doubled.end());
            reordered.insert(reordered.end(), ranks.doubled.begin(),
                             ranks.doubled.begin() + static_cast<std::ptrdiff_t>(n1));
            std::int64_t second_sum2 = 0;
            for (std::size_t i = 0; i < n2; ++i) second_sum2 += reordered[i];
            out.p = exact_rank_sum_p(reordered, n2, second_sum2);
        }
        return out;
    }
    const double mean = static_cast<double>(n1 * n2) / 2.0;
    const double variance = static_cast<double>(n1 * n2) / 12.0 *
                            ((n + 1.0) - tie_term(ranks.tie_sizes) / (n * (n - 1.0)));
    double deviation = std::abs(out.u - mean);
    if (options.continuity_correction) deviation = std::max(0.0, deviation - 0.5);
    const double z = deviation / std::sqrt(variance);
    out.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    return out;
}

KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw InvalidArgument("Kruskal-Wallis needs at least two groups");
    std::vector<double> pooled;
    for (const auto& g : groups) {
        if (g.empty()) throw InvalidArgument("Kruskal-Wallis groups must be non-empty");
        pooled.insert(pooled.end(), g.begin(), g.end());
    }
    const PooledRanks ranks = pooled_ranks(pooled);
    KruskalWallisResult out;
    out.df = groups.size() - 1;
    const double n = static_cast<double>(pooled.size());
    const double correction = 1.0 - tie_term(ranks.tie_sizes) / (n * n * n - n);
    if (correction <= 0.0) {
        out.degenerate = true;
        out.p = 1.0;
        return out;
    }
    double sum = 0.0;
    std::size_t offset = 0;
    for (const auto& g : groups) {
        double rank_sum = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) rank_sum += static_cast<double>(ranks.doubled[offset + i]) / 2.0;
        sum += rank_sum * rank_sum / static_cast<double>(g.size());
        offset += g.size();
    }
    const double h = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);
    out.h = std::max(0.0, h / correction);
    out.p = chi_square_sf(out.h, static_cast<double>(out.df));
    return out;
}

std::vector<double> adjust_p_values(std::span<const double> p, Correction correction) {
    std::vector<double> out(p.begin(), p.end());
    const double m = static_cast<double>(p.size());
    switch (correction) {
        case Correction::none:
            break;
        case Correction::bonferroni:
            for (double& v : out) v = std::min(1.0, v * m);
            break;
        case Correction::holm: {
            std::vector<std::size_t> order(p.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
            double running = 0.0;
            for (std::size_t rank = 0; rank < order.size(); ++rank) {
                const double adjusted = std::min(1.0, (m - static_cast<double>(rank)) * p[order[rank]]);
                running = std::max(running, adjusted);
                out[order[rank]] = running;
            }
            break;
        }
    }
    return out;
}

OrdinalTestsResult ordinal_tests(const std::vector<std::vector<double>>& groups, Correction correction) {
    OrdinalTestsResult out;
    out.kruskal_wallis = kruskal_wallis(groups);
    if (out.kruskal_wallis.degenerate) {
        out.note = "all observations identical; p-values set to 1 by convention";
    }
    std::vector<double> raw;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            const auto mw = mann_whitney_u(groups[i], groups[j]);
            out.pairwise.push_back({i, j, mw.u, mw.p});
            raw.push_back(mw.p);
        }
    }
    const auto adjusted = adjust_p_values(raw, correction);
    for (std::size_t i = 0; i < adjusted.size(); ++i) out.pairwise[i].p = adjusted[i];
    return out;
}

BinaryGroupsResult binary_group_tests(std::span<const std::uint64_t> successes,
                                      std::span<const std::uint64_t> totals, Correction correction) {
    if (successes.size() != totals.size() || successes.size() < 2) {
        throw InvalidArgument("binary group tests need at least two groups with matching totals");
    }
    ContingencyTable overall(successes.size(), 2);
    for (std::size_t i = 0; i < successes.size(); ++i) {
        if (successes[i] > totals[i]) throw InvalidArgument("successes exceed group total");
        overall.at(i, 0) = successes[i];
        overall.at(i, 1) = totals[i] - successes[i];
    }
    BinaryGroupsResult out;
    if (auto chi = pearson_chi_square(overall, false)) {
        out.chi_square = chi->statistic;
        out.chi_square_p = chi_square_sf(chi->statistic, static_cast<double>(chi->df));
    }
    std::vector<double> raw;
    for (std::size_t i = 0; i < successes.size(); ++i) {
        for (std::size_t j = i + 1; j < successes.size(); ++j) {
            ContingencyTable pair{{successes[i], totals[i] - successes[i]},
                                  {successes[j], totals[j] - successes[j]}};
            const double p = fisher_exact_two_sided(pair);
            out.pairwise.push_back({i, j, 0.0, p});
            raw.push_back(p);
        }
    }
    const auto adjusted = adjust_p_values(raw, correction);
    for (std::size_t i = 0; i < adjusted.size(); ++i) out.pairwise[i].p = adjusted[i];
    return out;
}

double percentile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw InvalidArgument("percentile of an empty sample");
    if (q <= 0.0) return sorted.front();
    if (q >= 1.0) return sorted.back();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

CIReport summarize_draws(std::vector<double> draws, std::uint64_t seed) {
    if (draws.size() < 2) throw InvalidArgument("bootstrap needs at least two iterations");
    CIReport out;
    out.iterations = draws.size();
    out.seed = seed;
    // Summation in sorted order keeps the mean independent of draw order.
    std::sort(draws.begin(), draws.end());
    double sum = 0.0;
    for (double d : draws) sum += d;
    out.point_estimate = sum / static_cast<double>(draws.size());
    out.lower = percentile(draws, 0.025);
    out.upper = percentile(draws, 0.975);
    return out;
}

CIReport percentile_bootstrap(const std::function<double(Rng&)>& sampler, std::size_t iterations,
                              std::uint64_t seed) {
    if (iterations < 2) throw InvalidArgument("bootstrap needs at least two iterations");
    std::vector<double> draws(iterations);
    for (std::size_t b = 0; b < iterations; ++b) {
        Rng rng(derive_seed(seed, b));
        draws[b] = sampler(rng);
    }
    return summarize_draws(std::move(draws), seed);
}

}  // namespace fbeval::stats
