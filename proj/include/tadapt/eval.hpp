// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tadapt/error.hpp"

namespace tadapt {

/// One scored template pair (1:1 verification).
struct ScoredPair {
    std::string probe_id;
    std::string reference_id;
    double score = 0.0;
    bool mated = false;

    bool operator==(const ScoredPair&) const = default;
};

using PairScores = std::vector<ScoredPair>;

/// Dense probes x gallery scores (1:N search). Row-major.
struct ScoreMatrix {
    std::vector<std::string> row_ids;
    std::vector<std::string> col_ids;
    std::vector<double> scores;
    std::vector<bool> mated;

    std::size_t rows() const noexcept { return row_ids.size(); }
    std::size_t cols() const noexcept { return col_ids.size(); }
    double at(std::size_t r, std::size_t c) const { return scores[r * cols() + c]; }
    bool is_mated(std::size_t r, std::size_t c) const { return mated[r * cols() + c]; }

    void validate() const
    {
        require(scores.size() == rows() * cols() && mated.size() == scores.size(), ErrorCode::InvalidArgument,
                "score matrix shape mismatch");
        for (double s : scores)
            require(std::isfinite(s), ErrorCode::NonFinite, "score matrix contains a non-finite score");
    }

    PairScores to_pairs() const
    {
        PairScores out;
        out.reserve(scores.size());
        for (std::size_t r = 0; r < rows(); ++r)
            for (std::size_t c = 0; c < cols(); ++c)
                out.push_back({row_ids[r], col_ids[c], at(r, c), is_mated(r, c)});
        return out;
    }
};

/// A sample of a step curve. For ROC, x = FMR and y = TAR; for 1:N DET,
/// x = FPIR and y = TPIR (so FNIR = 1 - y). The first point of every curve
/// uses threshold +inf (x = 0, y = 0).
struct CurvePoint {
    double threshold;
    double x;
    double y;
};

using Curve = std::vector<CurvePoint>;

namespace detail {

// Counts of values >= t for every distinct threshold in descending order.
// Both inputs must be sorted descending.
inline Curve sweep(std::span<const double> positives, std::span<const double> negatives,
                   std::span<const double> thresholds, double pos_total, double neg_total)
{
    Curve curve;
    curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t ip = 0, in = 0;
    for (double t : thresholds) {
        while (ip < positives.size() && positives[ip] >= t)
            ++ip;
        while (in < negatives.size() && negatives[in] >= t)
            ++in;
        curve.push_back({t, static_cast<double>(in) / neg_total, static_cast<double>(ip) / pos_total});
    }
    return curve;
}

inline std::vector<double> distinct_descending(std::vector<double> a, std::span<const double> b)
{
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end(), std::greater<>());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
}

} // namespace detail

/// 1:1 ROC. At each distinct score t: FMR = fraction of non-mated pairs with
/// score >= t, TAR = fraction of mated pairs with score >= t (= 1 - FNMR).
inline Curve roc_11(std::span<const ScoredPair> pairs)
{
    std::vector<double> mated, nonmated;
    for (const ScoredPair& p : pairs) {
        require(std::isfinite(p.score), ErrorCode::NonFinite, "non-finite score");
        (p.mated ? mated : nonmated).push_back(p.score);
    }
    require(!mated.empty() && !nonmated.empty(), ErrorCode::DegenerateInput,
            "ROC needs at least one mated and one non-mated pair");
    std::sort(mated.begin(), mated.end(), std::greater<>());
    std::sort(nonmated.begin(), nonmated.end(), std::greater<>());
    const auto thresholds = detail::distinct_descending(mated, nonmated);
    return detail::sweep(mated, nonmated, thresholds, static_cast<double>(mated.size()),
                         static_cast<double>(nonmated.size()));
}

struct OperatingPoint {
    double value;      ///< y of the selected point
    double achieved_x; ///< x actually attained (<= target)
    double threshold;
    static constexpr const char* convention = "conservative-step";
};

/// y at the largest achievable x <= target_x, with no interpolation. Among
/// points sharing that x the largest y is taken.
inline OperatingPoint operating_point(std::span<const CurvePoint> curve, double target_x)
{
    require(!curve.empty(), ErrorCode::InvalidArgument, "empty curve");
    require(target_x >= 0.0 && target_x <= 1.0, ErrorCode::InvalidArgument, "target must lie in [0, 1]");
    std::optional<OperatingPoint> best;
    for (const CurvePoint& p : curve) {
        if (p.x > target_x)
            continue;
        if (!best || p.x > best->achieved_x || (p.x == best->achieved_x && p.y > best->value))
            best = OperatingPoint{p.y, p.x, p.threshold};
    }
    if (!best)
        fail(ErrorCode::Unachievable, "no curve point has x <= " + std::to_string(target_x));
    return *best;
}

namespace detail {

// Column order for one probe row: score descending, ties by ascending id.
inline std::vector<std::size_t> ranked_columns(const ScoreMatrix& m, std::size_t row)
{
    std::vector<std::size_t> order(m.cols());
    for (std::size_t c = 0; c < order.size(); ++c)
        order[c] = c;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = m.at(row, a), sb = m.at(row, b);
        if (sa != sb)
            return sa > sb;
        return m.col_ids[a] < m.col_ids[b];
    });
    return order;
}

inline void check_labels(const ScoreMatrix& m, std::span<const std::string> gallery_labels,
                         std::span<const std::string> probe_labels)
{
    m.validate();
    require(gallery_labels.size() == m.cols() && probe_labels.size() == m.rows(), ErrorCode::InvalidArgument,
            "label lists do not match score matrix shape");
}

// 1-based rank of the first mated column, or nullopt.
inline std::optional<std::size_t> mate_rank(const ScoreMatrix& m, std::size_t row,
                                            std::span<const std::string> gallery_labels, const std::string& label)
{
    const auto order = ranked_columns(m, row);
    for (std::size_t k = 0; k < order.size(); ++k)
        if (gallery_labels[order[k]] == label)
            return k + 1;
    return std::nullopt;
}

} // namespace detail

struct CmcPoint {
    std::size_t rank;
    double recall;
};

/// Closed-set CMC for K = 1..|gallery|. Every probe must have a mate.
inline std::vector<CmcPoint> cmc(const ScoreMatrix& scores, std::span<const std::string> gallery_labels,
                                 std::span<const std::string> probe_labels)
{
    detail::check_labels(scores, gallery_labels, probe_labels);
    require(scores.rows() > 0, ErrorCode::DegenerateInput, "CMC needs at least one probe");
    std::vector<std::size_t> hits(scores.cols() + 1, 0);
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        const auto rank = detail::mate_rank(scores, r, gallery_labels, probe_labels[r]);
        if (!rank)
            fail(ErrorCode::MissingMate, "probe " + scores.row_ids[r] + " has no mate in the gallery");
        ++hits[*rank];
    }
    std::vector<CmcPoint> out;
    std::size_t cumulative = 0;
    for (std::size_t k = 1; k <= scores.cols(); ++k) {
        cumulative += hits[k];
        out.push_back({k, static_cast<double>(cumulative) / static_cast<double>(scores.rows())});
    }
    return out;
}

/// Per-probe summary of a top-L candidate list.
struct SearchOutcome {
    bool mated_search;
    std::optional<double> mate_score; ///< mate score if the mate is within the top L
    double top_score;                 ///< highest candidate score
};

inline std::vector<SearchOutcome> search_outcomes(const ScoreMatrix& scores,
                                                  std::span<const std::string> gallery_labels,
                                                  std::span<const std::string> probe_labels, std::size_t rank_list_size)
{
    detail::check_labels(scores, gallery_labels, probe_labels);
    require(rank_list_size >= 1, ErrorCode::InvalidArgument, "rank list size must be at least 1");
    require(scores.cols() > 0, ErrorCode::DegenerateInput, "gallery is empty");
    std::vector<SearchOutcome> out;
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        const bool mated =
            std::find(gallery_labels.begin(), gallery_labels.end(), probe_labels[r]) != gallery_labels.end();
        const auto order = detail::ranked_columns(scores, r);
        const std::size_t L = std::min(rank_list_size, order.size());
        SearchOutcome o{mated, std::nullopt, scores.at(r, order.front())};
        for (std::size_t k = 0; k < L && mated; ++k) {
            if (gallery_labels[order[k]] == probe_labels[r]) {
                o.mate_score = scores.at(r, order[k]);
                break;
            }
        }
        out.push_back(o);
    }
    return out;
}

struct IdentificationRates {
    double fpir;
    double fnir;
    double tpir() const { return 1.0 - fnir; }
};

/// FNIR: mated searches whose mate is not in the list with score >= t.
/// FPIR: non-mated searches with any candidate scoring >= t.
inline IdentificationRates identification_rates(std::span<const SearchOutcome> outcomes, double threshold)
{
    std::size_t mated = 0, misses = 0, nonmated = 0, false_alarms = 0;
    for (const SearchOutcome& o : outcomes) {
        if (o.mated_search) {
            ++mated;
            if (!o.mate_score || *o.mate_score < threshold)
                ++misses;
        } else {
            ++nonmated;
            if (o.top_score >= threshold)
                ++false_alarms;
        }
    }
    require(mated > 0 && nonmated > 0, ErrorCode::DegenerateInput,
            "1:N evaluation needs both mated and non-mated searches");
    return {static_cast<double>(false_alarms) / static_cast<double>(nonmated),
            static_cast<double>(misses) / static_cast<double>(mated)};
}

/// Open-set 1:N DET over a top-L candidate list. Points are (FPIR, TPIR).
inline Curve det_1n(const ScoreMatrix& scores, std::span<const std::string> gallery_labels,
                    std::span<const std::string> probe_labels, std::size_t rank_list_size)
{
    const auto outcomes = search_outcomes(scores, gallery_labels, probe_labels, rank_list_size);
    std::vector<double> hits, alarms;
    std::size_t mated = 0;
    for (const SearchOutcome& o : outcomes) {
        if (o.mated_search) {
            ++mated;
            if (o.mate_score)
                hits.push_back(*o.mate_score);
        } else {
            alarms.push_back(o.top_score);
        }
    }
    const std::size_t nonmated = outcomes.size() - mated;
    require(mated > 0 && nonmated > 0, ErrorCode::DegenerateInput,
            "1:N evaluation needs both mated and non-mated searches");
    std::sort(hits.begin(), hits.end(), std::greater<>());
    std::sort(alarms.begin(), alarms.end(), std::greater<>());
    const auto thresholds = detail::distinct_descending(hits, alarms);
    return detail::sweep(hits, alarms, thresholds, static_cast<double>(mated), static_cast<double>(nonmated));
}

struct SplitAggregate {
    double mean;
    double stddev; ///< sample standard deviation (n - 1)
};

inline double mean_of(std::span<const double> values)
{
    require(!values.empty(), ErrorCode::InsufficientSplits, "mean needs at least one split");
    double s = 0.0;
    for (double v : values)
        s += v;
    return s / static_cast<double>(values.size());
}

inline SplitAggregate aggregate_splits(std::span<const double> values)
{
    require(values.size() >= 2, ErrorCode::InsufficientSplits, "standard deviation needs at least two splits");
    const double m = mean_of(values);
    double ss = 0.0;
    for (double v : values)
        ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

/// A scored pair with the sizes of both templates.
struct SizedScore {
    double score;
    bool mated;
    std::size_t probe_size;
    std::size_t reference_size;
};

struct BucketStats {
    std::size_t lo = 0;
    std::size_t hi = 0; ///< bucket is [lo, hi) on max(|P|, |Q|)
    std::size_t mated_count = 0;
    std::size_t nonmated_count = 0;
    std::optional<double> mated_mean;
    std::optional<double> mated_stddev;
    /// TAR at each requested FMR target, absent when the bucket cannot form a ROC.
    std::vector<std::optional<OperatingPoint>> tar_at;
    bool empty() const noexcept { return mated_count + nonmated_count == 0; }
};

/// Assigns pairs to [edges[i], edges[i+1]) by max(|P|, |Q|) and reports
/// mated-score statistics and TAR at each FMR target per bucket.
inline std::vector<BucketStats> bucket_by_template_size(std::span<const SizedScore> pairs,
                                                        std::span<const std::size_t> edges,
                                                        std::span<const double> fmr_targets)
{
    require(edges.size() >= 2, ErrorCode::InvalidArgument, "need at least two bucket edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        require(edges[i] > edges[i - 1], ErrorCode::InvalidArgument, "bucket edges must be strictly increasing");

    std::vector<BucketStats> out;
    std::vector<PairScores> members(edges.size() - 1);
    for (const SizedScore& p : pairs) {
        const std::size_t size = std::max(p.probe_size, p.reference_size);
        const auto it = std::upper_bound(edges.begin(), edges.end(), size);
        if (it == edges.begin() || it == edges.end())
            continue;
        members[static_cast<std::size_t>(it - edges.begin()) - 1].push_back({"", "", p.score, p.mated});
    }
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
        BucketStats s;
        s.lo = edges[b];
        s.hi = edges[b + 1];
        std::vector<double> mated;
        for (const ScoredPair& p : members[b]) {
            if (p.mated)
                mated.push_back(p.score);
            else
                ++s.nonmated_count;
        }
        s.mated_count = mated.size();
        if (!mated.empty())
            s.mated_mean = mean_of(mated);
        if (mated.size() >= 2)
            s.mated_stddev = aggregate_splits(mated).stddev;
        if (s.mated_count > 0 && s.nonmated_count > 0) {
            const Curve roc = roc_11(members[b]);
            for (double t : fmr_targets)
                s.tar_at.push_back(operating_point(roc, t));
        } else {
            s.tar_at.assign(fmr_targets.size(), std::nullopt);
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Formats a double with 17 significant digits, which round-trips exactly.
inline std::string format_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// CSV with header threshold,x,y.
inline void write_curve_csv(std::span<const CurvePoint> curve, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(ErrorCode::IoError, "cannot open " + path + " for writing");
    out << "threshold,x,y\n";
    for (const CurvePoint& p : curve)
        out << format_real(p.threshold) << ',' << format_real(p.x) << ',' << format_real(p.y) << '\n';
    if (!out)
        fail(ErrorCode::IoError, "failed writing " + path);
}

} // namespace tadapt
