// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "tadapt/core.hpp"
#include "tadapt/error.hpp"
#include "tadapt/eval.hpp"
#include "tadapt/negsets.hpp"
#include "tadapt/svm.hpp"

namespace tadapt {

/// A linear SVM trained for one template.
struct AdaptedClassifier {
    std::string template_id;
    LinearClassifier classifier;
    std::size_t template_size = 0;
    NegativeSource negative_source = NegativeSource::DisjointTrainingSet;
};

enum class FusionVariant { Average, WinnerTakeAll, TemplateWeighted, GeometricAverage };

inline constexpr std::string_view to_string(FusionVariant v) noexcept
{
    switch (v) {
    case FusionVariant::Average: return "average";
    case FusionVariant::WinnerTakeAll: return "wta";
    case FusionVariant::TemplateWeighted: return "template-weighted";
    case FusionVariant::GeometricAverage: return "geometric";
    }
    return "unknown";
}

inline FusionVariant fusion_variant_from_string(std::string_view s)
{
    if (s == "average")
        return FusionVariant::Average;
    if (s == "wta")
        return FusionVariant::WinnerTakeAll;
    if (s == "template-weighted")
        return FusionVariant::TemplateWeighted;
    if (s == "geometric")
        return FusionVariant::GeometricAverage;
    fail(ErrorCode::InvalidConfig, "unknown fusion strategy '" + std::string(s) + "'");
}

/// How the two directional margins P(q) and Q(p) are combined:
/// s = alpha P(q) + (1 - alpha) Q(p).
struct FusionStrategy {
    FusionVariant variant = FusionVariant::Average;
    std::optional<double> alpha; ///< only meaningful for Average
    /// WinnerTakeAll picks the classifier of the larger template by default;
    /// false selects the smaller one.
    bool larger_wins = true;

    void validate() const
    {
        if (alpha) {
            require(variant == FusionVariant::Average, ErrorCode::InvalidConfig,
                    "alpha override is only valid with average fusion");
            require(*alpha >= 0.0 && *alpha <= 1.0, ErrorCode::InvalidConfig, "alpha must lie in [0, 1]");
        }
    }

    double weight(std::size_t size_p, std::size_t size_q) const
    {
        switch (variant) {
        case FusionVariant::Average: return alpha.value_or(0.5);
        case FusionVariant::GeometricAverage: return 0.5;
        case FusionVariant::TemplateWeighted:
            return static_cast<double>(size_p) / static_cast<double>(size_p + size_q);
        case FusionVariant::WinnerTakeAll:
            if (size_p == size_q)
                return 0.5;
            return (size_p > size_q) == larger_wins ? 1.0 : 0.0;
        }
        return 0.5;
    }
};

struct AdaptOptions {
    double C = 10.0;
    SvmOptions svm;
};

/// Probe adaptation: the template's media encodings are the positives, the
/// pool is the negative set. A pool entry sharing the template's subject is
/// rejected as a label leak.
inline AdaptedClassifier adapt_probe(const Template& t, const NegativePool& negatives, const AdaptOptions& opt = {})
{
    if (negatives.empty())
        fail(ErrorCode::EmptyNegativeSet, "no negatives for template " + t.template_id());
    require(negatives.dim() == t.dim(), ErrorCode::DimensionMismatch,
            "negative pool dimension differs from template " + t.template_id());
    if (negatives.contains_subject(t.subject_id()))
        fail(ErrorCode::LabelLeak, "negative pool contains subject " + t.subject_id() + " of template " + t.template_id());

    SvmProblem problem;
    problem.C = opt.C;
    for (const MediaEncoding& m : t.media())
        problem.positives.push_back(m.vector);
    for (const MediaEncoding& m : negatives.encodings())
        problem.negatives.push_back(m.vector);
    return {t.template_id(), train(problem, opt.svm), t.size(), negatives.source()};
}

/// Gallery adaptation: one classifier per gallery template, with the media of
/// every other-subject gallery template as negatives.
inline std::map<std::string, AdaptedClassifier> adapt_gallery(const Gallery& g, const AdaptOptions& opt = {})
{
    if (g.size() < 2)
        fail(ErrorCode::GalleryTooSmall, "gallery adaptation needs at least two templates");
    const NegativePool all = build_gallery_pool(g);
    std::map<std::string, AdaptedClassifier> out;
    for (const GalleryEntry& e : g.entries()) {
        const NegativePool negatives = all.excluding_subject(e.label);
        if (negatives.empty())
            fail(ErrorCode::AllSameSubject, "gallery has no subject other than " + e.label);
        // Gallery labels, not template subject ids, define mates here.
        const Template relabeled(e.templ.template_id(), e.label,
                                 std::vector<MediaEncoding>(e.templ.media().begin(), e.templ.media().end()));
        out.emplace(e.templ.template_id(), adapt_probe(relabeled, negatives, opt));
    }
    return out;
}

/// Fused similarity of two adapted templates evaluated on each other's
/// template encodings.
inline double similarity(const AdaptedClassifier& cp, const TemplateEncoding& p, const AdaptedClassifier& cq,
                         const TemplateEncoding& q, const FusionStrategy& f = {})
{
    f.validate();
    require(cp.template_id == p.template_id && cq.template_id == q.template_id, ErrorCode::InvalidArgument,
            "template encodings do not belong to the given classifiers");
    const bool geometric = f.variant == FusionVariant::GeometricAverage;
    const double pq = geometric ? geometric_margin(cp.classifier, q.vector) : functional_margin(cp.classifier, q.vector);
    const double qp = geometric ? geometric_margin(cq.classifier, p.vector) : functional_margin(cq.classifier, p.vector);
    const double alpha = f.weight(cp.template_size, cq.template_size);
    return alpha * pq + (1.0 - alpha) * qp;
}

namespace detail {

inline double mean_margin(const AdaptedClassifier& c, const Template& t, bool geometric)
{
    double s = 0.0;
    for (const MediaEncoding& m : t.media())
        s += geometric ? geometric_margin(c.classifier, m.vector) : functional_margin(c.classifier, m.vector);
    return s / static_cast<double>(t.size());
}

} // namespace detail

/// Variant that averages each classifier's margins over the other
/// template's media encodings instead of scoring one template encoding.
inline double media_margin_similarity(const AdaptedClassifier& cp, const Template& p, const AdaptedClassifier& cq,
                                      const Template& q, const FusionStrategy& f = {})
{
    f.validate();
    require(cp.template_id == p.template_id() && cq.template_id == q.template_id(), ErrorCode::InvalidArgument,
            "templates do not belong to the given classifiers");
    const bool geometric = f.variant == FusionVariant::GeometricAverage;
    const double alpha = f.weight(cp.template_size, cq.template_size);
    return alpha * detail::mean_margin(cp, q, geometric) + (1.0 - alpha) * detail::mean_margin(cq, p, geometric);
}

/// Thread-safe insert-or-get cache of probe-adapted classifiers keyed by
/// (template_id, negative pool fingerprint, C).
class ClassifierCache {
public:
    using Key = std::tuple<std::string, std::uint64_t, double>;

    const AdaptedClassifier& get_or_train(const Template& t, const NegativePool& negatives, const AdaptOptions& opt)
    {
        const Key key{t.template_id(), negatives.fingerprint(), opt.C};
        std::shared_ptr<Slot> slot;
        {
            std::lock_guard lock(mutex_);
            auto& s = slots_[key];
            if (!s)
                s = std::make_shared<Slot>();
            slot = s;
        }
        std::call_once(slot->once, [&] {
            slot->value = adapt_probe(t, negatives, opt);
            trainings_.fetch_add(1, std::memory_order_relaxed);
        });
        return *slot->value;
    }

    /// Number of SVMs actually trained through this cache.
    std::size_t trainings() const noexcept { return trainings_.load(); }

    std::size_t size() const
    {
        std::lock_guard lock(mutex_);
        return slots_.size();
    }

private:
    struct Slot {
        std::once_flag once;
        std::optional<AdaptedClassifier> value;
    };

    mutable std::mutex mutex_;
    std::map<Key, std::shared_ptr<Slot>> slots_;
    std::atomic<std::size_t> trainings_{0};
};

enum class ScoringMode { TemplateEncoding, MediaMarginAverage };

struct ScoringOptions {
    AdaptOptions adapt;
    FusionStrategy fusion;
    ScoringMode mode = ScoringMode::TemplateEncoding;
    /// Drop the template's own subject from the pool before training; needed
    /// for pools such as gallery non-mates that contain evaluation subjects.
    bool exclude_same_subject = false;
    unsigned threads = 1;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception
// is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn)
{
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < std::min<std::size_t>(threads, n); ++w) {
        workers.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                }
            }
        });
    }
    workers.clear();
    if (error)
        std::rethrow_exception(error);
}

// Trains (through the cache) one probe classifier per distinct template and
// returns them keyed by template_id.
inline std::unordered_map<std::string, const AdaptedClassifier*>
train_distinct(std::span<const Template* const> templates, const NegativePool& negatives,
               const ScoringOptions& opt, ClassifierCache& cache)
{
    std::vector<const Template*> distinct;
    std::unordered_map<std::string, const AdaptedClassifier*> out;
    for (const Template* t : templates)
        if (out.emplace(t->template_id(), nullptr).second)
            distinct.push_back(t);

    std::vector<const AdaptedClassifier*> trained(distinct.size());
    parallel_for(distinct.size(), opt.threads, [&](std::size_t i) {
        const Template& t = *distinct[i];
        if (opt.exclude_same_subject && negatives.contains_subject(t.subject_id()))
            trained[i] = &cache.get_or_train(t, negatives.excluding_subject(t.subject_id()), opt.adapt);
        else
            trained[i] = &cache.get_or_train(t, negatives, opt.adapt);
    });
    for (std::size_t i = 0; i < distinct.size(); ++i)
        out[distinct[i]->template_id()] = trained[i];
    return out;
}

inline double fused_score(const AdaptedClassifier& cp, const Template& p, const AdaptedClassifier& cq,
                          const Template& q, const ScoringOptions& opt,
                          const std::unordered_map<std::string, TemplateEncoding>& encodings)
{
    if (opt.mode == ScoringMode::MediaMarginAverage)
        return media_margin_similarity(cp, p, cq, q, opt.fusion);
    return similarity(cp, encodings.at(p.template_id()), cq, encodings.at(q.template_id()), opt.fusion);
}

} // namespace detail

/// Probe id and reference id of one verification pair; `mated` defaults to
/// subject equality when not given.
struct TemplatePair {
    std::string probe_id;
    std::string reference_id;
    std::optional<bool> mated;

    bool operator==(const TemplatePair&) const = default;
};

/// Probe-adapted 1:1 scoring. Each distinct template is trained once (through
/// `cache`) and every pair gets one fused score, in input order.
inline PairScores score_verification_pairs(std::span<const Template> templates, std::span<const TemplatePair> pairs,
                                           const NegativePool& negatives, const ScoringOptions& opt,
                                           ClassifierCache& cache)
{
    require(!pairs.empty(), ErrorCode::InvalidArgument, "no verification pairs given");
    opt.fusion.validate();
    std::unordered_map<std::string, const Template*> by_id;
    for (const Template& t : templates)
        by_id.emplace(t.template_id(), &t);
    auto lookup = [&](const std::string& id) -> const Template& {
        const auto it = by_id.find(id);
        if (it == by_id.end())
            fail(ErrorCode::DanglingTemplateRef, "unknown template " + id);
        return *it->second;
    };

    std::vector<const Template*> used;
    for (const TemplatePair& p : pairs) {
        used.push_back(&lookup(p.probe_id));
        used.push_back(&lookup(p.reference_id));
    }
    const auto classifiers = detail::train_distinct(used, negatives, opt, cache);
    std::unordered_map<std::string, TemplateEncoding> encodings;
    for (const Template* t : used)
        if (!encodings.contains(t->template_id()))
            encodings.emplace(t->template_id(), encode_template(*t));

    PairScores out;
    out.reserve(pairs.size());
    for (const TemplatePair& pr : pairs) {
        const Template& p = lookup(pr.probe_id);
        const Template& q = lookup(pr.reference_id);
        const double s = detail::fused_score(*classifiers.at(p.template_id()), p, *classifiers.at(q.template_id()), q,
                                             opt, encodings);
        out.push_back({pr.probe_id, pr.reference_id, s, pr.mated.value_or(p.subject_id() == q.subject_id())});
    }
    return out;
}

inline PairScores score_verification_pairs(std::span<const Template> templates, std::span<const TemplatePair> pairs,
                                           const NegativePool& negatives, const ScoringOptions& opt = {})
{
    ClassifierCache cache;
    return score_verification_pairs(templates, pairs, negatives, opt, cache);
}

/// Baseline 1:1 scores: negative L2 distance of template encodings.
inline PairScores score_baseline_pairs(std::span<const Template> templates, std::span<const TemplatePair> pairs)
{
    std::unordered_map<std::string, const Template*> by_id;
    for (const Template& t : templates)
        by_id.emplace(t.template_id(), &t);
    std::unordered_map<std::string, TemplateEncoding> enc;
    auto encoding = [&](const std::string& id) -> const TemplateEncoding& {
        auto it = enc.find(id);
        if (it != enc.end())
            return it->second;
        const auto t = by_id.find(id);
        if (t == by_id.end())
            fail(ErrorCode::DanglingTemplateRef, "unknown template " + id);
        return enc.emplace(id, encode_template(*t->second)).first->second;
    };
    PairScores out;
    for (const TemplatePair& pr : pairs) {
        const double s = baseline_similarity(encoding(pr.probe_id), encoding(pr.reference_id));
        out.push_back({pr.probe_id, pr.reference_id, s,
                       pr.mated.value_or(by_id.at(pr.probe_id)->subject_id() == by_id.at(pr.reference_id)->subject_id())});
    }
    return out;
}

/// Gallery-adapted 1:N scoring: probes x gallery matrix of fused scores. Rows
/// follow probe order and columns gallery order. Mated means the probe's
/// subject equals the gallery label.
inline ScoreMatrix score_search(std::span<const Template> probes, const Gallery& gallery,
                                const NegativePool& probe_negatives, const ScoringOptions& opt, ClassifierCache& cache)
{
    opt.fusion.validate();
    ScoreMatrix m;
    for (const GalleryEntry& e : gallery.entries())
        m.col_ids.push_back(e.templ.template_id());
    for (const Template& p : probes)
        m.row_ids.push_back(p.template_id());
    if (probes.empty())
        return m;

    const auto gallery_classifiers = adapt_gallery(gallery, opt.adapt);
    std::vector<const Template*> probe_ptrs;
    for (const Template& p : probes)
        probe_ptrs.push_back(&p);
    const auto probe_classifiers = detail::train_distinct(probe_ptrs, probe_negatives, opt, cache);

    std::unordered_map<std::string, TemplateEncoding> encodings;
    for (const Template& p : probes)
        encodings.emplace(p.template_id(), encode_template(p));
    for (const GalleryEntry& e : gallery.entries())
        encodings.emplace(e.templ.template_id(), encode_template(e.templ));

    m.scores.reserve(probes.size() * gallery.size());
    m.mated.reserve(probes.size() * gallery.size());
    for (const Template& p : probes) {
        const AdaptedClassifier& cp = *probe_classifiers.at(p.template_id());
        for (const GalleryEntry& e : gallery.entries()) {
            const AdaptedClassifier& cx = gallery_classifiers.at(e.templ.template_id());
            m.scores.push_back(detail::fused_score(cp, p, cx, e.templ, opt, encodings));
            m.mated.push_back(p.subject_id() == e.label);
        }
    }
    return m;
}

inline ScoreMatrix score_search(std::span<const Template> probes, const Gallery& gallery,
                                const NegativePool& probe_negatives, const ScoringOptions& opt = {})
{
    ClassifierCache cache;
    return score_search(probes, gallery, probe_negatives, opt, cache);
}

/// Baseline 1:N scores (negative L2 of template encodings).
inline ScoreMatrix score_search_baseline(std::span<const Template> probes, const Gallery& gallery)
{
    ScoreMatrix m;
    std::vector<TemplateEncoding> genc;
    for (const GalleryEntry& e : gallery.entries()) {
        m.col_ids.push_back(e.templ.template_id());
        genc.push_back(encode_template(e.templ));
    }
    for (const Template& p : probes) {
        m.row_ids.push_back(p.template_id());
        const TemplateEncoding pe = encode_template(p);
        for (std::size_t c = 0; c < genc.size(); ++c) {
            m.scores.push_back(baseline_similarity(pe, genc[c]));
            m.mated.push_back(p.subject_id() == gallery.entries()[c].label);
        }
    }
    return m;
}

} // namespace tadapt
