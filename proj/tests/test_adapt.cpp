#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tadapt/adapt.hpp"

namespace {

using namespace tadapt;
using tadapt::testing::noisy_template;
using tadapt::testing::random_vector;
using tadapt::testing::unit_media;

FusionStrategy strategy(FusionVariant v)
{
    FusionStrategy f;
    f.variant = v;
    return f;
}

AdaptedClassifier fixed(const std::string& id, std::size_t size, std::vector<double> w)
{
    AdaptedClassifier c;
    c.template_id = id;
    c.template_size = size;
    c.classifier.weights = std::move(w);
    return c;
}

// Subjects with random centres; each gets `per_subject` templates.
struct World {
    std::vector<Template> templates;
    std::vector<Template> negatives;
};

World make_world(std::uint64_t seed, std::size_t subjects, std::size_t per_subject, std::size_t dim = 16,
                 double sigma = 0.3)
{
    std::mt19937_64 rng(seed);
    World w;
    for (std::size_t s = 0; s < subjects; ++s) {
        const auto centre = random_vector(rng, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
        for (std::size_t t = 0; t < per_subject; ++t)
            w.templates.push_back(noisy_template(rng, "s" + std::to_string(s) + "_t" + std::to_string(t),
                                                 "s" + std::to_string(s), centre, 1 + (s + t) % 4, sigma));
    }
    for (std::size_t s = 0; s < 20; ++s) {
        const auto centre = random_vector(rng, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
        w.negatives.push_back(noisy_template(rng, "n" + std::to_string(s), "n" + std::to_string(s), centre, 3, sigma));
    }
    return w;
}

TEST(AdaptProbe, OneDimensionalMargin)
{
    const Template t("t", "a", {unit_media("p", {1, 0})});
    const NegativePool pool(NegativeSource::External, {unit_media("n", {-1, 0})}, {"b"});
    const auto c = adapt_probe(t, pool);
    EXPECT_NEAR(functional_margin(c.classifier, Embedding({1.0, 0.0})), 40.0 / 41.0, 1e-9);
    EXPECT_EQ(c.template_size, 1u);
    EXPECT_EQ(c.negative_source, NegativeSource::External);
}

TEST(AdaptProbe, MediaOrderIrrelevant)
{
    const NegativePool pool(NegativeSource::External, {unit_media("n1", {-1, 0.2}), unit_media("n2", {0, -1})},
                            {"b", "c"});
    const Template a("t", "a", {unit_media("x", {1, 0.1}), unit_media("y", {0.8, 0.6}), unit_media("z", {0.3, 1})});
    const Template b("t", "a", {unit_media("z", {0.3, 1}), unit_media("x", {1, 0.1}), unit_media("y", {0.8, 0.6})});
    EXPECT_EQ(adapt_probe(a, pool).classifier.weights, adapt_probe(b, pool).classifier.weights);
}

TEST(AdaptProbe, Errors)
{
    const Template t("t", "a", {unit_media("p", {1, 0})});
    try {
        adapt_probe(t, NegativePool{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyNegativeSet);
    }
    const NegativePool leak(NegativeSource::GalleryNonMates, {unit_media("n", {-1, 0})}, {"a"});
    try {
        adapt_probe(t, leak);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::LabelLeak);
    }
    const NegativePool wide(NegativeSource::External, {unit_media("n", {-1, 0, 0})}, {"b"});
    EXPECT_THROW(adapt_probe(t, wide), Error);
}

TEST(AdaptGallery, TwoSubjectsUseEachOther)
{
    const Template ta("ga", "A", {unit_media("a1", {1, 0.2})});
    const Template tb("gb", "B", {unit_media("b1", {-0.3, 1}), unit_media("b2", {0.1, 1})});
    const auto cs = adapt_gallery(Gallery({{ta, "A"}, {tb, "B"}}));

    SvmProblem pa;
    pa.positives = {ta.media()[0].vector};
    pa.negatives = {tb.media()[0].vector, tb.media()[1].vector};
    EXPECT_EQ(cs.at("ga").classifier.weights, train(pa).weights);
    SvmProblem pb;
    pb.positives = pa.negatives;
    pb.negatives = pa.positives;
    EXPECT_EQ(cs.at("gb").classifier.weights, train(pb).weights);
}

TEST(AdaptGallery, InsertionShiftsClassifiers)
{
    const auto w = make_world(3, 3, 1);
    const Gallery before({{w.templates[0], "s0"}, {w.templates[1], "s1"}});
    const Gallery after({{w.templates[0], "s0"}, {w.templates[1], "s1"}, {w.templates[2], "s2"}});
    const auto a = adapt_gallery(before);
    const auto b = adapt_gallery(after);
    for (const char* id : {"s0_t0", "s1_t0"}) {
        std::vector<double> d = a.at(id).classifier.weights;
        vec::axpy(-1.0, b.at(id).classifier.weights, d);
        EXPECT_GT(vec::norm(d), 1e-6);
    }
}

TEST(AdaptGallery, Errors)
{
    const Template t1("g1", "A", {unit_media("a", {1, 0})});
    const Template t2("g2", "A", {unit_media("b", {0, 1})});
    try {
        adapt_gallery(Gallery({{t1, "A"}}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::GalleryTooSmall);
    }
    try {
        adapt_gallery(Gallery({{t1, "A"}, {t2, "A"}}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::AllSameSubject);
    }
}

TEST(AdaptGallery, NoSameSubjectNegatives)
{
    // Two templates of A: neither may see the other as a negative.
    const Template a1("a1", "A", {unit_media("m1", {1, 0})});
    const Template a2("a2", "A", {unit_media("m2", {0.9, 0.1})});
    const Template b("b", "B", {unit_media("m3", {-1, 0.1})});
    const auto cs = adapt_gallery(Gallery({{a1, "A"}, {a2, "A"}, {b, "B"}}));
    SvmProblem p;
    p.positives = {a1.media()[0].vector};
    p.negatives = {b.media()[0].vector};
    EXPECT_EQ(cs.at("a1").classifier.weights, train(p).weights);
}

TEST(Fusion, Arithmetic)
{
    // Classifiers whose margins at the other encoding are fixed numbers.
    const TemplateEncoding p{"p", Embedding({1.0, 0.0})}, q{"q", Embedding({0.0, 1.0})};
    const auto cp = fixed("p", 3, {0.0, 0.4, 0.0});
    const auto cq = fixed("q", 1, {-0.2, 0.0, 0.0});
    EXPECT_NEAR(similarity(cp, p, cq, q, strategy(FusionVariant::Average)), 0.1, 1e-15);

    const auto one = fixed("p", 3, {0.0, 1.0, 0.0});
    const auto zero = fixed("q", 1, {0.0, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(similarity(one, p, zero, q, strategy(FusionVariant::TemplateWeighted)), 0.75);
    EXPECT_DOUBLE_EQ(similarity(one, p, zero, q, strategy(FusionVariant::WinnerTakeAll)), 1.0);
    EXPECT_DOUBLE_EQ(similarity(one, p, zero, q, {FusionVariant::WinnerTakeAll, std::nullopt, false}), 0.0);
    const auto tie = fixed("q", 3, {0.0, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(similarity(one, p, tie, q, strategy(FusionVariant::WinnerTakeAll)), 0.5);
    EXPECT_NEAR(similarity(cp, p, cq, q, strategy(FusionVariant::GeometricAverage)), 0.5 * 1.0 + 0.5 * -1.0, 1e-15);
    EXPECT_NEAR(similarity(cp, p, cq, q, {FusionVariant::Average, 0.25}), 0.25 * 0.4 + 0.75 * -0.2, 1e-15);
    EXPECT_THROW(similarity(cp, p, cq, q, {FusionVariant::Average, 1.5}), Error);
    EXPECT_THROW(similarity(cp, p, cq, q, {FusionVariant::WinnerTakeAll, 0.5}), Error);
    EXPECT_THROW(similarity(cp, q, cq, p), Error);
}

TEST(Fusion, AverageSymmetricAndWtaPicksAMargin)
{
    auto w = make_world(5, 6, 2);
    const auto pool = build_training_pool(w.negatives);
    for (std::size_t i = 0; i + 1 < w.templates.size(); ++i) {
        const Template& a = w.templates[i];
        const Template& b = w.templates[i + 1];
        const auto ca = adapt_probe(a, pool), cb = adapt_probe(b, pool);
        const auto ea = encode_template(a), eb = encode_template(b);
        EXPECT_EQ(similarity(ca, ea, cb, eb), similarity(cb, eb, ca, ea));
        const double s = similarity(ca, ea, cb, eb, strategy(FusionVariant::WinnerTakeAll));
        const double pq = functional_margin(ca.classifier, eb.vector);
        const double qp = functional_margin(cb.classifier, ea.vector);
        EXPECT_TRUE(s == pq || s == qp || s == 0.5 * pq + 0.5 * qp);
        EXPECT_TRUE(std::isfinite(s));
    }
}

TEST(Fusion, StringRoundTrip)
{
    for (auto v : {FusionVariant::Average, FusionVariant::WinnerTakeAll, FusionVariant::TemplateWeighted,
                   FusionVariant::GeometricAverage})
        EXPECT_EQ(fusion_variant_from_string(to_string(v)), v);
    EXPECT_THROW(fusion_variant_from_string("max"), Error);
}

TEST(MediaMargin, DiffersFromTemplateScoring)
{
    const auto w = make_world(8, 4, 2);
    const auto pool = build_training_pool(w.negatives);
    bool differs = false;
    for (std::size_t i = 0; i + 1 < w.templates.size(); ++i) {
        const Template& a = w.templates[i];
        const Template& b = w.templates[i + 1];
        const auto ca = adapt_probe(a, pool), cb = adapt_probe(b, pool);
        const double s1 = similarity(ca, encode_template(a), cb, encode_template(b));
        const double s2 = media_margin_similarity(ca, a, cb, b);
        differs = differs || std::abs(s1 - s2) > 1e-9;
    }
    EXPECT_TRUE(differs);
}

TEST(Verification, IdenticalTemplatesScoreOwnMargin)
{
    const auto w = make_world(2, 2, 1);
    const auto pool = build_training_pool(w.negatives);
    const Template& t = w.templates[0];
    const std::vector<TemplatePair> pairs{{t.template_id(), t.template_id(), true}};
    const auto scores = score_verification_pairs(w.templates, pairs, pool);
    const auto c = adapt_probe(t, pool);
    EXPECT_DOUBLE_EQ(scores[0].score, functional_margin(c.classifier, encode_template(t).vector));
}

TEST(Verification, CachingTrainsEachTemplateOnce)
{
    const auto w = make_world(4, 4, 1);
    const auto pool = build_training_pool(w.negatives);
    std::vector<TemplatePair> pairs;
    for (const auto& a : w.templates)
        for (const auto& b : w.templates)
            pairs.push_back({a.template_id(), b.template_id(), std::nullopt});
    ClassifierCache cache;
    const auto scores = score_verification_pairs(w.templates, pairs, pool, {}, cache);
    EXPECT_EQ(scores.size(), 16u);
    EXPECT_EQ(cache.trainings(), 4u);
    score_verification_pairs(w.templates, pairs, pool, {}, cache);
    EXPECT_EQ(cache.trainings(), 4u);
    ScoringOptions other;
    other.adapt.C = 1.0;
    score_verification_pairs(w.templates, pairs, pool, other, cache);
    EXPECT_EQ(cache.trainings(), 8u);
}

TEST(Verification, ThreadsDoNotChangeScores)
{
    const auto w = make_world(6, 8, 2);
    const auto pool = build_training_pool(w.negatives);
    std::vector<TemplatePair> pairs;
    for (std::size_t i = 0; i + 1 < w.templates.size(); ++i)
        pairs.push_back({w.templates[i].template_id(), w.templates[i + 1].template_id(), std::nullopt});
    ScoringOptions many;
    many.threads = 4;
    EXPECT_EQ(score_verification_pairs(w.templates, pairs, pool), score_verification_pairs(w.templates, pairs, pool, many));
}

TEST(Verification, MatedAboveNonmated)
{
    const auto w = make_world(10, 50, 2, 32, 0.5);
    const auto pool = build_training_pool(w.negatives);
    std::vector<TemplatePair> pairs;
    for (std::size_t s = 0; s < 50; ++s) {
        pairs.push_back({w.templates[2 * s].template_id(), w.templates[2 * s + 1].template_id(), std::nullopt});
        pairs.push_back({w.templates[2 * s].template_id(), w.templates[(2 * s + 3) % 100].template_id(), std::nullopt});
    }
    double mated = 0, nonmated = 0;
    for (const auto& p : score_verification_pairs(w.templates, pairs, pool))
        (p.mated ? mated : nonmated) += p.score;
    EXPECT_GT(mated / 50, nonmated / 50);
}

TEST(Verification, DanglingReference)
{
    const auto w = make_world(1, 2, 1);
    const std::vector<TemplatePair> pairs{{"s0_t0", "nope", std::nullopt}};
    try {
        score_verification_pairs(w.templates, pairs, build_training_pool(w.negatives));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DanglingTemplateRef);
    }
}

TEST(Search, IdenticalProbeWinsRow)
{
    const auto w = make_world(7, 6, 1);
    std::vector<GalleryEntry> entries;
    for (const auto& t : w.templates)
        entries.push_back({t, t.subject_id()});
    const Gallery g(entries);
    const auto pool = build_training_pool(w.negatives);
    const std::vector<Template> probes{Template("probe", w.templates[3].subject_id(),
                                                std::vector<MediaEncoding>(w.templates[3].media().begin(),
                                                                           w.templates[3].media().end()))};
    const auto m = score_search(probes, g, pool);
    ASSERT_EQ(m.rows(), 1u);
    const auto best = std::max_element(m.scores.begin(), m.scores.end()) - m.scores.begin();
    EXPECT_EQ(best, 3);
    EXPECT_TRUE(m.is_mated(0, 3));
}

TEST(Search, EmptyProbesAndGalleryPermutation)
{
    const auto w = make_world(9, 5, 2);
    std::vector<GalleryEntry> entries;
    std::vector<Template> probes;
    for (std::size_t i = 0; i < w.templates.size(); ++i) {
        if (i % 2 == 0)
            entries.push_back({w.templates[i], w.templates[i].subject_id()});
        else
            probes.push_back(w.templates[i]);
    }
    const auto pool = build_training_pool(w.negatives);
    const auto empty = score_search({}, Gallery(entries), pool);
    EXPECT_EQ(empty.rows(), 0u);
    EXPECT_TRUE(empty.scores.empty());

    const auto m = score_search(probes, Gallery(entries), pool);
    auto reversed = entries;
    std::reverse(reversed.begin(), reversed.end());
    const auto r = score_search(probes, Gallery(reversed), pool);
    for (std::size_t row = 0; row < m.rows(); ++row)
        for (std::size_t c = 0; c < m.cols(); ++c)
            EXPECT_NEAR(m.at(row, c), r.at(row, m.cols() - 1 - c), 1e-9);
}

} // namespace
