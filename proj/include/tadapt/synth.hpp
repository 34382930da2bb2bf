// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tadapt/core.hpp"
#include "tadapt/error.hpp"
#include "tadapt/protocol.hpp"
#include "tadapt/svm.hpp"

namespace tadapt {

/// Number of media per template: uniform on [min, max], or, when `cycle` is
/// non-empty, the k-th template of every subject gets cycle[k % cycle.size()].
struct MediaCountSpec {
    std::size_t min = 1;
    std::size_t max = 8;
    std::vector<std::size_t> cycle;
};

/// Gaussian-on-sphere subject model. Each subject has a random unit centroid;
/// a media latent is centroid + N(0, noise_sigma^2 I) plus, when
/// nuisance_rank > 0, a component N(0, nuisance_sigma^2) along each axis of
/// a dataset-wide random subspace of that rank. Images store the normalized
/// latent; video frames add further per-frame noise around it.
struct SynthConfig {
    std::size_t dim = 64;
    std::size_t num_subjects = 100;
    std::size_t templates_per_subject = 2;
    MediaCountSpec media_per_template;
    std::size_t frames_per_video = 5;
    double video_fraction = 0.25;
    double noise_sigma = 0.3;
    std::size_t nuisance_rank = 0;
    double nuisance_sigma = 0.0;
    std::uint64_t seed = 0;
    /// Index of the first subject; lets a second call produce a disjoint set of
    /// subjects that shares the nuisance subspace.
    std::size_t subject_offset = 0;

    void validate() const
    {
        auto check = [](bool ok, const char* what) {
            if (!ok)
                fail(ErrorCode::InvalidConfig, what);
        };
        check(dim >= 2, "dim must be at least 2");
        check(num_subjects >= 2, "num_subjects must be at least 2");
        check(templates_per_subject >= 1, "templates_per_subject must be at least 1");
        if (media_per_template.cycle.empty())
            check(media_per_template.min >= 1 && media_per_template.min <= media_per_template.max,
                  "media_per_template needs 1 <= min <= max");
        for (std::size_t k : media_per_template.cycle)
            check(k >= 1, "media_per_template cycle entries must be at least 1");
        check(frames_per_video >= 1, "frames_per_video must be at least 1");
        check(video_fraction >= 0.0 && video_fraction <= 1.0, "video_fraction must lie in [0, 1]");
        check(noise_sigma > 0.0 && std::isfinite(noise_sigma), "noise_sigma must be positive");
        check(nuisance_rank <= dim, "nuisance_rank cannot exceed dim");
        check(nuisance_sigma >= 0.0 && std::isfinite(nuisance_sigma), "nuisance_sigma must be non-negative");
    }
};

/// Split construction for synthetic data.
struct ProtocolConfig {
    std::size_t num_splits = 10;
    double train_fraction = 1.0 / 3.0;    ///< fraction of subjects used as the disjoint training set
    double nonmated_probe_fraction = 0.2; ///< test subjects withheld from the gallery
    std::size_t nonmated_pairs_per_mated = 10;

    void validate() const
    {
        if (num_splits < 1)
            fail(ErrorCode::InvalidConfig, "num_splits must be at least 1");
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            fail(ErrorCode::InvalidConfig, "train_fraction must lie in (0, 1)");
        if (!(nonmated_probe_fraction >= 0.0 && nonmated_probe_fraction < 1.0))
            fail(ErrorCode::InvalidConfig, "nonmated_probe_fraction must lie in [0, 1)");
    }
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
    return std::mt19937_64(seq);
}

inline std::vector<double> gaussian(std::mt19937_64& rng, std::size_t n, double sigma)
{
    std::normal_distribution<double> nd(0.0, sigma);
    std::vector<double> v(n);
    for (double& x : v)
        x = nd(rng);
    return v;
}

// Unit-normalizes and rounds to float32, the storage precision, so that a
// generated dataset equals its saved-and-loaded copy exactly.
inline Embedding storable_unit(std::vector<double> v)
{
    const Embedding u = unit_normalize(std::move(v));
    std::vector<double> r(u.dim());
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] = static_cast<double>(static_cast<float>(u[i]));
    return Embedding(std::move(r));
}

inline std::string padded(const char* prefix, std::size_t i, int width)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
    return buf;
}

inline std::vector<std::vector<double>> nuisance_basis(const SynthConfig& cfg)
{
    auto rng = stream(cfg.seed, 0xba515ULL);
    std::vector<std::vector<double>> basis;
    while (basis.size() < cfg.nuisance_rank) {
        std::vector<double> v = gaussian(rng, cfg.dim, 1.0);
        for (const auto& b : basis)
            vec::axpy(-vec::dot(v, b), b, v);
        const double n = vec::norm(v);
        if (n <= 1e-8)
            continue;
        for (double& x : v)
            x /= n;
        basis.push_back(std::move(v));
    }
    return basis;
}

} // namespace detail

/// Generates a dataset. Every subject draws from its own stream seeded by
/// (seed, subject index), so output is a pure function of the config.
inline Dataset generate(const SynthConfig& cfg)
{
    cfg.validate();
    const auto basis = detail::nuisance_basis(cfg);
    Dataset ds;
    ds.dim = cfg.dim;
    for (std::size_t s = cfg.subject_offset; s < cfg.subject_offset + cfg.num_subjects; ++s) {
        auto rng = detail::stream(cfg.seed, 1, s);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::normal_distribution<double> nuisance(0.0, cfg.nuisance_sigma > 0.0 ? cfg.nuisance_sigma : 1.0);
        const std::string subject = detail::padded("s", s, 5);
        const Embedding centroid = unit_normalize(detail::gaussian(rng, cfg.dim, 1.0));

        for (std::size_t t = 0; t < cfg.templates_per_subject; ++t) {
            const std::string templ = subject + detail::padded("_t", t, 3);
            std::size_t count;
            if (!cfg.media_per_template.cycle.empty()) {
                count = cfg.media_per_template.cycle[t % cfg.media_per_template.cycle.size()];
            } else {
                std::uniform_int_distribution<std::size_t> k(cfg.media_per_template.min, cfg.media_per_template.max);
                count = k(rng);
            }
            for (std::size_t m = 0; m < count; ++m) {
                std::vector<double> latent = detail::gaussian(rng, cfg.dim, cfg.noise_sigma);
                vec::axpy(1.0, centroid.values(), latent);
                if (cfg.nuisance_sigma > 0.0)
                    for (const auto& b : basis)
                        vec::axpy(nuisance(rng), b, latent);

                MediaRecord rec;
                rec.media_id = templ + detail::padded("_m", m, 3);
                rec.subject_id = subject;
                rec.kind = unif(rng) < cfg.video_fraction ? MediaKind::Video : MediaKind::Image;
                if (rec.kind == MediaKind::Image) {
                    rec.frames.push_back(detail::storable_unit(latent));
                } else {
                    for (std::size_t f = 0; f < cfg.frames_per_video; ++f) {
                        std::vector<double> frame = detail::gaussian(rng, cfg.dim, cfg.noise_sigma);
                        vec::axpy(1.0, latent, frame);
                        rec.frames.push_back(detail::storable_unit(std::move(frame)));
                    }
                }
                ds.media.push_back(std::move(rec));
                ds.template_ids.push_back(templ);
            }
        }
    }
    return ds;
}

/// Builds evaluation splits over the subjects of `templates`. In each split a
/// seeded shuffle sends train_fraction of the subjects to the training role;
/// of the remaining test subjects, nonmated_probe_fraction are withheld from
/// the gallery (all their templates become non-mated probes), and the rest
/// contribute their first template to the gallery and the others as mated
/// probes. Verification pairs are every same-subject pair of test templates
/// plus nonmated_pairs_per_mated random different-subject pairs per mated pair.
inline std::vector<SplitProtocol> make_protocol(std::span<const Template> templates, const ProtocolConfig& cfg,
                                                std::uint64_t seed)
{
    cfg.validate();
    std::map<std::string, std::vector<std::string>> by_subject;
    for (const Template& t : templates)
        by_subject[t.subject_id()].push_back(t.template_id());
    for (auto& [_, ids] : by_subject)
        std::sort(ids.begin(), ids.end());
    std::vector<std::string> subjects;
    for (const auto& [s, _] : by_subject)
        subjects.push_back(s);
    if (subjects.size() < 3)
        fail(ErrorCode::InvalidConfig, "need at least three subjects to build splits");

    std::vector<SplitProtocol> splits;
    for (std::size_t k = 0; k < cfg.num_splits; ++k) {
        auto rng = detail::stream(seed, 2, k);
        std::vector<std::string> order = subjects;
        std::shuffle(order.begin(), order.end(), rng);
        const auto n_train = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(order.size()))), 1,
            order.size() - 2);
        const std::size_t n_test = order.size() - n_train;
        const auto n_withheld = std::min<std::size_t>(
            static_cast<std::size_t>(std::llround(cfg.nonmated_probe_fraction * static_cast<double>(n_test))),
            n_test - 1);

        SplitProtocol split;
        std::vector<std::pair<std::string, std::string>> test_templates; // (template, subject)
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto& ids = by_subject[order[i]];
            for (std::size_t j = 0; j < ids.size(); ++j) {
                SplitRole role;
                if (i < n_train)
                    role = SplitRole::Train;
                else if (i < n_train + n_withheld)
                    role = SplitRole::ProbeNonmated;
                else
                    role = j == 0 ? SplitRole::Gallery : SplitRole::ProbeMated;
                split.roles.push_back({ids[j], role});
                if (role != SplitRole::Train)
                    test_templates.emplace_back(ids[j], order[i]);
            }
        }
        std::sort(split.roles.begin(), split.roles.end(),
                  [](const RoleAssignment& a, const RoleAssignment& b) { return a.template_id < b.template_id; });
        std::sort(test_templates.begin(), test_templates.end());

        std::set<std::pair<std::string, std::string>> seen;
        for (std::size_t a = 0; a < test_templates.size(); ++a)
            for (std::size_t b = a + 1; b < test_templates.size(); ++b)
                if (test_templates[a].second == test_templates[b].second) {
                    split.pairs.push_back({test_templates[a].first, test_templates[b].first, true});
                    seen.emplace(test_templates[a].first, test_templates[b].first);
                }
        const std::size_t mated = split.pairs.size();
        const std::size_t wanted = mated + cfg.nonmated_pairs_per_mated * mated;
        std::uniform_int_distribution<std::size_t> pick(0, test_templates.size() - 1);
        std::size_t attempts = 0;
        while (split.pairs.size() < wanted && attempts++ < 100 * wanted) {
            std::size_t a = pick(rng), b = pick(rng);
            if (test_templates[a].second == test_templates[b].second)
                continue;
            if (b < a)
                std::swap(a, b);
            if (seen.emplace(test_templates[a].first, test_templates[b].first).second)
                split.pairs.push_back({test_templates[a].first, test_templates[b].first, false});
        }
        splits.push_back(std::move(split));
    }
    return splits;
}

struct OracleResult {
    std::vector<double> weights;
    double objective;
};

namespace detail {

// Squared-hinge objective written directly from its definition, kept apart
// from the solver's data layout so the oracle shares no code with it.
struct OracleObjective {
    std::vector<std::vector<double>> x; // augmented rows
    std::vector<double> y, c;

    double operator()(const std::vector<double>& w) const
    {
        double f = 0.0;
        for (double wi : w)
            f += 0.5 * wi * wi;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double z = 0.0;
            for (std::size_t k = 0; k < w.size(); ++k)
                z += w[k] * x[i][k];
            const double h = std::max(0.0, 1.0 - y[i] * z);
            f += c[i] * h * h;
        }
        return f;
    }

    // d/dw_k at w, given margins z = Xw.
    double partial(const std::vector<double>& w, const std::vector<double>& z, std::size_t k) const
    {
        double g = w[k];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double h = 1.0 - y[i] * z[i];
            if (h > 0.0)
                g -= 2.0 * c[i] * y[i] * h * x[i][k];
        }
        return g;
    }
};

} // namespace detail

/// Brute-force minimizer for tiny problems (d <= 3, N_p + N_n <= 10): a grid
/// over [-bound, bound]^(d+1) followed by coordinate-wise bisection on the
/// partial derivative until a sweep no longer lowers the objective. A
/// non-positive bound selects sqrt(2 J(0)), which contains the minimizer.
inline OracleResult brute_force_svm(const SvmProblem& problem, double bound = 0.0, int grid_points = 21,
                                    int max_sweeps = 200000)
{
    problem.validate();
    const std::size_t d = problem.dim();
    const std::size_t n = problem.positives.size() + problem.negatives.size();
    if (d > 3 || n > 10)
        fail(ErrorCode::DimensionTooLarge, "brute-force oracle is limited to d <= 3 and at most 10 samples");

    detail::OracleObjective J;
    const double total = static_cast<double>(n);
    const double cp = problem.C * total / (2.0 * static_cast<double>(problem.positives.size()));
    const double cn = problem.C * total / (2.0 * static_cast<double>(problem.negatives.size()));
    for (const auto* set : {&problem.positives, &problem.negatives}) {
        for (const Embedding& e : *set) {
            std::vector<double> row(e.values().begin(), e.values().end());
            row.push_back(1.0);
            J.x.push_back(std::move(row));
            J.y.push_back(set == &problem.positives ? 1.0 : -1.0);
            J.c.push_back(set == &problem.positives ? cp : cn);
        }
    }
    const std::size_t D = d + 1;
    if (bound <= 0.0)
        bound = std::sqrt(2.0 * J(std::vector<double>(D, 0.0)));

    // Coarse grid.
    std::vector<double> best(D, 0.0), w(D);
    double best_f = J(best);
    std::vector<int> idx(D, 0);
    const double step = 2.0 * bound / (grid_points - 1);
    for (;;) {
        for (std::size_t k = 0; k < D; ++k)
            w[k] = -bound + step * idx[k];
        const double f = J(w);
        if (f < best_f) {
            best_f = f;
            best = w;
        }
        std::size_t k = 0;
        while (k < D && ++idx[k] == grid_points)
            idx[k++] = 0;
        if (k == D)
            break;
    }

    // Coordinate-wise refinement; the 1-D restriction is convex, so bisection
    // on its (monotone) derivative finds the exact coordinate minimizer.
    w = best;
    std::vector<double> z(J.x.size());
    auto margins = [&] {
        for (std::size_t i = 0; i < J.x.size(); ++i) {
            z[i] = 0.0;
            for (std::size_t k = 0; k < D; ++k)
                z[i] += w[k] * J.x[i][k];
        }
    };
    double f = J(w);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        const double f_start = f;
        for (std::size_t k = 0; k < D; ++k) {
            const double keep = w[k];
            double lo = -bound, hi = bound;
            for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
                w[k] = 0.5 * (lo + hi);
                margins();
                (J.partial(w, z, k) > 0.0 ? hi : lo) = w[k];
            }
            w[k] = 0.5 * (lo + hi);
            const double f_new = J(w);
            if (f_new > f)
                w[k] = keep;
            else
                f = f_new;
        }
        if (f_start - f <= 1e-16 * std::max(1.0, f))
            break;
    }
    return {w, J(w)};
}

} // namespace tadapt
