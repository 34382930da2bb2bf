// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "tadapt/commands.hpp"

namespace {

using namespace tadapt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check)
{
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<double> gaussian(std::mt19937_64& rng, std::size_t d, double mean = 0.0)
{
    std::normal_distribution<double> n(mean, 1.0);
    std::vector<double> v(d);
    for (double& x : v)
        x = n(rng);
    return v;
}

// Gradient of the rebalanced squared-hinge objective, from its definition.
double gradient_norm(const SvmProblem& p, const std::vector<double>& w)
{
    const double np = static_cast<double>(p.positives.size());
    const double nn = static_cast<double>(p.negatives.size());
    const double cp = p.C * (np + nn) / (2 * np);
    const double cn = p.C * (np + nn) / (2 * nn);
    std::vector<double> g = w;
    auto add = [&](const Embedding& x, double y, double c) {
        double z = w.back();
        for (std::size_t k = 0; k < x.dim(); ++k)
            z += w[k] * x[k];
        const double slack = std::max(0.0, 1.0 - y * z);
        for (std::size_t k = 0; k < x.dim(); ++k)
            g[k] -= 2 * c * y * slack * x[k];
        g.back() -= 2 * c * y * slack;
    };
    for (const auto& x : p.positives)
        add(x, 1.0, cp);
    for (const auto& x : p.negatives)
        add(x, -1.0, cn);
    double s = 0;
    for (double v : g)
        s += v * v;
    return std::sqrt(s);
}

double norm(const std::vector<double>& v)
{
    double s = 0;
    for (double x : v)
        s += x * x;
    return std::sqrt(s);
}

Outcome solver_oracle_equivalence()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    const double Cs[] = {0.1, 1.0, 10.0};
    int problems = 0;
    double worst = 0.0;
    for (int i = 0; i < 240; ++i) {
        const std::size_t d = 1 + i % 3;
        std::uniform_int_distribution<int> total(2, 10);
        const int n = total(rng);
        std::uniform_int_distribution<int> pos(1, n - 1);
        const int np = pos(rng);
        SvmProblem p;
        p.C = Cs[(i / 3) % 3];
        for (int k = 0; k < np; ++k)
            p.positives.emplace_back(gaussian(rng, d, 0.5));
        for (int k = np; k < n; ++k)
            p.negatives.emplace_back(gaussian(rng, d, -0.5));
        const double solver = train(p).objective_value;
        const double oracle = brute_force_svm(p).objective;
        worst = std::max(worst, std::abs(solver - oracle) / std::max(oracle, 1e-300));
        ++problems;
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-6 && problems >= 200 && secs < 120,
            fmt("%d problems, worst relative objective gap %.3g, %.1f s", problems, worst, secs)};
}

Outcome kkt_certification()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(77);
    double worst = 0.0;
    int problems = 0;
    for (int i = 0; i < 1000; ++i) {
        SvmProblem p;
        std::uniform_int_distribution<int> np(1, 8), nn(20, 120);
        const auto centre = gaussian(rng, 64);
        for (int k = np(rng); k > 0; --k) {
            auto v = gaussian(rng, 64);
            for (std::size_t j = 0; j < 64; ++j)
                v[j] = centre[j] + 0.5 * v[j];
            p.positives.push_back(unit_normalize(v));
        }
        for (int k = nn(rng); k > 0; --k)
            p.negatives.push_back(unit_normalize(gaussian(rng, 64)));
        p.C = 10.0;
        const auto c = train(p);
        worst = std::max(worst, gradient_norm(p, c.weights) / (1e-8 * (1.0 + norm(c.weights))));
        ++problems;
    }
    const double secs = seconds_since(t0);
    return {worst <= 1.0 && secs < 60,
            fmt("%d problems at d=64, worst ||g|| / (1e-8 (1+||w||)) = %.3g, %.1f s", problems, worst, secs)};
}

Outcome closed_form()
{
    double worst = 0.0;
    for (double C : {1.0, 10.0, 100.0}) {
        SvmProblem p;
        p.positives = {Embedding({1.0})};
        p.negatives = {Embedding({-1.0})};
        p.C = C;
        const auto w = train(p).weights;
        worst = std::max({worst, std::abs(w[0] - 4 * C / (1 + 4 * C)), std::abs(w[1])});
    }
    return {worst <= 1e-9, fmt("max deviation from 4C/(1+4C), bias 0: %.3g", worst)};
}

Outcome rebalancing_identity()
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> count(1, 100000);
    std::uniform_real_distribution<double> logc(-4.0, 4.0);
    int bad = 0;
    double worst_ulps = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t np = count(rng), nn = count(rng);
        const double C = std::pow(10.0, logc(rng));
        const auto w = rebalance_weights(np, nn, C);
        const double a = w.positive * static_cast<double>(np);
        const double b = w.negative * static_cast<double>(nn);
        const double ulp = std::nextafter(std::max(a, b), INFINITY) - std::max(a, b);
        const double ulps = std::abs(a - b) / ulp;
        worst_ulps = std::max(worst_ulps, ulps);
        bad += ulps > 1.0;
    }
    return {bad == 0, fmt("10000 draws, %d beyond 1 ulp, worst %.0f ulp", bad, worst_ulps)};
}

// Benchmark used by criteria 5 and 6: shared within-class nuisance subspace
// on top of isotropic noise.
SynthConfig benchmark(std::uint64_t seed)
{
    SynthConfig c;
    c.dim = 64;
    c.num_subjects = 200;
    c.noise_sigma = 0.2;
    c.nuisance_rank = 8;
    c.nuisance_sigma = 0.6;
    c.seed = seed;
    return c;
}

struct SplitScores {
    std::vector<Template> templates;
    std::vector<TemplatePair> pairs;
    PairScores adapted;
    PairScores baseline;
};

SplitScores score_benchmark(const SynthConfig& c)
{
    SplitScores s;
    s.templates = build_templates(generate(c));
    ProtocolConfig pc;
    pc.num_splits = 1;
    const SplitProtocol split = make_protocol(s.templates, pc, c.seed).front();
    const ResolvedSplit r = resolve_split(split, s.templates);
    s.pairs = split.pairs;
    s.adapted = score_verification_pairs(s.templates, s.pairs, build_training_pool(r.train, r.evaluation_subjects()));
    s.baseline = score_baseline_pairs(s.templates, s.pairs);
    return s;
}

double tar_at(const PairScores& scores, double fmr)
{
    return operating_point(roc_11(scores), fmr).value;
}

Outcome adaptation_beats_baseline()
{
    const auto t0 = Clock::now();
    double adapted = 0, baseline = 0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto s = score_benchmark(benchmark(seed));
        const double a = tar_at(s.adapted, 1e-2), b = tar_at(s.baseline, 1e-2);
        adapted += a / 5;
        baseline += b / 5;
        per_seed += fmt(" %.3f/%.3f", a, b);
    }
    const double secs = seconds_since(t0);
    const bool band = baseline >= 0.5 && baseline <= 0.9;
    return {band && adapted >= baseline + 0.02 && secs < 300,
            fmt("TAR@FMR=1e-2 adapted %.4f vs baseline %.4f (gain %+.4f; per seed adapted/baseline:%s), %.1f s",
                adapted, baseline, adapted - baseline, per_seed.c_str(), secs)};
}

Outcome template_size_saturation()
{
    const auto t0 = Clock::now();
    const std::vector<std::size_t> edges{1, 2, 4, 8, 16};
    const std::vector<double> targets{1e-2};
    std::vector<double> mean(4, 0.0);
    int inversions = 0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig c = benchmark(seed);
        // Every subject gets one template of each size class.
        c.templates_per_subject = 8;
        c.media_per_template.cycle = {1, 1, 2, 3, 4, 6, 8, 8};
        const auto s = score_benchmark(c);
        std::map<std::string, std::size_t> size;
        for (const Template& t : s.templates)
            size[t.template_id()] = t.size();
        std::vector<SizedScore> sized;
        for (const ScoredPair& p : s.adapted)
            sized.push_back({p.score, p.mated, size.at(p.probe_id), size.at(p.reference_id)});
        const auto buckets = bucket_by_template_size(sized, edges, targets);
        std::vector<double> tar;
        for (const BucketStats& b : buckets) {
            if (!b.tar_at[0])
                return {false, fmt("seed %llu: bucket [%zu,%zu) cannot form a ROC", (unsigned long long)seed, b.lo, b.hi)};
            tar.push_back(b.tar_at[0]->value);
        }
        inversions += (tar[1] < tar[0]) + (tar[2] < tar[1]);
        for (std::size_t b = 0; b < 4; ++b)
            mean[b] += tar[b] / 5;
        per_seed += fmt(" [%.2f %.2f %.2f %.2f]", tar[0], tar[1], tar[2], tar[3]);
    }
    const double early = mean[1] - mean[0], late = mean[3] - mean[2];
    const double secs = seconds_since(t0);
    return {inversions <= 1 && late < early,
            fmt("mean TAR by bucket [1,2) %.3f [2,4) %.3f [4,8) %.3f [8,16) %.3f; gains %.3f then %.3f; "
                "%d inversions; per seed%s; %.1f s",
                mean[0], mean[1], mean[2], mean[3], early, late, inversions, per_seed.c_str(), secs)};
}

Outcome gallery_sensitivity()
{
    SynthConfig c;
    c.dim = 64;
    c.num_subjects = 11;
    c.templates_per_subject = 1;
    c.noise_sigma = 0.3;
    c.seed = 99;
    const auto ts = build_templates(generate(c));
    std::vector<GalleryEntry> entries;
    for (std::size_t i = 0; i < 10; ++i)
        entries.push_back({ts[i], ts[i].subject_id()});
    const auto before = adapt_gallery(Gallery(entries));
    entries.push_back({ts[10], ts[10].subject_id()});
    const auto after = adapt_gallery(Gallery(entries));
    double largest = 0;
    for (const auto& [id, cls] : before) {
        std::vector<double> d = cls.classifier.weights;
        const auto& w = after.at(id).classifier.weights;
        for (std::size_t k = 0; k < d.size(); ++k)
            d[k] -= w[k];
        largest = std::max(largest, norm(d));
    }
    return {largest > 1e-6, fmt("largest ||dw|| over the 10 existing classifiers after one insertion: %.3g", largest)};
}

// Scores on a 1/1024 lattice, so 3s + 0.5 is exact and ties are preserved.
ScoreMatrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, bool lattice)
{
    ScoreMatrix m;
    for (std::size_t r = 0; r < rows; ++r)
        m.row_ids.push_back(fmt("p%03zu", r));
    for (std::size_t c = 0; c < cols; ++c)
        m.col_ids.push_back(fmt("g%03zu", c));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const double s = u(rng);
        m.scores.push_back(lattice ? std::round(s * 64) / 1024 : s);
    }
    m.mated.assign(m.scores.size(), false);
    return m;
}

bool same_xy(const Curve& a, const Curve& b)
{
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].x != b[i].x || a[i].y != b[i].y)
            return false;
    return true;
}

Outcome metric_invariance()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(8);
    int checks = 0;
    std::string broken;
    for (int trial = 0; trial < 200; ++trial) {
        const bool lattice = trial % 2 == 0;
        const std::size_t rows = 30 + trial % 17, cols = 10 + trial % 13;
        ScoreMatrix m = random_matrix(rng, rows, cols, lattice);
        // Gallery labels are unique; probes are mated to a random entry or absent.
        std::vector<std::string> gallery_labels(cols), probe_labels(rows);
        for (std::size_t c = 0; c < cols; ++c)
            gallery_labels[c] = fmt("s%03zu", c);
        std::uniform_int_distribution<std::size_t> pick(0, cols + cols / 3);
        std::size_t first_unmated = rows;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t k = r < rows * 3 / 4 ? pick(rng) % cols : cols + r;
            probe_labels[r] = fmt("s%03zu", k);
            if (k >= cols)
                first_unmated = std::min(first_unmated, r);
            for (std::size_t c = 0; c < cols; ++c)
                m.mated[r * cols + c] = gallery_labels[c] == probe_labels[r];
        }
        const double a = lattice ? 3.0 : 2.5, b = lattice ? 0.5 : -1.75;
        ScoreMatrix t = m;
        for (double& s : t.scores)
            s = a * s + b;
        const std::size_t L = 1 + trial % 7;

        const auto roc = roc_11(m.to_pairs()), roc_t = roc_11(t.to_pairs());
        const auto det = det_1n(m, gallery_labels, probe_labels, L);
        const auto det_t = det_1n(t, gallery_labels, probe_labels, L);

        ScoreMatrix closed{m.row_ids, m.col_ids, {}, {}};
        ScoreMatrix closed_t = closed;
        closed.row_ids.resize(first_unmated);
        closed_t.row_ids.resize(first_unmated);
        closed.scores.assign(m.scores.begin(), m.scores.begin() + first_unmated * cols);
        closed.mated.assign(m.mated.begin(), m.mated.begin() + first_unmated * cols);
        closed_t.scores.assign(t.scores.begin(), t.scores.begin() + first_unmated * cols);
        closed_t.mated = closed.mated;
        const std::vector<std::string> closed_labels(probe_labels.begin(), probe_labels.begin() + first_unmated);
        const auto c1 = cmc(closed, gallery_labels, closed_labels);
        const auto c2 = cmc(closed_t, gallery_labels, closed_labels);

        bool ok = same_xy(roc, roc_t) && same_xy(det, det_t);
        for (std::size_t k = 0; k < c1.size(); ++k) {
            ok = ok && c1[k].recall == c2[k].recall;
            if (k > 0)
                ok = ok && c1[k].recall >= c1[k - 1].recall;
        }
        ok = ok && c1.back().recall == 1.0;
        // Lowest threshold admits every in-list mate: TPIR = CMC recall at rank L.
        const double rank_l = c1[std::min(L, c1.size()) - 1].recall;
        ok = ok && std::abs(det.back().y - rank_l) <= 1e-15;
        const double fnir = identification_rates(search_outcomes(m, gallery_labels, probe_labels, L),
                                                 -std::numeric_limits<double>::infinity())
                                .fnir;
        ok = ok && std::abs(fnir - (1.0 - rank_l)) <= 1e-15;
        if (!ok && broken.empty())
            broken = fmt(" (first failure at trial %d)", trial);
        checks += ok;
    }
    const double secs = seconds_since(t0);
    return {checks == 200 && secs < 30, fmt("%d/200 random matrices consistent%s, %.1f s", checks, broken.c_str(), secs)};
}

struct TempDir {
    fs::path path;
    TempDir()
    {
        path = fs::temp_directory_path() / ("tadapt_acceptance_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism()
{
    TempDir dir;
    cmd::SynthCommand s;
    s.data.dim = 32;
    s.data.num_subjects = 40;
    s.data.seed = 12;
    s.protocol.num_splits = 3;
    s.out = (dir.path / "data").string();
    cmd::cmd_synth(s);
    cmd::RunConfig c;
    c.seed = 12;
    for (const char* run : {"a", "b"}) {
        c.out = (dir.path / run).string();
        cmd::cmd_verify(dir.path / "data", dir.path / "data/protocol", c);
    }
    int files = 0, same = 0;
    for (int k = 0; k < 3; ++k)
        for (const char* f : {"scores.csv", "roc.csv"}) {
            const fs::path rel = fs::path(io::split_dir_name(k)) / f;
            ++files;
            same += slurp(dir.path / "a" / rel) == slurp(dir.path / "b" / rel) && !slurp(dir.path / "a" / rel).empty();
        }
    ++files;
    same += slurp(dir.path / "a/operating_points.json") == slurp(dir.path / "b/operating_points.json");
    return {same == files, fmt("%d/%d output files byte-identical across reruns", same, files)};
}

Outcome roundtrip()
{
    TempDir dir;
    std::mt19937_64 rng(31);
    int datasets = 0, classifiers = 0, scores = 0;
    std::uniform_int_distribution<int> small(1, 6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        SynthConfig c;
        c.dim = 2 + small(rng);
        c.num_subjects = 2 + small(rng);
        c.templates_per_subject = small(rng);
        c.media_per_template = {1, static_cast<std::size_t>(small(rng)), {}};
        c.video_fraction = 0.5;
        c.frames_per_video = small(rng);
        c.seed = rng();
        const Dataset ds = generate(c);
        io::save_dataset(ds, dir.path / "m.jsonl", dir.path / "e.tadp");
        datasets += io::load_dataset(dir.path / "m.jsonl", dir.path / "e.tadp") == ds;

        AdaptedClassifier a;
        a.template_id = fmt("t%d", i);
        a.template_size = small(rng);
        a.negative_source = static_cast<NegativeSource>(i % 4);
        for (int k = 0; k <= small(rng); ++k)
            a.classifier.weights.push_back(u(rng) * std::pow(10.0, small(rng) * 40 - 120));
        a.classifier.objective_value = std::abs(u(rng)) * 1e3;
        a.classifier.solver_iterations = small(rng);
        io::save_classifier(a, dir.path / "c.tadc");
        const auto b = io::load_classifier(dir.path / "c.tadc");
        classifiers += b.classifier.weights == a.classifier.weights &&
                       b.classifier.objective_value == a.classifier.objective_value &&
                       b.classifier.solver_iterations == a.classifier.solver_iterations &&
                       b.template_id == a.template_id && b.template_size == a.template_size &&
                       b.negative_source == a.negative_source;

        PairScores ps;
        for (int k = small(rng) * 5; k > 0; --k)
            ps.push_back({fmt("p%02d", k), fmt("r%02d", k % 3), u(rng) * std::pow(10.0, small(rng) * 20 - 60), k % 2 == 0});
        std::sort(ps.begin(), ps.end(), [](const ScoredPair& x, const ScoredPair& y) {
            return std::tie(x.probe_id, x.reference_id) < std::tie(y.probe_id, y.reference_id);
        });
        io::export_scores(ps, dir.path / "s.csv");
        scores += io::load_scores(dir.path / "s.csv") == ps;
    }
    return {datasets == 100 && classifiers == 100 && scores == 100,
            fmt("bit-exact: datasets %d/100, classifiers %d/100, score files %d/100", datasets, classifiers, scores)};
}

} // namespace

int main()
{
    report(1, "solver matches brute-force oracle", solver_oracle_equivalence);
    report(2, "KKT gradient certificate at d=64", kkt_certification);
    report(3, "1-D closed form", closed_form);
    report(4, "rebalancing identity", rebalancing_identity);
    report(5, "probe adaptation beats baseline", adaptation_beats_baseline);
    report(6, "template-size saturation", template_size_saturation);
    report(7, "gallery adaptation sensitivity", gallery_sensitivity);
    report(8, "metric invariance suite", metric_invariance);
    report(9, "verify pipeline determinism", determinism);
    report(10, "save/load roundtrip", roundtrip);
    return failures == 0 ? 0 : 1;
}
