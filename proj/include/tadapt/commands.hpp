// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tadapt/adapt.hpp"
#include "tadapt/core.hpp"
#include "tadapt/eval.hpp"
#include "tadapt/io.hpp"
#include "tadapt/negsets.hpp"
#include "tadapt/protocol.hpp"
#include "tadapt/synth.hpp"

namespace tadapt::cmd {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Fully resolved run settings: defaults, then the JSON config file, then
/// command-line flags.
struct RunConfig {
    double C = 10.0;
    double tol = 1e-8;
    int max_iter = 1000;
    std::string fusion = "average";
    std::optional<double> alpha;
    std::string negatives = "train";
    std::vector<std::size_t> buckets{1, 2, 4, 8, 16, 32, 64};
    std::size_t rank_list_size = 20;
    std::vector<double> targets{1e-2, 1e-3};
    std::uint64_t seed = 0;
    std::string out = "out";
    unsigned threads = 1;
    std::size_t external_per_class_cap = 50;
    std::size_t external_target_size = 0; ///< 0 takes everything available after capping

    void validate() const
    {
        auto check = [](bool ok, const std::string& what) {
            if (!ok)
                fail(ErrorCode::InvalidConfig, what);
        };
        check(C > 0.0 && std::isfinite(C), "c_param must be positive");
        check(tol > 0.0, "tol must be positive");
        check(max_iter >= 1, "max_iter must be at least 1");
        fusion_strategy().validate();
        negative_source_from_string(negatives);
        check(buckets.size() >= 2, "buckets needs at least two edges");
        for (std::size_t i = 1; i < buckets.size(); ++i)
            check(buckets[i] > buckets[i - 1], "bucket edges must be strictly increasing");
        check(rank_list_size >= 1, "rank_list_size must be at least 1");
        check(!targets.empty(), "at least one operating-point target is required");
        for (double t : targets)
            check(t >= 0.0 && t <= 1.0, "operating-point targets must lie in [0, 1]");
        check(!out.empty(), "out must not be empty");
        check(threads >= 1, "threads must be at least 1");
        check(external_per_class_cap >= 1, "external_per_class_cap must be at least 1");
    }

    FusionStrategy fusion_strategy() const
    {
        if (fusion == "wta-smaller")
            return {FusionVariant::WinnerTakeAll, std::nullopt, false};
        return {fusion_variant_from_string(fusion), alpha, true};
    }

    ScoringOptions scoring() const
    {
        ScoringOptions s;
        s.adapt.C = C;
        s.adapt.svm = {tol, max_iter};
        s.fusion = fusion_strategy();
        s.threads = threads;
        return s;
    }
};

inline json to_json(const RunConfig& c)
{
    json j;
    j["c_param"] = c.C;
    j["tol"] = c.tol;
    j["max_iter"] = c.max_iter;
    j["fusion"] = c.fusion;
    j["alpha"] = c.alpha ? json(*c.alpha) : json(nullptr);
    j["negatives"] = c.negatives;
    j["buckets"] = c.buckets;
    j["rank_list_size"] = c.rank_list_size;
    j["targets"] = c.targets;
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["threads"] = c.threads;
    j["external_per_class_cap"] = c.external_per_class_cap;
    j["external_target_size"] = c.external_target_size;
    return j;
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are an error.
inline void apply_json(RunConfig& c, const nlohmann::json& j)
{
    if (!j.is_object())
        fail(ErrorCode::InvalidConfig, "config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "c_param")
                c.C = v.get<double>();
            else if (key == "tol")
                c.tol = v.get<double>();
            else if (key == "max_iter")
                c.max_iter = v.get<int>();
            else if (key == "fusion")
                c.fusion = v.get<std::string>();
            else if (key == "alpha")
                c.alpha = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
            else if (key == "negatives")
                c.negatives = v.get<std::string>();
            else if (key == "buckets")
                c.buckets = v.get<std::vector<std::size_t>>();
            else if (key == "rank_list_size")
                c.rank_list_size = v.get<std::size_t>();
            else if (key == "targets")
                c.targets = v.get<std::vector<double>>();
            else if (key == "seed")
                c.seed = v.get<std::uint64_t>();
            else if (key == "out")
                c.out = v.get<std::string>();
            else if (key == "threads")
                c.threads = v.get<unsigned>();
            else if (key == "external_per_class_cap")
                c.external_per_class_cap = v.get<std::size_t>();
            else if (key == "external_target_size")
                c.external_target_size = v.get<std::size_t>();
            else if (key == "command")
                continue; // written by echo_config; informational
            else
                fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("bad config value: ") + e.what());
    }
}

inline nlohmann::json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::IoError, "cannot open config " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j)
{
    io::detail::write_file(path, j.dump(2) + "\n");
}

/// Synthetic dataset generation settings.
struct SynthCommand {
    SynthConfig data;
    ProtocolConfig protocol;
    std::size_t external_subjects = 0; ///< size of an extra disjoint pool for external negatives
    std::string out = "synth";
};

inline json to_json(const SynthCommand& s)
{
    json j;
    j["dim"] = s.data.dim;
    j["num_subjects"] = s.data.num_subjects;
    j["templates_per_subject"] = s.data.templates_per_subject;
    j["media_min"] = s.data.media_per_template.min;
    j["media_max"] = s.data.media_per_template.max;
    j["media_cycle"] = s.data.media_per_template.cycle;
    j["frames_per_video"] = s.data.frames_per_video;
    j["video_fraction"] = s.data.video_fraction;
    j["noise_sigma"] = s.data.noise_sigma;
    j["nuisance_rank"] = s.data.nuisance_rank;
    j["nuisance_sigma"] = s.data.nuisance_sigma;
    j["seed"] = s.data.seed;
    j["num_splits"] = s.protocol.num_splits;
    j["train_fraction"] = s.protocol.train_fraction;
    j["nonmated_probe_fraction"] = s.protocol.nonmated_probe_fraction;
    j["nonmated_pairs_per_mated"] = s.protocol.nonmated_pairs_per_mated;
    j["external_subjects"] = s.external_subjects;
    j["out"] = s.out;
    return j;
}

inline void apply_json(SynthCommand& s, const nlohmann::json& j)
{
    if (!j.is_object())
        fail(ErrorCode::InvalidConfig, "config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "dim")
                s.data.dim = v.get<std::size_t>();
            else if (key == "num_subjects")
                s.data.num_subjects = v.get<std::size_t>();
            else if (key == "templates_per_subject")
                s.data.templates_per_subject = v.get<std::size_t>();
            else if (key == "media_min")
                s.data.media_per_template.min = v.get<std::size_t>();
            else if (key == "media_max")
                s.data.media_per_template.max = v.get<std::size_t>();
            else if (key == "media_cycle")
                s.data.media_per_template.cycle = v.get<std::vector<std::size_t>>();
            else if (key == "frames_per_video")
                s.data.frames_per_video = v.get<std::size_t>();
            else if (key == "video_fraction")
                s.data.video_fraction = v.get<double>();
            else if (key == "noise_sigma")
                s.data.noise_sigma = v.get<double>();
            else if (key == "nuisance_rank")
                s.data.nuisance_rank = v.get<std::size_t>();
            else if (key == "nuisance_sigma")
                s.data.nuisance_sigma = v.get<double>();
            else if (key == "seed")
                s.data.seed = v.get<std::uint64_t>();
            else if (key == "num_splits")
                s.protocol.num_splits = v.get<std::size_t>();
            else if (key == "train_fraction")
                s.protocol.train_fraction = v.get<double>();
            else if (key == "nonmated_probe_fraction")
                s.protocol.nonmated_probe_fraction = v.get<double>();
            else if (key == "nonmated_pairs_per_mated")
                s.protocol.nonmated_pairs_per_mated = v.get<std::size_t>();
            else if (key == "external_subjects")
                s.external_subjects = v.get<std::size_t>();
            else if (key == "out")
                s.out = v.get<std::string>();
            else
                fail(ErrorCode::InvalidConfig, "unknown synth config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("bad config value: ") + e.what());
    }
}

/// Dataset directory layout.
struct DatasetPaths {
    fs::path manifest;
    fs::path matrix;

    static DatasetPaths main(const fs::path& dir) { return {dir / "manifest.jsonl", dir / "embeddings.tadp"}; }
    static DatasetPaths external(const fs::path& dir)
    {
        return {dir / "external.manifest.jsonl", dir / "external.tadp"};
    }
};

/// Writes manifest.jsonl + embeddings.tadp, protocol/split_XX/{pairs,search}.csv,
/// optionally an external pool of disjoint subjects, and synth_config.json.
inline void cmd_synth(const SynthCommand& s)
{
    s.data.validate();
    s.protocol.validate();
    const fs::path out = s.out;
    fs::create_directories(out);

    const Dataset ds = generate(s.data);
    const auto main = DatasetPaths::main(out);
    io::save_dataset(ds, main.manifest, main.matrix);
    io::save_protocol(make_protocol(build_templates(ds), s.protocol, s.data.seed), out / "protocol");

    if (s.external_subjects > 0) {
        SynthConfig ext = s.data;
        ext.num_subjects = s.external_subjects;
        ext.subject_offset = s.data.subject_offset + s.data.num_subjects;
        const auto paths = DatasetPaths::external(out);
        io::save_dataset(generate(ext), paths.manifest, paths.matrix);
    }
    write_json(out / "synth_config.json", to_json(s));
}

namespace detail {

struct Context {
    std::vector<Template> templates;
    std::vector<SplitProtocol> splits;
    std::optional<NegativePool> external;
};

inline Context load_context(const fs::path& dataset_dir, const fs::path& protocol_dir, const RunConfig& cfg)
{
    Context ctx;
    const auto main = DatasetPaths::main(dataset_dir);
    ctx.templates = build_templates(io::load_dataset(main.manifest, main.matrix));
    ctx.splits = io::load_protocol(protocol_dir);
    const auto ext = DatasetPaths::external(dataset_dir);
    if (fs::exists(ext.manifest) && fs::exists(ext.matrix)) {
        const auto ext_templates = build_templates(io::load_dataset(ext.manifest, ext.matrix));
        std::vector<MediaEncoding> enc;
        std::vector<std::string> subj;
        for (const Template& t : ext_templates)
            for (const MediaEncoding& m : t.media()) {
                enc.push_back(m);
                subj.push_back(t.subject_id());
            }
        std::map<std::string, std::size_t> per_class;
        for (const auto& s : subj)
            ++per_class[s];
        std::size_t available = 0;
        for (const auto& [_, n] : per_class)
            available += std::min(n, cfg.external_per_class_cap);
        const std::size_t target = cfg.external_target_size == 0 ? available : cfg.external_target_size;
        ctx.external = build_external_pool(enc, subj, cfg.external_per_class_cap, target, cfg.seed);
    }
    return ctx;
}

struct Negatives {
    NegativePool pool;
    bool exclude_same_subject = false;
};

inline Negatives negatives_for(const std::string& source, const ResolvedSplit& split, const Context& ctx)
{
    const auto eval_subjects = split.evaluation_subjects();
    switch (negative_source_from_string(source)) {
    case NegativeSource::DisjointTrainingSet: return {build_training_pool(split.train, eval_subjects), false};
    case NegativeSource::GalleryNonMates: return {build_gallery_pool(split.gallery), true};
    case NegativeSource::Union:
        return {union_pool(build_training_pool(split.train, eval_subjects), build_gallery_pool(split.gallery)), true};
    case NegativeSource::External:
        if (!ctx.external)
            fail(ErrorCode::InvalidConfig, "negatives=external needs external.manifest.jsonl and external.tadp");
        check_subject_disjoint(*ctx.external, eval_subjects);
        return {*ctx.external, false};
    }
    fail(ErrorCode::InvalidConfig, "unknown negative source");
}

inline std::string target_key(double t)
{
    return format_real(t);
}

inline json operating_point_json(const OperatingPoint& p)
{
    json j;
    j["value"] = p.value;
    j["achieved_x"] = p.achieved_x;
    j["threshold"] = p.threshold;
    return j;
}

// mean and (when there are >= 2 splits) sample std.
inline json summary_json(const std::vector<double>& values)
{
    json j;
    j["mean"] = mean_of(values);
    j["std"] = values.size() >= 2 ? json(aggregate_splits(values).stddev) : json(nullptr);
    j["n"] = values.size();
    return j;
}

inline std::string csv_summary(const std::vector<double>& values)
{
    if (values.empty())
        return ",,0";
    const std::string sd = values.size() >= 2 ? format_real(aggregate_splits(values).stddev) : "";
    return format_real(mean_of(values)) + "," + sd + "," + std::to_string(values.size());
}

inline std::vector<std::size_t> template_sizes(std::span<const Template> templates,
                                               std::span<const ScoredPair> pairs, bool probe_side)
{
    std::unordered_map<std::string, std::size_t> size;
    for (const Template& t : templates)
        size.emplace(t.template_id(), t.size());
    std::vector<std::size_t> out;
    for (const ScoredPair& p : pairs)
        out.push_back(size.at(probe_side ? p.probe_id : p.reference_id));
    return out;
}

inline void echo_config(const fs::path& out, const std::string& command, const RunConfig& cfg)
{
    json j = to_json(cfg);
    j["command"] = command;
    write_json(out / "config.json", j);
}

// Scores for one split under the given scoring options.
inline PairScores verify_split(const ResolvedSplit& split, const SplitProtocol& proto, const Context& ctx,
                               const RunConfig& cfg, ScoringOptions opt, ClassifierCache& cache)
{
    const Negatives neg = negatives_for(cfg.negatives, split, ctx);
    opt.exclude_same_subject = neg.exclude_same_subject;
    return score_verification_pairs(ctx.templates, proto.pairs, neg.pool, opt, cache);
}

} // namespace detail

/// 1:1 verification over every split: split_XX/scores.csv, split_XX/roc.csv
/// and operating_points.json (per split, plus mean/std over splits, for the
/// adapted scores and the negative-L2 baseline).
inline json cmd_verify(const fs::path& dataset_dir, const fs::path& protocol_dir, const RunConfig& cfg)
{
    cfg.validate();
    const fs::path out = cfg.out;
    const auto ctx = detail::load_context(dataset_dir, protocol_dir, cfg);
    fs::create_directories(out);
    detail::echo_config(out, "verify", cfg);

    json splits = json::array();
    std::map<std::string, std::map<double, std::vector<double>>> per_method;
    for (std::size_t k = 0; k < ctx.splits.size(); ++k) {
        const ResolvedSplit split = resolve_split(ctx.splits[k], ctx.templates);
        ClassifierCache cache;
        const PairScores adapted = detail::verify_split(split, ctx.splits[k], ctx, cfg, cfg.scoring(), cache);
        const PairScores baseline = score_baseline_pairs(ctx.templates, ctx.splits[k].pairs);

        const fs::path dir = out / io::split_dir_name(k);
        fs::create_directories(dir);
        io::export_scores(adapted, dir / "scores.csv");
        const Curve roc = roc_11(adapted);
        write_curve_csv(roc, (dir / "roc.csv").string());

        json entry;
        entry["split"] = io::split_dir_name(k);
        entry["trainings"] = cache.trainings();
        for (const auto& [name, curve] : {std::pair{"adapted", roc}, std::pair{"baseline", roc_11(baseline)}}) {
            json points;
            for (double t : cfg.targets) {
                const OperatingPoint p = operating_point(curve, t);
                points[detail::target_key(t)] = detail::operating_point_json(p);
                per_method[name][t].push_back(p.value);
            }
            entry[name] = points;
        }
        splits.push_back(entry);
    }

    json summary;
    for (const auto& [name, by_target] : per_method)
        for (const auto& [t, values] : by_target)
            summary[name][detail::target_key(t)] = detail::summary_json(values);
    json result;
    result["metric"] = "TAR@FMR";
    result["convention"] = OperatingPoint::convention;
    result["splits"] = splits;
    result["summary"] = summary;
    write_json(out / "operating_points.json", result);
    return result;
}

/// 1:N identification with gallery adaptation: split_XX/scores.csv,
/// split_XX/cmc.csv (mated probes) and split_XX/det_1n.csv, plus
/// identify_summary.json.
inline json cmd_identify(const fs::path& dataset_dir, const fs::path& protocol_dir, const RunConfig& cfg)
{
    cfg.validate();
    const fs::path out = cfg.out;
    const auto ctx = detail::load_context(dataset_dir, protocol_dir, cfg);
    fs::create_directories(out);
    detail::echo_config(out, "identify", cfg);

    json splits = json::array();
    std::map<std::string, std::vector<double>> metrics;
    for (std::size_t k = 0; k < ctx.splits.size(); ++k) {
        const ResolvedSplit split = resolve_split(ctx.splits[k], ctx.templates);
        const std::vector<Template> probes = split.probes();
        detail::Negatives neg = detail::negatives_for(cfg.negatives, split, ctx);
        ScoringOptions opt = cfg.scoring();
        opt.exclude_same_subject = neg.exclude_same_subject;
        const ScoreMatrix scores = score_search(probes, split.gallery, neg.pool, opt);

        std::vector<std::string> gallery_labels, probe_labels;
        for (const GalleryEntry& e : split.gallery.entries())
            gallery_labels.push_back(e.label);
        for (const Template& p : probes)
            probe_labels.push_back(p.subject_id());

        // Closed-set rows for CMC.
        ScoreMatrix closed{{}, scores.col_ids, {}, {}};
        std::vector<std::string> closed_labels;
        for (std::size_t r = 0; r < split.probes_mated.size(); ++r) {
            closed.row_ids.push_back(scores.row_ids[r]);
            closed_labels.push_back(probe_labels[r]);
            for (std::size_t c = 0; c < scores.cols(); ++c) {
                closed.scores.push_back(scores.at(r, c));
                closed.mated.push_back(scores.is_mated(r, c));
            }
        }

        const fs::path dir = out / io::split_dir_name(k);
        fs::create_directories(dir);
        io::export_scores(scores, dir / "scores.csv");

        json entry;
        entry["split"] = io::split_dir_name(k);
        const auto curve_cmc = cmc(closed, gallery_labels, closed_labels);
        std::string text = "rank,recall\n";
        for (const CmcPoint& p : curve_cmc)
            text += std::to_string(p.rank) + "," + format_real(p.recall) + "\n";
        io::detail::write_file(dir / "cmc.csv", text);
        for (std::size_t rank : {1, 5, 10}) {
            if (rank > curve_cmc.size())
                continue;
            const std::string key = "rank" + std::to_string(rank);
            entry[key] = curve_cmc[rank - 1].recall;
            metrics[key].push_back(curve_cmc[rank - 1].recall);
        }

        if (!split.probes_nonmated.empty()) {
            const Curve det = det_1n(scores, gallery_labels, probe_labels, cfg.rank_list_size);
            write_curve_csv(det, (dir / "det_1n.csv").string());
            for (double t : cfg.targets) {
                const OperatingPoint p = operating_point(det, t);
                const std::string key = "tpir@fpir=" + detail::target_key(t);
                entry[key] = detail::operating_point_json(p);
                metrics[key].push_back(p.value);
            }
        }
        splits.push_back(entry);
    }

    json summary;
    for (const auto& [name, values] : metrics)
        summary[name] = detail::summary_json(values);
    json result;
    result["rank_list_size"] = cfg.rank_list_size;
    result["convention"] = OperatingPoint::convention;
    result["splits"] = splits;
    result["summary"] = summary;
    write_json(out / "identify_summary.json", result);
    return result;
}

enum class Study { NegativeSet, Fusion, TemplateSize };

inline Study study_from_string(const std::string& s)
{
    if (s == "negset")
        return Study::NegativeSet;
    if (s == "fusion")
        return Study::Fusion;
    if (s == "template-size")
        return Study::TemplateSize;
    fail(ErrorCode::InvalidConfig, "unknown study '" + s + "' (expected negset, fusion or template-size)");
}

/// One metric of one study variant, aggregated over splits.
struct StudyRow {
    std::string variant;
    std::string metric;
    std::vector<double> values;
};

namespace detail {

inline void write_study_csv(const fs::path& path, const std::vector<StudyRow>& rows)
{
    std::string text = "variant,metric,mean,std,n_splits\n";
    for (const StudyRow& r : rows)
        text += r.variant + "," + r.metric + "," + csv_summary(r.values) + "\n";
    io::detail::write_file(path, text);
}

inline std::string tar_metric(double t)
{
    return "tar@fmr=" + target_key(t);
}

} // namespace detail

/// Ablation studies over every split, written to study_<name>.csv with one
/// row per (variant, metric).
///  - negset: probe adaptation with train / gallery / union (/ external) negatives
///  - fusion: average, wta, wta-smaller, template-weighted, geometric and the
///    per-media margin average, sharing one set of trained classifiers
///  - template-size: per max(|P|,|Q|) bucket, mated score mean and TAR at each
///    target, for adapted and baseline scores
inline std::vector<StudyRow> cmd_study(const fs::path& dataset_dir, const fs::path& protocol_dir, Study study,
                                       const RunConfig& cfg)
{
    cfg.validate();
    const fs::path out = cfg.out;
    const auto ctx = detail::load_context(dataset_dir, protocol_dir, cfg);
    fs::create_directories(out);
    const char* names[] = {"study-negset", "study-fusion", "study-template-size"};
    detail::echo_config(out, names[static_cast<int>(study)], cfg);

    std::vector<StudyRow> rows;
    auto row = [&](const std::string& variant, const std::string& metric) -> std::vector<double>& {
        for (StudyRow& r : rows)
            if (r.variant == variant && r.metric == metric)
                return r.values;
        rows.push_back({variant, metric, {}});
        return rows.back().values;
    };
    auto record_tar = [&](const std::string& variant, const PairScores& scores) {
        const Curve roc = roc_11(scores);
        for (double t : cfg.targets)
            row(variant, detail::tar_metric(t)).push_back(operating_point(roc, t).value);
    };

    for (std::size_t k = 0; k < ctx.splits.size(); ++k) {
        const ResolvedSplit split = resolve_split(ctx.splits[k], ctx.templates);
        const auto& pairs = ctx.splits[k].pairs;
        switch (study) {
        case Study::NegativeSet: {
            std::vector<std::string> sources{"train", "gallery", "union"};
            if (ctx.external)
                sources.push_back("external");
            for (const std::string& source : sources) {
                RunConfig variant = cfg;
                variant.negatives = source;
                ClassifierCache cache;
                record_tar(source, detail::verify_split(split, ctx.splits[k], ctx, variant, variant.scoring(), cache));
            }
            break;
        }
        case Study::Fusion: {
            ClassifierCache cache;
            const std::vector<std::pair<std::string, FusionStrategy>> strategies{
                {"average", {FusionVariant::Average, std::nullopt, true}},
                {"wta", {FusionVariant::WinnerTakeAll, std::nullopt, true}},
                {"wta-smaller", {FusionVariant::WinnerTakeAll, std::nullopt, false}},
                {"template-weighted", {FusionVariant::TemplateWeighted, std::nullopt, true}},
                {"geometric", {FusionVariant::GeometricAverage, std::nullopt, true}},
            };
            for (const auto& [name, strategy] : strategies) {
                ScoringOptions opt = cfg.scoring();
                opt.fusion = strategy;
                record_tar(name, detail::verify_split(split, ctx.splits[k], ctx, cfg, opt, cache));
            }
            ScoringOptions media = cfg.scoring();
            media.fusion = {FusionVariant::Average, std::nullopt, true};
            media.mode = ScoringMode::MediaMarginAverage;
            record_tar("media-margin-average", detail::verify_split(split, ctx.splits[k], ctx, cfg, media, cache));
            break;
        }
        case Study::TemplateSize: {
            ClassifierCache cache;
            const PairScores adapted = detail::verify_split(split, ctx.splits[k], ctx, cfg, cfg.scoring(), cache);
            const PairScores baseline = score_baseline_pairs(ctx.templates, pairs);
            for (const auto& [method, scores] : {std::pair{"adapted", &adapted}, std::pair{"baseline", &baseline}}) {
                const auto ps = detail::template_sizes(ctx.templates, *scores, true);
                const auto qs = detail::template_sizes(ctx.templates, *scores, false);
                std::vector<SizedScore> sized;
                for (std::size_t i = 0; i < scores->size(); ++i)
                    sized.push_back({(*scores)[i].score, (*scores)[i].mated, ps[i], qs[i]});
                for (const BucketStats& b : bucket_by_template_size(sized, cfg.buckets, cfg.targets)) {
                    const std::string variant = std::string(method) + " [" + std::to_string(b.lo) + " " +
                                                std::to_string(b.hi) + ")";
                    if (b.mated_mean)
                        row(variant, "mated_mean").push_back(*b.mated_mean);
                    if (b.mated_stddev)
                        row(variant, "mated_std").push_back(*b.mated_stddev);
                    for (std::size_t t = 0; t < cfg.targets.size(); ++t)
                        if (b.tar_at[t])
                            row(variant, detail::tar_metric(cfg.targets[t])).push_back(b.tar_at[t]->value);
                }
            }
            break;
        }
        }
    }
    const char* files[] = {"study_negset.csv", "study_fusion.csv", "study_template_size.csv"};
    detail::write_study_csv(out / files[static_cast<int>(study)], rows);
    return rows;
}

} // namespace tadapt::cmd
