// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tadapt/commands.hpp"

namespace {

using namespace tadapt;

void print_error(std::string_view code, const std::string& message)
{
    nlohmann::ordered_json j;
    j["error"] = code;
    j["message"] = message;
    std::cerr << j.dump() << std::endl;
}

// Flags shared by verify, identify and study. Unset flags leave the config
// file (or default) value in place.
struct RunFlags {
    std::string config;
    std::optional<double> c_param;
    std::optional<double> tol;
    std::optional<int> max_iter;
    std::optional<std::string> fusion;
    std::optional<std::string> negatives;
    std::optional<std::vector<std::size_t>> buckets;
    std::optional<std::size_t> rank_list_size;
    std::optional<std::vector<double>> targets;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<unsigned> threads;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config, "JSON config file; flags override its values");
        app->add_option("--c-param", c_param, "SVM trade-off C (default 10)");
        app->add_option("--tol", tol, "solver tolerance on the scaled gradient norm (default 1e-8)");
        app->add_option("--max-iter", max_iter, "solver iteration limit (default 1000)");
        app->add_option("--fusion", fusion, "average | wta | wta-smaller | template-weighted | geometric");
        app->add_option("--negatives", negatives, "train | gallery | union | external");
        app->add_option("--buckets", buckets, "template-size bucket edges")->delimiter(',');
        app->add_option("--rank-list-size", rank_list_size, "1:N candidate list length L (default 20)");
        app->add_option("--targets", targets, "operating-point targets (default 1e-2,1e-3)")->delimiter(',');
        app->add_option("--seed", seed, "seed for sampled negative sets");
        app->add_option("--out", out, "output directory");
        app->add_option("--threads", threads, "worker threads for per-template training");
    }

    cmd::RunConfig resolve() const
    {
        cmd::RunConfig c;
        if (!config.empty())
            cmd::apply_json(c, cmd::read_json_file(config));
        if (c_param) c.C = *c_param;
        if (tol) c.tol = *tol;
        if (max_iter) c.max_iter = *max_iter;
        if (fusion) c.fusion = *fusion;
        if (negatives) c.negatives = *negatives;
        if (buckets) c.buckets = *buckets;
        if (rank_list_size) c.rank_list_size = *rank_list_size;
        if (targets) c.targets = *targets;
        if (seed) c.seed = *seed;
        if (out) c.out = *out;
        if (threads) c.threads = *threads;
        c.validate();
        return c;
    }
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Template adaptation for set-based face verification and identification"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and protocol");
    std::string synth_config;
    cmd::SynthCommand synth_defaults;
    std::optional<std::size_t> dim, subjects, templates_per_subject, media_min, media_max, nuisance_rank, splits,
        external_subjects;
    std::optional<double> noise_sigma, nuisance_sigma;
    std::optional<std::uint64_t> synth_seed;
    std::optional<std::string> synth_out;
    synth->add_option("--config", synth_config, "JSON synth config; flags override its values");
    synth->add_option("--dim", dim, "embedding dimension");
    synth->add_option("--subjects", subjects, "number of subjects");
    synth->add_option("--templates-per-subject", templates_per_subject, "templates per subject");
    synth->add_option("--media-min", media_min, "minimum media per template");
    synth->add_option("--media-max", media_max, "maximum media per template");
    synth->add_option("--noise-sigma", noise_sigma, "per-coordinate media noise");
    synth->add_option("--nuisance-rank", nuisance_rank, "rank of the shared nuisance subspace");
    synth->add_option("--nuisance-sigma", nuisance_sigma, "std of nuisance components");
    synth->add_option("--splits", splits, "number of evaluation splits");
    synth->add_option("--external-subjects", external_subjects, "subjects in an extra external negative pool");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output directory");

    std::string dataset, protocol, study_name;
    RunFlags verify_flags, identify_flags, study_flags;
    auto* verify = app.add_subcommand("verify", "1:1 verification with probe adaptation");
    auto* identify = app.add_subcommand("identify", "1:N identification with gallery adaptation");
    auto* study = app.add_subcommand("study", "negative-set, fusion or template-size study");
    for (auto* sub : {verify, identify, study}) {
        sub->add_option("dataset", dataset, "dataset directory (manifest.jsonl, embeddings.tadp)")->required();
        sub->add_option("protocol", protocol, "protocol directory (split_XX/pairs.csv, search.csv)")->required();
    }
    study->add_option("--study", study_name, "negset | fusion | template-size")->required();
    verify_flags.attach(verify);
    identify_flags.attach(identify);
    study_flags.attach(study);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("InvalidConfig", e.what());
        return 2;
    }

    try {
        if (synth->parsed()) {
            cmd::SynthCommand s = synth_defaults;
            if (!synth_config.empty())
                cmd::apply_json(s, cmd::read_json_file(synth_config));
            if (dim) s.data.dim = *dim;
            if (subjects) s.data.num_subjects = *subjects;
            if (templates_per_subject) s.data.templates_per_subject = *templates_per_subject;
            if (media_min) s.data.media_per_template.min = *media_min;
            if (media_max) s.data.media_per_template.max = *media_max;
            if (noise_sigma) s.data.noise_sigma = *noise_sigma;
            if (nuisance_rank) s.data.nuisance_rank = *nuisance_rank;
            if (nuisance_sigma) s.data.nuisance_sigma = *nuisance_sigma;
            if (splits) s.protocol.num_splits = *splits;
            if (external_subjects) s.external_subjects = *external_subjects;
            if (synth_seed) s.data.seed = *synth_seed;
            if (synth_out) s.out = *synth_out;
            cmd::cmd_synth(s);
        } else if (verify->parsed()) {
            const auto result = cmd::cmd_verify(dataset, protocol, verify_flags.resolve());
            std::cout << result["summary"].dump(2) << std::endl;
        } else if (identify->parsed()) {
            const auto result = cmd::cmd_identify(dataset, protocol, identify_flags.resolve());
            std::cout << result["summary"].dump(2) << std::endl;
        } else if (study->parsed()) {
            const auto cfg = study_flags.resolve();
            for (const auto& row : cmd::cmd_study(dataset, protocol, cmd::study_from_string(study_name), cfg))
                std::cout << row.variant << " " << row.metric << " " << cmd::detail::csv_summary(row.values) << "\n";
        }
    } catch (const Error& e) {
        print_error(to_string(e.code()), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("IoError", e.what());
        return 1;
    }
    return 0;
}
