// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tadapt/adapt.hpp"
#include "tadapt/core.hpp"
#include "tadapt/error.hpp"

namespace tadapt {

enum class SplitRole { Gallery, ProbeMated, ProbeNonmated, Train };

inline constexpr std::string_view to_string(SplitRole r) noexcept
{
    switch (r) {
    case SplitRole::Gallery: return "gallery";
    case SplitRole::ProbeMated: return "probe_mated";
    case SplitRole::ProbeNonmated: return "probe_nonmated";
    case SplitRole::Train: return "train";
    }
    return "unknown";
}

inline SplitRole split_role_from_string(std::string_view s)
{
    if (s == "gallery")
        return SplitRole::Gallery;
    if (s == "probe_mated")
        return SplitRole::ProbeMated;
    if (s == "probe_nonmated")
        return SplitRole::ProbeNonmated;
    if (s == "train")
        return SplitRole::Train;
    fail(ErrorCode::InvalidArgument, "unknown split role '" + std::string(s) + "'");
}

struct RoleAssignment {
    std::string template_id;
    SplitRole role;

    bool operator==(const RoleAssignment&) const = default;
};

/// One evaluation split: 1:1 verification pairs plus the 1:N search roles.
struct SplitProtocol {
    std::vector<TemplatePair> pairs;
    std::vector<RoleAssignment> roles;
};

/// Templates of one split, resolved against a dataset.
struct ResolvedSplit {
    std::vector<Template> train;
    std::vector<Template> probes_mated;
    std::vector<Template> probes_nonmated;
    Gallery gallery;

    std::vector<Template> probes() const
    {
        std::vector<Template> out = probes_mated;
        out.insert(out.end(), probes_nonmated.begin(), probes_nonmated.end());
        return out;
    }

    std::vector<std::string> evaluation_subjects() const
    {
        std::set<std::string> s;
        for (const auto& t : probes_mated)
            s.insert(t.subject_id());
        for (const auto& t : probes_nonmated)
            s.insert(t.subject_id());
        for (const auto& e : gallery.entries())
            s.insert(e.label);
        return {s.begin(), s.end()};
    }
};

/// Checks that every referenced template exists and that training subjects
/// are disjoint from gallery and probe subjects, then groups templates by role.
inline ResolvedSplit resolve_split(const SplitProtocol& split, std::span<const Template> templates)
{
    std::unordered_map<std::string, const Template*> by_id;
    for (const Template& t : templates)
        by_id.emplace(t.template_id(), &t);
    auto lookup = [&](const std::string& id) -> const Template& {
        const auto it = by_id.find(id);
        if (it == by_id.end())
            fail(ErrorCode::DanglingTemplateRef, "protocol references unknown template " + id);
        return *it->second;
    };
    for (const TemplatePair& p : split.pairs) {
        lookup(p.probe_id);
        lookup(p.reference_id);
    }

    ResolvedSplit out;
    std::vector<GalleryEntry> gallery;
    std::set<std::string> train_subjects, eval_subjects;
    for (const RoleAssignment& r : split.roles) {
        const Template& t = lookup(r.template_id);
        switch (r.role) {
        case SplitRole::Train:
            out.train.push_back(t);
            train_subjects.insert(t.subject_id());
            break;
        case SplitRole::Gallery:
            gallery.push_back({t, t.subject_id()});
            eval_subjects.insert(t.subject_id());
            break;
        case SplitRole::ProbeMated:
            out.probes_mated.push_back(t);
            eval_subjects.insert(t.subject_id());
            break;
        case SplitRole::ProbeNonmated:
            out.probes_nonmated.push_back(t);
            eval_subjects.insert(t.subject_id());
            break;
        }
    }
    for (const TemplatePair& p : split.pairs) {
        eval_subjects.insert(lookup(p.probe_id).subject_id());
        eval_subjects.insert(lookup(p.reference_id).subject_id());
    }
    for (const std::string& s : train_subjects)
        if (eval_subjects.contains(s))
            fail(ErrorCode::SubjectOverlap, "training subject " + s + " also appears in evaluation");
    out.gallery = Gallery(std::move(gallery));
    return out;
}

} // namespace tadapt
