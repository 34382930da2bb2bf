// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tadapt/core.hpp"
#include "tadapt/error.hpp"

namespace tadapt {

enum class NegativeSource { DisjointTrainingSet, GalleryNonMates, Union, External };

inline constexpr std::string_view to_string(NegativeSource s) noexcept
{
    switch (s) {
    case NegativeSource::DisjointTrainingSet: return "train";
    case NegativeSource::GalleryNonMates: return "gallery";
    case NegativeSource::Union: return "union";
    case NegativeSource::External: return "external";
    }
    return "unknown";
}

inline NegativeSource negative_source_from_string(std::string_view s)
{
    if (s == "train")
        return NegativeSource::DisjointTrainingSet;
    if (s == "gallery")
        return NegativeSource::GalleryNonMates;
    if (s == "union")
        return NegativeSource::Union;
    if (s == "external")
        return NegativeSource::External;
    fail(ErrorCode::InvalidConfig, "unknown negative source '" + std::string(s) + "'");
}

namespace detail {

// FNV-1a, 64 bit. Stable across runs and platforms, unlike std::hash.
class Fnv1a {
public:
    void bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void string(std::string_view s)
    {
        bytes(s.data(), s.size());
        const char sep = '\0';
        bytes(&sep, 1);
    }
    void real(double v) { bytes(&v, sizeof v); }
    std::uint64_t value() const noexcept { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

} // namespace detail

/// A set of unit-norm negative features together with the subject of each.
class NegativePool {
public:
    NegativePool() = default;

    NegativePool(NegativeSource source, std::vector<MediaEncoding> encodings, std::vector<std::string> subject_ids)
        : source_(source), encodings_(std::move(encodings)), subject_ids_(std::move(subject_ids))
    {
        require(encodings_.size() == subject_ids_.size(), ErrorCode::InvalidArgument,
                "negative pool encodings and subject ids differ in length");
        for (const MediaEncoding& m : encodings_) {
            require(m.vector.dim() == encodings_.front().vector.dim(), ErrorCode::DimensionMismatch,
                    "negative pool dimensions disagree");
            require(is_unit(m.vector), ErrorCode::InvalidArgument, "negative " + m.media_id + " is not unit norm");
        }
        detail::Fnv1a h;
        h.string(to_string(source_));
        for (std::size_t i = 0; i < encodings_.size(); ++i) {
            h.string(encodings_[i].media_id);
            h.string(subject_ids_[i]);
            for (double v : encodings_[i].vector.values())
                h.real(v);
        }
        fingerprint_ = h.value();
    }

    NegativeSource source() const noexcept { return source_; }
    std::span<const MediaEncoding> encodings() const noexcept { return encodings_; }
    std::span<const std::string> subject_ids() const noexcept { return subject_ids_; }
    std::size_t size() const noexcept { return encodings_.size(); }
    bool empty() const noexcept { return encodings_.empty(); }
    std::size_t dim() const noexcept { return empty() ? 0 : encodings_.front().vector.dim(); }
    /// Content hash over source, ids and values; used as a cache key.
    std::uint64_t fingerprint() const noexcept { return fingerprint_; }

    bool contains_subject(std::string_view subject) const
    {
        return std::find(subject_ids_.begin(), subject_ids_.end(), subject) != subject_ids_.end();
    }

    /// Copy without any entry of `subject`.
    NegativePool excluding_subject(std::string_view subject) const
    {
        std::vector<MediaEncoding> enc;
        std::vector<std::string> subj;
        for (std::size_t i = 0; i < encodings_.size(); ++i) {
            if (subject_ids_[i] != subject) {
                enc.push_back(encodings_[i]);
                subj.push_back(subject_ids_[i]);
            }
        }
        return NegativePool(source_, std::move(enc), std::move(subj));
    }

private:
    NegativeSource source_ = NegativeSource::DisjointTrainingSet;
    std::vector<MediaEncoding> encodings_;
    std::vector<std::string> subject_ids_;
    std::uint64_t fingerprint_ = 0;
};

namespace detail {

inline NegativePool pool_from_templates(NegativeSource source, std::span<const Template> templates)
{
    std::vector<MediaEncoding> enc;
    std::vector<std::string> subj;
    for (const Template& t : templates) {
        for (const MediaEncoding& m : t.media()) {
            enc.push_back(m);
            subj.push_back(t.subject_id());
        }
    }
    return NegativePool(source, std::move(enc), std::move(subj));
}

} // namespace detail

/// Throws SubjectOverlap if any pool subject is also an evaluation subject.
inline void check_subject_disjoint(const NegativePool& pool, std::span<const std::string> evaluation_subjects)
{
    const std::unordered_set<std::string> eval(evaluation_subjects.begin(), evaluation_subjects.end());
    for (const std::string& s : pool.subject_ids())
        if (eval.contains(s))
            fail(ErrorCode::SubjectOverlap, "negative pool subject " + s + " also appears in evaluation");
}

/// All media encodings of a subject-disjoint training split. When evaluation
/// subjects are given, any overlap is an error.
inline NegativePool build_training_pool(std::span<const Template> training_templates,
                                        std::span<const std::string> evaluation_subjects = {})
{
    require(!training_templates.empty(), ErrorCode::EmptyInput, "training split has no templates");
    NegativePool pool = detail::pool_from_templates(NegativeSource::DisjointTrainingSet, training_templates);
    check_subject_disjoint(pool, evaluation_subjects);
    return pool;
}

/// All media of the gallery, labelled by gallery label. Callers remove the
/// mated subject (excluding_subject) before training a probe against it.
inline NegativePool build_gallery_pool(const Gallery& gallery)
{
    require(gallery.size() > 0, ErrorCode::EmptyInput, "gallery is empty");
    std::vector<MediaEncoding> enc;
    std::vector<std::string> subj;
    for (const GalleryEntry& e : gallery.entries()) {
        for (const MediaEncoding& m : e.templ.media()) {
            enc.push_back(m);
            subj.push_back(e.label);
        }
    }
    return NegativePool(NegativeSource::GalleryNonMates, std::move(enc), std::move(subj));
}

/// Class-balanced seeded sample. Items are sorted by (subject, media_id) and
/// shuffled within each class, then drawn round-robin over classes in id
/// order, at most `per_class_cap` per class, until `target_size` is reached.
inline NegativePool build_external_pool(std::span<const MediaEncoding> encodings,
                                        std::span<const std::string> subject_ids, std::size_t per_class_cap,
                                        std::size_t target_size, std::uint64_t seed)
{
    require(encodings.size() == subject_ids.size(), ErrorCode::InvalidArgument,
            "encodings and subject ids differ in length");
    require(target_size > 0, ErrorCode::InvalidArgument, "target size must be positive");
    require(per_class_cap > 0, ErrorCode::InvalidArgument, "per-class cap must be positive");

    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < encodings.size(); ++i)
        by_class[subject_ids[i]].push_back(i);

    std::size_t available = 0;
    for (const auto& [_, idx] : by_class)
        available += std::min(idx.size(), per_class_cap);
    if (target_size > available)
        fail(ErrorCode::InsufficientData, "requested " + std::to_string(target_size) + " negatives but only " +
                                              std::to_string(available) + " available after capping");

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> classes;
    for (auto& [_, idx] : by_class) {
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return encodings[a].media_id < encodings[b].media_id; });
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(idx.size(), per_class_cap));
        classes.push_back(idx);
    }

    std::vector<MediaEncoding> enc;
    std::vector<std::string> subj;
    for (std::size_t round = 0; enc.size() < target_size; ++round) {
        for (const auto& idx : classes) {
            if (round < idx.size() && enc.size() < target_size) {
                enc.push_back(encodings[idx[round]]);
                subj.push_back(subject_ids[idx[round]]);
            }
        }
    }
    return NegativePool(NegativeSource::External, std::move(enc), std::move(subj));
}

/// Concatenation of a and b, keeping the first occurrence of each media_id.
inline NegativePool union_pool(const NegativePool& a, const NegativePool& b)
{
    require(a.empty() || b.empty() || a.dim() == b.dim(), ErrorCode::DimensionMismatch,
            "cannot union pools of different dimension");
    std::vector<MediaEncoding> enc;
    std::vector<std::string> subj;
    std::unordered_set<std::string> seen;
    for (const NegativePool* p : {&a, &b}) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            if (seen.insert(p->encodings()[i].media_id).second) {
                enc.push_back(p->encodings()[i]);
                subj.push_back(p->subject_ids()[i]);
            }
        }
    }
    return NegativePool(NegativeSource::Union, std::move(enc), std::move(subj));
}

} // namespace tadapt
