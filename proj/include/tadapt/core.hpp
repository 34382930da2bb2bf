// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tadapt/error.hpp"

namespace tadapt {

/// Norms at or below this are treated as zero when normalizing.
inline constexpr double kZeroNorm = 1e-12;

/// Tolerance on ||v|| - 1 for vectors that claim to be unit length.
inline constexpr double kUnitTolerance = 1e-6;

namespace vec {

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a)
{
    return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y)
{
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] += alpha * x[i];
}

} // namespace vec

/// A fixed-dimension feature vector with finite entries.
class Embedding {
public:
    Embedding() = default;

    explicit Embedding(std::vector<double> values) : values_(std::move(values))
    {
        require(!values_.empty(), ErrorCode::InvalidArgument, "embedding must have dimension > 0");
        require(vec::all_finite(values_), ErrorCode::NonFinite, "embedding contains NaN or Inf");
    }

    Embedding(std::initializer_list<double> values) : Embedding(std::vector<double>(values)) {}

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double norm() const { return vec::norm(values_); }

    bool operator==(const Embedding&) const = default;

private:
    std::vector<double> values_;
};

/// Returns v / ||v||, or throws ZeroNorm when ||v|| <= 1e-12.
inline Embedding unit_normalize(std::vector<double> v)
{
    const double n = vec::norm(v);
    require(std::isfinite(n), ErrorCode::NonFinite, "cannot normalize a non-finite vector");
    if (n <= kZeroNorm)
        fail(ErrorCode::ZeroNorm, "vector norm " + std::to_string(n) + " is too small to normalize");
    for (double& x : v)
        x /= n;
    return Embedding(std::move(v));
}

inline bool is_unit(const Embedding& e)
{
    return std::abs(e.norm() - 1.0) <= kUnitTolerance;
}

enum class MediaKind { Image, Video };

/// One image (a single frame) or one video (a face track of frames).
struct MediaRecord {
    std::string media_id;
    std::string subject_id;
    MediaKind kind = MediaKind::Image;
    std::vector<Embedding> frames;

    void validate() const
    {
        require(!frames.empty(), ErrorCode::InvalidArgument, "media " + media_id + " has no frames");
        require(kind == MediaKind::Video || frames.size() == 1, ErrorCode::UnitDimensionMismatch,
                "image media " + media_id + " must have exactly one frame");
        const std::size_t d = frames.front().dim();
        for (const Embedding& f : frames)
            require(f.dim() == d, ErrorCode::DimensionMismatch, "frames of media " + media_id + " disagree on dimension");
    }
};

/// Unit-normalized encoding of one media.
struct MediaEncoding {
    std::string media_id;
    Embedding vector;

    bool operator==(const MediaEncoding&) const = default;
};

/// A set of encoded media of one subject. Media are kept sorted by media_id,
/// which fixes the summation order used by encode_template.
class Template {
public:
    Template() = default;

    Template(std::string template_id, std::string subject_id, std::vector<MediaEncoding> media)
        : template_id_(std::move(template_id)), subject_id_(std::move(subject_id)), media_(std::move(media))
    {
        require(!media_.empty(), ErrorCode::InvalidArgument, "template " + template_id_ + " has no media");
        std::sort(media_.begin(), media_.end(),
                  [](const MediaEncoding& a, const MediaEncoding& b) { return a.media_id < b.media_id; });
        const std::size_t d = media_.front().vector.dim();
        for (std::size_t i = 0; i < media_.size(); ++i) {
            require(media_[i].vector.dim() == d, ErrorCode::DimensionMismatch,
                    "media dimensions disagree in template " + template_id_);
            require(is_unit(media_[i].vector), ErrorCode::InvalidArgument,
                    "media " + media_[i].media_id + " is not unit norm");
            if (i > 0 && media_[i].media_id == media_[i - 1].media_id)
                fail(ErrorCode::DuplicateMedia,
                     "duplicate media " + media_[i].media_id + " in template " + template_id_);
        }
    }

    const std::string& template_id() const noexcept { return template_id_; }
    const std::string& subject_id() const noexcept { return subject_id_; }
    std::span<const MediaEncoding> media() const noexcept { return media_; }
    std::size_t size() const noexcept { return media_.size(); }
    std::size_t dim() const noexcept { return media_.empty() ? 0 : media_.front().vector.dim(); }

private:
    std::string template_id_;
    std::string subject_id_;
    std::vector<MediaEncoding> media_;
};

struct TemplateEncoding {
    std::string template_id;
    Embedding vector;
};

struct GalleryEntry {
    Template templ;
    std::string label;
};

class Gallery {
public:
    Gallery() = default;

    explicit Gallery(std::vector<GalleryEntry> entries) : entries_(std::move(entries))
    {
        std::unordered_set<std::string> seen;
        for (const auto& e : entries_)
            require(seen.insert(e.templ.template_id()).second, ErrorCode::InvalidArgument,
                    "duplicate gallery template " + e.templ.template_id());
    }

    std::span<const GalleryEntry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<GalleryEntry> entries_;
};

/// Mean of the frame embeddings, unit normalized.
inline MediaEncoding encode_media(const MediaRecord& record)
{
    record.validate();
    std::vector<double> sum(record.frames.front().dim(), 0.0);
    for (const Embedding& f : record.frames)
        vec::axpy(1.0, f.values(), sum);
    const double m = static_cast<double>(record.frames.size());
    for (double& x : sum)
        x /= m;
    return MediaEncoding{record.media_id, unit_normalize(std::move(sum))};
}

inline TemplateEncoding encode_template(const Template& t)
{
    require(t.size() > 0, ErrorCode::InvalidArgument, "cannot encode an empty template");
    std::vector<double> sum(t.dim(), 0.0);
    for (const MediaEncoding& m : t.media())
        vec::axpy(1.0, m.vector.values(), sum);
    const double n = static_cast<double>(t.size());
    for (double& x : sum)
        x /= n;
    return TemplateEncoding{t.template_id(), unit_normalize(std::move(sum))};
}

/// Negative L2 distance between two template encodings.
inline double baseline_similarity(const TemplateEncoding& p, const TemplateEncoding& q)
{
    require(p.vector.dim() == q.vector.dim(), ErrorCode::DimensionMismatch,
            "template encodings differ in dimension");
    const auto a = p.vector.values();
    const auto b = q.vector.values();
    // Summing squared differences is order-symmetric, so s(p,q) == s(q,p) bit-for-bit.
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return -std::sqrt(s);
}

} // namespace tadapt

namespace tadapt {

/// Raw media records, each tagged with the template it belongs to. This is
/// the in-memory form of a manifest plus embedding matrix.
struct Dataset {
    std::size_t dim = 0;
    std::vector<MediaRecord> media;
    std::vector<std::string> template_ids; ///< parallel to media

    bool operator==(const Dataset& o) const
    {
        if (dim != o.dim || template_ids != o.template_ids || media.size() != o.media.size())
            return false;
        for (std::size_t i = 0; i < media.size(); ++i) {
            const MediaRecord& a = media[i];
            const MediaRecord& b = o.media[i];
            if (a.media_id != b.media_id || a.subject_id != b.subject_id || a.kind != b.kind || a.frames != b.frames)
                return false;
        }
        return true;
    }
};

/// Encodes every media and groups the encodings into templates, ordered by
/// template_id. A template whose media disagree on subject is rejected.
inline std::vector<Template> build_templates(const Dataset& ds)
{
    require(ds.media.size() == ds.template_ids.size(), ErrorCode::InvalidArgument,
            "dataset media and template ids differ in length");
    struct Pending {
        std::string subject;
        std::vector<MediaEncoding> media;
    };
    std::map<std::string, Pending> grouped;
    for (std::size_t i = 0; i < ds.media.size(); ++i) {
        const MediaRecord& r = ds.media[i];
        for (const Embedding& f : r.frames)
            require(f.dim() == ds.dim, ErrorCode::DimensionMismatch, "media " + r.media_id + " has wrong dimension");
        auto [it, inserted] = grouped.try_emplace(ds.template_ids[i], Pending{r.subject_id, {}});
        require(it->second.subject == r.subject_id, ErrorCode::InvalidArgument,
                "template " + ds.template_ids[i] + " mixes subjects");
        it->second.media.push_back(encode_media(r));
    }
    std::vector<Template> out;
    out.reserve(grouped.size());
    for (auto& [id, p] : grouped)
        out.emplace_back(id, p.subject, std::move(p.media));
    return out;
}

} // namespace tadapt
