// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tadapt/adapt.hpp"
#include "tadapt/core.hpp"
#include "tadapt/error.hpp"
#include "tadapt/eval.hpp"
#include "tadapt/protocol.hpp"

namespace tadapt::io {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kMatrixMagic{'T', 'A', 'D', 'P'};
inline constexpr std::array<char, 4> kClassifierMagic{'T', 'A', 'D', 'C'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 16;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p)
{
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | p[i];
    return v;
}

inline std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoError, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorCode::IoError, "failed writing " + path.string());
}

inline std::string header(const std::array<char, 4>& magic, std::uint32_t rows, std::uint32_t dim)
{
    std::string out(magic.begin(), magic.end());
    put_u32(out, kFormatVersion);
    put_u32(out, rows);
    put_u32(out, dim);
    return out;
}

struct Header {
    std::uint32_t rows;
    std::uint32_t dim;
};

// Validates magic, version and exact payload length.
inline Header parse_header(std::string_view bytes, const std::array<char, 4>& magic, std::size_t element_size,
                           const std::string& path)
{
    if (bytes.size() < kHeaderBytes || !std::equal(magic.begin(), magic.end(), bytes.begin()))
        fail(ErrorCode::CorruptHeader, path + ": missing or bad header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t version = get_u32(p + 4);
    if (version != kFormatVersion)
        fail(ErrorCode::VersionMismatch,
             path + ": format version " + std::to_string(version) + " is not supported (expected 1)");
    const Header h{get_u32(p + 8), get_u32(p + 12)};
    const std::uint64_t expected = kHeaderBytes + element_size * std::uint64_t{h.rows} * h.dim;
    if (bytes.size() != expected)
        fail(ErrorCode::CorruptHeader, path + ": file length " + std::to_string(bytes.size()) +
                                           " does not match header (expected " + std::to_string(expected) + ")");
    return h;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

inline void check_csv_field(const std::string& s)
{
    if (s.find_first_of(",\n\r") != std::string::npos)
        fail(ErrorCode::InvalidArgument, "identifier '" + s + "' cannot be written to CSV");
}

// Lines of a text file, without trailing '\r', skipping blank lines.
inline std::vector<std::string> read_lines(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (!line.empty())
            out.push_back(std::move(line));
    }
    return out;
}

} // namespace detail

/// Row-major float32 embedding matrix.
struct Matrix {
    std::uint32_t rows = 0;
    std::uint32_t dim = 0;
    std::vector<float> values;
};

/// 16-byte header ("TADP", version, rows, dim; uint32 little endian) followed
/// by rows x dim float32 little endian.
inline void write_matrix(const fs::path& path, const Matrix& m)
{
    require(m.values.size() == std::size_t{m.rows} * m.dim, ErrorCode::InvalidArgument, "matrix shape mismatch");
    std::string bytes = detail::header(kMatrixMagic, m.rows, m.dim);
    bytes.reserve(kHeaderBytes + 4 * m.values.size());
    for (float v : m.values)
        detail::put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    detail::write_file(path, bytes);
}

inline Matrix read_matrix(const fs::path& path)
{
    const std::string bytes = detail::read_file(path);
    const auto h = detail::parse_header(bytes, kMatrixMagic, 4, path.string());
    Matrix m{h.rows, h.dim, {}};
    m.values.resize(std::size_t{h.rows} * h.dim);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderBytes;
    for (std::size_t i = 0; i < m.values.size(); ++i)
        m.values[i] = std::bit_cast<float>(detail::get_u32(p + 4 * i));
    return m;
}

struct ManifestEntry {
    std::string media_id;
    std::string subject_id;
    std::string template_id;
    MediaKind kind = MediaKind::Image;
    std::uint64_t row_start = 0;
    std::uint64_t row_count = 1;
};

inline std::vector<ManifestEntry> read_manifest(const fs::path& path)
{
    std::vector<ManifestEntry> out;
    std::size_t lineno = 0;
    for (const std::string& line : detail::read_lines(path)) {
        ++lineno;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::IoError, where + ": " + e.what());
        }
        ManifestEntry e;
        try {
            e.media_id = j.at("media_id").get<std::string>();
            e.subject_id = j.at("subject_id").get<std::string>();
            e.template_id = j.at("template_id").get<std::string>();
            const auto kind = j.at("kind").get<std::string>();
            if (kind != "image" && kind != "video")
                fail(ErrorCode::IoError, where + ": kind must be \"image\" or \"video\"");
            e.kind = kind == "image" ? MediaKind::Image : MediaKind::Video;
            e.row_start = j.at("row_start").get<std::uint64_t>();
            e.row_count = j.at("row_count").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorCode::IoError, where + ": " + ex.what());
        }
        require(!e.media_id.empty() && !e.subject_id.empty(), ErrorCode::InvalidArgument, where + ": empty id");
        if (e.template_id.empty())
            fail(ErrorCode::DanglingTemplateRef, where + ": media " + e.media_id + " has no template_id");
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries)
{
    std::string text;
    for (const ManifestEntry& e : entries) {
        nlohmann::ordered_json j;
        j["media_id"] = e.media_id;
        j["subject_id"] = e.subject_id;
        j["template_id"] = e.template_id;
        j["kind"] = e.kind == MediaKind::Image ? "image" : "video";
        j["row_start"] = e.row_start;
        j["row_count"] = e.row_count;
        text += j.dump();
        text += '\n';
    }
    detail::write_file(path, text);
}

/// Loads raw media records. Row ranges must be in bounds and pairwise
/// disjoint; images span exactly one row. Embeddings are widened to double
/// once, here.
inline Dataset load_dataset(const fs::path& manifest_path, const fs::path& matrix_path)
{
    const Matrix m = read_matrix(matrix_path);
    const auto entries = read_manifest(manifest_path);
    require(m.dim > 0, ErrorCode::CorruptHeader, matrix_path.string() + ": dimension is zero");

    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const ManifestEntry& e : entries) {
        if (e.row_count == 0 || e.row_start >= m.rows || e.row_count > m.rows - e.row_start)
            fail(ErrorCode::RangeOverlap, "media " + e.media_id + " rows [" + std::to_string(e.row_start) + ", " +
                                              std::to_string(e.row_start + e.row_count) + ") exceed the " +
                                              std::to_string(m.rows) + " matrix rows");
        if (e.kind == MediaKind::Image && e.row_count != 1)
            fail(ErrorCode::UnitDimensionMismatch, "image media " + e.media_id + " must span exactly one row");
        ranges.emplace_back(e.row_start, e.row_start + e.row_count);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
        if (ranges[i].first < ranges[i - 1].second)
            fail(ErrorCode::RangeOverlap, "manifest row ranges overlap at row " + std::to_string(ranges[i].first));

    Dataset ds;
    ds.dim = m.dim;
    for (const ManifestEntry& e : entries) {
        MediaRecord r{e.media_id, e.subject_id, e.kind, {}};
        for (std::uint64_t row = e.row_start; row < e.row_start + e.row_count; ++row) {
            const float* src = m.values.data() + row * m.dim;
            r.frames.emplace_back(std::vector<double>(src, src + m.dim));
        }
        ds.media.push_back(std::move(r));
        ds.template_ids.push_back(e.template_id);
    }
    // Enforce template invariants (unique media, one subject) at load time.
    build_templates(ds);
    return ds;
}

/// Writes media rows in dataset order. Values are stored as float32.
inline void save_dataset(const Dataset& ds, const fs::path& manifest_path, const fs::path& matrix_path)
{
    require(ds.media.size() == ds.template_ids.size(), ErrorCode::InvalidArgument,
            "dataset media and template ids differ in length");
    Matrix m{0, static_cast<std::uint32_t>(ds.dim), {}};
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < ds.media.size(); ++i) {
        const MediaRecord& r = ds.media[i];
        entries.push_back({r.media_id, r.subject_id, ds.template_ids[i], r.kind, m.rows, r.frames.size()});
        for (const Embedding& f : r.frames) {
            require(f.dim() == ds.dim, ErrorCode::DimensionMismatch, "media " + r.media_id + " has wrong dimension");
            for (double v : f.values())
                m.values.push_back(static_cast<float>(v));
            ++m.rows;
        }
    }
    write_matrix(matrix_path, m);
    write_manifest(manifest_path, entries);
}

/// Metadata sidecar written next to a classifier file.
inline fs::path sidecar_path(const fs::path& path)
{
    return fs::path(path.string() + ".json");
}

/// Binary weights ("TADC" header, rows = 1, dim = d + 1, float64 little
/// endian) plus a one-line JSON sidecar with the remaining fields.
inline void save_classifier(const AdaptedClassifier& c, const fs::path& path)
{
    const auto& w = c.classifier.weights;
    require(!w.empty() && vec::all_finite(w), ErrorCode::NonFinite, "classifier weights must be finite");
    std::string bytes = detail::header(kClassifierMagic, 1, static_cast<std::uint32_t>(w.size()));
    for (double v : w)
        detail::put_u64(bytes, std::bit_cast<std::uint64_t>(v));
    detail::write_file(path, bytes);

    nlohmann::ordered_json j;
    j["template_id"] = c.template_id;
    j["template_size"] = c.template_size;
    j["negative_source"] = std::string(to_string(c.negative_source));
    j["objective_value"] = c.classifier.objective_value;
    j["solver_iterations"] = c.classifier.solver_iterations;
    detail::write_file(sidecar_path(path), j.dump() + "\n");
}

inline AdaptedClassifier load_classifier(const fs::path& path)
{
    const std::string bytes = detail::read_file(path);
    const auto h = detail::parse_header(bytes, kClassifierMagic, 8, path.string());
    if (h.rows != 1 || h.dim < 2)
        fail(ErrorCode::CorruptHeader, path.string() + ": classifier file must hold one row of d+1 >= 2 weights");
    AdaptedClassifier c;
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderBytes;
    c.classifier.weights.resize(h.dim);
    for (std::size_t i = 0; i < h.dim; ++i)
        c.classifier.weights[i] = std::bit_cast<double>(detail::get_u64(p + 8 * i));

    const auto lines = detail::read_lines(sidecar_path(path));
    if (lines.size() != 1)
        fail(ErrorCode::CorruptHeader, sidecar_path(path).string() + ": expected one JSON line");
    try {
        const auto j = nlohmann::json::parse(lines.front());
        c.template_id = j.at("template_id").get<std::string>();
        c.template_size = j.at("template_size").get<std::size_t>();
        c.negative_source = negative_source_from_string(j.at("negative_source").get<std::string>());
        c.classifier.objective_value = j.at("objective_value").get<double>();
        c.classifier.solver_iterations = j.at("solver_iterations").get<int>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::CorruptHeader, sidecar_path(path).string() + ": " + e.what());
    }
    return c;
}

/// CSV probe_id,reference_id,score,mated sorted by (probe_id, reference_id),
/// scores with 17 significant digits.
inline void export_scores(std::span<const ScoredPair> scores, const fs::path& path)
{
    std::vector<const ScoredPair*> rows;
    for (const ScoredPair& p : scores) {
        require(std::isfinite(p.score), ErrorCode::NonFinite, "cannot export a non-finite score");
        detail::check_csv_field(p.probe_id);
        detail::check_csv_field(p.reference_id);
        rows.push_back(&p);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const ScoredPair* a, const ScoredPair* b) {
        return std::tie(a->probe_id, a->reference_id) < std::tie(b->probe_id, b->reference_id);
    });
    std::string text = "probe_id,reference_id,score,mated\n";
    for (const ScoredPair* p : rows)
        text += p->probe_id + ',' + p->reference_id + ',' + format_real(p->score) + ',' + (p->mated ? "1" : "0") + '\n';
    detail::write_file(path, text);
}

inline void export_scores(const ScoreMatrix& scores, const fs::path& path)
{
    scores.validate();
    export_scores(scores.to_pairs(), path);
}

inline PairScores load_scores(const fs::path& path)
{
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines.front() != "probe_id,reference_id,score,mated")
        fail(ErrorCode::IoError, path.string() + ": missing score file header");
    PairScores out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = detail::split_csv_line(lines[i]);
        if (cells.size() != 4 || (cells[3] != "0" && cells[3] != "1"))
            fail(ErrorCode::IoError, path.string() + ": malformed row " + std::to_string(i + 1));
        out.push_back({cells[0], cells[1], std::stod(cells[2]), cells[3] == "1"});
    }
    return out;
}

inline void write_pairs_csv(std::span<const TemplatePair> pairs, const fs::path& path)
{
    std::string text = "probe_template_id,reference_template_id,mated\n";
    for (const TemplatePair& p : pairs) {
        detail::check_csv_field(p.probe_id);
        detail::check_csv_field(p.reference_id);
        require(p.mated.has_value(), ErrorCode::InvalidArgument, "protocol pairs must carry a mated flag");
        text += p.probe_id + ',' + p.reference_id + ',' + (*p.mated ? "1" : "0") + '\n';
    }
    detail::write_file(path, text);
}

inline std::vector<TemplatePair> read_pairs_csv(const fs::path& path)
{
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines.front() != "probe_template_id,reference_template_id,mated")
        fail(ErrorCode::IoError, path.string() + ": missing pairs header");
    std::vector<TemplatePair> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = detail::split_csv_line(lines[i]);
        if (cells.size() != 3 || (cells[2] != "0" && cells[2] != "1") || cells[0].empty() || cells[1].empty())
            fail(ErrorCode::IoError, path.string() + ": malformed row " + std::to_string(i + 1));
        out.push_back({cells[0], cells[1], cells[2] == "1"});
    }
    return out;
}

inline void write_roles_csv(std::span<const RoleAssignment> roles, const fs::path& path)
{
    std::string text = "template_id,role\n";
    for (const RoleAssignment& r : roles) {
        detail::check_csv_field(r.template_id);
        text += r.template_id + ',' + std::string(to_string(r.role)) + '\n';
    }
    detail::write_file(path, text);
}

inline std::vector<RoleAssignment> read_roles_csv(const fs::path& path)
{
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines.front() != "template_id,role")
        fail(ErrorCode::IoError, path.string() + ": missing search split header");
    std::vector<RoleAssignment> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = detail::split_csv_line(lines[i]);
        if (cells.size() != 2 || cells[0].empty())
            fail(ErrorCode::IoError, path.string() + ": malformed row " + std::to_string(i + 1));
        out.push_back({cells[0], split_role_from_string(cells[1])});
    }
    return out;
}

inline std::string split_dir_name(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "split_%02zu", index + 1);
    return buf;
}

/// Protocol directory: split_01/, split_02/, ... each holding pairs.csv
/// (verification) and search.csv (template roles).
inline void save_protocol(std::span<const SplitProtocol> splits, const fs::path& dir)
{
    for (std::size_t i = 0; i < splits.size(); ++i) {
        const fs::path sub = dir / split_dir_name(i);
        fs::create_directories(sub);
        write_pairs_csv(splits[i].pairs, sub / "pairs.csv");
        write_roles_csv(splits[i].roles, sub / "search.csv");
    }
}

inline std::vector<SplitProtocol> load_protocol(const fs::path& dir)
{
    if (!fs::is_directory(dir))
        fail(ErrorCode::IoError, dir.string() + " is not a protocol directory");
    std::vector<fs::path> subs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory() && entry.path().filename().string().starts_with("split_"))
            subs.push_back(entry.path());
    std::sort(subs.begin(), subs.end());
    if (subs.empty())
        fail(ErrorCode::IoError, dir.string() + " contains no split_* directories");
    std::vector<SplitProtocol> out;
    for (const fs::path& sub : subs)
        out.push_back({read_pairs_csv(sub / "pairs.csv"), read_roles_csv(sub / "search.csv")});
    return out;
}

} // namespace tadapt::io
