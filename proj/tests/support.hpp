#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "tadapt/core.hpp"

namespace tadapt::testing {

inline Embedding emb(std::vector<double> v) { return Embedding(std::move(v)); }

inline MediaEncoding unit_media(std::string id, std::vector<double> v)
{
    return MediaEncoding{std::move(id), unit_normalize(std::move(v))};
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t d, double sigma = 1.0)
{
    std::normal_distribution<double> n(0.0, sigma);
    std::vector<double> v(d);
    for (double& x : v)
        x = n(rng);
    return v;
}

inline Embedding random_unit(std::mt19937_64& rng, std::size_t d) { return unit_normalize(random_vector(rng, d)); }

/// Template of `n` media scattered around `centre`.
inline Template noisy_template(std::mt19937_64& rng, const std::string& id, const std::string& subject,
                               const std::vector<double>& centre, std::size_t n, double sigma)
{
    std::vector<MediaEncoding> media;
    for (std::size_t i = 0; i < n; ++i) {
        auto v = random_vector(rng, centre.size(), sigma);
        for (std::size_t k = 0; k < v.size(); ++k)
            v[k] += centre[k];
        media.push_back(unit_media(id + "_m" + std::to_string(i), std::move(v)));
    }
    return Template(id, subject, std::move(media));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("tadapt_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace tadapt::testing
