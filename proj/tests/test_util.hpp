#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

#include "advkoop/field.hpp"

namespace advkoop::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("advkoop_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

/// Corpus with `length` snapshots of channel-last `shape`; value(t, i) fills element i of snapshot t.
inline SnapshotCorpus make_corpus(std::int64_t length, std::vector<std::int64_t> shape,
                                  const std::function<double(std::int64_t, std::int64_t)>& value,
                                  const std::string& problem = "synthetic", double dx = 1.0)
{
    CorpusMetadata meta;
    meta.problem = problem;
    meta.shape = std::move(shape);
    meta.dt_solver = 1.0;
    meta.dt_koopman = 1.0;
    meta.save_every = 1;
    meta.dx = dx;
    SnapshotCorpus corpus(meta);
    const auto n = corpus.snapshot_size();
    std::vector<float> buf(static_cast<std::size_t>(n));
    for (std::int64_t t = 0; t < length; ++t) {
        for (std::int64_t i = 0; i < n; ++i) {
            buf[static_cast<std::size_t>(i)] = static_cast<float>(value(t, i));
        }
        corpus.append(buf);
    }
    return corpus;
}

/// Random smooth-ish corpus: a travelling wave plus noise.
inline SnapshotCorpus wave_corpus(std::int64_t length, std::int64_t points, std::uint64_t seed = 1)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 0.01);
    return make_corpus(length, {points, 1}, [&](std::int64_t t, std::int64_t i) {
        const double x = 2.0 * 3.141592653589793 * static_cast<double>(i) / static_cast<double>(points);
        return std::sin(x - 0.1 * static_cast<double>(t)) + nd(rng);
    });
}

} // namespace advkoop::testing
