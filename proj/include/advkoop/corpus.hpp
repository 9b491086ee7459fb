#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "advkoop/field.hpp"

namespace advkoop {

/// Writes `path` (raw little-endian float32 snapshots followed by one mask
/// byte per snapshot) and the metadata sidecar `path + ".json"`.
void save_corpus(const SnapshotCorpus& corpus, const std::filesystem::path& path);
SnapshotCorpus load_corpus(const std::filesystem::path& path);

std::filesystem::path corpus_sidecar_path(const std::filesystem::path& path);

/// n_S + 1 contiguous snapshots x_t .. x_{t+n_S}.
struct SequenceSample {
    std::int64_t start_index = 0;
    std::int64_t length = 0;          // n_S + 1
    std::vector<float> x_seq;         // length * snapshot_size, snapshot-major
    std::vector<std::uint8_t> mask_seq;
};

SequenceSample extract_sequence(const SnapshotCorpus& corpus, std::int64_t start, std::int64_t n_s);

/// Uniform start index in [0, size - n_s - 1].
SequenceSample sample_sequence(const SnapshotCorpus& corpus, std::int64_t n_s, std::mt19937_64& rng);

using IndexPredicate = std::function<bool(std::int64_t)>;

/// Masks floor(fraction * |region|) snapshots drawn uniformly without
/// replacement from the indices satisfying `region`.
SnapshotCorpus apply_missing_policy(const SnapshotCorpus& corpus, double fraction,
                                    const IndexPredicate& region, std::uint64_t rng_seed);

/// Masks exactly the listed indices.
SnapshotCorpus apply_missing_indices(const SnapshotCorpus& corpus, std::span<const std::int64_t> indices);

/// Per-channel affine standardization x -> (x - mean) / stddev.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;

    static Normalization identity(int channels);
    bool is_identity() const;
    void apply(std::span<float> values) const;
    void invert(std::span<float> values) const;
};

/// Statistics over unmasked snapshots only.
Normalization compute_normalization(const SnapshotCorpus& corpus);

nlohmann::json to_json(const Normalization& n);
Normalization normalization_from_json(const nlohmann::json& j);

} // namespace advkoop
