#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace advkoop {

/// One solver state at one saved time index. Values are stored channel-last:
/// shape {n_points, 1} for 1D fields, {ny, nx, channels} for 2D fields.
struct FieldSnapshot {
    std::vector<double> values;
    std::vector<std::int64_t> shape;
    std::int64_t time_index = 0;
    int channels = 1;

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    bool all_finite() const;
};

inline constexpr int kCorpusFormatVersion = 1;

struct CorpusMetadata {
    std::string problem;                 // "ks", "gs" or free-form for synthetic data
    std::vector<std::int64_t> shape;     // per-snapshot shape, channel-last
    double dt_solver = 0.0;
    double dt_koopman = 0.0;
    int save_every = 1;
    double dx = 1.0;                     // grid spacing used by derivative stencils
    std::uint64_t rng_seed = 0;
    nlohmann::json config = nlohmann::json::object();
    int format_version = kCorpusFormatVersion;

    std::int64_t snapshot_size() const;
    int channels() const { return shape.empty() ? 0 : static_cast<int>(shape.back()); }
    int spatial_rank() const { return static_cast<int>(shape.size()) - 1; }
};

/// Ordered snapshot sequence. Snapshots are held contiguously as float32,
/// which is also the on-disk precision. mask[i] != 0 marks a missing snapshot;
/// missing snapshots are stored as zeros.
class SnapshotCorpus {
public:
    SnapshotCorpus() = default;
    explicit SnapshotCorpus(CorpusMetadata meta);

    const CorpusMetadata& metadata() const { return meta_; }
    CorpusMetadata& metadata() { return meta_; }

    std::int64_t size() const { return static_cast<std::int64_t>(mask_.size()); }
    std::int64_t snapshot_size() const { return meta_.snapshot_size(); }

    void append(const FieldSnapshot& snap);
    void append(std::span<const float> values, bool missing = false);

    std::span<const float> view(std::int64_t i) const;
    std::span<float> view(std::int64_t i);
    FieldSnapshot snapshot(std::int64_t i) const;

    bool is_missing(std::int64_t i) const { return mask_.at(static_cast<std::size_t>(i)) != 0; }
    void set_missing(std::int64_t i, bool missing);
    std::int64_t missing_count() const;
    std::vector<std::int64_t> missing_indices() const;

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }
    const std::vector<std::uint8_t>& mask() const { return mask_; }
    std::vector<std::uint8_t>& mask() { return mask_; }

    bool operator==(const SnapshotCorpus& other) const;

private:
    CorpusMetadata meta_;
    std::vector<float> data_;
    std::vector<std::uint8_t> mask_;
};

nlohmann::json to_json(const CorpusMetadata& meta);
CorpusMetadata metadata_from_json(const nlohmann::json& j);

} // namespace advkoop
