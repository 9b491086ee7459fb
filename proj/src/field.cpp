#include "advkoop/field.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace advkoop {

bool FieldSnapshot::all_finite() const
{
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::int64_t CorpusMetadata::snapshot_size() const
{
    if (shape.empty()) {
        return 0;
    }
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

SnapshotCorpus::SnapshotCorpus(CorpusMetadata meta) : meta_(std::move(meta)) {}

void SnapshotCorpus::append(const FieldSnapshot& snap)
{
    if (snap.shape != meta_.shape) {
        throw std::invalid_argument("snapshot shape does not match corpus shape");
    }
    std::vector<float> tmp(snap.values.begin(), snap.values.end());
    append(tmp, false);
}

void SnapshotCorpus::append(std::span<const float> values, bool missing)
{
    if (static_cast<std::int64_t>(values.size()) != snapshot_size()) {
        throw std::invalid_argument("snapshot size does not match corpus shape");
    }
    if (missing) {
        data_.insert(data_.end(), values.size(), 0.0f);
    } else {
        data_.insert(data_.end(), values.begin(), values.end());
    }
    mask_.push_back(missing ? 1 : 0);
}

std::span<const float> SnapshotCorpus::view(std::int64_t i) const
{
    if (i < 0 || i >= size()) {
        throw std::out_of_range("snapshot index out of range");
    }
    const auto n = static_cast<std::size_t>(snapshot_size());
    return {data_.data() + static_cast<std::size_t>(i) * n, n};
}

std::span<float> SnapshotCorpus::view(std::int64_t i)
{
    if (i < 0 || i >= size()) {
        throw std::out_of_range("snapshot index out of range");
    }
    const auto n = static_cast<std::size_t>(snapshot_size());
    return {data_.data() + static_cast<std::size_t>(i) * n, n};
}

FieldSnapshot SnapshotCorpus::snapshot(std::int64_t i) const
{
    auto v = view(i);
    FieldSnapshot s;
    s.values.assign(v.begin(), v.end());
    s.shape = meta_.shape;
    s.time_index = i;
    s.channels = meta_.channels();
    return s;
}

void SnapshotCorpus::set_missing(std::int64_t i, bool missing)
{
    auto v = view(i);
    if (missing) {
        std::fill(v.begin(), v.end(), 0.0f);
    }
    mask_[static_cast<std::size_t>(i)] = missing ? 1 : 0;
}

std::int64_t SnapshotCorpus::missing_count() const
{
    return std::count_if(mask_.begin(), mask_.end(), [](std::uint8_t m) { return m != 0; });
}

std::vector<std::int64_t> SnapshotCorpus::missing_indices() const
{
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < mask_.size(); ++i) {
        if (mask_[i]) {
            out.push_back(static_cast<std::int64_t>(i));
        }
    }
    return out;
}

bool SnapshotCorpus::operator==(const SnapshotCorpus& other) const
{
    // Bitwise comparison of the payload so that NaN entries compare equal to themselves.
    if (data_.size() != other.data_.size()) {
        return false;
    }
    const bool same_bits = std::equal(data_.begin(), data_.end(), other.data_.begin(),
                                      [](float a, float b) {
                                          return std::bit_cast<std::uint32_t>(a) ==
                                                 std::bit_cast<std::uint32_t>(b);
                                      });
    return same_bits && mask_ == other.mask_ && to_json(meta_) == to_json(other.meta_);
}

nlohmann::json to_json(const CorpusMetadata& meta)
{
    return nlohmann::json{
        {"format_version", meta.format_version},
        {"problem", meta.problem},
        {"shape", meta.shape},
        {"dt_solver", meta.dt_solver},
        {"dt_koopman", meta.dt_koopman},
        {"save_every", meta.save_every},
        {"dx", meta.dx},
        {"rng_seed", meta.rng_seed},
        {"config", meta.config},
    };
}

CorpusMetadata metadata_from_json(const nlohmann::json& j)
{
    CorpusMetadata m;
    m.format_version = j.at("format_version").get<int>();
    m.problem = j.at("problem").get<std::string>();
    m.shape = j.at("shape").get<std::vector<std::int64_t>>();
    m.dt_solver = j.at("dt_solver").get<double>();
    m.dt_koopman = j.at("dt_koopman").get<double>();
    m.save_every = j.at("save_every").get<int>();
    m.dx = j.at("dx").get<double>();
    m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    m.config = j.value("config", nlohmann::json::object());
    return m;
}

} // namespace advkoop
