#include "advkoop/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "advkoop/errors.hpp"

namespace advkoop {

namespace fs = std::filesystem;

fs::path corpus_sidecar_path(const fs::path& path)
{
    return fs::path(path.string() + ".json");
}

namespace {

std::uint32_t to_little_endian(std::uint32_t v)
{
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

} // namespace

void save_corpus(const SnapshotCorpus& corpus, const fs::path& path)
{
    const auto& data = corpus.data();
    const auto& mask = corpus.mask();
    if (static_cast<std::int64_t>(data.size()) != corpus.size() * corpus.snapshot_size()) {
        throw std::invalid_argument("save_corpus: payload size inconsistent with shape");
    }
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open corpus file for writing: " + path.string());
        }
        std::vector<std::uint32_t> words(data.size());
        std::transform(data.begin(), data.end(), words.begin(),
                       [](float f) { return to_little_endian(std::bit_cast<std::uint32_t>(f)); });
        out.write(reinterpret_cast<const char*>(words.data()),
                  static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
        out.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
        if (!out) {
            throw std::runtime_error("I/O failure writing corpus: " + path.string());
        }
    }
    auto meta = to_json(corpus.metadata());
    meta["n_snapshots"] = corpus.size();
    meta["data_bytes"] = data.size() * sizeof(float);
    meta["mask_length"] = mask.size();
    std::ofstream side(corpus_sidecar_path(path), std::ios::trunc);
    if (!side) {
        throw std::runtime_error("cannot open corpus metadata for writing: " + corpus_sidecar_path(path).string());
    }
    side << meta.dump(2) << '\n';
}

SnapshotCorpus load_corpus(const fs::path& path)
{
    std::ifstream side(corpus_sidecar_path(path));
    if (!side) {
        throw std::runtime_error("cannot open corpus metadata: " + corpus_sidecar_path(path).string());
    }
    nlohmann::json j;
    try {
        side >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCorpus(std::string("unreadable corpus metadata: ") + e.what());
    }
    const int version = j.value("format_version", -1);
    if (version != kCorpusFormatVersion) {
        throw FormatVersionMismatch("corpus format version " + std::to_string(version) + ", expected " +
                                    std::to_string(kCorpusFormatVersion));
    }
    CorpusMetadata meta;
    std::int64_t n = 0;
    std::uint64_t data_bytes = 0;
    std::uint64_t mask_length = 0;
    try {
        meta = metadata_from_json(j);
        n = j.at("n_snapshots").get<std::int64_t>();
        data_bytes = j.at("data_bytes").get<std::uint64_t>();
        mask_length = j.at("mask_length").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCorpus(std::string("incomplete corpus metadata: ") + e.what());
    }
    if (n < 0 || static_cast<std::uint64_t>(n) != mask_length ||
        data_bytes != static_cast<std::uint64_t>(n * meta.snapshot_size()) * sizeof(float)) {
        throw CorruptCorpus("corpus metadata is inconsistent with its shape");
    }

    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open corpus file: " + path.string());
    }
    const auto file_size = fs::file_size(path);
    if (file_size != data_bytes + mask_length) {
        throw CorruptCorpus("corpus file has " + std::to_string(file_size) + " bytes, expected " +
                            std::to_string(data_bytes + mask_length));
    }
    SnapshotCorpus corpus(meta);
    std::vector<std::uint32_t> words(data_bytes / sizeof(float));
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(data_bytes));
    auto& data = corpus.data();
    data.resize(words.size());
    std::transform(words.begin(), words.end(), data.begin(),
                   [](std::uint32_t w) { return std::bit_cast<float>(to_little_endian(w)); });
    auto& mask = corpus.mask();
    mask.resize(mask_length);
    in.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask_length));
    if (!in) {
        throw CorruptCorpus("short read on corpus file: " + path.string());
    }
    return corpus;
}

SequenceSample extract_sequence(const SnapshotCorpus& corpus, std::int64_t start, std::int64_t n_s)
{
    if (n_s < 1) {
        throw std::invalid_argument("sequence length n_S must be >= 1");
    }
    if (start < 0 || start + n_s >= corpus.size()) {
        throw CorpusTooShort("window [" + std::to_string(start) + ", " + std::to_string(start + n_s) +
                             "] exceeds corpus of length " + std::to_string(corpus.size()));
    }
    SequenceSample s;
    s.start_index = start;
    s.length = n_s + 1;
    const auto sz = static_cast<std::size_t>(corpus.snapshot_size());
    const auto first = corpus.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(start) * sz);
    s.x_seq.assign(first, first + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(s.length) * sz));
    s.mask_seq.assign(corpus.mask().begin() + start, corpus.mask().begin() + start + s.length);
    return s;
}

SequenceSample sample_sequence(const SnapshotCorpus& corpus, std::int64_t n_s, std::mt19937_64& rng)
{
    if (corpus.size() < n_s + 1) {
        throw CorpusTooShort("corpus of length " + std::to_string(corpus.size()) +
                             " is too short for n_S = " + std::to_string(n_s));
    }
    std::uniform_int_distribution<std::int64_t> pick(0, corpus.size() - n_s - 1);
    return extract_sequence(corpus, pick(rng), n_s);
}

SnapshotCorpus apply_missing_policy(const SnapshotCorpus& corpus, double fraction, const IndexPredicate& region,
                                    std::uint64_t rng_seed)
{
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("missing fraction must lie in [0, 1]");
    }
    std::vector<std::int64_t> eligible;
    for (std::int64_t i = 0; i < corpus.size(); ++i) {
        if (!region || region(i)) {
            eligible.push_back(i);
        }
    }
    if (eligible.empty() && fraction > 0.0) {
        throw std::invalid_argument("missing-data region is empty");
    }
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(eligible.size())));
    // Partial Fisher-Yates: the first `count` entries become a uniform draw without replacement.
    std::mt19937_64 rng(rng_seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
        std::swap(eligible[i], eligible[pick(rng)]);
    }
    std::vector<std::int64_t> chosen(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(count));
    return apply_missing_indices(corpus, chosen);
}

SnapshotCorpus apply_missing_indices(const SnapshotCorpus& corpus, std::span<const std::int64_t> indices)
{
    SnapshotCorpus out = corpus;
    for (auto i : indices) {
        out.set_missing(i, true);
    }
    return out;
}

Normalization Normalization::identity(int channels)
{
    return {std::vector<double>(static_cast<std::size_t>(channels), 0.0),
            std::vector<double>(static_cast<std::size_t>(channels), 1.0)};
}

bool Normalization::is_identity() const
{
    return std::all_of(mean.begin(), mean.end(), [](double m) { return m == 0.0; }) &&
           std::all_of(stddev.begin(), stddev.end(), [](double s) { return s == 1.0; });
}

void Normalization::apply(std::span<float> values) const
{
    const auto c = mean.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = static_cast<float>((values[i] - mean[i % c]) / stddev[i % c]);
    }
}

void Normalization::invert(std::span<float> values) const
{
    const auto c = mean.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = static_cast<float>(values[i] * stddev[i % c] + mean[i % c]);
    }
}

Normalization compute_normalization(const SnapshotCorpus& corpus)
{
    const auto c = static_cast<std::size_t>(corpus.metadata().channels());
    std::vector<double> sum(c, 0.0);
    std::vector<double> sum_sq(c, 0.0);
    std::vector<double> count(c, 0.0);
    for (std::int64_t t = 0; t < corpus.size(); ++t) {
        if (corpus.is_missing(t)) {
            continue;
        }
        auto v = corpus.view(t);
        for (std::size_t i = 0; i < v.size(); ++i) {
            sum[i % c] += v[i];
            sum_sq[i % c] += static_cast<double>(v[i]) * v[i];
            count[i % c] += 1.0;
        }
    }
    Normalization n = Normalization::identity(static_cast<int>(c));
    for (std::size_t k = 0; k < c; ++k) {
        if (count[k] == 0.0) {
            continue;
        }
        n.mean[k] = sum[k] / count[k];
        const double var = std::max(0.0, sum_sq[k] / count[k] - n.mean[k] * n.mean[k]);
        n.stddev[k] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return n;
}

nlohmann::json to_json(const Normalization& n)
{
    return {{"mean", n.mean}, {"stddev", n.stddev}};
}

Normalization normalization_from_json(const nlohmann::json& j)
{
    return {j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>()};
}

} // namespace advkoop
