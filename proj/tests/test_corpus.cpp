#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "advkoop/corpus.hpp"
#include "advkoop/errors.hpp"
#include "advkoop/solvers.hpp"
#include "test_util.hpp"

using namespace advkoop;
using advkoop::testing::make_corpus;
using advkoop::testing::TempDir;

namespace {

SnapshotCorpus counting_corpus(std::int64_t length, std::vector<std::int64_t> shape = {4, 1})
{
    return make_corpus(length, std::move(shape), [](std::int64_t t, std::int64_t i) { return t + 0.25 * i + 1; });
}

bool bit_identical(const SnapshotCorpus& a, const SnapshotCorpus& b)
{
    return a.data().size() == b.data().size() &&
           std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0 &&
           a.mask() == b.mask() && to_json(a.metadata()) == to_json(b.metadata());
}

} // namespace

TEST_CASE("round trip of the default ks corpus is bit identical")
{
    TempDir dir;
    const auto corpus = generate_ks_corpus(KSConfig{});
    REQUIRE(corpus.size() == 1200);
    save_corpus(corpus, dir / "ks.bin");
    const auto back = load_corpus(dir / "ks.bin");
    CHECK(bit_identical(corpus, back));
    CHECK(back == corpus);
}

TEST_CASE("mask survives a round trip")
{
    TempDir dir;
    const std::vector<std::int64_t> idx{36, 50, 61, 71, 87, 102};
    const auto masked = apply_missing_indices(counting_corpus(120), idx);
    save_corpus(masked, dir / "m.bin");
    const auto back = load_corpus(dir / "m.bin");
    CHECK(back.missing_indices() == idx);
    CHECK(bit_identical(masked, back));
}

TEST_CASE("corrupt files are rejected")
{
    TempDir dir;
    const auto corpus = counting_corpus(10);
    save_corpus(corpus, dir / "c.bin");

    SUBCASE("truncated payload")
    {
        std::filesystem::resize_file(dir / "c.bin", std::filesystem::file_size(dir / "c.bin") - 3);
        CHECK_THROWS_AS(load_corpus(dir / "c.bin"), CorruptCorpus);
    }
    SUBCASE("version mismatch")
    {
        nlohmann::json j;
        std::ifstream(corpus_sidecar_path(dir / "c.bin")) >> j;
        j["format_version"] = 99;
        std::ofstream(corpus_sidecar_path(dir / "c.bin")) << j.dump();
        CHECK_THROWS_AS(load_corpus(dir / "c.bin"), FormatVersionMismatch);
    }
    SUBCASE("inconsistent shape")
    {
        nlohmann::json j;
        std::ifstream(corpus_sidecar_path(dir / "c.bin")) >> j;
        j["shape"] = {5, 1};
        std::ofstream(corpus_sidecar_path(dir / "c.bin")) << j.dump();
        CHECK_THROWS_AS(load_corpus(dir / "c.bin"), CorruptCorpus);
    }
    SUBCASE("missing file")
    {
        CHECK_THROWS(load_corpus(dir / "absent.bin"));
    }
}

TEST_CASE("sequence sampling windows")
{
    std::mt19937_64 rng(42);
    SUBCASE("ks sized corpus")
    {
        const auto corpus = counting_corpus(1200);
        std::int64_t lo = 1 << 30;
        std::int64_t hi = -1;
        for (int i = 0; i < 20000; ++i) {
            const auto s = sample_sequence(corpus, 64, rng);
            REQUIRE(s.length == 65);
            REQUIRE(s.x_seq.size() == 65 * 4);
            REQUIRE(s.x_seq.front() == static_cast<float>(s.start_index + 1));
            lo = std::min(lo, s.start_index);
            hi = std::max(hi, s.start_index);
        }
        CHECK(lo == 0);
        CHECK(hi == 1135);
    }
    SUBCASE("gs sized corpus")
    {
        const auto corpus = counting_corpus(120);
        std::int64_t hi = -1;
        for (int i = 0; i < 5000; ++i) {
            const auto s = sample_sequence(corpus, 32, rng);
            REQUIRE(s.length == 33);
            hi = std::max(hi, s.start_index);
        }
        CHECK(hi == 87);
    }
    SUBCASE("single valid window")
    {
        const auto corpus = counting_corpus(9);
        for (int i = 0; i < 50; ++i) {
            REQUIRE(sample_sequence(corpus, 8, rng).start_index == 0);
        }
        CHECK_THROWS_AS(sample_sequence(corpus, 9, rng), CorpusTooShort);
    }
    SUBCASE("fixed seed is deterministic")
    {
        const auto corpus = counting_corpus(100);
        std::mt19937_64 a(7);
        std::mt19937_64 b(7);
        for (int i = 0; i < 100; ++i) {
            REQUIRE(sample_sequence(corpus, 10, a).start_index == sample_sequence(corpus, 10, b).start_index);
        }
    }
}

TEST_CASE("missing policy")
{
    SUBCASE("ks late region")
    {
        const auto corpus = counting_corpus(1200);
        const auto masked = apply_missing_policy(corpus, 0.1, [](std::int64_t t) { return t > 1000; }, 3);
        CHECK(masked.missing_count() == 19); // floor(0.1 * 199)
        for (auto t : masked.missing_indices()) {
            REQUIRE(t > 1000);
        }
        for (std::int64_t t = 0; t < masked.size(); ++t) {
            const auto v = masked.view(t);
            const auto o = corpus.view(t);
            for (std::size_t i = 0; i < v.size(); ++i) {
                REQUIRE(v[i] == (masked.is_missing(t) ? 0.0f : o[i]));
            }
        }
    }
    SUBCASE("gs five percent")
    {
        const auto masked = apply_missing_policy(counting_corpus(120), 0.05, [](std::int64_t) { return true; }, 1);
        CHECK(masked.missing_count() == 6);
        const auto again = apply_missing_policy(counting_corpus(120), 0.05, [](std::int64_t) { return true; }, 1);
        CHECK(masked.missing_indices() == again.missing_indices());
    }
    SUBCASE("zero fraction is a no-op")
    {
        const auto corpus = counting_corpus(50);
        const auto same = apply_missing_policy(corpus, 0.0, [](std::int64_t) { return false; }, 1);
        CHECK(same == corpus);
        CHECK(same.missing_count() == 0);
    }
    SUBCASE("errors")
    {
        const auto corpus = counting_corpus(50);
        CHECK_THROWS_AS(apply_missing_policy(corpus, 0.1, [](std::int64_t) { return false; }, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS(apply_missing_policy(corpus, 1.5, [](std::int64_t) { return true; }, 1),
                        std::invalid_argument);
    }
}

TEST_CASE("normalization ignores masked snapshots")
{
    // Two channels; masked snapshots would pull the mean towards zero.
    auto corpus = make_corpus(20, {3, 2}, [](std::int64_t t, std::int64_t i) {
        return i % 2 == 0 ? 5.0 + (t % 2) : -2.0 + 3.0 * (t % 2);
    });
    const std::vector<std::int64_t> idx{2, 3, 4, 5};
    const auto masked = apply_missing_indices(corpus, idx);
    const auto n = compute_normalization(masked);
    REQUIRE(n.mean.size() == 2);
    CHECK(n.mean[0] == doctest::Approx(5.5));
    CHECK(n.mean[1] == doctest::Approx(-0.5));
    CHECK(n.stddev[0] == doctest::Approx(0.5));
    CHECK(n.stddev[1] == doctest::Approx(1.5));

    std::vector<float> v{5.0f, 1.0f, 6.0f, -2.0f};
    n.apply(v);
    CHECK(v[0] == doctest::Approx(-1.0));
    CHECK(v[1] == doctest::Approx(1.0));
    n.invert(v);
    CHECK(v[2] == doctest::Approx(6.0));
    CHECK(v[3] == doctest::Approx(-2.0));

    const auto j = to_json(n);
    const auto back = normalization_from_json(j);
    CHECK(back.mean == n.mean);
    CHECK(back.stddev == n.stddev);
    CHECK(Normalization::identity(2).is_identity());
}
