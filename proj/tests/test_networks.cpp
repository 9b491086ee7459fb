#include "torch_doctest.hpp"

#include "advkoop/networks.hpp"
#include "model_util.hpp"

using namespace advkoop;
using advkoop::testing::tiny_config;

namespace {

double max_rel(const torch::Tensor& a, const torch::Tensor& b)
{
    return ((a - b).abs().max() / b.abs().max().clamp_min(1e-12)).item<double>();
}

} // namespace

TEST_CASE("model config arithmetic")
{
    const auto ks = ModelConfig::ks_default();
    CHECK(ks.encoder_widths() == std::vector<int>{64, 128, 256, 512, 512});
    CHECK(ks.bottleneck_extent() == std::vector<std::int64_t>{32});
    CHECK(ks.flat_features() == 32 * 512);
    CHECK(ks.critic_in_channels() == 128);

    const auto gs = ModelConfig::gs_default();
    CHECK(gs.bottleneck_extent() == std::vector<std::int64_t>{4, 4});
    CHECK(gs.flat_features() == 8192);
    CHECK(gs.critic_in_channels() == 2 * 32 * 2);
    CHECK(gs.sigmoid_output);

    auto bad = ks;
    bad.extent = {1000};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ks;
    bad.latent_dim = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    const auto back = model_config_from_json(to_json(gs));
    CHECK(to_json(back) == to_json(gs));
}

TEST_CASE("ks full-width shapes")
{
    torch::NoGradGuard guard;
    KoopmanModel model(ModelConfig::ks_default());
    const auto x = torch::randn({2, 1, 1024});
    const auto z = model.encoder->forward(x, Mode::eval);
    CHECK(z.sizes() == torch::IntArrayRef{2, 64});
    const auto y = model.decoder->forward(z, Mode::eval);
    CHECK(y.sizes() == torch::IntArrayRef{2, 1, 1024});
    const auto k = model.aux->forward(z, Mode::eval);
    CHECK(k.sizes() == torch::IntArrayRef{2, 64, 64});
    const auto pair = make_pair(torch::randn({64, 1, 1024}), torch::randn({64, 1, 1024}));
    CHECK(pair.sizes() == torch::IntArrayRef{1, 128, 1024});
    const auto d = model.critic->forward(pair, Mode::eval);
    CHECK(d.numel() == 1);
}

TEST_CASE("gs full-width shapes and bounded output")
{
    torch::NoGradGuard guard;
    KoopmanModel model(ModelConfig::gs_default());
    const auto x = torch::rand({1, 2, 128, 128});
    const auto z = model.encoder->forward(x, Mode::eval);
    CHECK(z.sizes() == torch::IntArrayRef{1, 64});
    const auto y = model.decoder->forward(z * 100, Mode::eval);
    CHECK(y.sizes() == torch::IntArrayRef{1, 2, 128, 128});
    CHECK(y.min().item<double>() >= 0.0);
    CHECK(y.max().item<double>() <= 1.0);
}

TEST_CASE("ks decoder output is unbounded")
{
    torch::NoGradGuard guard;
    auto cfg = tiny_config();
    KoopmanModel model(cfg);
    const auto y = model.decoder->forward(torch::full({1, 4}, 1e3), Mode::eval);
    CHECK(y.abs().max().item<double>() > 1.0);
}

TEST_CASE("construction is a pure function of the config")
{
    auto cfg = tiny_config();
    KoopmanModel a(cfg);
    KoopmanModel b(cfg);
    const auto na = a.named_arrays();
    const auto nb = b.named_arrays();
    REQUIRE(na.size() == nb.size());
    for (std::size_t i = 0; i < na.size(); ++i) {
        CHECK(na[i].first == nb[i].first);
        CHECK(torch::equal(na[i].second, nb[i].second));
    }
    CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("eval mode is deterministic and batch consistent")
{
    torch::NoGradGuard guard;
    auto cfg = tiny_config(2, 4, 64);
    cfg.base_filters = 4;
    KoopmanModel model(cfg);
    testing::force_aux(model, torch::randn({4, 4}) * 0.1);
    // give the output layer nonzero weights so K depends on z
    model.aux->output_layer()->weight.normal_(0.0, 0.1);
    // populate running statistics
    for (int i = 0; i < 3; ++i) {
        model.encoder->forward(torch::randn({4, 1, 64}), Mode::train);
    }
    const auto x = torch::randn({3, 1, 64});
    const auto z_batch = model.encoder->forward(x, Mode::eval);
    const auto z_again = model.encoder->forward(x, Mode::eval);
    CHECK(torch::equal(z_batch, z_again));
    for (int i = 0; i < 3; ++i) {
        const auto zi = model.encoder->forward(x.narrow(0, i, 1), Mode::eval);
        CHECK(max_rel(zi, z_batch.narrow(0, i, 1)) <= 1e-5);
    }
    const auto y = model.decoder->forward(z_batch, Mode::eval);
    for (int i = 0; i < 3; ++i) {
        CHECK(max_rel(model.decoder->forward(z_batch.narrow(0, i, 1), Mode::eval), y.narrow(0, i, 1)) <= 1e-5);
    }
    const auto k1 = model.aux->forward(z_batch, Mode::eval);
    const auto k2 = model.aux->forward(z_batch, Mode::eval);
    CHECK(torch::equal(k1, k2));
}

TEST_CASE("aux dropout is stochastic in train mode")
{
    torch::NoGradGuard guard;
    KoopmanModel model(tiny_config());
    model.aux->output_layer()->weight.normal_(0.0, 0.5);
    const auto z = torch::randn({1, 4});
    const auto a = model.aux->forward(z, Mode::train);
    const auto b = model.aux->forward(z, Mode::train);
    CHECK_FALSE(torch::equal(a, b));
}

TEST_CASE("zero-initialised aux output gives identity dynamics at start")
{
    torch::NoGradGuard guard;
    KoopmanModel model(tiny_config());
    const auto k = model.aux->forward(torch::randn({5, 4}), Mode::train);
    CHECK(k.abs().max().item<double>() == 0.0);
}

TEST_CASE("critic sees identical pairs identically")
{
    torch::NoGradGuard guard;
    KoopmanModel model(tiny_config());
    const auto x = torch::randn({2, 1, 8});
    const auto y = torch::randn({2, 1, 8});
    const auto real = make_pair(x, y);
    const auto fake = make_pair(x, y.clone());
    CHECK(real.sizes() == torch::IntArrayRef{1, 4, 8});
    const auto d = model.critic->forward(torch::cat({real, fake}), Mode::train);
    CHECK(d.sizes() == torch::IntArrayRef{2});
    CHECK(d[0].item<double>() == d[1].item<double>());
}

TEST_CASE("batch norm statistics per mode")
{
    torch::NoGradGuard guard;
    KoopmanModel model(tiny_config());
    auto running = [&] {
        for (const auto& [name, t] : model.named_arrays()) {
            if (name.find("running_mean") != std::string::npos) {
                return t.clone();
            }
        }
        return torch::Tensor{};
    };
    const auto before = running();
    REQUIRE(before.defined());
    model.encoder->forward(torch::randn({4, 1, 8}) + 3.0, Mode::train_fixed_stats);
    CHECK(torch::equal(before, running()));
    model.encoder->forward(torch::randn({4, 1, 8}) + 3.0, Mode::eval);
    CHECK(torch::equal(before, running()));
    model.encoder->forward(torch::randn({4, 1, 8}) + 3.0, Mode::train);
    CHECK_FALSE(torch::equal(before, running()));
}

TEST_CASE("regularized weights exclude biases and normalization parameters")
{
    KoopmanModel model(tiny_config());
    const auto weights = model.regularized_weights();
    std::int64_t n = 0;
    for (const auto& w : weights) {
        n += w.numel();
        CHECK(w.dim() >= 2);
    }
    std::int64_t expected = 0;
    for (const auto& [name, t] : model.named_arrays()) {
        const bool generator = name.rfind("critic.", 0) != 0;
        const bool kernel = name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
        if (generator && kernel) {
            expected += t.numel();
        }
    }
    CHECK(n == expected);
}

TEST_CASE("layout helpers")
{
    const auto cl = torch::arange(24, torch::kFloat32).reshape({2, 3, 2, 2});
    const auto nl = to_network_layout(cl);
    CHECK(nl.sizes() == torch::IntArrayRef{2, 2, 3, 2});
    CHECK(torch::equal(to_channel_last(nl), cl));
    CHECK(nl[1][0][2][1].item<float>() == cl[1][2][1][0].item<float>());
    const auto folded = fold_time(torch::randn({3, 2, 8}));
    CHECK(folded.sizes() == torch::IntArrayRef{1, 6, 8});
}
