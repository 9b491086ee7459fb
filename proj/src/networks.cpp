#include "advkoop/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <stdexcept>

#include "advkoop/errors.hpp"

namespace advkoop {

ModelConfig ModelConfig::ks_default()
{
    ModelConfig c;
    c.spatial_rank = 1;
    c.in_channels = 1;
    c.extent = {1024};
    c.sequence_length = 64;
    c.sigmoid_output = false;
    return c;
}

ModelConfig ModelConfig::gs_default()
{
    ModelConfig c;
    c.spatial_rank = 2;
    c.in_channels = 2;
    c.extent = {128, 128};
    c.sequence_length = 32;
    c.sigmoid_output = true;
    return c;
}

void ModelConfig::validate() const
{
    if (latent_dim < 1) {
        throw std::invalid_argument("ModelConfig: latent_dim must be >= 1");
    }
    if (spatial_rank != 1 && spatial_rank != 2) {
        throw std::invalid_argument("ModelConfig: spatial_rank must be 1 or 2");
    }
    if (static_cast<int>(extent.size()) != spatial_rank) {
        throw std::invalid_argument("ModelConfig: extent must have one entry per spatial axis");
    }
    for (auto e : extent) {
        if (e <= 0 || (e >= 32 && e % 32 != 0) || (e < 32 && (32 % e != 0))) {
            // Extents below 32 (tiny test models) must divide 32 so the decoder can crop back.
            throw std::invalid_argument("ModelConfig: extent must be divisible by 2^5");
        }
    }
    if (in_channels < 1 || base_filters < 2 || sequence_length < 1) {
        throw std::invalid_argument("ModelConfig: channels, base_filters and sequence_length must be positive");
    }
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
        throw std::invalid_argument("ModelConfig: dropout_keep must lie in (0, 1]");
    }
}

std::vector<int> ModelConfig::encoder_widths() const
{
    return {base_filters, 2 * base_filters, 4 * base_filters, 8 * base_filters, 8 * base_filters};
}

std::vector<int> ModelConfig::critic_widths() const
{
    return {base_filters, 2 * base_filters, 4 * base_filters, 8 * base_filters};
}

std::vector<std::int64_t> ModelConfig::bottleneck_extent() const
{
    std::vector<std::int64_t> out;
    for (auto e : extent) {
        out.push_back(std::max<std::int64_t>(1, e / 32));
    }
    return out;
}

std::int64_t ModelConfig::flat_features() const
{
    std::int64_t n = encoder_widths().back();
    for (auto e : bottleneck_extent()) {
        n *= e;
    }
    return n;
}

nlohmann::json to_json(const ModelConfig& c)
{
    return {{"latent_dim", c.latent_dim},     {"spatial_rank", c.spatial_rank},
            {"in_channels", c.in_channels},   {"extent", c.extent},
            {"dropout_keep", c.dropout_keep}, {"base_filters", c.base_filters},
            {"sequence_length", c.sequence_length}, {"sigmoid_output", c.sigmoid_output},
            {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j)
{
    ModelConfig c;
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.spatial_rank = j.value("spatial_rank", c.spatial_rank);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.extent = j.value("extent", c.extent);
    c.dropout_keep = j.value("dropout_keep", c.dropout_keep);
    c.base_filters = j.value("base_filters", c.base_filters);
    c.sequence_length = j.value("sequence_length", c.sequence_length);
    c.sigmoid_output = j.value("sigmoid_output", c.sigmoid_output);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

torch::Tensor variance_scaling(std::vector<std::int64_t> shape, std::int64_t fan_in, double scale)
{
    return torch::randn(shape) * std::sqrt(scale / static_cast<double>(fan_in));
}

} // namespace

ConvImpl::ConvImpl(int rank, std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                   bool transposed)
    : rank_(rank), kernel_(kernel), stride_(stride), transposed_(transposed)
{
    std::vector<std::int64_t> shape = transposed ? std::vector<std::int64_t>{in, out}
                                                 : std::vector<std::int64_t>{out, in};
    std::int64_t fan_in = in;
    for (int r = 0; r < rank; ++r) {
        shape.push_back(kernel);
        fan_in *= kernel;
    }
    weight = register_parameter("weight", variance_scaling(shape, fan_in, 1.0));
    bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ConvImpl::forward(const torch::Tensor& x) const
{
    const std::vector<std::int64_t> stride(static_cast<std::size_t>(rank_), stride_);
    const std::vector<std::int64_t> padding(static_cast<std::size_t>(rank_), (kernel_ - 1) / 2);
    const std::vector<std::int64_t> dilation(static_cast<std::size_t>(rank_), 1);
    // "same" transposed convolution: output extent = input extent * stride.
    const std::vector<std::int64_t> output_padding(static_cast<std::size_t>(rank_),
                                                   transposed_ ? stride_ - 1 : 0);
    return at::convolution(x, weight, bias, stride, padding, dilation, transposed_, output_padding, 1);
}

DenseImpl::DenseImpl(std::int64_t in, std::int64_t out, double init_scale)
{
    weight = register_parameter("weight", init_scale > 0.0 ? variance_scaling({out, in}, in, init_scale)
                                                           : torch::zeros({out, in}));
    bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor DenseImpl::forward(const torch::Tensor& x) const
{
    return torch::nn::functional::linear(x, weight, bias);
}

BatchNormImpl::BatchNormImpl(std::int64_t channels, double momentum, double eps)
    : momentum_(momentum), eps_(eps)
{
    gamma = register_parameter("gamma", torch::ones({channels}));
    beta = register_parameter("beta", torch::zeros({channels}));
    running_mean = register_buffer("running_mean", torch::zeros({channels}));
    running_var = register_buffer("running_var", torch::ones({channels}));
}

torch::Tensor BatchNormImpl::forward(const torch::Tensor& x, Mode mode)
{
    switch (mode) {
    case Mode::train:
        return torch::batch_norm(x, gamma, beta, running_mean, running_var, true, momentum_, eps_, false);
    case Mode::train_fixed_stats:
        return torch::batch_norm(x, gamma, beta, {}, {}, true, momentum_, eps_, false);
    case Mode::eval:
        break;
    }
    return torch::batch_norm(x, gamma, beta, running_mean, running_var, false, momentum_, eps_, false);
}

BottleneckImpl::BottleneckImpl(int rank, std::int64_t channels, bool transposed)
{
    const std::int64_t half = std::max<std::int64_t>(1, channels / 2);
    bn1_ = register_module("bn1", BatchNorm(channels));
    c1_ = register_module("conv1", Conv(rank, channels, half, 1, 1, transposed));
    bn2_ = register_module("bn2", BatchNorm(half));
    c2_ = register_module("conv2", Conv(rank, half, half, 3, 1, transposed));
    bn3_ = register_module("bn3", BatchNorm(half));
    c3_ = register_module("conv3", Conv(rank, half, channels, 1, 1, transposed));
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x, Mode mode)
{
    auto h = c1_->forward(torch::relu(bn1_->forward(x, mode)));
    h = c2_->forward(torch::relu(bn2_->forward(h, mode)));
    return c3_->forward(torch::relu(bn3_->forward(h, mode)));
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

namespace {

void check_input(const torch::Tensor& x, const ModelConfig& c, std::int64_t channels, const char* who)
{
    if (x.dim() != 2 + c.spatial_rank || x.size(1) != channels) {
        throw ShapeMismatch(std::string(who) + ": unexpected input shape");
    }
    for (int r = 0; r < c.spatial_rank; ++r) {
        if (x.size(2 + r) != c.extent[static_cast<std::size_t>(r)]) {
            throw ShapeMismatch(std::string(who) + ": spatial extent does not match ModelConfig");
        }
    }
}

} // namespace

EncoderImpl::EncoderImpl(const ModelConfig& config) : config_(config)
{
    config_.validate();
    std::int64_t in = config_.in_channels;
    const auto widths = config_.encoder_widths();
    for (std::size_t s = 0; s < widths.size(); ++s) {
        down_.push_back(register_module("down" + std::to_string(s),
                                        Conv(config_.spatial_rank, in, widths[s], 3, 2)));
        blocks_.push_back(register_module("res" + std::to_string(s),
                                          Bottleneck(config_.spatial_rank, widths[s], false)));
        in = widths[s];
    }
    head_ = register_module("dense", Dense(config_.flat_features(), config_.latent_dim, 1.0));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x, Mode mode)
{
    check_input(x, config_, config_.in_channels, "encode");
    auto h = x;
    for (std::size_t s = 0; s < down_.size(); ++s) {
        h = down_[s]->forward(h);
        h = h + blocks_[s]->forward(h, mode);
    }
    h = torch::relu(h).flatten(1);
    return head_->forward(h);
}

DecoderImpl::DecoderImpl(const ModelConfig& config) : config_(config)
{
    config_.validate();
    stem_ = register_module("dense", Dense(config_.latent_dim, config_.flat_features(), 1.0));
    auto enc = config_.encoder_widths();
    std::vector<std::int64_t> widths{enc[3], enc[2], enc[1], enc[0], config_.in_channels};
    std::int64_t in = enc.back();
    for (std::size_t s = 0; s < widths.size(); ++s) {
        // The residual branch has to return the input's channel count.
        blocks_.push_back(register_module("res" + std::to_string(s), Bottleneck(config_.spatial_rank, in, true)));
        up_.push_back(register_module("up" + std::to_string(s),
                                      Conv(config_.spatial_rank, in, widths[s], 3, 2, true)));
        in = widths[s];
    }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z, Mode mode)
{
    if (z.dim() != 2 || z.size(1) != config_.latent_dim) {
        throw ShapeMismatch("decode: latent batch must be [B, M]");
    }
    std::vector<std::int64_t> shape{z.size(0), config_.encoder_widths().back()};
    for (auto e : config_.bottleneck_extent()) {
        shape.push_back(e);
    }
    auto h = stem_->forward(z).reshape(shape);
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
        h = up_[s]->forward(h + blocks_[s]->forward(h, mode));
    }
    // Tiny extents (< 32) reach the bottleneck with a clamped size of 1;
    // crop back to the configured extent.
    for (int r = 0; r < config_.spatial_rank; ++r) {
        h = h.narrow(2 + r, 0, config_.extent[static_cast<std::size_t>(r)]);
    }
    return config_.sigmoid_output ? torch::sigmoid(h) : h;
}

AuxNetImpl::AuxNetImpl(const ModelConfig& config)
    : config_(config), gen_(at::make_generator<at::CPUGeneratorImpl>(config.seed ^ 0x9e3779b97f4a7c15ULL))
{
    config_.validate();
    std::int64_t in = config_.latent_dim;
    const std::vector<std::int64_t> widths{128, 256, 512};
    for (std::size_t i = 0; i < widths.size(); ++i) {
        hidden_.push_back(register_module("fc" + std::to_string(i), Dense(in, widths[i])));
        in = widths[i];
    }
    // Zero output layer: training starts from identity latent dynamics.
    const auto m = static_cast<std::int64_t>(config_.latent_dim);
    out_ = register_module("dense", Dense(in, m * m, 0.0));
}

torch::Tensor AuxNetImpl::forward(const torch::Tensor& z, Mode mode)
{
    if (z.dim() != 2 || z.size(1) != config_.latent_dim) {
        throw ShapeMismatch("aux_koopman: latent batch must be [B, M]");
    }
    auto h = z;
    const double keep = config_.dropout_keep;
    for (auto& layer : hidden_) {
        h = torch::relu(layer->forward(h));
        if (mode != Mode::eval && keep < 1.0) {
            auto mask = torch::bernoulli(torch::full_like(h, keep), gen_);
            h = h * mask / keep;
        }
    }
    const auto m = static_cast<std::int64_t>(config_.latent_dim);
    return out_->forward(h).reshape({z.size(0), m, m});
}

CriticImpl::CriticImpl(const ModelConfig& config) : config_(config)
{
    config_.validate();
    std::int64_t in = config_.critic_in_channels();
    const auto widths = config_.critic_widths();
    std::int64_t flat = widths.back();
    for (auto e : config_.extent) {
        std::int64_t s = e;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            s = (s + 1) / 2;
        }
        flat *= s;
    }
    for (std::size_t s = 0; s < widths.size(); ++s) {
        convs_.push_back(register_module("conv" + std::to_string(s), Conv(config_.spatial_rank, in, widths[s], 5, 2)));
        if (s > 0) {
            norms_.push_back(register_module("bn" + std::to_string(s), BatchNorm(widths[s])));
        }
        in = widths[s];
    }
    head_ = register_module("dense", Dense(flat, 1, 1.0));
}

torch::Tensor CriticImpl::forward(const torch::Tensor& pairs, Mode mode)
{
    check_input(pairs, config_, config_.critic_in_channels(), "discriminate");
    auto h = torch::leaky_relu(convs_[0]->forward(pairs), 0.2);
    for (std::size_t s = 1; s < convs_.size(); ++s) {
        h = torch::leaky_relu(norms_[s - 1]->forward(convs_[s]->forward(h), mode), 0.2);
    }
    return head_->forward(h.flatten(1)).squeeze(1);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace {

ModelConfig seeded(const ModelConfig& c)
{
    c.validate();
    torch::manual_seed(c.seed);
    return c;
}

} // namespace

KoopmanModel::KoopmanModel(const ModelConfig& cfg)
    : config(seeded(cfg)), encoder(config), decoder(config), aux(config), critic(config)
{
}

namespace {

void append_parameters(std::vector<torch::Tensor>& out, const torch::nn::Module& m)
{
    for (const auto& p : m.parameters()) {
        out.push_back(p);
    }
}

} // namespace

std::vector<torch::Tensor> KoopmanModel::generator_parameters() const
{
    std::vector<torch::Tensor> out;
    append_parameters(out, *encoder);
    append_parameters(out, *decoder);
    append_parameters(out, *aux);
    return out;
}

std::vector<torch::Tensor> KoopmanModel::critic_parameters() const
{
    std::vector<torch::Tensor> out;
    append_parameters(out, *critic);
    return out;
}

std::vector<torch::Tensor> KoopmanModel::regularized_weights() const
{
    std::vector<torch::Tensor> out;
    for (const torch::nn::Module* m : {static_cast<const torch::nn::Module*>(encoder.get()),
                                       static_cast<const torch::nn::Module*>(decoder.get()),
                                       static_cast<const torch::nn::Module*>(aux.get())}) {
        for (const auto& item : m->named_parameters(true)) {
            const auto& key = item.key();
            if (key == "weight" || (key.size() > 7 && key.compare(key.size() - 7, 7, ".weight") == 0)) {
                out.push_back(item.value());
            }
        }
    }
    return out;
}

std::vector<std::pair<std::string, torch::Tensor>> KoopmanModel::named_arrays() const
{
    std::vector<std::pair<std::string, torch::Tensor>> out;
    auto add = [&](const std::string& prefix, const torch::nn::Module& m) {
        for (const auto& item : m.named_parameters(true)) {
            out.emplace_back(prefix + "." + item.key(), item.value());
        }
        for (const auto& item : m.named_buffers(true)) {
            out.emplace_back(prefix + "." + item.key(), item.value());
        }
    };
    add("encoder", *encoder);
    add("decoder", *decoder);
    add("aux", *aux);
    add("critic", *critic);
    return out;
}

void KoopmanModel::to(torch::Dtype dtype)
{
    encoder->to(dtype);
    decoder->to(dtype);
    aux->to(dtype);
    critic->to(dtype);
}

torch::Dtype KoopmanModel::dtype() const
{
    return encoder->parameters().front().scalar_type();
}

std::int64_t KoopmanModel::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : generator_parameters()) {
        n += p.numel();
    }
    for (const auto& p : critic_parameters()) {
        n += p.numel();
    }
    return n;
}

torch::Tensor to_network_layout(const torch::Tensor& channel_last)
{
    const auto d = channel_last.dim();
    if (d == 3) {
        return channel_last.permute({0, 2, 1}).contiguous();
    }
    if (d == 4) {
        return channel_last.permute({0, 3, 1, 2}).contiguous();
    }
    throw ShapeMismatch("to_network_layout: expected [T, spatial..., C] with 1 or 2 spatial axes");
}

torch::Tensor to_channel_last(const torch::Tensor& network_layout)
{
    const auto d = network_layout.dim();
    if (d == 3) {
        return network_layout.permute({0, 2, 1}).contiguous();
    }
    if (d == 4) {
        return network_layout.permute({0, 2, 3, 1}).contiguous();
    }
    throw ShapeMismatch("to_channel_last: expected [T, C, spatial...] with 1 or 2 spatial axes");
}

torch::Tensor fold_time(const torch::Tensor& seq)
{
    std::vector<std::int64_t> shape{1, seq.size(0) * seq.size(1)};
    for (std::int64_t d = 2; d < seq.dim(); ++d) {
        shape.push_back(seq.size(d));
    }
    return seq.reshape(shape);
}

torch::Tensor make_pair(const torch::Tensor& conditioning, const torch::Tensor& continuation)
{
    if (conditioning.sizes() != continuation.sizes()) {
        throw ShapeMismatch("make_pair: conditioning and continuation sequences differ in shape");
    }
    return torch::cat({fold_time(conditioning), fold_time(continuation)}, 1);
}

} // namespace advkoop
