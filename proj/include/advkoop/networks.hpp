#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace advkoop {

/// train: batch statistics, running statistics updated, dropout active.
/// train_fixed_stats: batch statistics without touching the running ones.
/// eval: running statistics, dropout off.
enum class Mode { train, train_fixed_stats, eval };

struct ModelConfig {
    int latent_dim = 64;                    // M
    int spatial_rank = 1;                   // 1 (KS) or 2 (GS)
    int in_channels = 1;                    // n_out
    std::vector<std::int64_t> extent{1024}; // spatial extent, one entry per axis
    double dropout_keep = 0.8;
    int base_filters = 64;                  // encoder widths base * {1,2,4,8,8}
    int sequence_length = 64;               // n_S, fixes the critic's input channels
    bool sigmoid_output = false;            // bounded decoder output (GS)
    std::uint64_t seed = 0;

    static ModelConfig ks_default();
    static ModelConfig gs_default();

    void validate() const;
    std::vector<int> encoder_widths() const;
    std::vector<int> critic_widths() const;
    /// Spatial extent after the five stride-2 encoder stages.
    std::vector<std::int64_t> bottleneck_extent() const;
    std::int64_t flat_features() const;
    /// 2 * n_S * n_out channels: time is folded into the channel axis.
    std::int64_t critic_in_channels() const { return 2LL * sequence_length * in_channels; }
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Convolution or transposed convolution with "same" padding, 1D or 2D.
class ConvImpl : public torch::nn::Module {
public:
    ConvImpl(int rank, std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
             bool transposed = false);
    torch::Tensor forward(const torch::Tensor& x) const;

    torch::Tensor weight;
    torch::Tensor bias;

private:
    int rank_;
    std::int64_t kernel_;
    std::int64_t stride_;
    bool transposed_;
};
TORCH_MODULE(Conv);

class DenseImpl : public torch::nn::Module {
public:
    DenseImpl(std::int64_t in, std::int64_t out, double init_scale = 2.0);
    torch::Tensor forward(const torch::Tensor& x) const;

    torch::Tensor weight;
    torch::Tensor bias;
};
TORCH_MODULE(Dense);

/// Batch normalization over every axis but the channel axis. Parameters are
/// named gamma/beta so that weight-decay walks can tell them from conv weights.
class BatchNormImpl : public torch::nn::Module {
public:
    explicit BatchNormImpl(std::int64_t channels, double momentum = 0.1, double eps = 1e-5);
    torch::Tensor forward(const torch::Tensor& x, Mode mode);

    torch::Tensor gamma;
    torch::Tensor beta;
    torch::Tensor running_mean;
    torch::Tensor running_var;

private:
    double momentum_;
    double eps_;
};
TORCH_MODULE(BatchNorm);

/// BN -> Relu -> conv(1, w/2) -> BN -> Relu -> conv(3, w/2) -> BN -> Relu -> conv(1, w).
class BottleneckImpl : public torch::nn::Module {
public:
    BottleneckImpl(int rank, std::int64_t channels, bool transposed);
    torch::Tensor forward(const torch::Tensor& x, Mode mode);

private:
    BatchNorm bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
    Conv c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// g: x -> z. Five residual stages conv(3, w, stride 2) + bottleneck, then
/// Relu, flatten and Dense(M) with no output activation.
class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& x, Mode mode);

private:
    ModelConfig config_;
    std::vector<Conv> down_;
    std::vector<Bottleneck> blocks_;
    Dense head_{nullptr};
};
TORCH_MODULE(Encoder);

/// g^-1: z -> x. Dense to the encoder's flattened size, then five stages
/// (input + bottleneck) -> dconv(3, w, stride 2); sigmoid output if configured.
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& z, Mode mode);

private:
    ModelConfig config_;
    Dense stem_{nullptr};
    std::vector<Bottleneck> blocks_;
    std::vector<Conv> up_;
};
TORCH_MODULE(Decoder);

/// AUX: z -> K (M x M). FC(128) -> FC(256) -> FC(512) -> Dense(M^2), where
/// FC = Dense -> Relu -> Dropout. Owns its dropout random stream.
class AuxNetImpl : public torch::nn::Module {
public:
    explicit AuxNetImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& z, Mode mode);

    Dense& output_layer() { return out_; }
    torch::Generator& dropout_generator() { return gen_; }

private:
    ModelConfig config_;
    std::vector<Dense> hidden_;
    Dense out_{nullptr};
    torch::Generator gen_;
};
TORCH_MODULE(AuxNet);

/// DISC: conv(5,64,2) -> LRelu -> [conv(5,w,2) -> BN -> LRelu] x3 -> Dense(1).
/// Output is an unbounded critic value per batch item.
class CriticImpl : public torch::nn::Module {
public:
    explicit CriticImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& pairs, Mode mode);

private:
    ModelConfig config_;
    std::vector<Conv> convs_;
    std::vector<BatchNorm> norms_;
    Dense head_{nullptr};
};
TORCH_MODULE(Critic);

/// The four networks of the adversarial Koopman model.
struct KoopmanModel {
    explicit KoopmanModel(const ModelConfig& config);

    ModelConfig config;
    Encoder encoder;
    Decoder decoder;
    AuxNet aux;
    Critic critic;

    /// Encoder, decoder and AUX parameters (everything the generator optimizer owns).
    std::vector<torch::Tensor> generator_parameters() const;
    std::vector<torch::Tensor> critic_parameters() const;

    /// Conv/dense kernels of encoder, decoder and AUX (no biases, no BN parameters).
    std::vector<torch::Tensor> regularized_weights() const;

    /// All parameters and buffers keyed "<network>.<path>".
    std::vector<std::pair<std::string, torch::Tensor>> named_arrays() const;

    void to(torch::Dtype dtype);
    torch::Dtype dtype() const;
    std::int64_t parameter_count() const;
};

/// Channel-last float snapshots [T, spatial..., C] -> network layout [T, C, spatial...].
torch::Tensor to_network_layout(const torch::Tensor& channel_last);
torch::Tensor to_channel_last(const torch::Tensor& network_layout);

/// Folds a sequence [n, C, spatial...] into one sample [1, n*C, spatial...].
torch::Tensor fold_time(const torch::Tensor& seq);

/// Real/fake critic input: (X, X') folded along channels -> [1, 2nC, spatial...].
torch::Tensor make_pair(const torch::Tensor& conditioning, const torch::Tensor& continuation);

} // namespace advkoop
