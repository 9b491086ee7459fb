#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "advkoop/networks.hpp"

namespace advkoop {

struct LossWeights {
    double lambda_grad = 1.0;
    double lambda_reg = 1e-3;
    double lambda_gan = 0.01;
    double lambda1 = 1.0;
    double lambda2 = 1e-5;
    double lambda4 = 1e-8;
    double gp_coeff = 10.0;

    static LossWeights ks_preset();
    static LossWeights gs_preset();
    void validate() const;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Residual Koopman dynamics
// ---------------------------------------------------------------------------

/// z + K z for a batch z [B, M] and matrices K [B, M, M].
torch::Tensor residual_step(const torch::Tensor& z, const torch::Tensor& koopman);

/// z_{t+1} = z_t + K(z_t) z_t with K emitted by AUX from the current latent.
torch::Tensor koopman_apply(const torch::Tensor& z, AuxNet& aux, Mode mode);

/// [K z1, K^2 z1, ..., K^m z1] stacked as [m, B, M]; K is recomputed at every
/// step. Throws RolloutDiverged when a latent norm exceeds `norm_bound`.
torch::Tensor rollout(const torch::Tensor& z1, std::int64_t steps, AuxNet& aux, Mode mode,
                      double norm_bound = std::numeric_limits<double>::infinity());

// ---------------------------------------------------------------------------
// Generator forward pass over one training sequence
// ---------------------------------------------------------------------------

/// Everything the loss terms need from one sequence x_t .. x_{t+n_S}.
struct GeneratorOutputs {
    torch::Tensor x_seq;   // [n+1, C, spatial...], masked snapshots replaced by zeros
    torch::Tensor z_true;  // [n+1, M], g(x); zero rows where masked
    torch::Tensor z_pred;  // [n, M], rollout from g(x_t)
    torch::Tensor x_recon; // [1, C, spatial...], g^-1(g(x_t))
    torch::Tensor x_pred;  // [n, C, spatial...], decoded rollout
    std::vector<std::uint8_t> mask;

    std::int64_t horizon() const { return z_pred.size(0); }
    /// [n] float weights: 1 where x_{t+m} is available.
    torch::Tensor available() const;
};

/// Masked snapshots never enter the encoder; x_t itself must be available.
GeneratorOutputs run_generator(KoopmanModel& model, const torch::Tensor& x_seq,
                               const std::vector<std::uint8_t>& mask, Mode mode);

torch::Tensor loss_recon(const GeneratorOutputs& out);
torch::Tensor loss_pred(const GeneratorOutputs& out);
torch::Tensor loss_code(const GeneratorOutputs& out);

/// Per-order terms L1, L2, L4 of the gradient loss.
struct GradientLossTerms {
    torch::Tensor first;
    torch::Tensor second;
    torch::Tensor fourth;
    torch::Tensor combined; // lambda1 L1 + lambda2 L2 + lambda4 L4
};

GradientLossTerms loss_grad(const GeneratorOutputs& out, const LossWeights& weights, double dx);

/// Sum of squared conv/dense kernels of encoder, decoder and AUX (unscaled).
torch::Tensor loss_reg(const KoopmanModel& model);

/// Direct forms that run their own generator pass.
torch::Tensor loss_recon(KoopmanModel& model, const torch::Tensor& x_t, Mode mode);
torch::Tensor loss_pred(KoopmanModel& model, const torch::Tensor& x_seq, const std::vector<std::uint8_t>& mask,
                        Mode mode);
torch::Tensor loss_code(KoopmanModel& model, const torch::Tensor& x_seq, const std::vector<std::uint8_t>& mask,
                        Mode mode);

// ---------------------------------------------------------------------------
// Finite-difference derivatives on periodic fields [B, C, spatial...]
// ---------------------------------------------------------------------------

/// Central stencil of order 1, 2 or 4 along one tensor dimension.
torch::Tensor fd_axis_derivative(const torch::Tensor& field, int order, double dx, std::int64_t dim);

/// Sum of the per-axis derivatives over all spatial axes (dims >= 2).
torch::Tensor fd_gradients(const torch::Tensor& field, int order, double dx);

// ---------------------------------------------------------------------------
// Adversarial terms
// ---------------------------------------------------------------------------

/// Maps a batch of folded sequence pairs to one critic value per item.
using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct GanTerms {
    torch::Tensor gen_loss;  // -E[D(fake)]
    torch::Tensor disc_loss; // E[D(fake)] - E[D(real)]
    torch::Tensor gp;        // gp_coeff * E[(|grad D(x_hat)| - 1)^2], zero if not requested
    torch::Tensor real_score;
    torch::Tensor fake_score;
};

/// Real, fake and (optionally) interpolated pairs are scored in one critic
/// call. Interpolation weights are drawn from `gen`, one per pair.
GanTerms gan_losses(const torch::Tensor& real_pairs, const torch::Tensor& fake_pairs, const CriticFn& critic,
                    double gp_coeff, bool with_penalty, torch::Generator& gen);

/// Real and fake critic inputs for one generator pass, masked slots zeroed in both.
std::pair<torch::Tensor, torch::Tensor> critic_pairs(const GeneratorOutputs& out);

// ---------------------------------------------------------------------------
// Total objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    torch::Tensor recon, pred, code, grad, reg, gan, total;
    double grad1 = 0.0, grad2 = 0.0, grad4 = 0.0;

    /// Components multiplied by their weights; these sum to `total`.
    std::vector<double> weighted(const LossWeights& w) const;
    nlohmann::json to_json() const;
};

/// recon + pred + code + lambda_grad grad + lambda_reg reg + lambda_gan gan.
/// Terms whose weight is zero are reported as 0 and not evaluated, except
/// recon/pred/code which are always evaluated.
LossBreakdown total_generator_loss(const GeneratorOutputs& out, KoopmanModel& model, const LossWeights& weights,
                                   double dx, Mode critic_mode, torch::Generator& gen);

} // namespace advkoop
