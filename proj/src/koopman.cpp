#include "advkoop/koopman.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "advkoop/errors.hpp"

namespace advkoop {

LossWeights LossWeights::ks_preset()
{
    return {};
}

LossWeights LossWeights::gs_preset()
{
    LossWeights w;
    w.lambda2 = 0.0;
    w.lambda4 = 0.0;
    return w;
}

void LossWeights::validate() const
{
    for (double v : {lambda_grad, lambda_reg, lambda_gan, lambda1, lambda2, lambda4, gp_coeff}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("LossWeights: all weights must be finite and >= 0");
        }
    }
}

nlohmann::json to_json(const LossWeights& w)
{
    return {{"lambda_grad", w.lambda_grad}, {"lambda_reg", w.lambda_reg}, {"lambda_gan", w.lambda_gan},
            {"lambda1", w.lambda1},         {"lambda2", w.lambda2},       {"lambda4", w.lambda4},
            {"gp_coeff", w.gp_coeff}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j)
{
    LossWeights w;
    w.lambda_grad = j.value("lambda_grad", w.lambda_grad);
    w.lambda_reg = j.value("lambda_reg", w.lambda_reg);
    w.lambda_gan = j.value("lambda_gan", w.lambda_gan);
    w.lambda1 = j.value("lambda1", w.lambda1);
    w.lambda2 = j.value("lambda2", w.lambda2);
    w.lambda4 = j.value("lambda4", w.lambda4);
    w.gp_coeff = j.value("gp_coeff", w.gp_coeff);
    return w;
}

// ---------------------------------------------------------------------------

torch::Tensor residual_step(const torch::Tensor& z, const torch::Tensor& koopman)
{
    return z + torch::bmm(koopman, z.unsqueeze(2)).squeeze(2);
}

torch::Tensor koopman_apply(const torch::Tensor& z, AuxNet& aux, Mode mode)
{
    return residual_step(z, aux->forward(z, mode));
}

torch::Tensor rollout(const torch::Tensor& z1, std::int64_t steps, AuxNet& aux, Mode mode, double norm_bound)
{
    if (steps < 1) {
        throw std::invalid_argument("rollout: need at least one step");
    }
    std::vector<torch::Tensor> out;
    out.reserve(static_cast<std::size_t>(steps));
    auto z = z1;
    for (std::int64_t m = 0; m < steps; ++m) {
        z = koopman_apply(z, aux, mode);
        if (std::isfinite(norm_bound)) {
            const double norm = z.detach().norm().item<double>();
            if (!(norm <= norm_bound)) {
                throw RolloutDiverged("latent norm " + std::to_string(norm) + " exceeded bound at step " +
                                      std::to_string(m + 1));
            }
        }
        out.push_back(z);
    }
    return torch::stack(out);
}

// ---------------------------------------------------------------------------

namespace {

torch::Tensor mask_tensor(const std::vector<std::uint8_t>& mask, std::int64_t from, std::int64_t count)
{
    std::vector<std::int64_t> v(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        v[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(from + i)] ? 1 : 0;
    }
    return torch::tensor(v, torch::kLong).to(torch::kBool);
}

/// Broadcastable view [n, 1, 1, ...] of a per-snapshot boolean vector.
torch::Tensor broadcast_over(const torch::Tensor& flags, const torch::Tensor& like)
{
    std::vector<std::int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
    shape[0] = flags.size(0);
    return flags.reshape(shape);
}

/// Replace flagged snapshots by exact zeros (NaN-safe, unlike multiplication).
torch::Tensor zero_flagged(const torch::Tensor& x, const torch::Tensor& flags)
{
    return torch::where(broadcast_over(flags, x), torch::zeros({}, x.options()), x);
}

/// Mean over every axis but the first.
torch::Tensor per_item_mse(const torch::Tensor& diff)
{
    return diff.pow(2).flatten(1).mean(1);
}

} // namespace

torch::Tensor GeneratorOutputs::available() const
{
    const auto n = horizon();
    auto flags = mask_tensor(mask, 1, n);
    return torch::logical_not(flags).to(z_pred.scalar_type());
}

GeneratorOutputs run_generator(KoopmanModel& model, const torch::Tensor& x_seq, const std::vector<std::uint8_t>& mask,
                               Mode mode)
{
    const auto len = x_seq.size(0);
    if (len < 2) {
        throw std::invalid_argument("run_generator: sequence needs at least two snapshots");
    }
    if (static_cast<std::int64_t>(mask.size()) != len) {
        throw ShapeMismatch("run_generator: mask length differs from sequence length");
    }
    if (mask[0]) {
        throw std::invalid_argument("run_generator: the anchor snapshot x_t is missing");
    }
    GeneratorOutputs out;
    out.mask = mask;
    const auto flags = mask_tensor(mask, 0, len);
    out.x_seq = zero_flagged(x_seq, flags);

    const auto idx = torch::nonzero(torch::logical_not(flags)).squeeze(1);
    const auto z_avail = model.encoder->forward(out.x_seq.index_select(0, idx), mode);
    out.z_true = torch::zeros({len, z_avail.size(1)}, z_avail.options()).index_copy(0, idx, z_avail);

    const auto n = len - 1;
    out.z_pred = rollout(out.z_true.slice(0, 0, 1), n, model.aux, mode).squeeze(1);
    const auto decoded = model.decoder->forward(torch::cat({out.z_true.slice(0, 0, 1), out.z_pred}), mode);
    out.x_recon = decoded.slice(0, 0, 1);
    out.x_pred = decoded.slice(0, 1, len);
    return out;
}

torch::Tensor loss_recon(const GeneratorOutputs& out)
{
    return (out.x_seq.slice(0, 0, 1) - out.x_recon).pow(2).mean();
}

torch::Tensor loss_pred(const GeneratorOutputs& out)
{
    const auto n = out.horizon();
    const auto per_step = per_item_mse(out.x_seq.slice(0, 1, n + 1) - out.x_pred);
    return (per_step * out.available()).sum() / static_cast<double>(n);
}

torch::Tensor loss_code(const GeneratorOutputs& out)
{
    const auto n = out.horizon();
    const auto per_step = per_item_mse(out.z_true.slice(0, 1, n + 1) - out.z_pred);
    return (per_step * out.available()).sum() / static_cast<double>(n);
}

GradientLossTerms loss_grad(const GeneratorOutputs& out, const LossWeights& weights, double dx)
{
    const auto n = out.horizon();
    const auto residual = out.x_seq.slice(0, 1, n + 1) - out.x_pred;
    const auto avail = out.available();
    auto order_term = [&](int order) {
        auto acc = torch::zeros({}, residual.options());
        for (std::int64_t d = 2; d < residual.dim(); ++d) {
            const auto per_step = per_item_mse(fd_axis_derivative(residual, order, dx, d));
            acc = acc + (per_step * avail).sum() / static_cast<double>(n);
        }
        return acc;
    };
    GradientLossTerms t;
    t.first = order_term(1);
    t.second = order_term(2);
    t.fourth = order_term(4);
    t.combined = weights.lambda1 * t.first + weights.lambda2 * t.second + weights.lambda4 * t.fourth;
    return t;
}

torch::Tensor loss_reg(const KoopmanModel& model)
{
    const auto weights = model.regularized_weights();
    auto acc = torch::zeros({}, weights.front().options());
    for (const auto& w : weights) {
        acc = acc + w.pow(2).sum();
    }
    return acc;
}

torch::Tensor loss_recon(KoopmanModel& model, const torch::Tensor& x_t, Mode mode)
{
    const auto x = x_t.dim() == model.config.spatial_rank + 1 ? x_t.unsqueeze(0) : x_t;
    const auto recon = model.decoder->forward(model.encoder->forward(x, mode), mode);
    return (x - recon).pow(2).mean();
}

torch::Tensor loss_pred(KoopmanModel& model, const torch::Tensor& x_seq, const std::vector<std::uint8_t>& mask,
                        Mode mode)
{
    return loss_pred(run_generator(model, x_seq, mask, mode));
}

torch::Tensor loss_code(KoopmanModel& model, const torch::Tensor& x_seq, const std::vector<std::uint8_t>& mask,
                        Mode mode)
{
    return loss_code(run_generator(model, x_seq, mask, mode));
}

// ---------------------------------------------------------------------------

torch::Tensor fd_axis_derivative(const torch::Tensor& u, int order, double dx, std::int64_t dim)
{
    // roll(u, -1) holds u_{i+1}, roll(u, +1) holds u_{i-1}.
    auto shift = [&](std::int64_t s) { return torch::roll(u, {-s}, {dim}); };
    switch (order) {
    case 1:
        return (shift(1) - shift(-1)) / (2.0 * dx);
    case 2:
        return (shift(1) - 2.0 * u + shift(-1)) / (dx * dx);
    case 4:
        return (shift(2) - 4.0 * shift(1) + 6.0 * u - 4.0 * shift(-1) + shift(-2)) / std::pow(dx, 4);
    default:
        throw std::invalid_argument("fd_gradients: unsupported derivative order " + std::to_string(order));
    }
}

torch::Tensor fd_gradients(const torch::Tensor& field, int order, double dx)
{
    if (field.dim() < 3) {
        throw ShapeMismatch("fd_gradients: expected [B, C, spatial...]");
    }
    auto acc = fd_axis_derivative(field, order, dx, 2);
    for (std::int64_t d = 3; d < field.dim(); ++d) {
        acc = acc + fd_axis_derivative(field, order, dx, d);
    }
    return acc;
}

// ---------------------------------------------------------------------------

GanTerms gan_losses(const torch::Tensor& real_pairs, const torch::Tensor& fake_pairs, const CriticFn& critic,
                    double gp_coeff, bool with_penalty, torch::Generator& gen)
{
    if (real_pairs.sizes() != fake_pairs.sizes()) {
        throw ShapeMismatch("gan_losses: real and fake pairs differ in shape");
    }
    const auto b = real_pairs.size(0);
    torch::Tensor x_hat;
    std::vector<torch::Tensor> batch{real_pairs, fake_pairs};
    if (with_penalty) {
        std::vector<std::int64_t> shape(static_cast<std::size_t>(real_pairs.dim()), 1);
        shape[0] = b;
        const auto eps = torch::rand(shape, gen, real_pairs.options().requires_grad(false));
        x_hat = (eps * real_pairs.detach() + (1.0 - eps) * fake_pairs.detach()).requires_grad_(true);
        batch.push_back(x_hat);
    }
    const auto scores = critic(torch::cat(batch));
    GanTerms t;
    t.real_score = scores.slice(0, 0, b).mean();
    t.fake_score = scores.slice(0, b, 2 * b).mean();
    t.gen_loss = -t.fake_score;
    t.disc_loss = t.fake_score - t.real_score;
    t.gp = torch::zeros({}, scores.options());
    if (with_penalty) {
        const auto hat_scores = scores.slice(0, 2 * b, 3 * b);
        torch::Tensor grad;
        if (hat_scores.requires_grad()) {
            grad = torch::autograd::grad({hat_scores.sum()}, {x_hat}, {}, /*retain_graph=*/true,
                                         /*create_graph=*/true, /*allow_unused=*/true)[0];
        }
        if (!grad.defined()) {
            grad = torch::zeros_like(x_hat);
        }
        // clamp keeps the norm differentiable at a vanishing gradient.
        const auto norm = grad.flatten(1).pow(2).sum(1).clamp_min(1e-30).sqrt();
        t.gp = gp_coeff * (norm - 1.0).pow(2).mean();
    }
    return t;
}

std::pair<torch::Tensor, torch::Tensor> critic_pairs(const GeneratorOutputs& out)
{
    const auto n = out.horizon();
    const auto flags = mask_tensor(out.mask, 1, n);
    const auto conditioning = out.x_seq.slice(0, 0, n);
    const auto truth = out.x_seq.slice(0, 1, n + 1);
    const auto prediction = zero_flagged(out.x_pred, flags);
    return {make_pair(conditioning, truth), make_pair(conditioning, prediction)};
}

// ---------------------------------------------------------------------------

std::vector<double> LossBreakdown::weighted(const LossWeights& w) const
{
    return {recon.item<double>(),
            pred.item<double>(),
            code.item<double>(),
            w.lambda_grad * grad.item<double>(),
            w.lambda_reg * reg.item<double>(),
            w.lambda_gan * gan.item<double>()};
}

nlohmann::json LossBreakdown::to_json() const
{
    return {{"recon", recon.item<double>()}, {"pred", pred.item<double>()}, {"code", code.item<double>()},
            {"grad", grad.item<double>()},   {"grad1", grad1},              {"grad2", grad2},
            {"grad4", grad4},                {"reg", reg.item<double>()},   {"gan", gan.item<double>()},
            {"total", total.item<double>()}};
}

LossBreakdown total_generator_loss(const GeneratorOutputs& out, KoopmanModel& model, const LossWeights& weights,
                                   double dx, Mode critic_mode, torch::Generator& gen)
{
    const auto zero = torch::zeros({}, out.x_pred.options());
    LossBreakdown b;
    b.recon = loss_recon(out);
    b.pred = loss_pred(out);
    b.code = loss_code(out);
    b.grad = zero;
    if (weights.lambda_grad > 0.0) {
        const auto g = loss_grad(out, weights, dx);
        b.grad = g.combined;
        b.grad1 = g.first.item<double>();
        b.grad2 = g.second.item<double>();
        b.grad4 = g.fourth.item<double>();
    }
    b.reg = weights.lambda_reg > 0.0 ? loss_reg(model) : zero;
    b.gan = zero;
    if (weights.lambda_gan > 0.0) {
        const auto [real, fake] = critic_pairs(out);
        const CriticFn critic = [&](const torch::Tensor& x) { return model.critic->forward(x, critic_mode); };
        b.gan = gan_losses(real.detach(), fake, critic, weights.gp_coeff, false, gen).gen_loss;
    }
    b.total = b.recon + b.pred + b.code + weights.lambda_grad * b.grad + weights.lambda_reg * b.reg +
              weights.lambda_gan * b.gan;
    return b;
}

} // namespace advkoop
