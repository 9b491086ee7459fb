#include "advkoop/control.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "advkoop/errors.hpp"
#include "advkoop/evaluation.hpp"

namespace advkoop {

void ControlConfig::validate() const
{
    if (delta < 1) {
        throw std::invalid_argument("ControlConfig: delta must be at least 1");
    }
    if (!(l_density >= 0.0 && l_density <= 1.0)) {
        throw std::invalid_argument("ControlConfig: l_density must lie in [0, 1]");
    }
    if (t_start < 0 || t_desired < 0) {
        throw std::invalid_argument("ControlConfig: negative time index");
    }
    if (steps < 0 || !(lr > 0.0) || u_penalty < 0.0 || patience < 1 || trace_every < 1) {
        throw std::invalid_argument("ControlConfig: invalid optimizer settings");
    }
}

void ControlConfig::validate(const SnapshotCorpus& corpus) const
{
    validate();
    for (auto t : {t_start, t_desired}) {
        if (t >= corpus.size()) {
            throw std::out_of_range("ControlConfig: time index " + std::to_string(t) + " outside the corpus");
        }
        if (corpus.is_missing(t)) {
            throw std::invalid_argument("ControlConfig: snapshot " + std::to_string(t) + " is missing");
        }
    }
}

nlohmann::json to_json(const ControlConfig& c)
{
    return {{"t_start", c.t_start}, {"t_desired", c.t_desired}, {"delta", c.delta},
            {"l_density", c.l_density}, {"l_seed", c.l_seed}, {"steps", c.steps},
            {"lr", c.lr}, {"u_penalty", c.u_penalty}, {"patience", c.patience},
            {"trace_every", c.trace_every}};
}

ControlConfig control_config_from_json(const nlohmann::json& j)
{
    ControlConfig c;
    c.t_start = j.value("t_start", c.t_start);
    c.t_desired = j.value("t_desired", c.t_desired);
    c.delta = j.value("delta", c.delta);
    c.l_density = j.value("l_density", c.l_density);
    c.l_seed = j.value("l_seed", c.l_seed);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.u_penalty = j.value("u_penalty", c.u_penalty);
    c.patience = j.value("patience", c.patience);
    c.trace_every = j.value("trace_every", c.trace_every);
    return c;
}

torch::Tensor make_control_matrix(std::int64_t latent_dim, const ControlConfig& config)
{
    config.validate();
    std::mt19937_64 rng(config.l_seed);
    std::bernoulli_distribution draw(config.l_density);
    auto l = torch::zeros({latent_dim, latent_dim}, torch::kBool);
    auto acc = l.accessor<bool, 2>();
    for (std::int64_t i = 0; i < latent_dim; ++i) {
        for (std::int64_t j = 0; j < latent_dim; ++j) {
            acc[i][j] = draw(rng);
        }
    }
    return l;
}

torch::Tensor controlled_step(const torch::Tensor& z, const torch::Tensor& u, const torch::Tensor& l_matrix,
                              AuxNet& aux)
{
    const bool flat = z.dim() == 1;
    const auto zb = flat ? z.unsqueeze(0) : z;
    const auto ub = u.dim() == 1 ? u.unsqueeze(0) : u;
    const auto l = l_matrix.to(z.dtype());
    auto next = koopman_apply(zb, aux, Mode::eval) + ub.matmul(l.t());
    return flat ? next.squeeze(0) : next;
}

ControlObjective control_objective(const torch::Tensor& u, const torch::Tensor& z_start, const torch::Tensor& z_target,
                                   const torch::Tensor& l_matrix, AuxNet& aux, double u_penalty)
{
    std::vector<torch::Tensor> traj{z_start};
    auto z = z_start;
    for (std::int64_t t = 0; t < u.size(0); ++t) {
        z = controlled_step(z, u.narrow(0, t, 1), l_matrix, aux);
        traj.push_back(z);
    }
    ControlObjective obj;
    obj.gap = (z - z_target).pow(2).sum();
    obj.penalty = u_penalty * u.pow(2).sum();
    obj.total = obj.gap + obj.penalty;
    obj.trajectory = torch::cat(traj, 0);
    return obj;
}

namespace {

/// Disables gradients on every model parameter for its lifetime.
class FreezeGuard {
public:
    explicit FreezeGuard(KoopmanModel& model)
    {
        for (auto* m : std::initializer_list<torch::nn::Module*>{model.encoder.get(), model.decoder.get(),
                                                                 model.aux.get(), model.critic.get()}) {
            for (auto& p : m->parameters()) {
                saved_.emplace_back(p, p.requires_grad());
                p.requires_grad_(false);
            }
        }
    }
    ~FreezeGuard()
    {
        for (auto& [p, flag] : saved_) {
            p.requires_grad_(flag);
        }
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<std::pair<torch::Tensor, bool>> saved_;
};

} // namespace

LatentControlResult optimize_latent_controls(KoopmanModel& model, const torch::Tensor& z_start,
                                             const torch::Tensor& z_target, const torch::Tensor& l_matrix,
                                             const ControlConfig& config)
{
    config.validate();
    FreezeGuard freeze(model);
    const auto zs = z_start.detach().to(model.dtype());
    const auto zt = z_target.detach().to(model.dtype());
    auto u = torch::zeros({config.delta, zs.size(-1)}, zs.options()).requires_grad_(true);
    torch::optim::Adam opt({u}, torch::optim::AdamOptions(config.lr));

    LatentControlResult result;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    auto record = [&](int it, const ControlObjective& obj) {
        result.trace.push_back({it, obj.total.item<double>(), obj.gap.item<double>(), obj.penalty.item<double>()});
    };
    int it = 0;
    for (; it < config.steps; ++it) {
        opt.zero_grad();
        const auto obj = control_objective(u, zs, zt, l_matrix, model.aux, config.u_penalty);
        const double total = obj.total.item<double>();
        if (!std::isfinite(total)) {
            throw ControlDiverged("non-finite control objective at iteration " + std::to_string(it));
        }
        if (it == 0) {
            result.initial_total = total;
        }
        if (it % config.trace_every == 0) {
            record(it, obj);
        }
        if (total < best * (1.0 - 1e-12)) {
            best = total;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            result.stopped_early = true;
            break;
        }
        obj.total.backward();
        opt.step();
    }

    torch::NoGradGuard no_grad;
    const auto final_obj = control_objective(u, zs, zt, l_matrix, model.aux, config.u_penalty);
    if (result.trace.empty() || result.trace.back().iteration != it) {
        record(it, final_obj);
    }
    if (config.steps == 0) {
        result.initial_total = final_obj.total.item<double>();
    }
    result.u = u.detach().clone();
    result.trajectory = final_obj.trajectory;
    result.total = final_obj.total.item<double>();
    result.gap = final_obj.gap.item<double>();
    result.penalty = final_obj.penalty.item<double>();
    result.iterations = it;
    return result;
}

ControlResult optimize_controls(const SnapshotCorpus& corpus, const TrainedModel& trained,
                                const ControlConfig& config)
{
    config.validate(corpus);
    auto& model = *trained.model;
    ControlResult r;
    r.start_field = corpus_slice(corpus, config.t_start, 1)[0];
    r.desired_field = corpus_slice(corpus, config.t_desired, 1)[0];
    const auto t_natural = config.t_start + config.delta;
    if (t_natural < corpus.size() && !corpus.is_missing(t_natural)) {
        r.natural = corpus_slice(corpus, t_natural, 1)[0];
    }

    torch::Tensor z_start;
    torch::Tensor z_target;
    {
        torch::NoGradGuard no_grad;
        z_start = model.encoder->forward(trained.to_model_space(r.start_field.unsqueeze(0)), Mode::eval);
        z_target = model.encoder->forward(trained.to_model_space(r.desired_field.unsqueeze(0)), Mode::eval);
    }
    r.l_matrix = make_control_matrix(model.config.latent_dim, config);
    r.latent = optimize_latent_controls(model, z_start, z_target, r.l_matrix, config);

    torch::NoGradGuard no_grad;
    const auto forced_latents = r.latent.trajectory.narrow(0, 1, config.delta);
    r.forced = trained.to_corpus_space(model.decoder->forward(forced_latents, Mode::eval));
    const auto free_latents = rollout(z_start, config.delta, model.aux, Mode::eval).reshape({config.delta, -1});
    r.unforced = trained.to_corpus_space(model.decoder->forward(free_latents, Mode::eval));
    r.error = (r.forced[config.delta - 1] - r.desired_field).abs();
    return r;
}

nlohmann::json ControlResult::summary() const
{
    nlohmann::json j{{"total", latent.total},
                     {"gap", latent.gap},
                     {"penalty", latent.penalty},
                     {"initial_total", latent.initial_total},
                     {"iterations", latent.iterations},
                     {"stopped_early", latent.stopped_early},
                     {"field_l1_to_desired", error.mean().item<double>()},
                     {"unforced_l1_to_desired", mean_l1_error(unforced[unforced.size(0) - 1], desired_field)}};
    auto& trace = j["trace"] = nlohmann::json::array();
    for (const auto& p : latent.trace) {
        trace.push_back({{"iteration", p.iteration}, {"total", p.total}, {"gap", p.gap}, {"penalty", p.penalty}});
    }
    return j;
}

} // namespace advkoop
