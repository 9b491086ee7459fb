#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "advkoop/field.hpp"
#include "advkoop/training.hpp"

namespace advkoop {

struct ControlConfig {
    std::int64_t t_start = 50;
    std::int64_t t_desired = 80;
    std::int64_t delta = 16;
    double l_density = 0.4;
    std::uint64_t l_seed = 0;
    int steps = 2000;
    double lr = 1e-2;
    double u_penalty = 1.0;
    int patience = 200;    // iterations without improvement before stopping
    int trace_every = 50;

    void validate() const;
    /// Also checks that both snapshots exist and are available.
    void validate(const SnapshotCorpus& corpus) const;
};

nlohmann::json to_json(const ControlConfig& c);
ControlConfig control_config_from_json(const nlohmann::json& j);

/// M x M boolean matrix with i.i.d. Bernoulli(l_density) entries drawn from l_seed.
torch::Tensor make_control_matrix(std::int64_t latent_dim, const ControlConfig& config);

/// koopman_apply(z) + L u for z, u of shape [B, M] (or [M]); AUX in eval mode.
torch::Tensor controlled_step(const torch::Tensor& z, const torch::Tensor& u, const torch::Tensor& l_matrix,
                              AuxNet& aux);

struct ControlObjective {
    torch::Tensor gap;      // |z_{start+delta} - z_target|^2
    torch::Tensor penalty;  // u_penalty * sum |U_t|^2
    torch::Tensor total;    // gap + penalty
    torch::Tensor trajectory; // [delta + 1, M] forced latents, starting with z_start
};

/// U is [delta, M]; z_start and z_target are [1, M].
ControlObjective control_objective(const torch::Tensor& u, const torch::Tensor& z_start, const torch::Tensor& z_target,
                                   const torch::Tensor& l_matrix, AuxNet& aux, double u_penalty);

struct ControlTracePoint {
    int iteration = 0;
    double total = 0.0;
    double gap = 0.0;
    double penalty = 0.0;
};

struct LatentControlResult {
    torch::Tensor u;           // [delta, M]
    torch::Tensor trajectory;  // [delta + 1, M]
    double total = 0.0;
    double gap = 0.0;
    double penalty = 0.0;
    double initial_total = 0.0;
    int iterations = 0;
    bool stopped_early = false; // no improvement within `patience`
    std::vector<ControlTracePoint> trace;
};

/// Adam over U only; every model parameter is left untouched.
LatentControlResult optimize_latent_controls(KoopmanModel& model, const torch::Tensor& z_start,
                                             const torch::Tensor& z_target, const torch::Tensor& l_matrix,
                                             const ControlConfig& config);

struct ControlResult {
    LatentControlResult latent;
    torch::Tensor l_matrix;
    // Channel-last fields in corpus units.
    torch::Tensor start_field;    // x_{t_start}
    torch::Tensor desired_field;  // x_{t_desired}
    torch::Tensor forced;         // [delta, spatial..., C] decoded forced trajectory
    torch::Tensor unforced;       // [delta, spatial..., C] decoded rollout with U = 0
    torch::Tensor natural;        // x_{t_start + delta} from the corpus (undefined if outside)
    torch::Tensor error;          // |forced_final - desired|

    nlohmann::json summary() const;
};

ControlResult optimize_controls(const SnapshotCorpus& corpus, const TrainedModel& trained,
                                const ControlConfig& config);

} // namespace advkoop
