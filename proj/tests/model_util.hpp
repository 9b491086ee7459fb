#pragma once

#include <torch/torch.h>

#include "advkoop/networks.hpp"

namespace advkoop::testing {

/// Makes AUX emit the constant matrix K (M x M) for every input.
inline void force_aux(KoopmanModel& model, const torch::Tensor& k)
{
    torch::NoGradGuard guard;
    auto& out = model.aux->output_layer();
    out->weight.zero_();
    out->bias.copy_(k.reshape({-1}).to(out->bias.dtype()));
}

/// Tiny 1-D model: 8 points, M = 4, narrow widths.
inline ModelConfig tiny_config(int n_s = 2, int latent = 4, std::int64_t points = 8)
{
    ModelConfig c;
    c.latent_dim = latent;
    c.spatial_rank = 1;
    c.in_channels = 1;
    c.extent = {points};
    c.base_filters = 2;
    c.sequence_length = n_s;
    c.seed = 1;
    return c;
}

} // namespace advkoop::testing
