#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "advkoop/field.hpp"

namespace advkoop {

// ---------------------------------------------------------------------------
// Kuramoto-Sivashinsky:  u_t + u u_x + u_xx + u_xxxx = 0  on a periodic line.
// ---------------------------------------------------------------------------

struct KSConfig {
    double domain_length = 128.0;
    double dx = 1.0 / 8.0;
    double dt_solver = 1.0 / 16.0;
    int n_steps = 4800;
    int save_every = 4;
    double blowup_bound = 1e3;

    std::int64_t n_points() const;
    double dt_koopman() const { return dt_solver * save_every; }
    void validate() const;
};

nlohmann::json to_json(const KSConfig& c);
KSConfig ks_config_from_json(const nlohmann::json& j);

/// u(x,0) = cos(x) + 0.1 cos(x/16) (1 + 2 sin(x/16)) at x_i = i dx.
FieldSnapshot ks_initial_condition(const KSConfig& config);

/// Pseudo-spectral CNAB2 integrator. The linear part -(d2/dx2 + d4/dx4) is
/// treated by Crank-Nicolson (diagonal in Fourier space), the nonlinear
/// part N(u) = -u u_x by second-order Adams-Bashforth.
class KsIntegrator {
public:
    explicit KsIntegrator(const KSConfig& config);
    ~KsIntegrator();
    KsIntegrator(const KsIntegrator&) = delete;
    KsIntegrator& operator=(const KsIntegrator&) = delete;
    KsIntegrator(KsIntegrator&&) noexcept;
    KsIntegrator& operator=(KsIntegrator&&) noexcept;

    /// N(u) = -u u_x evaluated spectrally.
    std::vector<double> nonlinear(const std::vector<double>& u);

    /// One step. An empty prev_nonlinear bootstraps with CNAB1 (explicit
    /// Euler on the nonlinear term). Returns (u_next, N(u)).
    std::pair<std::vector<double>, std::vector<double>>
    step(const std::vector<double>& u, const std::vector<double>& prev_nonlinear);

    /// Advance n_steps from u, starting with a CNAB1 bootstrap.
    std::vector<double> integrate(std::vector<double> u, int n_steps);

    const KSConfig& config() const { return config_; }

private:
    struct Plans;
    KSConfig config_;
    std::unique_ptr<Plans> plans_;
};

std::pair<std::vector<double>, std::vector<double>>
ks_step(const std::vector<double>& state, const std::vector<double>& prev_nonlinear,
        const KSConfig& config);

/// 4800/4 = 1200 snapshots with the default config.
SnapshotCorpus generate_ks_corpus(const KSConfig& config);

// ---------------------------------------------------------------------------
// Gray-Scott on a periodic 2D mesh, explicit Euler with a 5-point Laplacian.
// ---------------------------------------------------------------------------

struct GSConfig {
    double box_size = 2.5;
    int mesh_x = 256;
    int mesh_y = 256;
    double dt_solver = 1.0;
    int n_steps = 3000;
    int save_every = 25;
    double Du = 0.16;
    double Dv = 0.08;
    double f = 0.035;
    double k = 0.060;
    int crop = 128;
    int seed_radius_cells = 20;
    double noise_sigma = 0.05;
    double lower_bound = -0.5;
    double upper_bound = 1.5;

    double dt_koopman() const { return dt_solver * save_every; }
    void validate() const;
};

nlohmann::json to_json(const GSConfig& c);
GSConfig gs_config_from_json(const nlohmann::json& j);

/// Row-major (y, x) fields of the two species.
struct GsState {
    int nx = 0;
    int ny = 0;
    std::vector<double> u;
    std::vector<double> v;

    std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * nx + x; }
};

/// (u,v) = (1,0) with a noisy (0.5,0.25) disc at the mesh centre.
GsState gs_initial_state(const GSConfig& config, std::uint64_t rng_seed);
FieldSnapshot gs_initial_condition(const GSConfig& config, std::uint64_t rng_seed);

GsState gs_step(const GsState& state, const GSConfig& config);

/// Central crop of a state as a channel-last (crop, crop, 2) snapshot.
FieldSnapshot gs_crop(const GsState& state, int crop, std::int64_t time_index);

SnapshotCorpus generate_gs_corpus(const GSConfig& config, std::uint64_t rng_seed);

} // namespace advkoop
