#include "advkoop/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <fftw3.h>

#include "advkoop/errors.hpp"

namespace advkoop {

namespace {

void require(bool cond, const char* what)
{
    if (!cond) {
        throw std::invalid_argument(what);
    }
}

} // namespace

// ---------------------------------------------------------------------------
// KS
// ---------------------------------------------------------------------------

std::int64_t KSConfig::n_points() const
{
    return static_cast<std::int64_t>(std::llround(domain_length / dx));
}

void KSConfig::validate() const
{
    require(dx > 0.0, "KSConfig: dx must be positive");
    require(dt_solver > 0.0, "KSConfig: dt_solver must be positive");
    require(domain_length > 0.0, "KSConfig: domain_length must be positive");
    require(n_points() >= 4, "KSConfig: need at least 4 grid points");
    require(save_every >= 1, "KSConfig: save_every must be >= 1");
    require(n_steps >= 0 && n_steps % save_every == 0, "KSConfig: n_steps must be divisible by save_every");
    require(blowup_bound > 0.0, "KSConfig: blowup_bound must be positive");
}

nlohmann::json to_json(const KSConfig& c)
{
    return {{"domain_length", c.domain_length}, {"dx", c.dx},       {"dt_solver", c.dt_solver},
            {"n_steps", c.n_steps},             {"save_every", c.save_every},
            {"blowup_bound", c.blowup_bound}};
}

KSConfig ks_config_from_json(const nlohmann::json& j)
{
    KSConfig c;
    c.domain_length = j.value("domain_length", c.domain_length);
    c.dx = j.value("dx", c.dx);
    c.dt_solver = j.value("dt_solver", c.dt_solver);
    c.n_steps = j.value("n_steps", c.n_steps);
    c.save_every = j.value("save_every", c.save_every);
    c.blowup_bound = j.value("blowup_bound", c.blowup_bound);
    return c;
}

FieldSnapshot ks_initial_condition(const KSConfig& config)
{
    config.validate();
    const auto n = config.n_points();
    FieldSnapshot s;
    s.values.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) * config.dx;
        s.values[static_cast<std::size_t>(i)] =
            std::cos(x) + 0.1 * std::cos(x / 16.0) * (1.0 + 2.0 * std::sin(x / 16.0));
    }
    s.shape = {n, 1};
    s.channels = 1;
    s.time_index = 0;
    return s;
}

struct KsIntegrator::Plans {
    int n = 0;
    double* real = nullptr;
    fftw_complex* spec = nullptr;
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
    std::vector<double> wavenumber;  // k_j, with the Nyquist derivative zeroed
    std::vector<double> linear;      // k^2 - k^4

    explicit Plans(int size) : n(size)
    {
        real = fftw_alloc_real(static_cast<std::size_t>(n));
        spec = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        forward = fftw_plan_dft_r2c_1d(n, real, spec, FFTW_ESTIMATE);
        backward = fftw_plan_dft_c2r_1d(n, spec, real, FFTW_ESTIMATE);
    }
    ~Plans()
    {
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
        fftw_free(real);
        fftw_free(spec);
    }
    Plans(const Plans&) = delete;
    Plans& operator=(const Plans&) = delete;

    std::vector<std::complex<double>> fft(const std::vector<double>& u)
    {
        std::copy(u.begin(), u.end(), real);
        fftw_execute(forward);
        std::vector<std::complex<double>> out(static_cast<std::size_t>(n / 2 + 1));
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] = {spec[j][0], spec[j][1]};
        }
        return out;
    }

    std::vector<double> ifft(const std::vector<std::complex<double>>& uh)
    {
        for (std::size_t j = 0; j < uh.size(); ++j) {
            spec[j][0] = uh[j].real();
            spec[j][1] = uh[j].imag();
        }
        fftw_execute(backward);
        std::vector<double> out(static_cast<std::size_t>(n));
        const double scale = 1.0 / n;
        for (int i = 0; i < n; ++i) {
            out[static_cast<std::size_t>(i)] = real[i] * scale;
        }
        return out;
    }
};

KsIntegrator::KsIntegrator(const KSConfig& config) : config_(config)
{
    config_.validate();
    const int n = static_cast<int>(config_.n_points());
    plans_ = std::make_unique<Plans>(n);
    const int nh = n / 2 + 1;
    plans_->wavenumber.resize(static_cast<std::size_t>(nh));
    plans_->linear.resize(static_cast<std::size_t>(nh));
    // The effective period is n*dx, which equals domain_length up to rounding.
    const double period = static_cast<double>(n) * config_.dx;
    for (int j = 0; j < nh; ++j) {
        const double k = 2.0 * std::numbers::pi * j / period;
        plans_->linear[static_cast<std::size_t>(j)] = k * k - k * k * k * k;
        plans_->wavenumber[static_cast<std::size_t>(j)] = (n % 2 == 0 && j == n / 2) ? 0.0 : k;
    }
}

KsIntegrator::~KsIntegrator() = default;
KsIntegrator::KsIntegrator(KsIntegrator&&) noexcept = default;
KsIntegrator& KsIntegrator::operator=(KsIntegrator&&) noexcept = default;

std::vector<double> KsIntegrator::nonlinear(const std::vector<double>& u)
{
    std::vector<double> half_sq(u.size());
    std::transform(u.begin(), u.end(), half_sq.begin(), [](double a) { return 0.5 * a * a; });
    auto h = plans_->fft(half_sq);
    for (std::size_t j = 0; j < h.size(); ++j) {
        h[j] *= std::complex<double>(0.0, -plans_->wavenumber[j]);
    }
    return plans_->ifft(h);
}

std::pair<std::vector<double>, std::vector<double>>
KsIntegrator::step(const std::vector<double>& u, const std::vector<double>& prev_nonlinear)
{
    const auto n = static_cast<std::size_t>(plans_->n);
    if (u.size() != n) {
        throw std::invalid_argument("ks_step: state has wrong length");
    }
    if (!prev_nonlinear.empty() && prev_nonlinear.size() != n) {
        throw std::invalid_argument("ks_step: previous nonlinear term has wrong length");
    }
    const double h = config_.dt_solver;
    auto n_now = nonlinear(u);
    auto uh = plans_->fft(u);
    auto nh_now = plans_->fft(n_now);
    std::vector<std::complex<double>> nh_prev =
        prev_nonlinear.empty() ? nh_now : plans_->fft(prev_nonlinear);

    for (std::size_t j = 0; j < uh.size(); ++j) {
        const double lam = plans_->linear[j];
        const auto explicit_part = prev_nonlinear.empty()
                                       ? h * nh_now[j]
                                       : h * (1.5 * nh_now[j] - 0.5 * nh_prev[j]);
        uh[j] = ((1.0 + 0.5 * h * lam) * uh[j] + explicit_part) / (1.0 - 0.5 * h * lam);
    }
    auto next = plans_->ifft(uh);
    for (double v : next) {
        if (!std::isfinite(v) || std::abs(v) > config_.blowup_bound) {
            throw SolverBlowup("KS solver blow-up: |u| exceeded " + std::to_string(config_.blowup_bound));
        }
    }
    return {std::move(next), std::move(n_now)};
}

std::vector<double> KsIntegrator::integrate(std::vector<double> u, int n_steps)
{
    std::vector<double> prev;
    for (int s = 0; s < n_steps; ++s) {
        auto [next, n_now] = step(u, prev);
        u = std::move(next);
        prev = std::move(n_now);
    }
    return u;
}

std::pair<std::vector<double>, std::vector<double>>
ks_step(const std::vector<double>& state, const std::vector<double>& prev_nonlinear, const KSConfig& config)
{
    KsIntegrator integrator(config);
    return integrator.step(state, prev_nonlinear);
}

SnapshotCorpus generate_ks_corpus(const KSConfig& config)
{
    KsIntegrator integrator(config);
    CorpusMetadata meta;
    meta.problem = "ks";
    meta.shape = {config.n_points(), 1};
    meta.dt_solver = config.dt_solver;
    meta.dt_koopman = config.dt_koopman();
    meta.save_every = config.save_every;
    meta.dx = config.dx;
    meta.rng_seed = 0;
    meta.config = to_json(config);
    SnapshotCorpus corpus(meta);

    auto u = ks_initial_condition(config).values;
    std::vector<double> prev;
    std::vector<float> buf(u.size());
    for (int s = 1; s <= config.n_steps; ++s) {
        auto [next, n_now] = integrator.step(u, prev);
        u = std::move(next);
        prev = std::move(n_now);
        if (s % config.save_every == 0) {
            std::transform(u.begin(), u.end(), buf.begin(), [](double v) { return static_cast<float>(v); });
            corpus.append(buf);
        }
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// GS
// ---------------------------------------------------------------------------

void GSConfig::validate() const
{
    require(mesh_x >= 3 && mesh_y >= 3, "GSConfig: mesh too small");
    require(crop >= 1 && crop <= mesh_x && crop <= mesh_y, "GSConfig: crop must fit inside the mesh");
    require(Du > 0.0 && Dv > 0.0, "GSConfig: diffusion coefficients must be positive");
    require(f >= 0.0 && f < 1.0 && k >= 0.0 && k < 1.0, "GSConfig: f and k must lie in [0,1)");
    require(dt_solver > 0.0, "GSConfig: dt_solver must be positive");
    require(save_every >= 1, "GSConfig: save_every must be >= 1");
    require(n_steps >= 0 && n_steps % save_every == 0, "GSConfig: n_steps must be divisible by save_every");
    require(noise_sigma >= 0.0, "GSConfig: noise_sigma must be non-negative");
    require(seed_radius_cells >= 0, "GSConfig: seed radius must be non-negative");
}

nlohmann::json to_json(const GSConfig& c)
{
    return {{"box_size", c.box_size}, {"mesh_x", c.mesh_x},     {"mesh_y", c.mesh_y},
            {"dt_solver", c.dt_solver}, {"n_steps", c.n_steps}, {"save_every", c.save_every},
            {"Du", c.Du},             {"Dv", c.Dv},             {"f", c.f},
            {"k", c.k},               {"crop", c.crop},         {"seed_radius_cells", c.seed_radius_cells},
            {"noise_sigma", c.noise_sigma}, {"lower_bound", c.lower_bound}, {"upper_bound", c.upper_bound}};
}

GSConfig gs_config_from_json(const nlohmann::json& j)
{
    GSConfig c;
    c.box_size = j.value("box_size", c.box_size);
    c.mesh_x = j.value("mesh_x", c.mesh_x);
    c.mesh_y = j.value("mesh_y", c.mesh_y);
    c.dt_solver = j.value("dt_solver", c.dt_solver);
    c.n_steps = j.value("n_steps", c.n_steps);
    c.save_every = j.value("save_every", c.save_every);
    c.Du = j.value("Du", c.Du);
    c.Dv = j.value("Dv", c.Dv);
    c.f = j.value("f", c.f);
    c.k = j.value("k", c.k);
    c.crop = j.value("crop", c.crop);
    c.seed_radius_cells = j.value("seed_radius_cells", c.seed_radius_cells);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.lower_bound = j.value("lower_bound", c.lower_bound);
    c.upper_bound = j.value("upper_bound", c.upper_bound);
    return c;
}

GsState gs_initial_state(const GSConfig& config, std::uint64_t rng_seed)
{
    config.validate();
    GsState s;
    s.nx = config.mesh_x;
    s.ny = config.mesh_y;
    const auto cells = static_cast<std::size_t>(s.nx) * s.ny;
    s.u.assign(cells, 1.0);
    s.v.assign(cells, 0.0);

    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int cx = s.nx / 2;
    const int cy = s.ny / 2;
    const int r = config.seed_radius_cells;
    for (int y = 0; y < s.ny; ++y) {
        for (int x = 0; x < s.nx; ++x) {
            const int ddx = x - cx;
            const int ddy = y - cy;
            if (ddx * ddx + ddy * ddy >= r * r) {
                continue;
            }
            const double nu = config.noise_sigma * noise(rng);
            const double nv = config.noise_sigma * noise(rng);
            s.u[s.index(y, x)] = std::clamp(0.5 + nu, 0.0, 1.0);
            s.v[s.index(y, x)] = std::clamp(0.25 + nv, 0.0, 1.0);
        }
    }
    return s;
}

namespace {

FieldSnapshot full_field(const GsState& s, std::int64_t time_index)
{
    FieldSnapshot f;
    f.values.resize(static_cast<std::size_t>(s.nx) * s.ny * 2);
    for (int y = 0; y < s.ny; ++y) {
        for (int x = 0; x < s.nx; ++x) {
            const auto c = s.index(y, x);
            f.values[2 * c] = s.u[c];
            f.values[2 * c + 1] = s.v[c];
        }
    }
    f.shape = {s.ny, s.nx, 2};
    f.channels = 2;
    f.time_index = time_index;
    return f;
}

} // namespace

FieldSnapshot gs_initial_condition(const GSConfig& config, std::uint64_t rng_seed)
{
    return full_field(gs_initial_state(config, rng_seed), 0);
}

GsState gs_step(const GsState& s, const GSConfig& config)
{
    const auto cells = static_cast<std::size_t>(s.nx) * s.ny;
    if (s.u.size() != cells || s.v.size() != cells) {
        throw std::invalid_argument("gs_step: field size does not match mesh");
    }
    GsState out = s;
    const double dt = config.dt_solver;
    const double fk = config.f + config.k;
    for (int y = 0; y < s.ny; ++y) {
        const int ym = (y == 0) ? s.ny - 1 : y - 1;
        const int yp = (y == s.ny - 1) ? 0 : y + 1;
        for (int x = 0; x < s.nx; ++x) {
            const int xm = (x == 0) ? s.nx - 1 : x - 1;
            const int xp = (x == s.nx - 1) ? 0 : x + 1;
            const auto c = s.index(y, x);
            const double u = s.u[c];
            const double v = s.v[c];
            // Laplacian in cell units; Du and Dv are given per cell^2.
            const double lap_u = s.u[s.index(ym, x)] + s.u[s.index(yp, x)] + s.u[s.index(y, xm)] +
                                 s.u[s.index(y, xp)] - 4.0 * u;
            const double lap_v = s.v[s.index(ym, x)] + s.v[s.index(yp, x)] + s.v[s.index(y, xm)] +
                                 s.v[s.index(y, xp)] - 4.0 * v;
            const double uvv = u * v * v;
            const double un = u + dt * (config.Du * lap_u - uvv + config.f * (1.0 - u));
            const double vn = v + dt * (config.Dv * lap_v + uvv - fk * v);
            if (!(un >= config.lower_bound && un <= config.upper_bound && vn >= config.lower_bound &&
                  vn <= config.upper_bound)) {
                throw SolverBlowup("GS solver blow-up: values left [" + std::to_string(config.lower_bound) +
                                   ", " + std::to_string(config.upper_bound) + "]");
            }
            out.u[c] = un;
            out.v[c] = vn;
        }
    }
    return out;
}

FieldSnapshot gs_crop(const GsState& s, int crop, std::int64_t time_index)
{
    if (crop < 1 || crop > s.nx || crop > s.ny) {
        throw std::invalid_argument("gs_crop: crop does not fit the mesh");
    }
    const int x0 = (s.nx - crop) / 2;
    const int y0 = (s.ny - crop) / 2;
    FieldSnapshot f;
    f.values.resize(static_cast<std::size_t>(crop) * crop * 2);
    for (int y = 0; y < crop; ++y) {
        for (int x = 0; x < crop; ++x) {
            const auto c = s.index(y0 + y, x0 + x);
            const auto o = (static_cast<std::size_t>(y) * crop + x) * 2;
            f.values[o] = s.u[c];
            f.values[o + 1] = s.v[c];
        }
    }
    f.shape = {crop, crop, 2};
    f.channels = 2;
    f.time_index = time_index;
    return f;
}

SnapshotCorpus generate_gs_corpus(const GSConfig& config, std::uint64_t rng_seed)
{
    config.validate();
    CorpusMetadata meta;
    meta.problem = "gs";
    meta.shape = {config.crop, config.crop, 2};
    meta.dt_solver = config.dt_solver;
    meta.dt_koopman = config.dt_koopman();
    meta.save_every = config.save_every;
    meta.dx = 1.0;
    meta.rng_seed = rng_seed;
    meta.config = to_json(config);
    SnapshotCorpus corpus(meta);

    auto state = gs_initial_state(config, rng_seed);
    std::int64_t saved = 0;
    for (int s = 1; s <= config.n_steps; ++s) {
        state = gs_step(state, config);
        if (s % config.save_every == 0) {
            corpus.append(gs_crop(state, config.crop, saved++));
        }
    }
    return corpus;
}

} // namespace advkoop
