// advkoop: data generation, training, evaluation, imputation, control and plotting.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advkoop/control.hpp"
#include "advkoop/corpus.hpp"
#include "advkoop/evaluation.hpp"
#include "advkoop/figures.hpp"
#include "advkoop/solvers.hpp"
#include "advkoop/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advkoop;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

/// Relative output paths land under $ADVKOOP_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p)
{
    fs::path path(p);
    if (path.is_relative()) {
        if (const char* root = std::getenv("ADVKOOP_OUTPUT_ROOT"); root && *root) {
            return fs::path(root) / path;
        }
    }
    return path;
}

json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path);
    }
    json j;
    in >> j;
    return j;
}

void write_json(const fs::path& path, const json& j)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

void require_file(const std::string& path, const char* what)
{
    if (!fs::exists(path)) {
        throw std::runtime_error(std::string(what) + " not found: " + path);
    }
}

/// A checkpoint file, or a run directory resolved through its `latest` pointer.
std::string resolve_checkpoint(const std::string& path)
{
    if (fs::is_directory(path)) {
        if (auto latest = latest_checkpoint(path)) {
            return latest->string();
        }
        throw std::runtime_error("no checkpoint recorded in run directory " + path);
    }
    require_file(path, "checkpoint");
    return path;
}

/// Parses "a:b" (inclusive a, exclusive b; either side may be empty) or ">a".
IndexPredicate parse_region(const std::string& spec)
{
    if (spec.empty() || spec == "all") {
        return [](std::int64_t) { return true; };
    }
    if (spec.front() == '>') {
        const auto lo = std::stoll(spec.substr(1));
        return [lo](std::int64_t t) { return t > lo; };
    }
    const auto colon = spec.find(':');
    if (colon == std::string::npos) {
        throw CLI::ValidationError("--mask-region", "expected 'a:b', '>a' or 'all'");
    }
    const auto a = spec.substr(0, colon);
    const auto b = spec.substr(colon + 1);
    const std::int64_t lo = a.empty() ? 0 : std::stoll(a);
    const std::int64_t hi = b.empty() ? std::numeric_limits<std::int64_t>::max() : std::stoll(b);
    return [lo, hi](std::int64_t t) { return t >= lo && t < hi; };
}

bool is_gs(const SnapshotCorpus& corpus)
{
    return corpus.metadata().spatial_rank() == 2;
}

/// Problem presets with the corpus's geometry filled in.
std::pair<ModelConfig, TrainConfig> default_configs(const SnapshotCorpus& corpus)
{
    ModelConfig mc = is_gs(corpus) ? ModelConfig::gs_default() : ModelConfig::ks_default();
    TrainConfig tc = is_gs(corpus) ? TrainConfig::gs_preset() : TrainConfig::ks_preset();
    const auto& shape = corpus.metadata().shape;
    mc.extent.assign(shape.begin(), shape.end() - 1);
    mc.spatial_rank = static_cast<int>(mc.extent.size());
    mc.in_channels = static_cast<int>(shape.back());
    return {mc, tc};
}

/// Overlays a {"model": {...}, "train": {...}} file on the presets.
void apply_config_file(const std::string& path, ModelConfig& mc, TrainConfig& tc)
{
    if (path.empty()) {
        return;
    }
    const auto j = read_json(path);
    if (j.contains("model")) {
        auto merged = to_json(mc);
        merged.merge_patch(j.at("model"));
        mc = model_config_from_json(merged);
    }
    if (j.contains("train")) {
        auto merged = to_json(tc);
        merged.merge_patch(j.at("train"));
        tc = train_config_from_json(merged);
    }
}

torch::Tensor channel(const torch::Tensor& field, int c)
{
    return field.select(-1, c);
}

Image render_field(const torch::Tensor& snapshot, int scale, double vmin, double vmax)
{
    // snapshot is channel-last; 1-D fields render as a one-row strip
    const auto f = channel(snapshot, 0);
    return f.dim() == 2 ? heatmap(f, scale, vmin, vmax) : spacetime(f.unsqueeze(0), 16, 1, vmin, vmax);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string problem;
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a)
{
    const json overrides = a.config.empty() ? json::object() : read_json(a.config);
    SnapshotCorpus corpus;
    json resolved{{"command", "gen-data"}, {"problem", a.problem}, {"seed", a.seed}};
    if (a.problem == "ks") {
        auto merged = to_json(KSConfig{});
        merged.merge_patch(overrides);
        const auto cfg = ks_config_from_json(merged);
        resolved["config"] = to_json(cfg);
        corpus = generate_ks_corpus(cfg);
        corpus.metadata().rng_seed = a.seed;
    } else {
        auto merged = to_json(GSConfig{});
        merged.merge_patch(overrides);
        const auto cfg = gs_config_from_json(merged);
        resolved["config"] = to_json(cfg);
        corpus = generate_gs_corpus(cfg, a.seed);
    }
    const auto out = output_path(a.out.empty() ? a.problem + "_corpus.bin" : a.out);
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    save_corpus(corpus, out);
    resolved["output"] = out.string();
    resolved["snapshots"] = corpus.size();
    resolved["shape"] = corpus.metadata().shape;
    write_json(fs::path(out.string() + ".resolved.json"), resolved);
    std::cout << "wrote " << corpus.size() << " snapshots to " << out.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string corpus;
    std::string config;
    std::string out = "train_run";
    std::vector<std::string> ablate;
    double mask_fraction = 0.0;
    std::string mask_region = "all";
    std::vector<std::int64_t> mask_indices;
    bool resume = false;
    std::optional<int> iterations;
    std::optional<std::int64_t> eval_start;
    std::optional<std::int64_t> eval_steps;
    int log_every = 100;
};

int cmd_train(const TrainArgs& a)
{
    require_file(a.corpus, "corpus");
    const auto truth = load_corpus(a.corpus);
    auto [mc, tc] = default_configs(truth);
    apply_config_file(a.config, mc, tc);
    if (a.iterations) {
        tc.iterations = *a.iterations;
    }
    mc.sequence_length = tc.n_s;

    const auto out = output_path(a.out);
    fs::create_directories(out);

    SnapshotCorpus corpus = truth;
    if (!a.mask_indices.empty()) {
        corpus = apply_missing_indices(corpus, a.mask_indices);
    }
    if (a.mask_fraction > 0.0) {
        corpus = apply_missing_policy(corpus, a.mask_fraction, parse_region(a.mask_region), tc.seed);
    }
    const auto missing = corpus.missing_indices();
    if (!missing.empty()) {
        save_corpus(corpus, out / "masked_corpus.bin");
        std::cout << "masked " << missing.size() << " snapshots:";
        for (auto t : missing) {
            std::cout << ' ' << t;
        }
        std::cout << '\n';
    }

    std::vector<AblationVariant> variants;
    for (const auto& name : a.ablate) {
        if (name == "all") {
            for (const auto& n : ablation_variant_names()) {
                variants.push_back(ablation_variant(n, tc.weights));
            }
        } else {
            variants.push_back(ablation_variant(name, tc.weights));
        }
    }
    if (variants.size() == 1) {
        tc.weights = variants.front().weights;
    }

    json resolved{{"command", "train"},
                  {"corpus", a.corpus},
                  {"model_config", to_json(mc)},
                  {"train_config", to_json(tc)},
                  {"variants", json::array()},
                  {"mask_fraction", a.mask_fraction},
                  {"mask_region", a.mask_region},
                  {"missing_indices", missing},
                  {"resume", a.resume}};
    for (const auto& v : variants) {
        resolved["variants"].push_back({{"name", v.name}, {"weights", to_json(v.weights)}});
    }

    const auto log_every = std::max(1, a.log_every);
    auto progress = [log_every](const std::string& tag, const StepLog& s) {
        if (s.iteration % log_every == 0) {
            std::cerr << tag << "iteration " << s.iteration << " total " << s.generator.value("total", 0.0)
                      << " recon " << s.generator.value("recon", 0.0) << " pred " << s.generator.value("pred", 0.0)
                      << '\n';
        }
    };

    if (variants.size() <= 1) {
        write_json(out / "resolved_config.json", resolved);
        TrainRunOptions opts;
        opts.out_dir = out;
        opts.resume = a.resume;
        opts.on_step = [&](const StepLog& s) { progress("", s); };
        const auto ckpt = train(corpus, mc, tc, opts);
        std::cout << "checkpoint " << ckpt.string() << '\n';
        return 0;
    }

    EvalProtocol protocol = is_gs(truth) ? EvalProtocol::gs() : EvalProtocol::ks();
    if (a.eval_start) {
        protocol.start = *a.eval_start;
    }
    if (a.eval_steps) {
        protocol.steps = *a.eval_steps;
    }
    resolved["eval_protocol"] = {{"start", protocol.start}, {"steps", protocol.steps}, {"channel", protocol.channel}};
    write_json(out / "resolved_config.json", resolved);
    const auto rows = run_ablation(corpus, mc, tc, variants, protocol, out, &truth,
                                   [&](const std::string& v, const StepLog& s) { progress(v + ": ", s); });
    write_ablation_csv(rows, protocol, out / "ablation_l1.csv");
    write_json(out / "ablation.json", ablation_summary(rows, protocol));
    bool all_ok = true;
    for (const auto& r : rows) {
        if (r.ok) {
            std::cout << r.name << " mean L1 " << r.mean_l1 << '\n';
        } else {
            all_ok = false;
            std::cerr << r.name << " failed: " << r.error << '\n';
        }
    }
    return all_ok ? 0 : kRuntime;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string corpus;
    std::string out = "eval";
    std::optional<std::int64_t> start;
    std::optional<std::int64_t> steps;
    bool ks = false;
    bool gs = false;
    int channel = -1;
};

int cmd_eval(EvalArgs a)
{
    a.checkpoint = resolve_checkpoint(a.checkpoint);
    require_file(a.corpus, "corpus");
    const auto corpus = load_corpus(a.corpus);
    const bool gs = a.gs || (!a.ks && is_gs(corpus));
    EvalProtocol protocol = gs ? EvalProtocol{60, 32, 0} : EvalProtocol{0, 1152, -1};
    if (a.start) {
        protocol.start = *a.start;
    }
    if (a.steps) {
        protocol.steps = *a.steps;
    }
    if (a.channel >= 0 || !gs) {
        protocol.channel = a.channel;
    }
    const auto trained = load_trained_model(a.checkpoint);
    const auto out = output_path(a.out);
    fs::create_directories(out);

    const auto x0 = corpus_slice(corpus, protocol.start, 1)[0];
    const auto pred = predict_sequence(trained, x0, protocol.steps);
    const auto available = std::min<std::int64_t>(protocol.steps, corpus.size() - protocol.start - 1);
    std::vector<double> l1;
    if (available > 0) {
        auto p = pred.narrow(0, 0, available);
        auto g = corpus_slice(corpus, protocol.start + 1, available);
        if (protocol.channel >= 0) {
            p = channel(p, protocol.channel);
            g = channel(g, protocol.channel);
        }
        l1 = mean_l1_per_step(p, g);
    }

    std::vector<double> step_col;
    std::vector<double> time_col;
    for (std::size_t m = 0; m < l1.size(); ++m) {
        step_col.push_back(static_cast<double>(m + 1));
        time_col.push_back(static_cast<double>(protocol.start) + static_cast<double>(m + 1));
    }
    write_columns_csv(out / "per_step_l1.csv", {"step", "time_index", "mean_l1"}, {step_col, time_col, l1});

    SnapshotCorpus predicted(corpus.metadata());
    const auto flat = pred.contiguous();
    for (std::int64_t m = 0; m < flat.size(0); ++m) {
        const auto s = flat[m].contiguous();
        predicted.append(std::span<const float>(s.data_ptr<float>(), static_cast<std::size_t>(s.numel())));
    }
    save_corpus(predicted, out / "prediction.bin");

    double mean = 0.0;
    for (double e : l1) {
        mean += e;
    }
    mean = l1.empty() ? 0.0 : mean / static_cast<double>(l1.size());
    write_json(out / "metrics.json", {{"checkpoint", a.checkpoint},
                                      {"corpus", a.corpus},
                                      {"start", protocol.start},
                                      {"steps", protocol.steps},
                                      {"channel", protocol.channel},
                                      {"mean_l1", mean},
                                      {"compared_steps", l1.size()}});
    write_json(out / "resolved_config.json", {{"command", "eval"},
                                              {"checkpoint", a.checkpoint},
                                              {"corpus", a.corpus},
                                              {"start", protocol.start},
                                              {"steps", protocol.steps},
                                              {"channel", protocol.channel}});

    if (!gs) {
        const auto p = channel(pred, 0);
        std::vector<Image> panels;
        if (available > 0) {
            const auto g = channel(corpus_slice(corpus, protocol.start + 1, available), 0);
            const double lo = g.min().item<double>();
            const double hi = g.max().item<double>();
            panels.push_back(spacetime(g, 1, 1, lo, hi));
            panels.push_back(spacetime(p.narrow(0, 0, available), 1, 1, lo, hi));
            panels.push_back(spacetime((p.narrow(0, 0, available) - g).abs(), 1, 1));
        } else {
            panels.push_back(spacetime(p));
        }
        write_png(hstack(panels), out / "spacetime.png");
    } else {
        std::vector<Image> top;
        std::vector<Image> bottom;
        for (std::int64_t m : {std::int64_t{0}, protocol.steps / 2, protocol.steps - 1}) {
            top.push_back(heatmap(channel(pred[m], 0), 2, 0.0, 1.0));
            if (m < available) {
                bottom.push_back(heatmap(channel(corpus_slice(corpus, protocol.start + 1 + m, 1)[0], 0), 2, 0.0, 1.0));
            }
        }
        write_png(bottom.empty() ? hstack(top) : vstack({hstack(bottom), hstack(top)}), out / "fields.png");
    }
    if (!l1.empty()) {
        write_png(line_plot({l1}), out / "per_step_l1.png");
    }
    std::cout << "mean L1 over " << l1.size() << " steps: " << mean << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct FillArgs {
    std::string checkpoint;
    std::string corpus;
    std::string truth;
    std::string out = "fill_missing";
};

int cmd_fill_missing(FillArgs a)
{
    a.checkpoint = resolve_checkpoint(a.checkpoint);
    require_file(a.corpus, "corpus");
    const auto corpus = load_corpus(a.corpus);
    std::optional<SnapshotCorpus> truth;
    if (!a.truth.empty()) {
        require_file(a.truth, "truth corpus");
        truth = load_corpus(a.truth);
    }
    const auto trained = load_trained_model(a.checkpoint);
    const auto imputed = impute_missing(corpus, trained, truth ? &*truth : nullptr);
    const auto out = output_path(a.out);
    fs::create_directories(out);

    std::vector<double> idx;
    std::vector<double> src;
    std::vector<double> steps;
    std::vector<double> err;
    std::vector<Image> rows;
    for (const auto& item : imputed) {
        idx.push_back(static_cast<double>(item.index));
        src.push_back(static_cast<double>(item.source));
        steps.push_back(static_cast<double>(item.steps));
        err.push_back(item.l1_error.value_or(std::nan("")));
        std::cout << "t=" << item.index << " from t=" << item.source << " (" << item.steps << " steps)";
        if (item.l1_error) {
            std::cout << " L1 " << *item.l1_error;
        }
        std::cout << '\n';

        std::vector<std::int64_t> shape(corpus.metadata().shape.begin(), corpus.metadata().shape.end());
        const auto field = torch::from_blob(const_cast<float*>(item.values.data()), shape, torch::kFloat32).clone();
        std::vector<Image> panels;
        const bool gs = is_gs(corpus);
        const double lo = gs ? 0.0 : field.min().item<double>();
        const double hi = gs ? 1.0 : field.max().item<double>();
        if (truth && item.index < truth->size()) {
            panels.push_back(render_field(corpus_slice(*truth, item.index, 1)[0], 2, lo, hi));
        }
        panels.push_back(render_field(field, 2, lo, hi));
        rows.push_back(hstack(panels));
    }
    write_columns_csv(out / "imputed.csv", {"index", "source", "steps", "mean_l1"}, {idx, src, steps, err});
    save_corpus(fill_corpus(corpus, imputed), out / "filled_corpus.bin");
    if (!rows.empty()) {
        write_png(vstack(rows), out / "imputed.png");
    }
    write_json(out / "resolved_config.json",
               {{"command", "fill-missing"}, {"checkpoint", a.checkpoint}, {"corpus", a.corpus}, {"truth", a.truth}});
    std::cout << "imputed " << imputed.size() << " snapshots\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct ControlArgs {
    std::string checkpoint;
    std::string corpus;
    std::string config;
    std::string out = "control";
    std::optional<std::int64_t> t_start;
    std::optional<std::int64_t> t_desired;
    std::optional<std::int64_t> delta;
    std::optional<int> steps;
    std::optional<double> lr;
    std::optional<double> u_penalty;
    std::optional<std::uint64_t> l_seed;
};

int cmd_control(ControlArgs a)
{
    a.checkpoint = resolve_checkpoint(a.checkpoint);
    require_file(a.corpus, "corpus");
    ControlConfig cfg;
    if (!a.config.empty()) {
        auto merged = to_json(cfg);
        merged.merge_patch(read_json(a.config));
        cfg = control_config_from_json(merged);
    }
    if (a.t_start) cfg.t_start = *a.t_start;
    if (a.t_desired) cfg.t_desired = *a.t_desired;
    if (a.delta) cfg.delta = *a.delta;
    if (a.steps) cfg.steps = *a.steps;
    if (a.lr) cfg.lr = *a.lr;
    if (a.u_penalty) cfg.u_penalty = *a.u_penalty;
    if (a.l_seed) cfg.l_seed = *a.l_seed;

    const auto corpus = load_corpus(a.corpus);
    const auto trained = load_trained_model(a.checkpoint);
    const auto result = optimize_controls(corpus, trained, cfg);
    const auto out = output_path(a.out);
    fs::create_directories(out);

    const auto u = result.latent.u.to(torch::kFloat64).contiguous();
    std::vector<std::string> header;
    std::vector<std::vector<double>> cols;
    for (std::int64_t j = 0; j < u.size(1); ++j) {
        header.push_back("u" + std::to_string(j));
        const auto c = u.select(1, j).contiguous();
        cols.emplace_back(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
    }
    write_columns_csv(out / "controls.csv", header, cols);

    std::vector<double> it;
    std::vector<double> total;
    std::vector<double> gap;
    std::vector<double> penalty;
    for (const auto& p : result.latent.trace) {
        it.push_back(p.iteration);
        total.push_back(p.total);
        gap.push_back(p.gap);
        penalty.push_back(p.penalty);
    }
    write_columns_csv(out / "loss_trace.csv", {"iteration", "total", "gap", "penalty"}, {it, total, gap, penalty});
    write_json(out / "summary.json", result.summary());
    write_json(out / "resolved_config.json",
               {{"command", "control"}, {"checkpoint", a.checkpoint}, {"corpus", a.corpus}, {"control", to_json(cfg)}});

    SnapshotCorpus forced(corpus.metadata());
    const auto f = result.forced.contiguous();
    for (std::int64_t m = 0; m < f.size(0); ++m) {
        const auto s = f[m].contiguous();
        forced.append(std::span<const float>(s.data_ptr<float>(), static_cast<std::size_t>(s.numel())));
    }
    save_corpus(forced, out / "forced_trajectory.bin");

    const bool gs = is_gs(corpus);
    const double lo = gs ? 0.0 : result.desired_field.min().item<double>();
    const double hi = gs ? 1.0 : result.desired_field.max().item<double>();
    std::vector<Image> panels{render_field(result.start_field, 2, lo, hi), render_field(result.desired_field, 2, lo, hi),
                              render_field(result.forced[cfg.delta - 1], 2, lo, hi)};
    panels.push_back(render_field(result.natural.defined() ? result.natural : result.unforced[cfg.delta - 1], 2, lo, hi));
    write_png(hstack(panels), out / "control_panels.png");
    write_png(render_field(result.error, 2, 0.0, 0.0), out / "control_error.png");
    write_png(line_plot({total}, 640, 360, true), out / "loss_trace.png");
    std::cout << "control objective " << result.latent.initial_total << " -> " << result.latent.total << " after "
              << result.latent.iterations << " iterations\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
    std::string metrics;
    std::string out;
    bool log_y = false;
};

int cmd_plot(const PlotArgs& a)
{
    const fs::path dir(a.metrics);
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("metrics directory not found: " + a.metrics);
    }
    const auto out = a.out.empty() ? dir : output_path(a.out);
    fs::create_directories(out);
    int plotted = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".csv") {
            continue;
        }
        std::vector<std::string> header;
        std::vector<std::vector<double>> cols;
        try {
            read_columns_csv(entry.path(), header, cols);
        } catch (const std::exception&) {
            continue;
        }
        if (cols.size() < 2 || cols.front().empty()) {
            continue;
        }
        // first column is the abscissa; skip a second index column
        std::vector<std::vector<double>> series;
        for (std::size_t c = 1; c < cols.size(); ++c) {
            if (header[c] != "time_index" && header[c] != "source" && header[c] != "steps") {
                series.push_back(cols[c]);
            }
        }
        if (series.empty()) {
            continue;
        }
        const auto rel = fs::relative(entry.path(), dir);
        auto target = out / rel;
        target.replace_extension(".png");
        fs::create_directories(target.parent_path());
        write_png(line_plot(series, 640, 360, a.log_y), target);
        std::cout << "plotted " << target.string() << " (";
        for (std::size_t c = 1; c < header.size(); ++c) {
            std::cout << (c > 1 ? ", " : "") << header[c];
        }
        std::cout << ")\n";
        ++plotted;
    }
    if (plotted == 0) {
        throw std::runtime_error("nothing to plot in " + a.metrics);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adversarial Koopman toolkit: data generation, training, evaluation and control"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Integrate KS or GS and write a corpus");
    gen_cmd->add_option("problem", gen.problem, "ks or gs")->required()->check(CLI::IsMember({"ks", "gs"}));
    gen_cmd->add_option("--config", gen.config, "JSON overrides of the solver config")->check(CLI::ExistingFile);
    gen_cmd->add_option("--out", gen.out, "Corpus file (default <problem>_corpus.bin)");
    gen_cmd->add_option("--seed", gen.seed, "Initial-condition seed (GS noise)");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model (or an ablation set) on a corpus");
    train_cmd->add_option("--corpus", tr.corpus, "Corpus file")->required();
    train_cmd->add_option("--config", tr.config, "JSON {model:{...}, train:{...}} overrides")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "Run directory");
    train_cmd->add_option("--ablate", tr.ablate,
                          "Variants: koopman, adv_koopman, koopman_grad, adv_koopman_grad, or all")
        ->delimiter(',');
    train_cmd->add_option("--mask-fraction", tr.mask_fraction, "Fraction of the region to mask")
        ->check(CLI::Range(0.0, 1.0));
    train_cmd->add_option("--mask-region", tr.mask_region, "Region: 'a:b', '>a' or 'all'");
    train_cmd->add_option("--mask-indices", tr.mask_indices, "Explicit snapshot indices to mask")->delimiter(',');
    train_cmd->add_flag("--resume", tr.resume, "Continue from the run directory's latest checkpoint");
    train_cmd->add_option("--iterations", tr.iterations, "Override the iteration count");
    train_cmd->add_option("--eval-start", tr.eval_start, "Ablation evaluation start index");
    train_cmd->add_option("--eval-steps", tr.eval_steps, "Ablation evaluation length");
    train_cmd->add_option("--log-every", tr.log_every, "Progress interval");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Chained-cycle prediction against a corpus");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file or run directory")->required();
    eval_cmd->add_option("--corpus", ev.corpus, "Ground-truth corpus")->required();
    eval_cmd->add_option("--out", ev.out, "Output directory");
    eval_cmd->add_option("--start", ev.start, "Start snapshot index");
    eval_cmd->add_option("--steps", ev.steps, "Number of predicted steps");
    eval_cmd->add_option("--channel", ev.channel, "Channel for the error metric (-1: all)");
    auto* ks_flag = eval_cmd->add_flag("--ks", ev.ks, "KS protocol defaults (t=0, 1152 steps)");
    eval_cmd->add_flag("--gs", ev.gs, "GS protocol defaults (t=60, 32 steps)")->excludes(ks_flag);

    FillArgs fill;
    auto* fill_cmd = app.add_subcommand("fill-missing", "Impute masked snapshots from the latest available one");
    fill_cmd->add_option("--checkpoint", fill.checkpoint, "Checkpoint file or run directory")->required();
    fill_cmd->add_option("--corpus", fill.corpus, "Masked corpus")->required();
    fill_cmd->add_option("--truth", fill.truth, "Unmasked corpus for error reporting");
    fill_cmd->add_option("--out", fill.out, "Output directory");

    ControlArgs ctl;
    auto* control_cmd = app.add_subcommand("control", "Optimise latent control inputs");
    control_cmd->add_option("--checkpoint", ctl.checkpoint, "Checkpoint file or run directory")->required();
    control_cmd->add_option("--corpus", ctl.corpus, "Corpus")->required();
    control_cmd->add_option("--config", ctl.config, "JSON control config")->check(CLI::ExistingFile);
    control_cmd->add_option("--out", ctl.out, "Output directory");
    control_cmd->add_option("--t-start", ctl.t_start, "Snapshot the control starts from");
    control_cmd->add_option("--t-desired", ctl.t_desired, "Snapshot whose latent code is the target");
    control_cmd->add_option("--delta", ctl.delta, "Number of controlled steps");
    control_cmd->add_option("--steps", ctl.steps, "Optimizer iterations");
    control_cmd->add_option("--lr", ctl.lr, "Adam learning rate");
    control_cmd->add_option("--u-penalty", ctl.u_penalty, "Weight of the control energy term");
    control_cmd->add_option("--l-seed", ctl.l_seed, "Seed of the boolean L matrix");

    PlotArgs plot;
    auto* plot_cmd = app.add_subcommand("plot", "Render every CSV series in a metrics directory");
    plot_cmd->add_option("--metrics", plot.metrics, "Metrics directory")->required();
    plot_cmd->add_option("--out", plot.out, "Figure directory (default: the metrics directory)");
    plot_cmd->add_flag("--log-y", plot.log_y, "Logarithmic ordinate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*gen_cmd) {
            return cmd_gen_data(gen);
        }
        if (*train_cmd) {
            return cmd_train(tr);
        }
        if (*eval_cmd) {
            return cmd_eval(ev);
        }
        if (*fill_cmd) {
            return cmd_fill_missing(fill);
        }
        if (*control_cmd) {
            return cmd_control(ctl);
        }
        if (*plot_cmd) {
            return cmd_plot(plot);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
