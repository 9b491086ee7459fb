#include "advkoop/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "advkoop/errors.hpp"

namespace advkoop {

namespace fs = std::filesystem;

torch::Tensor predict_cycles(KoopmanModel& model, const torch::Tensor& x_start, std::int64_t n_steps,
                             std::int64_t cycle_length, double norm_bound)
{
    if (n_steps < 1 || cycle_length < 1) {
        throw std::invalid_argument("predict_cycles: n_steps and cycle length must be positive");
    }
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> decoded;
    auto x = x_start.to(model.dtype());
    for (std::int64_t remaining = n_steps; remaining > 0;) {
        const auto m = std::min(cycle_length, remaining);
        const auto z = model.encoder->forward(x, Mode::eval);
        const auto zs = rollout(z, m, model.aux, Mode::eval, norm_bound);
        auto block = model.decoder->forward(zs.reshape({m, -1}), Mode::eval);
        if (!torch::isfinite(block).all().item().toBool()) {
            throw RolloutDiverged("decoded rollout is not finite");
        }
        x = block.narrow(0, m - 1, 1);
        decoded.push_back(std::move(block));
        remaining -= m;
    }
    return torch::cat(decoded, 0);
}

torch::Tensor predict_sequence(const TrainedModel& trained, const torch::Tensor& x_start, std::int64_t n_steps,
                               double norm_bound)
{
    const auto x = trained.to_model_space(x_start.unsqueeze(0));
    const auto pred = predict_cycles(*trained.model, x, n_steps, trained.n_s, norm_bound);
    return trained.to_corpus_space(pred);
}

torch::Tensor corpus_slice(const SnapshotCorpus& corpus, std::int64_t first, std::int64_t count)
{
    if (first < 0 || count < 0 || first + count > corpus.size()) {
        throw std::out_of_range("corpus_slice: range outside the corpus");
    }
    std::vector<std::int64_t> shape{count};
    for (auto d : corpus.metadata().shape) {
        shape.push_back(d);
    }
    if (count == 0) {
        return torch::zeros(shape, torch::kFloat32);
    }
    auto* base = const_cast<float*>(corpus.view(first).data());
    return torch::from_blob(base, shape, torch::kFloat32).clone();
}

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b)
{
    if (a.sizes() != b.sizes()) {
        throw ShapeMismatch("prediction and truth shapes differ");
    }
}

} // namespace

double mean_l1_error(const torch::Tensor& pred, const torch::Tensor& truth)
{
    check_same_shape(pred, truth);
    if (pred.numel() == 0) {
        throw ShapeMismatch("mean_l1_error on empty tensors");
    }
    return (pred.to(torch::kFloat64) - truth.to(torch::kFloat64)).abs().mean().item<double>();
}

std::vector<double> mean_l1_per_step(const torch::Tensor& pred, const torch::Tensor& truth)
{
    check_same_shape(pred, truth);
    if (pred.dim() < 1 || pred.numel() == 0) {
        throw ShapeMismatch("mean_l1_per_step needs a leading time axis");
    }
    const auto diff = (pred.to(torch::kFloat64) - truth.to(torch::kFloat64)).abs().reshape({pred.size(0), -1});
    const auto per_step = diff.mean(1).contiguous();
    return {per_step.data_ptr<double>(), per_step.data_ptr<double>() + per_step.numel()};
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& ablation_variant_names()
{
    static const std::vector<std::string> names{"koopman", "adv_koopman", "koopman_grad", "adv_koopman_grad"};
    return names;
}

AblationVariant ablation_variant(const std::string& name, const LossWeights& base)
{
    const auto& names = ablation_variant_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw std::invalid_argument("unknown ablation variant '" + name + "'");
    }
    AblationVariant v{name, base};
    const bool adversarial = name.rfind("adv_", 0) == 0;
    const bool gradient = name.size() >= 5 && name.compare(name.size() - 5, 5, "_grad") == 0;
    if (!adversarial) {
        v.weights.lambda_gan = 0.0;
    }
    if (!gradient) {
        v.weights.lambda_grad = 0.0;
    }
    return v;
}

std::vector<double> evaluate_protocol(const TrainedModel& trained, const SnapshotCorpus& truth,
                                      const EvalProtocol& protocol)
{
    if (protocol.start < 0 || protocol.steps < 1 || protocol.start + protocol.steps > truth.size() - 1) {
        throw std::out_of_range("evaluation window exceeds the corpus");
    }
    if (truth.is_missing(protocol.start)) {
        throw std::invalid_argument("evaluation start snapshot is missing");
    }
    const auto x0 = corpus_slice(truth, protocol.start, 1)[0];
    auto pred = predict_sequence(trained, x0, protocol.steps);
    auto gt = corpus_slice(truth, protocol.start + 1, protocol.steps);
    if (protocol.channel >= 0) {
        pred = pred.select(-1, protocol.channel);
        gt = gt.select(-1, protocol.channel);
    }
    return mean_l1_per_step(pred, gt);
}

std::vector<AblationResult> run_ablation(const SnapshotCorpus& corpus, const ModelConfig& model_config,
                                         const TrainConfig& train_config,
                                         const std::vector<AblationVariant>& variants,
                                         const EvalProtocol& protocol, const fs::path& out_dir,
                                         const SnapshotCorpus* truth, const AblationProgress& progress)
{
    std::vector<AblationResult> rows;
    for (const auto& v : variants) {
        AblationResult row;
        row.name = v.name;
        try {
            auto tc = train_config;
            tc.weights = v.weights;
            TrainRunOptions opts;
            opts.out_dir = out_dir / v.name;
            opts.on_step = [&](const StepLog& log) {
                row.recon_trace.push_back(log.generator.value("recon", 0.0));
                if (progress) {
                    progress(v.name, log);
                }
            };
            row.checkpoint = train(corpus, model_config, tc, opts);
            const auto trained = load_trained_model(row.checkpoint);
            row.l1_curve = evaluate_protocol(trained, truth ? *truth : corpus, protocol);
            double sum = 0.0;
            for (double e : row.l1_curve) {
                sum += e;
            }
            row.mean_l1 = sum / static_cast<double>(row.l1_curve.size());
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblationResult>& rows, const EvalProtocol& protocol, const fs::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "step,time_index";
    for (const auto& r : rows) {
        if (r.ok) {
            out << ',' << r.name;
        }
    }
    out << '\n' << std::setprecision(10);
    for (std::int64_t m = 0; m < protocol.steps; ++m) {
        out << m + 1 << ',' << protocol.start + m + 1;
        for (const auto& r : rows) {
            if (r.ok) {
                out << ',' << r.l1_curve.at(static_cast<std::size_t>(m));
            }
        }
        out << '\n';
    }
}

nlohmann::json ablation_summary(const std::vector<AblationResult>& rows, const EvalProtocol& protocol)
{
    nlohmann::json j{{"start", protocol.start}, {"steps", protocol.steps}, {"channel", protocol.channel}};
    auto& variants = j["variants"] = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row{{"name", r.name}, {"ok", r.ok}};
        if (r.ok) {
            row["mean_l1"] = r.mean_l1;
            row["final_l1"] = r.l1_curve.back();
            row["checkpoint"] = r.checkpoint.string();
        } else {
            row["error"] = r.error;
        }
        variants.push_back(row);
    }
    return j;
}

// ---------------------------------------------------------------------------

std::int64_t most_recent_available(const SnapshotCorpus& corpus, std::int64_t index)
{
    for (auto j = index - 1; j >= 0; --j) {
        if (!corpus.is_missing(j)) {
            return j;
        }
    }
    throw std::invalid_argument("masked index " + std::to_string(index) + " has no available predecessor");
}

std::vector<ImputedSnapshot> impute_missing(const SnapshotCorpus& corpus, const TrainedModel& trained,
                                            const SnapshotCorpus* truth, double norm_bound)
{
    std::vector<ImputedSnapshot> result;
    for (auto k : corpus.missing_indices()) {
        ImputedSnapshot item;
        item.index = k;
        item.source = most_recent_available(corpus, k);
        item.steps = k - item.source;
        const auto x0 = corpus_slice(corpus, item.source, 1)[0];
        const auto pred = predict_sequence(trained, x0, item.steps, norm_bound)[item.steps - 1].contiguous();
        item.values.assign(pred.data_ptr<float>(), pred.data_ptr<float>() + pred.numel());
        if (truth && k < truth->size() && !truth->is_missing(k)) {
            item.l1_error = mean_l1_error(pred, corpus_slice(*truth, k, 1)[0]);
        }
        result.push_back(std::move(item));
    }
    return result;
}

SnapshotCorpus fill_corpus(const SnapshotCorpus& corpus, const std::vector<ImputedSnapshot>& imputed)
{
    SnapshotCorpus filled = corpus;
    for (const auto& item : imputed) {
        auto dst = filled.view(item.index);
        if (static_cast<std::int64_t>(item.values.size()) != filled.snapshot_size()) {
            throw ShapeMismatch("imputed snapshot has the wrong size");
        }
        filled.set_missing(item.index, false);
        std::copy(item.values.begin(), item.values.end(), dst.begin());
    }
    return filled;
}

} // namespace advkoop
