#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "advkoop/field.hpp"
#include "advkoop/training.hpp"

namespace advkoop {

inline constexpr double kDefaultNormBound = 1e6;

/// Chained-cycle rollout in network layout. `x_start` is [1, C, spatial...];
/// returns the decoded snapshots x_{1..n_steps} as [n_steps, C, spatial...].
torch::Tensor predict_cycles(KoopmanModel& model, const torch::Tensor& x_start, std::int64_t n_steps,
                             std::int64_t cycle_length, double norm_bound = kDefaultNormBound);

/// Corpus-unit rollout from one channel-last snapshot [spatial..., C].
/// Returns [n_steps, spatial..., C] in corpus units.
torch::Tensor predict_sequence(const TrainedModel& trained, const torch::Tensor& x_start, std::int64_t n_steps,
                               double norm_bound = kDefaultNormBound);

/// Channel-last tensor [T, spatial..., C] holding snapshots [first, first + count).
torch::Tensor corpus_slice(const SnapshotCorpus& corpus, std::int64_t first, std::int64_t count);

/// Mean |pred - truth| over every element.
double mean_l1_error(const torch::Tensor& pred, const torch::Tensor& truth);

/// Mean |pred - truth| per leading (time) index.
std::vector<double> mean_l1_per_step(const torch::Tensor& pred, const torch::Tensor& truth);

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

struct AblationVariant {
    std::string name;
    LossWeights weights;
};

/// koopman, adv_koopman, koopman_grad, adv_koopman_grad.
const std::vector<std::string>& ablation_variant_names();

/// Gates lambda_gan to {0, base} and lambda_grad to {0, base} by name.
AblationVariant ablation_variant(const std::string& name, const LossWeights& base);

struct EvalProtocol {
    std::int64_t start = 60;
    std::int64_t steps = 32;
    int channel = -1; // -1: all channels

    static EvalProtocol ks() { return {860, 320, -1}; }
    static EvalProtocol gs() { return {60, 32, 0}; }
};

struct AblationResult {
    std::string name;
    bool ok = false;
    std::string error;
    std::vector<double> l1_curve;
    double mean_l1 = 0.0;
    std::filesystem::path checkpoint;
    std::vector<double> recon_trace; // per-iteration recon loss
};

/// Per-step L1 of the chained rollout from `protocol.start` against `truth`.
std::vector<double> evaluate_protocol(const TrainedModel& trained, const SnapshotCorpus& truth,
                                      const EvalProtocol& protocol);

using AblationProgress = std::function<void(const std::string& variant, const StepLog& log)>;

/// Trains and evaluates each variant with identical seeds. Failures are
/// recorded per row; the remaining variants still run. `truth` defaults to
/// `corpus` (pass the unmasked corpus when training on masked data).
std::vector<AblationResult> run_ablation(const SnapshotCorpus& corpus, const ModelConfig& model_config,
                                         const TrainConfig& train_config,
                                         const std::vector<AblationVariant>& variants,
                                         const EvalProtocol& protocol, const std::filesystem::path& out_dir,
                                         const SnapshotCorpus* truth = nullptr,
                                         const AblationProgress& progress = {});

/// One column per variant, one row per step. Failed variants are omitted.
void write_ablation_csv(const std::vector<AblationResult>& rows, const EvalProtocol& protocol,
                        const std::filesystem::path& path);
nlohmann::json ablation_summary(const std::vector<AblationResult>& rows, const EvalProtocol& protocol);

// ---------------------------------------------------------------------------
// Missing-entry imputation
// ---------------------------------------------------------------------------

struct ImputedSnapshot {
    std::int64_t index = 0;
    std::int64_t source = 0; // most recent available index
    std::int64_t steps = 0;  // index - source
    std::vector<float> values;
    std::optional<double> l1_error;
};

/// For each masked k, predicts k - j steps from the greatest available j < k.
std::vector<ImputedSnapshot> impute_missing(const SnapshotCorpus& corpus, const TrainedModel& trained,
                                            const SnapshotCorpus* truth = nullptr,
                                            double norm_bound = kDefaultNormBound);

/// Source index used for each masked entry; throws when none exists.
std::int64_t most_recent_available(const SnapshotCorpus& corpus, std::int64_t index);

/// Corpus with the imputed snapshots written into the masked slots.
SnapshotCorpus fill_corpus(const SnapshotCorpus& corpus, const std::vector<ImputedSnapshot>& imputed);

} // namespace advkoop
