#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "advkoop/corpus.hpp"
#include "advkoop/koopman.hpp"
#include "advkoop/networks.hpp"

namespace advkoop {

struct TrainConfig {
    int iterations = 50000;
    double learning_rate = 5e-5;
    double disc_learning_rate = 5e-5;
    double aux_learning_rate = 0.0;    // 0: same as learning_rate
    int disc_updates_per_gen = 4;
    int n_s = 64;
    std::uint64_t seed = 0;
    int checkpoint_every = 5000;
    int batch_size = 1;                // sequences per update
    bool normalize = true;             // standardize data per channel before training
    std::vector<std::string> frozen;   // subset of {"encoder", "decoder", "aux"}
    std::string init_from;             // checkpoint whose network weights seed a fresh run
    LossWeights weights;

    static TrainConfig ks_preset();
    static TrainConfig gs_preset();
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Everything needed to run a trained model on raw corpus data.
struct TrainedModel {
    std::shared_ptr<KoopmanModel> model;
    Normalization normalization;
    double dx = 1.0;
    std::int64_t n_s = 1;

    /// Corpus-unit snapshots [T, spatial..., C] -> normalized network layout.
    torch::Tensor to_model_space(const torch::Tensor& channel_last) const;
    /// Inverse of to_model_space.
    torch::Tensor to_corpus_space(const torch::Tensor& network_layout) const;
};

/// One iteration's logged values.
struct StepLog {
    std::int64_t iteration = 0;
    std::int64_t start_index = 0;
    nlohmann::json generator;          // LossBreakdown::to_json()
    std::vector<double> disc_loss;     // one entry per critic update
    std::vector<double> gradient_penalty;
    int disc_updates = 0;

    nlohmann::json to_json() const;
};

/// Owns the model, both optimizers and every random stream of a training run.
class Trainer {
public:
    Trainer(const SnapshotCorpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config);

    /// Restores a run from a checkpoint written by save_checkpoint().
    static Trainer resume(const SnapshotCorpus& corpus, const std::filesystem::path& checkpoint);

    /// One iteration: critic updates (when lambda_gan > 0) then one generator update.
    StepLog step();

    /// Runs until `iteration() == until`, calling `on_step` after every step.
    void run(std::int64_t until, const std::function<void(const StepLog&)>& on_step = {});

    void save_checkpoint(const std::filesystem::path& path) const;

    std::int64_t iteration() const { return iteration_; }
    KoopmanModel& model() { return *model_; }
    const KoopmanModel& model() const { return *model_; }
    const TrainConfig& config() const { return config_; }
    const Normalization& normalization() const { return normalization_; }
    double dx() const { return dx_; }
    /// The training corpus in model units (normalized copy).
    const SnapshotCorpus& data() const { return data_; }
    TrainedModel trained_model() const;
    const torch::optim::Adam& generator_optimizer() const { return *gen_opt_; }
    const torch::optim::Adam& critic_optimizer() const { return *disc_opt_; }

    /// Anchor sampling: uniform over windows whose first snapshot is available.
    SequenceSample draw_sample();
    torch::Tensor sample_tensor(const SequenceSample& s) const;

private:
    Trainer(const SnapshotCorpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
            bool fresh);

    void apply_frozen();
    void critic_update(StepLog& log);

    TrainConfig config_;
    SnapshotCorpus data_;  // normalized copy
    Normalization normalization_;
    double dx_ = 1.0;
    std::shared_ptr<KoopmanModel> model_;
    std::unique_ptr<torch::optim::Adam> gen_opt_;
    std::unique_ptr<torch::optim::Adam> disc_opt_;
    std::mt19937_64 sampler_;
    torch::Generator penalty_gen_;
    std::int64_t iteration_ = 0;
};

/// Loads a checkpoint for inference (eval mode only; optimizer state ignored).
TrainedModel load_trained_model(const std::filesystem::path& checkpoint);

/// Reads the JSON sidecar of a checkpoint.
nlohmann::json read_checkpoint_metadata(const std::filesystem::path& checkpoint);

struct TrainRunOptions {
    std::filesystem::path out_dir;
    bool resume = false;              // continue from out_dir/latest if present
    std::function<void(const StepLog&)> on_step;
};

/// Full training run with periodic checkpoints and an NDJSON log
/// (out_dir/train_log.ndjson). Runs until `train_config.iterations`, also when
/// resuming. Returns the final checkpoint path.
std::filesystem::path train(const SnapshotCorpus& corpus, const ModelConfig& model_config,
                            const TrainConfig& train_config, const TrainRunOptions& options);

/// Path of the most recent checkpoint in a run directory, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& out_dir);

} // namespace advkoop
