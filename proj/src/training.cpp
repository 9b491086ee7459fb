#include "advkoop/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "advkoop/errors.hpp"

namespace advkoop {

namespace fs = std::filesystem;

namespace {

constexpr int kCheckpointFormatVersion = 1;

torch::Generator make_cpu_generator(std::uint64_t seed)
{
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

torch::Tensor generator_state(const torch::Generator& gen)
{
    return gen.get_state();
}

fs::path sidecar(const fs::path& checkpoint)
{
    return fs::path(checkpoint.string() + ".json");
}

std::string encode_engine(const std::mt19937_64& engine)
{
    std::ostringstream os;
    os << engine;
    return os.str();
}

void decode_engine(std::mt19937_64& engine, const std::string& state)
{
    std::istringstream is(state);
    is >> engine;
    if (!is) {
        throw std::runtime_error("checkpoint: corrupt sampler state");
    }
}

void write_arrays(torch::serialize::OutputArchive& archive, const KoopmanModel& model)
{
    for (const auto& [name, t] : model.named_arrays()) {
        archive.write(name, t, /*is_buffer=*/true);
    }
}

void read_arrays(torch::serialize::InputArchive& archive, KoopmanModel& model)
{
    torch::NoGradGuard guard;
    for (auto& [name, t] : model.named_arrays()) {
        torch::Tensor stored;
        archive.read(name, stored, /*is_buffer=*/true);
        if (stored.sizes() != t.sizes()) {
            throw std::runtime_error("checkpoint: array '" + name + "' has unexpected shape");
        }
        t.copy_(stored);
    }
}

void check_corpus_matches(const SnapshotCorpus& corpus, const ModelConfig& mc)
{
    const auto& shape = corpus.metadata().shape;
    if (static_cast<int>(shape.size()) != mc.spatial_rank + 1 || shape.back() != mc.in_channels) {
        throw ShapeMismatch("corpus snapshot shape is incompatible with the model configuration");
    }
    for (int r = 0; r < mc.spatial_rank; ++r) {
        if (shape[static_cast<std::size_t>(r)] != mc.extent[static_cast<std::size_t>(r)]) {
            throw ShapeMismatch("corpus spatial extent differs from the model extent");
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::ks_preset()
{
    TrainConfig c;
    c.n_s = 64;
    c.normalize = true;
    c.weights = LossWeights::ks_preset();
    return c;
}

TrainConfig TrainConfig::gs_preset()
{
    TrainConfig c;
    c.n_s = 32;
    c.normalize = false;
    c.weights = LossWeights::gs_preset();
    return c;
}

void TrainConfig::validate() const
{
    if (iterations < 0 || n_s < 1 || batch_size < 1 || checkpoint_every < 1 || disc_updates_per_gen < 0) {
        throw std::invalid_argument("TrainConfig: counts must be positive");
    }
    if (!(learning_rate > 0.0) || !(disc_learning_rate > 0.0) || !(aux_learning_rate >= 0.0)) {
        throw std::invalid_argument("TrainConfig: learning rates must be positive");
    }
    for (const auto& f : frozen) {
        if (f != "encoder" && f != "decoder" && f != "aux") {
            throw std::invalid_argument("TrainConfig: unknown frozen network '" + f + "'");
        }
    }
    weights.validate();
}

nlohmann::json to_json(const TrainConfig& c)
{
    return {{"iterations", c.iterations},
            {"learning_rate", c.learning_rate},
            {"disc_learning_rate", c.disc_learning_rate},
            {"aux_learning_rate", c.aux_learning_rate},
            {"disc_updates_per_gen", c.disc_updates_per_gen},
            {"n_s", c.n_s},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"batch_size", c.batch_size},
            {"normalize", c.normalize},
            {"frozen", c.frozen},
            {"init_from", c.init_from},
            {"weights", to_json(c.weights)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.disc_learning_rate = j.value("disc_learning_rate", c.disc_learning_rate);
    c.aux_learning_rate = j.value("aux_learning_rate", c.aux_learning_rate);
    c.disc_updates_per_gen = j.value("disc_updates_per_gen", c.disc_updates_per_gen);
    c.n_s = j.value("n_s", c.n_s);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.normalize = j.value("normalize", c.normalize);
    c.frozen = j.value("frozen", c.frozen);
    c.init_from = j.value("init_from", c.init_from);
    if (j.contains("weights")) {
        c.weights = loss_weights_from_json(j.at("weights"));
    }
    return c;
}

torch::Tensor TrainedModel::to_model_space(const torch::Tensor& channel_last) const
{
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    const auto mean = torch::tensor(normalization.mean, opts);
    const auto stddev = torch::tensor(normalization.stddev, opts);
    const auto x = (channel_last.to(torch::kFloat64) - mean) / stddev;
    return to_network_layout(x).to(model->dtype());
}

torch::Tensor TrainedModel::to_corpus_space(const torch::Tensor& network_layout) const
{
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    const auto mean = torch::tensor(normalization.mean, opts);
    const auto stddev = torch::tensor(normalization.stddev, opts);
    const auto x = to_channel_last(network_layout.to(torch::kFloat64));
    return (x * stddev + mean).to(torch::kFloat32);
}

nlohmann::json StepLog::to_json() const
{
    return {{"iteration", iteration},   {"start_index", start_index},          {"generator", generator},
            {"disc_loss", disc_loss},   {"gradient_penalty", gradient_penalty}, {"disc_updates", disc_updates}};
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const SnapshotCorpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config)
    : Trainer(corpus, model_config, train_config, true)
{
}

Trainer::Trainer(const SnapshotCorpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
                 bool fresh)
    : config_(train_config), data_(corpus), sampler_(train_config.seed),
      penalty_gen_(make_cpu_generator(train_config.seed + 0x5bd1e995ULL))
{
    config_.validate();
    model_config.validate();
    check_corpus_matches(corpus, model_config);
    if (model_config.sequence_length != config_.n_s) {
        throw std::invalid_argument("model sequence_length must equal the training n_S");
    }
    if (corpus.size() < config_.n_s + 1) {
        throw CorpusTooShort("corpus of length " + std::to_string(corpus.size()) + " is too short for n_S = " +
                             std::to_string(config_.n_s));
    }
    normalization_ = config_.normalize ? compute_normalization(corpus)
                                       : Normalization::identity(corpus.metadata().channels());
    for (std::int64_t t = 0; t < data_.size(); ++t) {
        if (!data_.is_missing(t)) {
            normalization_.apply(data_.view(t));
        }
    }
    dx_ = corpus.metadata().dx;

    model_ = std::make_shared<KoopmanModel>(model_config);
    if (fresh && !config_.init_from.empty()) {
        const auto source = read_checkpoint_metadata(config_.init_from);
        if (source.at("model_config") != to_json(model_config)) {
            throw ShapeMismatch("init_from checkpoint has a different model config");
        }
        torch::serialize::InputArchive archive;
        archive.load_from(config_.init_from);
        torch::serialize::InputArchive arrays;
        archive.read("arrays", arrays);
        read_arrays(arrays, *model_);
    }
    apply_frozen();
    std::vector<torch::Tensor> autoencoder = model_->encoder->parameters();
    for (const auto& p : model_->decoder->parameters()) {
        autoencoder.push_back(p);
    }
    const double aux_lr = config_.aux_learning_rate > 0.0 ? config_.aux_learning_rate : config_.learning_rate;
    std::vector<torch::optim::OptimizerParamGroup> groups;
    groups.emplace_back(autoencoder, std::make_unique<torch::optim::AdamOptions>(config_.learning_rate));
    groups.emplace_back(model_->aux->parameters(), std::make_unique<torch::optim::AdamOptions>(aux_lr));
    gen_opt_ = std::make_unique<torch::optim::Adam>(std::move(groups), torch::optim::AdamOptions(config_.learning_rate));
    disc_opt_ = std::make_unique<torch::optim::Adam>(model_->critic_parameters(),
                                                     torch::optim::AdamOptions(config_.disc_learning_rate));
}

void Trainer::apply_frozen()
{
    for (const auto& name : config_.frozen) {
        torch::nn::Module* m = nullptr;
        if (name == "encoder") {
            m = model_->encoder.get();
        } else if (name == "decoder") {
            m = model_->decoder.get();
        } else {
            m = model_->aux.get();
        }
        for (auto& p : m->parameters()) {
            p.requires_grad_(false);
        }
    }
}

SequenceSample Trainer::draw_sample()
{
    for (int attempt = 0; attempt < 100000; ++attempt) {
        auto s = sample_sequence(data_, config_.n_s, sampler_);
        if (!s.mask_seq.front()) {
            return s;
        }
    }
    throw CorpusTooShort("no sequence window with an available anchor snapshot");
}

torch::Tensor Trainer::sample_tensor(const SequenceSample& s) const
{
    std::vector<std::int64_t> shape{s.length};
    for (auto d : data_.metadata().shape) {
        shape.push_back(d);
    }
    auto x = torch::from_blob(const_cast<float*>(s.x_seq.data()), shape, torch::kFloat32).clone();
    return to_network_layout(x).to(model_->dtype());
}

void Trainer::critic_update(StepLog& log)
{
    disc_opt_->zero_grad();
    double disc = 0.0;
    double gp = 0.0;
    for (int b = 0; b < config_.batch_size; ++b) {
        const auto s = draw_sample();
        const auto x = sample_tensor(s);
        GeneratorOutputs out;
        {
            torch::NoGradGuard no_grad;
            out = run_generator(*model_, x, s.mask_seq, Mode::train_fixed_stats);
        }
        const auto [real, fake] = critic_pairs(out);
        const CriticFn critic = [this](const torch::Tensor& t) { return model_->critic->forward(t, Mode::train); };
        const auto terms = gan_losses(real, fake, critic, config_.weights.gp_coeff, true, penalty_gen_);
        const auto loss = (terms.disc_loss + terms.gp) / static_cast<double>(config_.batch_size);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            throw TrainingDiverged("non-finite critic loss at iteration " + std::to_string(iteration_ + 1));
        }
        loss.backward();
        disc += terms.disc_loss.item<double>() / config_.batch_size;
        gp += terms.gp.item<double>() / config_.batch_size;
    }
    disc_opt_->step();
    log.disc_loss.push_back(disc);
    log.gradient_penalty.push_back(gp);
    ++log.disc_updates;
}

StepLog Trainer::step()
{
    StepLog log;
    log.iteration = iteration_ + 1;
    if (config_.weights.lambda_gan > 0.0) {
        for (int k = 0; k < config_.disc_updates_per_gen; ++k) {
            critic_update(log);
        }
    }

    gen_opt_->zero_grad();
    nlohmann::json accumulated;
    for (int b = 0; b < config_.batch_size; ++b) {
        const auto s = draw_sample();
        if (b == 0) {
            log.start_index = s.start_index;
        }
        const auto x = sample_tensor(s);
        const auto out = run_generator(*model_, x, s.mask_seq, Mode::train);
        const auto breakdown =
            total_generator_loss(out, *model_, config_.weights, dx_, Mode::train_fixed_stats, penalty_gen_);
        const double total = breakdown.total.item<double>();
        if (!std::isfinite(total)) {
            throw TrainingDiverged("non-finite generator loss at iteration " + std::to_string(log.iteration) + ": " +
                                   breakdown.to_json().dump());
        }
        (breakdown.total / static_cast<double>(config_.batch_size)).backward();
        auto record = breakdown.to_json();
        if (accumulated.is_null()) {
            accumulated = record;
            for (auto& [k, v] : accumulated.items()) {
                v = v.get<double>() / config_.batch_size;
            }
        } else {
            for (auto& [k, v] : accumulated.items()) {
                v = v.get<double>() + record.at(k).get<double>() / config_.batch_size;
            }
        }
    }
    gen_opt_->step();
    log.generator = accumulated;
    ++iteration_;
    return log;
}

void Trainer::run(std::int64_t until, const std::function<void(const StepLog&)>& on_step)
{
    while (iteration_ < until) {
        const auto log = step();
        if (on_step) {
            on_step(log);
        }
    }
}

TrainedModel Trainer::trained_model() const
{
    return {model_, normalization_, dx_, config_.n_s};
}

void Trainer::save_checkpoint(const fs::path& path) const
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    torch::serialize::OutputArchive archive;
    torch::serialize::OutputArchive arrays;
    write_arrays(arrays, *model_);
    archive.write("arrays", arrays);
    torch::serialize::OutputArchive gen_state;
    gen_opt_->save(gen_state);
    archive.write("generator_optimizer", gen_state);
    torch::serialize::OutputArchive disc_state;
    disc_opt_->save(disc_state);
    archive.write("critic_optimizer", disc_state);
    archive.write("rng_dropout", generator_state(model_->aux->dropout_generator()), true);
    archive.write("rng_penalty", generator_state(penalty_gen_), true);
    archive.save_to(path.string());

    std::vector<std::string> names;
    for (const auto& [name, t] : model_->named_arrays()) {
        names.push_back(name);
    }
    nlohmann::json meta{{"format_version", kCheckpointFormatVersion},
                        {"iteration", iteration_},
                        {"model_config", to_json(model_->config)},
                        {"train_config", to_json(config_)},
                        {"normalization", to_json(normalization_)},
                        {"dx", dx_},
                        {"problem", data_.metadata().problem},
                        {"sampler_state", encode_engine(sampler_)},
                        {"arrays", names}};
    std::ofstream out(sidecar(path));
    if (!out) {
        throw std::runtime_error("cannot write checkpoint metadata: " + sidecar(path).string());
    }
    out << meta.dump(2) << '\n';
}

nlohmann::json read_checkpoint_metadata(const fs::path& checkpoint)
{
    std::ifstream in(sidecar(checkpoint));
    if (!in) {
        throw std::runtime_error("cannot open checkpoint metadata: " + sidecar(checkpoint).string());
    }
    nlohmann::json meta;
    in >> meta;
    if (meta.value("format_version", -1) != kCheckpointFormatVersion) {
        throw FormatVersionMismatch("unsupported checkpoint format version");
    }
    return meta;
}

Trainer Trainer::resume(const SnapshotCorpus& corpus, const fs::path& checkpoint)
{
    const auto meta = read_checkpoint_metadata(checkpoint);
    Trainer t(corpus, model_config_from_json(meta.at("model_config")),
              train_config_from_json(meta.at("train_config")), false);
    torch::serialize::InputArchive archive;
    archive.load_from(checkpoint.string());
    torch::serialize::InputArchive arrays;
    archive.read("arrays", arrays);
    read_arrays(arrays, *t.model_);
    torch::serialize::InputArchive gen_state;
    archive.read("generator_optimizer", gen_state);
    t.gen_opt_->load(gen_state);
    torch::serialize::InputArchive disc_state;
    archive.read("critic_optimizer", disc_state);
    t.disc_opt_->load(disc_state);
    torch::Tensor state;
    archive.read("rng_dropout", state, true);
    t.model_->aux->dropout_generator().set_state(state);
    archive.read("rng_penalty", state, true);
    t.penalty_gen_.set_state(state);
    decode_engine(t.sampler_, meta.at("sampler_state").get<std::string>());
    t.iteration_ = meta.at("iteration").get<std::int64_t>();
    return t;
}

TrainedModel load_trained_model(const fs::path& checkpoint)
{
    const auto meta = read_checkpoint_metadata(checkpoint);
    auto model = std::make_shared<KoopmanModel>(model_config_from_json(meta.at("model_config")));
    torch::serialize::InputArchive archive;
    archive.load_from(checkpoint.string());
    torch::serialize::InputArchive arrays;
    archive.read("arrays", arrays);
    read_arrays(arrays, *model);
    TrainedModel tm;
    tm.model = model;
    tm.normalization = normalization_from_json(meta.at("normalization"));
    tm.dx = meta.at("dx").get<double>();
    tm.n_s = meta.at("train_config").at("n_s").get<std::int64_t>();
    return tm;
}

// ---------------------------------------------------------------------------

std::optional<fs::path> latest_checkpoint(const fs::path& out_dir)
{
    std::ifstream in(out_dir / "latest");
    std::string name;
    if (!in || !std::getline(in, name) || name.empty()) {
        return std::nullopt;
    }
    auto p = out_dir / name;
    if (!fs::exists(p)) {
        return std::nullopt;
    }
    return p;
}

namespace {

fs::path checkpoint_name(const fs::path& out_dir, std::int64_t iteration, const std::string& stem = "checkpoint")
{
    std::ostringstream os;
    os << stem << '_' << std::setw(6) << std::setfill('0') << iteration << ".pt";
    return out_dir / os.str();
}

void mark_latest(const fs::path& out_dir, const fs::path& checkpoint)
{
    std::ofstream(out_dir / "latest", std::ios::trunc) << checkpoint.filename().string() << '\n';
}

} // namespace

fs::path train(const SnapshotCorpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
               const TrainRunOptions& options)
{
    fs::create_directories(options.out_dir);
    std::optional<Trainer> trainer;
    if (options.resume) {
        if (auto latest = latest_checkpoint(options.out_dir)) {
            trainer.emplace(Trainer::resume(corpus, *latest));
        }
    }
    if (!trainer) {
        trainer.emplace(corpus, model_config, train_config);
    }
    std::ofstream(options.out_dir / "run_config.json", std::ios::trunc)
        << nlohmann::json{{"model_config", to_json(trainer->model().config)},
                          {"train_config", to_json(trainer->config())},
                          {"corpus", to_json(corpus.metadata())},
                          {"missing_indices", corpus.missing_indices()}}
               .dump(2)
        << '\n';

    std::ofstream log(options.out_dir / "train_log.ndjson", std::ios::app);
    const auto every = trainer->config().checkpoint_every;
    try {
        trainer->run(train_config.iterations, [&](const StepLog& s) {
            log << s.to_json().dump() << '\n';
            if (s.iteration % every == 0) {
                const auto p = checkpoint_name(options.out_dir, s.iteration);
                trainer->save_checkpoint(p);
                mark_latest(options.out_dir, p);
            }
            if (options.on_step) {
                options.on_step(s);
            }
        });
    } catch (const TrainingDiverged&) {
        log.flush();
        trainer->save_checkpoint(checkpoint_name(options.out_dir, trainer->iteration(), "diverged"));
        throw;
    }
    const auto final_path = checkpoint_name(options.out_dir, trainer->iteration());
    if (!fs::exists(final_path)) {
        trainer->save_checkpoint(final_path);
    }
    mark_latest(options.out_dir, final_path);
    return final_path;
}

} // namespace advkoop
