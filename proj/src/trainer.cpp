#include "gmmsep/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace gmmsep {

void TrainConfig::validate() const {
    require(dc_weight >= 0.0 && l1_weight >= 0.0 &&
                std::abs(dc_weight + l1_weight - 1.0) <= 1e-9,
            "train: loss weights must be >= 0 and sum to 1");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(learning_rate >= 0.0, "train: learning_rate must be >= 0");
    require(max_epochs >= 1, "train: max_epochs must be >= 1");
    require(patience >= 1, "train: patience must be >= 1");
    require(mel_bins >= 1, "train: mel_bins must be >= 1");
    require(sample_rate > 0.0, "train: sample_rate must be > 0");
    require(class_names.size() >= 2, "train: need at least 2 classes");
    stft.validate();
    embed_config().validate();
}

EmbeddingNetConfig TrainConfig::embed_config() const {
    EmbeddingNetConfig cfg;
    cfg.num_recurrent_layers = num_recurrent_layers;
    cfg.hidden_units_per_direction = hidden_units;
    cfg.embedding_dim = embedding_dim;
    cfg.mel_bins = mel_bins;
    cfg.unit_normalize = unit_normalize;
    return cfg;
}

BaselineConfig TrainConfig::baseline_config() const {
    BaselineConfig cfg;
    cfg.num_recurrent_layers = num_recurrent_layers;
    cfg.hidden_units_per_direction = hidden_units;
    cfg.num_classes = static_cast<int>(class_names.size());
    cfg.mel_bins = mel_bins;
    return cfg;
}

void apply_train_config_option(TrainConfig& cfg, const std::string& key,
                               const std::string& value) {
    auto as_bool = [&](const std::string& v) {
        if (v == "1" || v == "true" || v == "on") return true;
        if (v == "0" || v == "false" || v == "off") return false;
        throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
    };
    if (key == "covariance") cfg.covariance = covariance_from_string(value);
    else if (key == "dc_weight") cfg.dc_weight = std::stod(value);
    else if (key == "l1_weight") cfg.l1_weight = std::stod(value);
    else if (key == "batch_size") cfg.batch_size = std::stoi(value);
    else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
    else if (key == "max_epochs") cfg.max_epochs = std::stoi(value);
    else if (key == "patience") cfg.patience = std::stoi(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "device") cfg.device = value;
    else if (key == "grad_clip_norm") cfg.grad_clip_norm = std::stod(value);
    else if (key == "window_size") cfg.stft.window_size = std::stoi(value);
    else if (key == "hop_size") cfg.stft.hop_size = std::stoi(value);
    else if (key == "window") cfg.stft.window = value;
    else if (key == "mel_bins") cfg.mel_bins = std::stoi(value);
    else if (key == "sample_rate") cfg.sample_rate = std::stod(value);
    else if (key == "log_floor_db") cfg.log_floor_db = std::stod(value);
    else if (key == "normalize_clip_db") cfg.normalize_clip_db = as_bool(value);
    else if (key == "gate_threshold_db") cfg.gate_threshold_db = std::stod(value);
    else if (key == "layers") cfg.num_recurrent_layers = std::stoi(value);
    else if (key == "hidden_units") cfg.hidden_units = std::stoi(value);
    else if (key == "embedding_dim") cfg.embedding_dim = std::stoi(value);
    else if (key == "unit_normalize") cfg.unit_normalize = as_bool(value);
    else if (key == "baseline") cfg.train_baseline = as_bool(value);
    else if (key == "classes") {
        cfg.class_names.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) cfg.class_names.push_back(item);
        }
    } else {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

void load_train_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        require(eq != std::string::npos,
                "config: line " + std::to_string(lineno) + " is not key=value in " + path);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        apply_train_config_option(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

ModelState ModelState::create(const TrainConfig& cfg) {
    cfg.validate();
    ModelState state;
    state.cfg = cfg;
    state.baseline = cfg.train_baseline;
    if (state.baseline) {
        state.base = BaselineNet(cfg.baseline_config(), cfg.seed);
    } else {
        state.embed = EmbeddingNet(cfg.embed_config(), cfg.seed);
        state.aux = AuxClassNet(static_cast<int>(cfg.class_names.size()), cfg.embedding_dim,
                                cfg.seed + 1);
    }
    return state;
}

std::vector<NamedParam> ModelState::params() {
    if (baseline) return base.params();
    auto out = embed.params();
    for (auto& p : aux.params()) out.push_back(p);
    return out;
}

void ModelState::zero_grads() {
    for (auto& p : params()) p.grad->setZero();
}

Checkpoint ModelState::to_checkpoint() const {
    Checkpoint ck;
    auto& h = ck.header;
    h["format"] = "gmmsep-checkpoint";
    h["version"] = 1;
    h["model"] = baseline ? "baseline" : "classgmm";
    h["covariance"] = covariance_to_string(cfg.covariance);
    h["classes"] = cfg.class_names;
    h["stft"] = {{"window_size", cfg.stft.window_size},
                 {"hop_size", cfg.stft.hop_size},
                 {"window", cfg.stft.window}};
    h["mel_bins"] = cfg.mel_bins;
    h["sample_rate"] = cfg.sample_rate;
    h["log_floor_db"] = cfg.log_floor_db;
    h["normalize_clip_db"] = cfg.normalize_clip_db;
    h["gate_threshold_db"] = cfg.gate_threshold_db;
    h["net"] = {{"layers", cfg.num_recurrent_layers},
                {"hidden_units", cfg.hidden_units},
                {"embedding_dim", cfg.embedding_dim},
                {"unit_normalize", cfg.unit_normalize}};
    h["excerpt_seconds"] = excerpt_seconds;
    h["seed"] = cfg.seed;
    h["train"] = {{"batch_size", cfg.batch_size},
                  {"learning_rate", cfg.learning_rate},
                  {"max_epochs", cfg.max_epochs},
                  {"patience", cfg.patience},
                  {"dc_weight", cfg.dc_weight},
                  {"l1_weight", cfg.l1_weight},
                  {"grad_clip_norm", cfg.grad_clip_norm},
                  {"device", cfg.device}};
    for (auto& p : const_cast<ModelState*>(this)->params()) ck.set(p.name, *p.value);
    return ck;
}

ModelState ModelState::from_checkpoint(const Checkpoint& ck) {
    const auto& h = ck.header;
    try {
        require(h.at("format").get<std::string>() == "gmmsep-checkpoint",
                "checkpoint: wrong format tag");
        TrainConfig cfg;
        cfg.train_baseline = h.at("model").get<std::string>() == "baseline";
        cfg.covariance = covariance_from_string(h.at("covariance").get<std::string>());
        cfg.class_names = h.at("classes").get<std::vector<std::string>>();
        cfg.stft.window_size = h.at("stft").at("window_size").get<int>();
        cfg.stft.hop_size = h.at("stft").at("hop_size").get<int>();
        cfg.stft.window = h.at("stft").at("window").get<std::string>();
        cfg.mel_bins = h.at("mel_bins").get<int>();
        cfg.sample_rate = h.at("sample_rate").get<double>();
        cfg.log_floor_db = h.at("log_floor_db").get<double>();
        cfg.normalize_clip_db = h.at("normalize_clip_db").get<bool>();
        cfg.gate_threshold_db = h.at("gate_threshold_db").get<double>();
        cfg.num_recurrent_layers = h.at("net").at("layers").get<int>();
        cfg.hidden_units = h.at("net").at("hidden_units").get<int>();
        cfg.embedding_dim = h.at("net").at("embedding_dim").get<int>();
        cfg.unit_normalize = h.at("net").at("unit_normalize").get<bool>();
        cfg.seed = h.at("seed").get<uint64_t>();
        cfg.batch_size = h.at("train").at("batch_size").get<int>();
        cfg.learning_rate = h.at("train").at("learning_rate").get<double>();
        cfg.max_epochs = h.at("train").at("max_epochs").get<int>();
        cfg.patience = h.at("train").at("patience").get<int>();
        cfg.dc_weight = h.at("train").at("dc_weight").get<double>();
        cfg.l1_weight = h.at("train").at("l1_weight").get<double>();
        cfg.grad_clip_norm = h.at("train").at("grad_clip_norm").get<double>();
        cfg.device = h.at("train").at("device").get<std::string>();

        ModelState state = ModelState::create(cfg);
        state.excerpt_seconds = h.at("excerpt_seconds").get<double>();
        for (auto& p : state.params()) {
            const MatrixXd& stored = ck.array(p.name);
            require(stored.rows() == p.value->rows() && stored.cols() == p.value->cols(),
                    "checkpoint: array shape mismatch for " + p.name);
            require(stored.allFinite(), "checkpoint: non-finite weights in " + p.name);
            *p.value = stored;
        }
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: corrupt header: ") + e.what());
    }
}

ModelState ModelState::load(const std::string& path) {
    return from_checkpoint(Checkpoint::load(path));
}

void ModelState::save(const std::string& path) const { to_checkpoint().save(path); }

MatrixXd input_logmel(const ComplexSpectrogram& spec, const TrainConfig& cfg,
                      const MelFilterbank& fb) {
    MatrixXd logmag = log_magnitude(spec, cfg.log_floor_db);
    if (cfg.normalize_clip_db) logmag.array() -= logmag.maxCoeff();
    return mel_project(logmag, fb);
}

FeaturizedClip featurize(const AudioClip& mixture, const std::vector<AudioClip>& stems,
                         const TrainConfig& cfg, const MelFilterbank& fb) {
    require(stems.size() == cfg.class_names.size(), "featurize: stem count mismatch");
    const ComplexSpectrogram mix_spec = stft(mixture.downmix_mono(), cfg.stft);

    FeaturizedClip out;
    out.frames = mix_spec.num_frames();
    out.mix_mag = mix_spec.magnitude();
    out.logmel = input_logmel(mix_spec, cfg, fb);
    for (const auto& stem : stems)
        out.source_mags.push_back(stft(stem.downmix_mono(), cfg.stft).magnitude());

    const std::vector<MatrixXd> ibm = ideal_binary_masks(out.source_mags);
    const MatrixXd mix_mel_mag = mel_project(out.mix_mag, fb);
    out.targets = mel_affinity_targets(ibm, fb, mix_mel_mag, cfg.gate_threshold_db);
    return out;
}

void AdamOptimizer::apply(const std::vector<NamedParam>& params, double clip_norm) {
    double sq = 0.0;
    for (const auto& p : params) sq += p.grad->squaredNorm();
    const double norm = std::sqrt(sq);
    const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (const auto& p : params) {
        MatrixXd g = *p.grad * scale;
        auto mi = m.find(p.name);
        if (mi == m.end()) {
            m[p.name] = MatrixXd::Zero(g.rows(), g.cols());
            v[p.name] = MatrixXd::Zero(g.rows(), g.cols());
            mi = m.find(p.name);
        }
        MatrixXd& mv = mi->second;
        MatrixXd& vv = v[p.name];
        mv = beta1 * mv + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
        const MatrixXd mhat = mv / bc1;
        const MatrixXd vhat = vv / bc2;
        *p.value -= learning_rate *
                    (mhat.array() / (vhat.array().sqrt() + epsilon)).matrix();
    }
}

void AdamOptimizer::export_arrays(Checkpoint& ck) const {
    ck.header["optimizer"] = {{"step", step}, {"learning_rate", learning_rate}};
    for (const auto& [name, mat] : m) ck.set("opt.m." + name, mat);
    for (const auto& [name, mat] : v) ck.set("opt.v." + name, mat);
}

void AdamOptimizer::import_arrays(const Checkpoint& ck) {
    step = ck.header.at("optimizer").at("step").get<int64_t>();
    learning_rate = ck.header.at("optimizer").at("learning_rate").get<double>();
    m.clear();
    v.clear();
    for (const auto& [name, mat] : ck.arrays) {
        if (name.rfind("opt.m.", 0) == 0) m[name.substr(6)] = mat;
        if (name.rfind("opt.v.", 0) == 0) v[name.substr(6)] = mat;
    }
}

namespace {

struct ClipForward {
    EmbeddingNet::Cache e_cache;
    BaselineNet::Cache b_cache;
    Embeddings V;
    Mask mel_mask;
    std::vector<MatrixXd> lifted;  // clamped F x T per class
    double dc = 0.0;
    double l1 = 0.0;
    double combined = 0.0;
};

ClipForward forward_clip(const FeaturizedClip& clip, const ModelState& state,
                         const MelFilterbank& fb, const GaussianParams* shared_params) {
    ClipForward work;
    const Eigen::Index C = static_cast<Eigen::Index>(state.cfg.class_names.size());

    if (state.baseline) {
        work.mel_mask.values = state.base.forward(clip.logmel, work.b_cache);
        work.mel_mask.frames = clip.frames;
        work.mel_mask.mel_bins = state.cfg.mel_bins;
    } else {
        work.V = state.embed.forward(clip.logmel, work.e_cache);
        work.mel_mask = posterior_mask(work.V, *shared_params);
    }

    for (Eigen::Index c = 0; c < C; ++c)
        work.lifted.push_back(mel_unproject_mask(work.mel_mask.class_grid(c), fb));

    work.l1 = l1_mask_loss(work.lifted, clip.mix_mag, clip.source_mags);
    work.dc = state.baseline ? 0.0 : dc_loss(work.V.values, clip.targets);
    const double dc_w = state.baseline ? 0.0 : state.cfg.dc_weight;
    work.combined = combined_loss(work.dc, work.l1, dc_w, state.cfg.l1_weight);
    return work;
}

// d(loss)/d(mel mask) through the lift: U^T applied per class, kept only
// where the clamp passed values through unchanged.
MatrixXd lift_backward(const ClipForward& work, const FeaturizedClip& clip,
                       const MelFilterbank& fb) {
    const Eigen::Index C = static_cast<Eigen::Index>(work.lifted.size());
    const Eigen::Index M = work.mel_mask.mel_bins;
    const Eigen::Index T = work.mel_mask.frames;
    const std::vector<MatrixXd> dlift =
        l1_mask_loss_grad(work.lifted, clip.mix_mag, clip.source_mags);

    MatrixXd dmask(M * T, C);
    for (Eigen::Index c = 0; c < C; ++c) {
        const MatrixXd raw = fb.inverse_weights * work.mel_mask.class_grid(c);
        const MatrixXd pass =
            ((raw.array() >= 0.0) && (raw.array() <= 1.0)).cast<double>();
        const MatrixXd dgrid =
            fb.inverse_weights.transpose() * dlift[static_cast<size_t>(c)].cwiseProduct(pass);
        for (Eigen::Index t = 0; t < T; ++t)
            for (Eigen::Index m = 0; m < M; ++m)
                dmask(bin_index(t, m, M), c) = dgrid(m, t);
    }
    return dmask;
}

}  // namespace

StepMetrics train_step(const std::vector<FeaturizedClip>& batch, ModelState& state,
                       const MelFilterbank& fb, AdamOptimizer& opt, int batch_id) {
    require(!batch.empty(), "train_step: empty batch");
    state.zero_grads();

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const double dc_w = state.baseline ? 0.0 : state.cfg.dc_weight;
    const double l1_w = state.cfg.l1_weight;

    AuxClassNet::Cache aux_cache;
    GaussianParams params;
    MatrixXd dmeans_acc, dvar_acc;
    VectorXd dprior_acc;
    if (!state.baseline) {
        params = state.aux.forward(state.cfg.covariance, aux_cache);
        dmeans_acc = MatrixXd::Zero(params.num_classes(), params.dim());
        dvar_acc = MatrixXd::Zero(params.num_classes(), params.dim());
        dprior_acc = VectorXd::Zero(params.num_classes());
    }

    StepMetrics metrics;
    for (const auto& clip : batch) {
        ClipForward work;
        try {
            work = forward_clip(clip, state, fb, state.baseline ? nullptr : &params);
        } catch (const std::invalid_argument& e) {
            throw TrainNanError(batch_id, std::string("train: batch ") +
                                              std::to_string(batch_id) + ": " + e.what());
        }
        metrics.dc += work.dc * inv_batch;
        metrics.l1 += work.l1 * inv_batch;
        metrics.combined += work.combined * inv_batch;

        const MatrixXd dmask = lift_backward(work, clip, fb) * (l1_w * inv_batch);
        if (state.baseline) {
            state.base.backward(work.b_cache, dmask);
        } else {
            const PosteriorGrads pg =
                posterior_mask_backward(work.V, params, work.mel_mask, dmask);
            dmeans_acc += pg.dmeans;
            dvar_acc += pg.dvar_eff;
            dprior_acc += pg.dlog_priors;
            MatrixXd dV = pg.dV;
            if (dc_w > 0.0)
                dV += (dc_w * inv_batch) * dc_loss_grad(work.V.values, clip.targets);
            state.embed.backward(work.e_cache, dV);
        }
    }
    if (!state.baseline)
        state.aux.backward(aux_cache, state.cfg.covariance, dmeans_acc, dvar_acc, dprior_acc);

    if (!std::isfinite(metrics.combined))
        throw TrainNanError(batch_id, "train: non-finite loss in batch " +
                                          std::to_string(batch_id));

    opt.apply(state.params(), state.cfg.grad_clip_norm);
    return metrics;
}

StepMetrics evaluate_loss(const std::vector<FeaturizedClip>& clips, const ModelState& state,
                          const MelFilterbank& fb) {
    require(!clips.empty(), "evaluate_loss: no clips");
    GaussianParams params;
    if (!state.baseline) params = state.aux.forward(state.cfg.covariance);

    StepMetrics metrics;
    const double inv = 1.0 / static_cast<double>(clips.size());
    for (const auto& clip : clips) {
        const ClipForward work =
            forward_clip(clip, state, fb, state.baseline ? nullptr : &params);
        metrics.dc += work.dc * inv;
        metrics.l1 += work.l1 * inv;
        metrics.combined += work.combined * inv;
    }
    return metrics;
}

double current_mean_variance(const ModelState& state) {
    if (state.baseline) return std::numeric_limits<double>::quiet_NaN();
    return state.aux.forward(state.cfg.covariance).effective_variances().mean();
}

namespace {

struct LoadedClip {
    AudioClip mixture;
    std::vector<AudioClip> stems;
};

LoadedClip load_mixture(const MixtureSpec& spec, const fs::path& manifest_dir,
                        const std::vector<std::string>& class_names) {
    LoadedClip out;
    if (!spec.render_dir.empty()) {
        const fs::path dir = manifest_dir / spec.render_dir;
        out.mixture = load_audio((dir / "mixture.wav").string(), spec.sample_rate);
        for (const auto& cls : class_names)
            out.stems.push_back(load_audio((dir / (cls + ".wav")).string(), spec.sample_rate));
        return out;
    }
    RenderedMixture rendered = render_mixture(spec);
    out.mixture = std::move(rendered.mixture);
    // Reorder stems to the configured class order.
    for (const auto& cls : class_names) {
        bool found = false;
        for (size_t i = 0; i < spec.sources.size(); ++i) {
            if (spec.sources[i].class_name == cls) {
                out.stems.push_back(rendered.stems[i]);
                found = true;
                break;
            }
        }
        require(found, "train: manifest is missing class '" + cls + "'");
    }
    return out;
}

}  // namespace

FitResult fit(const std::string& train_manifest, const std::string& val_manifest,
              const TrainConfig& cfg, const std::string& checkpoint_path,
              const std::string& log_csv_path, const std::string& resume_path) {
    cfg.validate();
    const std::vector<MixtureSpec> train_specs = read_manifest(train_manifest);
    const std::vector<MixtureSpec> val_specs = read_manifest(val_manifest);
    const fs::path train_dir = fs::absolute(fs::path(train_manifest)).parent_path();
    const fs::path val_dir = fs::absolute(fs::path(val_manifest)).parent_path();

    const int fft_bins = cfg.stft.num_bins();
    const MelFilterbank fb = MelFilterbank::build(cfg.mel_bins, fft_bins, cfg.sample_rate);

    ModelState state;
    AdamOptimizer opt;
    std::mt19937_64 rng(cfg.seed);
    int start_epoch = 0;
    int patience_used = 0;
    double best_val = std::numeric_limits<double>::infinity();

    const bool resuming = !resume_path.empty();
    if (resuming) {
        const Checkpoint ck = Checkpoint::load(resume_path);
        state = ModelState::from_checkpoint(ck);
        opt.import_arrays(ck);
        std::istringstream iss(ck.header.at("rng_state").get<std::string>());
        iss >> rng;
        start_epoch = ck.header.at("epoch").get<int>();
        best_val = ck.header.at("best_val").get<double>();
        patience_used = ck.header.at("patience_used").get<int>();
    } else {
        state = ModelState::create(cfg);
        state.excerpt_seconds = train_specs.front().duration_seconds;
        opt.learning_rate = cfg.learning_rate;
    }

    // Validation features are fixed; compute them once.
    std::vector<FeaturizedClip> val_clips;
    for (const auto& spec : val_specs) {
        const LoadedClip loaded = load_mixture(spec, val_dir, cfg.class_names);
        val_clips.push_back(featurize(loaded.mixture, loaded.stems, cfg, fb));
    }

    std::ofstream log(log_csv_path, resuming ? std::ios::app : std::ios::trunc);
    require(log.good(), "train: cannot write log " + log_csv_path);
    if (!resuming)
        log << "epoch,dc,l1,combined,val_combined,wall_time,variance\n";
    log.precision(10);

    FitResult result;
    result.checkpoint_path = checkpoint_path;
    std::vector<size_t> order(train_specs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto t_start = std::chrono::steady_clock::now();
    try {
        for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);

            StepMetrics epoch_metrics;
            size_t clips_done = 0;
            int batch_id = 0;
            for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size, ++batch_id) {
                std::vector<FeaturizedClip> batch;
                const size_t end = std::min(pos + cfg.batch_size, order.size());
                for (size_t i = pos; i < end; ++i) {
                    const LoadedClip loaded =
                        load_mixture(train_specs[order[i]], train_dir, cfg.class_names);
                    batch.push_back(featurize(loaded.mixture, loaded.stems, cfg, fb));
                }
                const StepMetrics m = train_step(batch, state, fb, opt, batch_id);
                const double w = static_cast<double>(batch.size());
                epoch_metrics.dc += m.dc * w;
                epoch_metrics.l1 += m.l1 * w;
                epoch_metrics.combined += m.combined * w;
                clips_done += batch.size();
            }
            epoch_metrics.dc /= static_cast<double>(clips_done);
            epoch_metrics.l1 /= static_cast<double>(clips_done);
            epoch_metrics.combined /= static_cast<double>(clips_done);

            const StepMetrics val = evaluate_loss(val_clips, state, fb);
            const double variance = current_mean_variance(state);
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                    .count();

            log << (epoch + 1) << ',' << epoch_metrics.dc << ',' << epoch_metrics.l1 << ','
                << epoch_metrics.combined << ',' << val.combined << ',' << wall << ',';
            if (std::isfinite(variance)) log << variance;
            log << '\n';
            log.flush();

            result.epochs_run = epoch + 1;
            result.final_variance = variance;

            if (val.combined < best_val) {
                best_val = val.combined;
                patience_used = 0;
                Checkpoint best = state.to_checkpoint();
                best.header["epoch"] = epoch + 1;
                best.header["best_val"] = best_val;
                best.save(checkpoint_path);
            } else {
                ++patience_used;
            }

            Checkpoint last = state.to_checkpoint();
            last.header["epoch"] = epoch + 1;
            last.header["best_val"] = best_val;
            last.header["patience_used"] = patience_used;
            std::ostringstream oss;
            oss << rng;
            last.header["rng_state"] = oss.str();
            opt.export_arrays(last);
            last.save(checkpoint_path + ".last");

            if (patience_used >= cfg.patience) break;
        }
    } catch (const TrainNanError& e) {
        std::ofstream diag(log_csv_path + ".diag.txt", std::ios::trunc);
        diag << "training aborted: " << e.what() << "\n"
             << "batch_id: " << e.batch_id << "\n"
             << "epochs completed: " << result.epochs_run << "\n";
        throw;
    }

    result.best_val = best_val;
    return result;
}

}  // namespace gmmsep
