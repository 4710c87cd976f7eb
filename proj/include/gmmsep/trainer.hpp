#ifndef GMMSEP_TRAINER_HPP
#define GMMSEP_TRAINER_HPP

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gmmsep/checkpoint.hpp"
#include "gmmsep/classgmm.hpp"
#include "gmmsep/datagen.hpp"
#include "gmmsep/dsp.hpp"
#include "gmmsep/losses.hpp"
#include "gmmsep/model.hpp"

namespace gmmsep {

struct TrainConfig {
    CovarianceType covariance = CovarianceType::spherical_tied;
    double dc_weight = 0.5;
    double l1_weight = 0.5;
    int batch_size = 8;
    double learning_rate = 1e-3;
    int max_epochs = 60;
    int patience = 10;
    uint64_t seed = 1234;
    std::string device = "cpu";
    double grad_clip_norm = 5.0;

    StftConfig stft;  // 2048 / 512, sqrt-Hann
    int mel_bins = 300;
    double sample_rate = 48000.0;
    double log_floor_db = -80.0;
    bool normalize_clip_db = true;  // subtract the clip's max dB before flooring
    double gate_threshold_db = -40.0;

    int num_recurrent_layers = 4;
    int hidden_units = 300;
    int embedding_dim = 15;
    bool unit_normalize = false;

    bool train_baseline = false;
    std::vector<std::string> class_names = {"vocals", "drums", "bass", "other"};

    void validate() const;
    EmbeddingNetConfig embed_config() const;
    BaselineConfig baseline_config() const;
};

// Applies one "key=value" option; throws on unknown keys. The config file is
// flat key=value lines, '#' comments allowed; CLI flags override afterwards.
void apply_train_config_option(TrainConfig& cfg, const std::string& key,
                               const std::string& value);
void load_train_config_file(TrainConfig& cfg, const std::string& path);

// Either the class-conditional embedding model (embedding net + auxiliary
// class net) or the sigmoid mask-inference baseline.
struct ModelState {
    TrainConfig cfg;
    bool baseline = false;
    double excerpt_seconds = 0.0;  // training clip length, used for chunked inference
    EmbeddingNet embed;
    AuxClassNet aux;
    BaselineNet base;

    static ModelState create(const TrainConfig& cfg);
    std::vector<NamedParam> params();
    void zero_grads();

    Checkpoint to_checkpoint() const;
    static ModelState from_checkpoint(const Checkpoint& ck);
    static ModelState load(const std::string& path);
    void save(const std::string& path) const;
};

struct FeaturizedClip {
    MatrixXd logmel;                    // M x T network input
    MatrixXd mix_mag;                   // F x T
    std::vector<MatrixXd> source_mags;  // per class, F x T
    AffinityTargets targets;
    Eigen::Index frames = 0;
};

// Network input features: log magnitude (floored, optionally max-normalized)
// projected onto the mel filterbank.
MatrixXd input_logmel(const ComplexSpectrogram& spec, const TrainConfig& cfg,
                      const MelFilterbank& fb);

FeaturizedClip featurize(const AudioClip& mixture, const std::vector<AudioClip>& stems,
                         const TrainConfig& cfg, const MelFilterbank& fb);

struct AdamOptimizer {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t step = 0;
    std::map<std::string, MatrixXd> m, v;

    void apply(const std::vector<NamedParam>& params, double clip_norm);
    void export_arrays(Checkpoint& ck) const;
    void import_arrays(const Checkpoint& ck);
};

struct StepMetrics {
    double dc = 0.0;
    double l1 = 0.0;
    double combined = 0.0;
};

// Thrown when a batch produces a NaN loss; fit dumps a diagnostic and stops.
struct TrainNanError : std::runtime_error {
    int batch_id;
    TrainNanError(int id, const std::string& msg) : std::runtime_error(msg), batch_id(id) {}
};

StepMetrics train_step(const std::vector<FeaturizedClip>& batch, ModelState& state,
                       const MelFilterbank& fb, AdamOptimizer& opt, int batch_id = 0);

// Forward-only loss over a set of clips.
StepMetrics evaluate_loss(const std::vector<FeaturizedClip>& clips, const ModelState& state,
                          const MelFilterbank& fb);

// Mean effective variance of the current class Gaussians; NaN for baselines.
double current_mean_variance(const ModelState& state);

struct FitResult {
    std::string checkpoint_path;
    double best_val = 0.0;
    int epochs_run = 0;
    double final_variance = std::numeric_limits<double>::quiet_NaN();
};

// Trains on the manifests, keeps the best-validation checkpoint at
// checkpoint_path, writes per-epoch CSV (epoch, dc, l1, combined,
// val_combined, wall_time, variance) and a resumable <checkpoint>.last.
FitResult fit(const std::string& train_manifest, const std::string& val_manifest,
              const TrainConfig& cfg, const std::string& checkpoint_path,
              const std::string& log_csv_path, const std::string& resume_path = "");

}  // namespace gmmsep

#endif
