#ifndef GMMSEP_TINY_SETUP_HPP
#define GMMSEP_TINY_SETUP_HPP

#include <string>

#include "gmmsep/datagen.hpp"
#include "gmmsep/trainer.hpp"
#include "test_util.hpp"

namespace gmmsep::testutil {

// Small synthetic setup shared by the trainer/separator/eval suites: an
// 8 kHz bank of band-separated stems and a one-layer model config.
struct TinySetup {
    TrainConfig cfg;
    StemBank bank;
    std::string train_manifest;
    std::string val_manifest;
    std::string test_manifest;
};

inline TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.sample_rate = 8000.0;
    cfg.stft.window_size = 512;
    cfg.stft.hop_size = 128;
    cfg.mel_bins = 16;
    cfg.num_recurrent_layers = 1;
    cfg.hidden_units = 16;
    cfg.embedding_dim = 4;
    cfg.batch_size = 4;
    cfg.max_epochs = 10;
    cfg.patience = 10;
    cfg.seed = 7;
    return cfg;
}

inline TinySetup make_tiny_setup(const TempDir& dir, int train_count, int val_count,
                                 int test_count = 0, uint64_t seed = 123) {
    TinySetup setup;
    setup.cfg = tiny_train_config();
    setup.bank = make_synthetic_bank(dir.sub("bank"), setup.cfg.sample_rate, 2.0, 6, 3,
                                     test_count > 0 ? 3 : 1, seed);
    SampleOptions opts;
    opts.duration_seconds = 0.5;
    opts.sample_rate = setup.cfg.sample_rate;
    setup.train_manifest =
        render_dataset(setup.bank, "train", train_count, opts, seed + 1, dir.sub("train"));
    setup.val_manifest =
        render_dataset(setup.bank, "val", val_count, opts, seed + 2, dir.sub("val"));
    if (test_count > 0)
        setup.test_manifest =
            render_dataset(setup.bank, "test", test_count, opts, seed + 3, dir.sub("test"));
    return setup;
}

inline std::vector<FeaturizedClip> featurize_manifest(const std::string& manifest,
                                                      const TrainConfig& cfg) {
    const MelFilterbank fb =
        MelFilterbank::build(cfg.mel_bins, cfg.stft.num_bins(), cfg.sample_rate);
    const auto specs = read_manifest(manifest);
    const std::filesystem::path base =
        std::filesystem::absolute(std::filesystem::path(manifest)).parent_path();
    std::vector<FeaturizedClip> clips;
    for (const auto& spec : specs) {
        const auto dir = base / spec.render_dir;
        const AudioClip mix = load_audio((dir / "mixture.wav").string(), cfg.sample_rate);
        std::vector<AudioClip> stems;
        for (const auto& cls : cfg.class_names)
            stems.push_back(load_audio((dir / (cls + ".wav")).string(), cfg.sample_rate));
        clips.push_back(featurize(mix, stems, cfg, fb));
    }
    return clips;
}

}  // namespace gmmsep::testutil

#endif
