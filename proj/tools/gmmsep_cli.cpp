// gmmsep command-line front end: mixgen / train / separate / query /
// evaluate / inspect. Exit codes: 0 ok, 1 runtime failure, 2 usage or
// config error.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "gmmsep/datagen.hpp"
#include "gmmsep/eval.hpp"
#include "gmmsep/separator.hpp"
#include "gmmsep/trainer.hpp"

namespace fs = std::filesystem;
using namespace gmmsep;

namespace {

// Best-effort cleanup of outputs created by a failed command.
struct OutputTracker {
    std::vector<fs::path> files;
    std::vector<fs::path> dirs;  // removed recursively, only if created here

    void file(const fs::path& p) { files.push_back(p); }
    void fresh_dir(const fs::path& p) {
        if (!fs::exists(p)) {
            fs::create_directories(p);
            dirs.push_back(p);
        }
    }
    void cleanup() {
        std::error_code ec;
        for (const auto& f : files) fs::remove(f, ec);
        for (const auto& d : dirs) fs::remove_all(d, ec);
    }
};

int run_mixgen(const std::string& bank_path, bool synthetic, const std::string& split, int count,
               double duration, double sample_rate, uint64_t seed, const std::string& out,
               double gain_jitter, int songs_train, int songs_val, int songs_test,
               double stem_duration) {
    OutputTracker outputs;
    try {
        outputs.fresh_dir(out);
        StemBank bank;
        if (synthetic) {
            bank = make_synthetic_bank((fs::path(out) / "bank").string(), sample_rate,
                                       stem_duration, songs_train, songs_val, songs_test, seed);
        } else {
            if (bank_path.empty())
                throw std::invalid_argument("mixgen: need --bank or --synthetic");
            bank = load_stem_bank(bank_path);
        }
        SampleOptions opts;
        opts.duration_seconds = duration;
        opts.sample_rate = sample_rate;
        opts.gain_jitter_db = gain_jitter;
        std::vector<std::string> warnings;
        const std::string manifest =
            render_dataset(bank, split, count, opts, seed, out, &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        std::cout << "wrote " << manifest << " (" << count << " mixtures)\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_train(TrainConfig cfg, const std::string& train_manifest, const std::string& val_manifest,
              const std::string& out, const std::string& log_path, const std::string& resume) {
    OutputTracker outputs;
    try {
        outputs.file(out);
        outputs.file(out + ".last");
        outputs.file(log_path);
        const FitResult result = fit(train_manifest, val_manifest, cfg, out, log_path, resume);
        std::cout << "checkpoint: " << result.checkpoint_path << "\n"
                  << "epochs: " << result.epochs_run << "\n"
                  << "best val loss: " << result.best_val << "\n";
        if (std::isfinite(result.final_variance))
            std::cout << "mean variance: " << result.final_variance << "\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_separate(const std::string& checkpoint, const std::string& input,
                 const std::string& out_dir) {
    OutputTracker outputs;
    try {
        const ModelState model = ModelState::load(checkpoint);
        const AudioClip mixture = load_audio(input, model.cfg.sample_rate);
        outputs.fresh_dir(out_dir);
        const std::vector<AudioClip> stems = separate(mixture, model);
        const std::string base = fs::path(input).stem().string();
        for (size_t c = 0; c < stems.size(); ++c) {
            const fs::path path =
                fs::path(out_dir) / (base + "_" + model.cfg.class_names[c] + ".wav");
            outputs.file(path);
            write_wav(path.string(), stems[c], WavFormat::float32);
            std::cout << "wrote " << path.string() << "\n";
        }
        return 0;
    } catch (const std::invalid_argument& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_query(const std::string& checkpoint, const std::string& query_path,
              const std::string& mixture_path, const std::string& out,
              const std::string& covariance) {
    OutputTracker outputs;
    try {
        const ModelState model = ModelState::load(checkpoint);
        const AudioClip query = load_audio(query_path, model.cfg.sample_rate);
        const AudioClip mixture = load_audio(mixture_path, model.cfg.sample_rate);
        const CovarianceType kind = covariance_from_string(covariance);
        const AudioClip extracted = query_separate(query, mixture, model, kind);
        outputs.file(out);
        write_wav(out, extracted, WavFormat::float32);
        std::cout << "wrote " << out << "\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_evaluate(const std::string& checkpoint, const std::string& manifest,
                 const std::string& report, bool include_mixture) {
    OutputTracker outputs;
    try {
        const ModelState model = ModelState::load(checkpoint);
        std::vector<TestsetEvaluation> evals;
        if (include_mixture)
            evals.push_back(evaluate_mixture_baseline(manifest, model.cfg.class_names,
                                                      model.cfg.sample_rate));
        evals.push_back(evaluate_testset(manifest, model));
        const std::string csv = report + ".csv";
        const std::string txt = report + ".txt";
        outputs.file(csv);
        outputs.file(txt);
        outputs.file(csv + ".tracks.csv");
        write_report(csv, txt, evals);
        std::cout << "wrote " << csv << " and " << txt << "\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_inspect(const std::string& checkpoint, const std::string& input,
                const std::string& out) {
    OutputTracker outputs;
    try {
        const ModelState model = ModelState::load(checkpoint);
        const AudioClip mixture = load_audio(input, model.cfg.sample_rate);
        const std::string csv = out + ".csv";
        const std::string json = out + ".json";
        outputs.file(csv);
        outputs.file(json);
        export_embedding_views(mixture, model, csv, json);
        std::cout << "wrote " << csv << " and " << json << "\n";
        return 0;
    } catch (const std::invalid_argument& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        outputs.cleanup();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Class-conditional embedding source separation"};
    app.require_subcommand(1);

    // mixgen
    auto* mixgen = app.add_subcommand("mixgen", "Generate incoherent mixtures from a stem bank");
    std::string mg_bank, mg_split = "train", mg_out = "dataset";
    bool mg_synth = false;
    int mg_count = 500, mg_songs_train = 8, mg_songs_val = 4, mg_songs_test = 4;
    double mg_duration = 3.2, mg_rate = 48000.0, mg_jitter = 0.0, mg_stem_duration = 6.0;
    uint64_t mg_seed = 1234;
    mixgen->add_option("--bank", mg_bank, "Stem bank JSON");
    mixgen->add_flag("--synthetic", mg_synth, "Generate a synthetic stem bank first");
    mixgen->add_option("--split", mg_split, "Bank split (train/val/test)");
    mixgen->add_option("--count", mg_count, "Number of mixtures");
    mixgen->add_option("--duration", mg_duration, "Excerpt length in seconds");
    mixgen->add_option("--sample-rate", mg_rate, "Sample rate in Hz");
    mixgen->add_option("--seed", mg_seed, "RNG seed");
    mixgen->add_option("--out", mg_out, "Output directory");
    mixgen->add_option("--gain-jitter", mg_jitter, "Per-stem gain jitter in dB (0 = off)");
    mixgen->add_option("--songs-train", mg_songs_train, "Synthetic bank: train songs");
    mixgen->add_option("--songs-val", mg_songs_val, "Synthetic bank: val songs");
    mixgen->add_option("--songs-test", mg_songs_test, "Synthetic bank: test songs");
    mixgen->add_option("--stem-duration", mg_stem_duration, "Synthetic stem length in seconds");

    // train
    auto* train = app.add_subcommand("train", "Train a separation model");
    std::string tr_config, tr_train, tr_val, tr_cov, tr_out = "model.ckpt", tr_log, tr_resume;
    bool tr_baseline = false;
    std::vector<std::string> tr_sets;
    train->add_option("--config", tr_config, "Flat key=value config file");
    train->add_option("--train-manifest", tr_train, "Training manifest")->required();
    train->add_option("--val-manifest", tr_val, "Validation manifest")->required();
    train->add_option("--covariance", tr_cov, "diag, diag-tied, sphr, or sphr-tied");
    train->add_flag("--baseline", tr_baseline, "Train the sigmoid mask-inference baseline");
    train->add_option("--out", tr_out, "Checkpoint output path");
    train->add_option("--log", tr_log, "Training log CSV (default <out>.log.csv)");
    train->add_option("--resume", tr_resume, "Resume from a .last checkpoint");
    train->add_option("--set", tr_sets, "Override any config key, key=value")->take_all();

    // separate
    auto* sep = app.add_subcommand("separate", "Separate a mixture into per-class stems");
    std::string sp_ckpt, sp_in, sp_out = ".";
    sep->add_option("--checkpoint", sp_ckpt, "Model checkpoint")->required();
    sep->add_option("--in", sp_in, "Input WAV")->required();
    sep->add_option("--out-dir", sp_out, "Output directory");

    // query
    auto* query = app.add_subcommand("query", "Extract mixture content similar to a query clip");
    std::string q_ckpt, q_query, q_mix, q_out = "query_out.wav", q_cov = "diag";
    query->add_option("--checkpoint", q_ckpt, "Model checkpoint")->required();
    query->add_option("--query", q_query, "Query WAV")->required();
    query->add_option("--mixture", q_mix, "Mixture WAV")->required();
    query->add_option("--out", q_out, "Output WAV");
    query->add_option("--covariance", q_cov, "Query Gaussian structure: diag or sphr");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score separation quality on a manifest");
    std::string ev_ckpt, ev_manifest, ev_report = "report";
    bool ev_no_mixture = false;
    ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
    ev->add_option("--manifest", ev_manifest, "Test manifest")->required();
    ev->add_option("--report", ev_report, "Report path prefix");
    ev->add_flag("--no-mixture-baseline", ev_no_mixture, "Skip the mixture-as-estimate row");

    // inspect
    auto* insp = app.add_subcommand("inspect", "Export embedding-space views for plotting");
    std::string in_ckpt, in_in, in_out = "views";
    insp->add_option("--checkpoint", in_ckpt, "Model checkpoint")->required();
    insp->add_option("--in", in_in, "Input WAV")->required();
    insp->add_option("--out", in_out, "Output path prefix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (mixgen->parsed())
        return run_mixgen(mg_bank, mg_synth, mg_split, mg_count, mg_duration, mg_rate, mg_seed,
                          mg_out, mg_jitter, mg_songs_train, mg_songs_val, mg_songs_test,
                          mg_stem_duration);

    if (train->parsed()) {
        TrainConfig cfg;
        try {
            if (!tr_config.empty()) load_train_config_file(cfg, tr_config);
            for (const auto& kv : tr_sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw std::invalid_argument("train: --set expects key=value, got " + kv);
                apply_train_config_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (!tr_cov.empty()) cfg.covariance = covariance_from_string(tr_cov);
            if (tr_baseline) cfg.train_baseline = true;
            cfg.validate();
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
        if (tr_log.empty()) tr_log = tr_out + ".log.csv";
        return run_train(cfg, tr_train, tr_val, tr_out, tr_log, tr_resume);
    }

    if (sep->parsed()) return run_separate(sp_ckpt, sp_in, sp_out);
    if (query->parsed()) return run_query(q_ckpt, q_query, q_mix, q_out, q_cov);
    if (ev->parsed()) return run_evaluate(ev_ckpt, ev_manifest, ev_report, !ev_no_mixture);
    if (insp->parsed()) return run_inspect(in_ckpt, in_in, in_out);
    return 2;
}
