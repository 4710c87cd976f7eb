#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "gmmsep/trainer.hpp"
#include "tiny_setup.hpp"

using namespace gmmsep;
using namespace gmmsep::testutil;

namespace {

std::vector<std::vector<double>> parse_log(const std::string& path,
                                           std::vector<std::string>* header = nullptr) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    if (header != nullptr) {
        std::stringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header->push_back(cell);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(cell.empty() ? NAN : std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

MatrixXd snapshot_params(ModelState& state) {
    Eigen::Index total = 0;
    for (auto& p : state.params()) total += p.value->size();
    MatrixXd flat(total, 1);
    Eigen::Index at = 0;
    for (auto& p : state.params()) {
        flat.block(at, 0, p.value->size(), 1) =
            Eigen::Map<VectorXd>(p.value->data(), p.value->size());
        at += p.value->size();
    }
    return flat;
}

}  // namespace

TEST_CASE("config files and overrides parse, unknown keys are rejected") {
    TempDir dir("cfg");
    {
        std::ofstream f(dir.sub("train.cfg"));
        f << "# comment line\n"
          << "covariance = diag-tied\n"
          << "batch_size = 3\n"
          << "learning_rate = 0.01\n"
          << "classes = a,b,c\n"
          << "unit_normalize = true\n";
    }
    TrainConfig cfg;
    load_train_config_file(cfg, dir.sub("train.cfg"));
    CHECK(cfg.covariance == CovarianceType::diagonal_tied);
    CHECK(cfg.batch_size == 3);
    CHECK(cfg.learning_rate == doctest::Approx(0.01));
    CHECK(cfg.class_names == std::vector<std::string>{"a", "b", "c"});
    CHECK(cfg.unit_normalize);
    CHECK_THROWS(apply_train_config_option(cfg, "no_such_key", "1"));
    CHECK_THROWS(apply_train_config_option(cfg, "unit_normalize", "maybe"));

    TrainConfig bad = tiny_train_config();
    bad.dc_weight = 0.7;  // weights no longer sum to 1
    CHECK_THROWS(bad.validate());
}

TEST_CASE("a second step on the same batch does not increase the loss") {
    TempDir dir("step");
    const TinySetup setup = make_tiny_setup(dir, 4, 2);
    const MelFilterbank fb = MelFilterbank::build(
        setup.cfg.mel_bins, setup.cfg.stft.num_bins(), setup.cfg.sample_rate);
    const auto clips = featurize_manifest(setup.train_manifest, setup.cfg);

    int non_increasing = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        TrainConfig cfg = setup.cfg;
        cfg.seed = 100 + seed;
        ModelState state = ModelState::create(cfg);
        AdamOptimizer opt;
        opt.learning_rate = cfg.learning_rate;
        const StepMetrics first = train_step(clips, state, fb, opt);
        const StepMetrics second = train_step(clips, state, fb, opt);
        if (second.combined <= first.combined) ++non_increasing;
    }
    CHECK(non_increasing >= 8);
}

TEST_CASE("zero learning rate leaves every weight bit-identical") {
    TempDir dir("zerolr");
    const TinySetup setup = make_tiny_setup(dir, 4, 2);
    const MelFilterbank fb = MelFilterbank::build(
        setup.cfg.mel_bins, setup.cfg.stft.num_bins(), setup.cfg.sample_rate);
    const auto clips = featurize_manifest(setup.train_manifest, setup.cfg);

    ModelState state = ModelState::create(setup.cfg);
    const MatrixXd before = snapshot_params(state);
    AdamOptimizer opt;
    opt.learning_rate = 0.0;
    train_step(clips, state, fb, opt);
    const MatrixXd after = snapshot_params(state);
    CHECK((before - after).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("with loss weights (0,1) the affinity targets cannot influence the update") {
    TempDir dir("dcoff");
    const TinySetup setup = make_tiny_setup(dir, 4, 2);
    const MelFilterbank fb = MelFilterbank::build(
        setup.cfg.mel_bins, setup.cfg.stft.num_bins(), setup.cfg.sample_rate);
    auto clips_a = featurize_manifest(setup.train_manifest, setup.cfg);
    auto clips_b = clips_a;
    std::mt19937_64 rng(9);
    for (auto& clip : clips_b)  // scrambled affinity targets
        clip.targets.values = random_matrix(clip.targets.values.rows(),
                                            clip.targets.values.cols(), rng, 0.0, 1.0);

    TrainConfig cfg = setup.cfg;
    cfg.dc_weight = 0.0;
    cfg.l1_weight = 1.0;
    ModelState state_a = ModelState::create(cfg);
    ModelState state_b = ModelState::create(cfg);
    AdamOptimizer opt_a, opt_b;
    train_step(clips_a, state_a, fb, opt_a);
    train_step(clips_b, state_b, fb, opt_b);
    CHECK((snapshot_params(state_a) - snapshot_params(state_b)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("train_step aborts on NaN losses with the batch id") {
    TempDir dir("nan");
    const TinySetup setup = make_tiny_setup(dir, 1, 1);
    const MelFilterbank fb = MelFilterbank::build(
        setup.cfg.mel_bins, setup.cfg.stft.num_bins(), setup.cfg.sample_rate);
    auto clips = featurize_manifest(setup.train_manifest, setup.cfg);
    clips[0].mix_mag(0, 0) = std::numeric_limits<double>::quiet_NaN();

    ModelState state = ModelState::create(setup.cfg);
    AdamOptimizer opt;
    try {
        train_step(clips, state, fb, opt, 42);
        FAIL("expected TrainNanError");
    } catch (const TrainNanError& e) {
        CHECK(e.batch_id == 42);
        CHECK(std::string(e.what()).find("42") != std::string::npos);
    }
}

TEST_CASE("fit overfits the tiny synthetic dataset") {
    TempDir dir("overfit");
    const TinySetup setup = make_tiny_setup(dir, 8, 3);
    TrainConfig cfg = setup.cfg;
    cfg.max_epochs = 30;
    cfg.patience = 30;
    cfg.batch_size = 2;
    cfg.learning_rate = 5e-3;

    const FitResult result = fit(setup.train_manifest, setup.val_manifest, cfg,
                                 dir.sub("model.ckpt"), dir.sub("log.csv"));
    CHECK(result.epochs_run >= 1);

    const auto rows = parse_log(dir.sub("log.csv"));
    REQUIRE(!rows.empty());
    const double first_l1 = rows.front()[2];
    double best_l1 = first_l1;
    for (const auto& row : rows) best_l1 = std::min(best_l1, row[2]);
    CHECK(best_l1 < 0.5 * first_l1);

    // Learned variance column is finite and above the floor.
    CHECK(std::isfinite(result.final_variance));
    CHECK(result.final_variance > kVarianceFloor);
}

TEST_CASE("fixed seeds reproduce the loss curve") {
    TempDir dir("determinism");
    const TinySetup setup = make_tiny_setup(dir, 4, 2);
    TrainConfig cfg = setup.cfg;
    cfg.max_epochs = 3;

    fit(setup.train_manifest, setup.val_manifest, cfg, dir.sub("a.ckpt"), dir.sub("a.csv"));
    fit(setup.train_manifest, setup.val_manifest, cfg, dir.sub("b.ckpt"), dir.sub("b.csv"));
    const auto a = parse_log(dir.sub("a.csv"));
    const auto b = parse_log(dir.sub("b.csv"));
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t col : {1u, 2u, 3u, 4u})  // dc, l1, combined, val
            CHECK(std::abs(a[i][col] - b[i][col]) <= 1e-6 * std::max(1.0, std::abs(a[i][col])));
}

TEST_CASE("resumed training matches the uninterrupted run") {
    TempDir dir("resume");
    const TinySetup setup = make_tiny_setup(dir, 4, 2);
    TrainConfig cfg = setup.cfg;
    cfg.max_epochs = 4;
    fit(setup.train_manifest, setup.val_manifest, cfg, dir.sub("full.ckpt"), dir.sub("full.csv"));

    TrainConfig half = cfg;
    half.max_epochs = 2;
    fit(setup.train_manifest, setup.val_manifest, half, dir.sub("part.ckpt"), dir.sub("part.csv"));
    fit(setup.train_manifest, setup.val_manifest, cfg, dir.sub("part.ckpt"), dir.sub("part.csv"),
        dir.sub("part.ckpt") + ".last");

    const auto full = parse_log(dir.sub("full.csv"));
    const auto part = parse_log(dir.sub("part.csv"));
    REQUIRE(full.size() == 4);
    REQUIRE(part.size() == 4);
    for (size_t i = 0; i < 4; ++i)
        for (size_t col : {0u, 1u, 2u, 3u, 4u})
            CHECK(std::abs(full[i][col] - part[i][col]) <=
                  1e-9 * std::max(1.0, std::abs(full[i][col])));
}

TEST_CASE("the baseline trains under the same loop") {
    TempDir dir("baseline");
    const TinySetup setup = make_tiny_setup(dir, 4, 2);
    TrainConfig cfg = setup.cfg;
    cfg.train_baseline = true;
    cfg.max_epochs = 2;

    const FitResult result = fit(setup.train_manifest, setup.val_manifest, cfg,
                                 dir.sub("base.ckpt"), dir.sub("base.csv"));
    CHECK(result.epochs_run == 2);
    const auto rows = parse_log(dir.sub("base.csv"));
    for (const auto& row : rows) CHECK(row[1] == 0.0);  // dc column pinned to zero

    const ModelState loaded = ModelState::load(dir.sub("base.ckpt"));
    CHECK(loaded.baseline);
}

TEST_CASE("checkpoints round trip to the identical validation loss") {
    TempDir dir("ckptval");
    const TinySetup setup = make_tiny_setup(dir, 4, 2);
    TrainConfig cfg = setup.cfg;
    cfg.max_epochs = 3;
    const FitResult result = fit(setup.train_manifest, setup.val_manifest, cfg,
                                 dir.sub("m.ckpt"), dir.sub("m.csv"));

    const ModelState loaded = ModelState::load(dir.sub("m.ckpt"));
    const MelFilterbank fb =
        MelFilterbank::build(cfg.mel_bins, cfg.stft.num_bins(), cfg.sample_rate);
    const auto val_clips = featurize_manifest(setup.val_manifest, cfg);
    const StepMetrics val = evaluate_loss(val_clips, loaded, fb);
    CHECK(val.combined == doctest::Approx(result.best_val).epsilon(1e-12));
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir("corrupt");
    {
        std::ofstream f(dir.sub("bad.ckpt"), std::ios::binary);
        f << "this is not a checkpoint";
    }
    CHECK_THROWS(ModelState::load(dir.sub("bad.ckpt")));

    // Truncated real checkpoint.
    const TinySetup setup = make_tiny_setup(dir, 1, 1);
    ModelState state = ModelState::create(setup.cfg);
    state.save(dir.sub("ok.ckpt"));
    std::ifstream in(dir.sub("ok.ckpt"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(dir.sub("cut.ckpt"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS(ModelState::load(dir.sub("cut.ckpt")));
}
