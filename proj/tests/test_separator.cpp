#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "gmmsep/separator.hpp"
#include "tiny_setup.hpp"

using namespace gmmsep;
using namespace gmmsep::testutil;

namespace {

ModelState random_model(const TrainConfig& cfg, double excerpt_seconds = 0.0) {
    ModelState state = ModelState::create(cfg);
    state.excerpt_seconds = excerpt_seconds;
    return state;
}

AudioClip tiny_mixture(const TempDir& dir, const TrainConfig& cfg, uint64_t seed) {
    const StemBank bank = make_synthetic_bank(dir.sub("qbank"), cfg.sample_rate, 2.0, 4, 1, 1, seed);
    SampleOptions opts;
    opts.duration_seconds = 0.5;
    opts.sample_rate = cfg.sample_rate;
    opts.check_silence = false;
    const MixtureSpec spec = sample_mixture_spec(bank, "train", opts, seed + 1);
    return render_mixture(spec).mixture;
}

}  // namespace

TEST_CASE("separation returns one matching clip per class") {
    TempDir dir("sep");
    const TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg);
    const AudioClip mix = tiny_mixture(dir, cfg, 51);

    const auto stems = separate(mix, model);
    REQUIRE(stems.size() == 4);
    for (const auto& s : stems) {
        CHECK(s.num_channels() == 1);
        CHECK(s.num_samples() == mix.num_samples());
        CHECK(s.sample_rate == mix.sample_rate);
        CHECK(s.channels[0].allFinite());
    }
    CHECK_THROWS(separate(AudioClip::silence(0, cfg.sample_rate), model));
}

TEST_CASE("simplex masks make the stems sum back to the mixture") {
    TempDir dir("sum");
    const TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg);
    const AudioClip mix = tiny_mixture(dir, cfg, 52);

    const auto stems = separate(mix, model);
    VectorXd sum = VectorXd::Zero(mix.num_samples());
    for (const auto& s : stems) sum += s.channels[0];
    const double deviation =
        (sum - mix.channels[0]).norm() / std::max(mix.channels[0].norm(), 1e-12);
    CHECK(deviation < 0.05);
}

TEST_CASE("separation is idempotent on a fixed checkpoint") {
    TempDir dir("idem");
    const TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg);
    const AudioClip mix = tiny_mixture(dir, cfg, 53);
    const auto a = separate(mix, model);
    const auto b = separate(mix, model);
    for (size_t c = 0; c < a.size(); ++c)
        CHECK((a[c].channels[0] - b[c].channels[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stereo separation equals two independent mono runs") {
    TempDir dir("stereo");
    const TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg);
    const AudioClip left = tiny_mixture(dir, cfg, 54);
    AudioClip right = left;
    right.channels[0] *= 0.3;  // make the channels differ

    AudioClip stereo;
    stereo.sample_rate = left.sample_rate;
    stereo.channels = {left.channels[0], right.channels[0]};

    const auto both = separate(stereo, model);
    const auto mono_l = separate(left, model);
    const auto mono_r = separate(AudioClip::mono(right.channels[0], left.sample_rate), model);
    for (size_t c = 0; c < both.size(); ++c) {
        CHECK(both[c].num_channels() == 2);
        CHECK((both[c].channels[0] - mono_l[c].channels[0]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((both[c].channels[1] - mono_r[c].channels[0]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("per-bin masked magnitudes never exceed the mixture magnitude") {
    TempDir dir("bound");
    const TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg);
    const AudioClip mix = tiny_mixture(dir, cfg, 55);

    const MelFilterbank fb =
        MelFilterbank::build(cfg.mel_bins, cfg.stft.num_bins(), cfg.sample_rate);
    const ComplexSpectrogram spec = stft(mix, cfg.stft);
    const Mask mask = posterior_mask(model.embed.forward(input_logmel(spec, cfg, fb)),
                                     model.aux.forward(cfg.covariance));
    for (Eigen::Index c = 0; c < mask.num_classes(); ++c) {
        const MatrixXd lifted = mel_unproject_mask(mask.class_grid(c), fb);
        CHECK(lifted.maxCoeff() <= 1.0);
        CHECK(((lifted.array() * spec.magnitude().array()) <=
               spec.magnitude().array() + 1e-12)
                  .all());
    }
}

TEST_CASE("long inputs are chunked and crossfaded without artifacts") {
    TempDir dir("chunk");
    TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg, 0.5);  // trained on 0.5 s excerpts

    // 1.7 s input forces three overlapping chunks.
    const StemBank bank = make_synthetic_bank(dir.sub("bank"), cfg.sample_rate, 2.0, 4, 1, 1, 56);
    SampleOptions opts;
    opts.duration_seconds = 1.7;
    opts.sample_rate = cfg.sample_rate;
    opts.check_silence = false;
    const AudioClip mix = render_mixture(sample_mixture_spec(bank, "train", opts, 57)).mixture;

    const auto stems = separate(mix, model);
    VectorXd sum = VectorXd::Zero(mix.num_samples());
    for (const auto& s : stems) {
        CHECK(s.num_samples() == mix.num_samples());
        CHECK(s.channels[0].allFinite());
        sum += s.channels[0];
    }
    const double deviation =
        (sum - mix.channels[0]).norm() / std::max(mix.channels[0].norm(), 1e-12);
    CHECK(deviation < 0.05);
}

TEST_CASE("query separation matches the mixture's shape and stays finite") {
    TempDir dir("query");
    const TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg, 0.5);
    const AudioClip mix = tiny_mixture(dir, cfg, 58);
    const AudioClip query = synth_stem("drums", 0.5, cfg.sample_rate, 59);

    const AudioClip out = query_separate(query, mix, model);
    CHECK(out.num_samples() == mix.num_samples());
    CHECK(out.num_channels() == 1);
    CHECK(out.channels[0].allFinite());

    // Masks are in [0,1]: the output cannot carry more energy than the mixture.
    CHECK(out.channels[0].norm() <= mix.channels[0].norm() * 1.01);

    CHECK_THROWS(query_separate(AudioClip::silence(0, cfg.sample_rate), mix, model));
    ModelState base = ModelState::create([&] {
        TrainConfig c = cfg;
        c.train_baseline = true;
        return c;
    }());
    CHECK_THROWS(query_separate(query, mix, base));
}

TEST_CASE("pca reconstructs centered data from all components") {
    std::mt19937_64 rng(61);
    const MatrixXd data = random_matrix(40, 5, rng);
    const PcaResult pca = pca_fit(data);
    for (Eigen::Index i = 0; i + 1 < pca.eigenvalues.size(); ++i)
        CHECK(pca.eigenvalues(i) >= pca.eigenvalues(i + 1));

    const MatrixXd centered = data.rowwise() - pca.mean;
    const MatrixXd coords = centered * pca.components;
    const MatrixXd back = coords * pca.components.transpose();
    CHECK((back - centered).cwiseAbs().maxCoeff() < 1e-8);

    // Coordinate variances follow the eigenvalues.
    const double v1 = coords.col(0).squaredNorm();
    const double v2 = coords.col(1).squaredNorm();
    CHECK(v1 >= v2);
}

TEST_CASE("embedding views export the documented columns") {
    TempDir dir("views");
    const TrainConfig cfg = tiny_train_config();
    const ModelState model = random_model(cfg);
    const AudioClip mix = tiny_mixture(dir, cfg, 62);

    export_embedding_views(mix, model, dir.sub("views.csv"), dir.sub("views.json"));

    std::ifstream csv(dir.sub("views.csv"));
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header == "t,m,gated,label,pc1,pc2,e_0,e_1,e_2,e_3");
    size_t rows = 0;
    std::string line;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    const ComplexSpectrogram spec = stft(mix, cfg.stft);
    CHECK(rows == static_cast<size_t>(spec.num_frames() * cfg.mel_bins));

    std::ifstream js(dir.sub("views.json"));
    REQUIRE(js.good());
    std::stringstream buf;
    buf << js.rdbuf();
    CHECK(buf.str().find("pca_eigenvalues") != std::string::npos);
    CHECK(buf.str().find("variances") != std::string::npos);
}

TEST_CASE("gaussian parameter files round trip") {
    TempDir dir("gparams");
    GaussianParams p;
    p.kind = CovarianceType::diagonal;
    p.means.resize(2, 3);
    p.means << 1, 2, 3, -1, -2, -3;
    p.variances = MatrixXd::Constant(2, 3, 0.5);
    p.priors.resize(2);
    p.priors << 0.25, 0.75;

    save_gaussian_params(dir.sub("q.json"), p);
    const GaussianParams back = load_gaussian_params(dir.sub("q.json"));
    CHECK(back.kind == p.kind);
    CHECK((back.means - p.means).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.variances - p.variances).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.priors - p.priors).cwiseAbs().maxCoeff() < 1e-12);
}
