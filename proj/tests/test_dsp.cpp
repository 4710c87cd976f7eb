#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <random>

#include "gmmsep/audio.hpp"
#include "gmmsep/dsp.hpp"
#include "test_util.hpp"

using namespace gmmsep;
using namespace gmmsep::testutil;

namespace {

AudioClip sine_clip(double freq, double seconds, double rate, double amp = 1.0) {
    const Eigen::Index n = static_cast<Eigen::Index>(seconds * rate);
    VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = amp * std::sin(2.0 * M_PI * freq * i / rate);
    return AudioClip::mono(std::move(x), rate);
}

AudioClip noise_clip(Eigen::Index n, double rate, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.3);
    VectorXd x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = dist(rng);
    return AudioClip::mono(std::move(x), rate);
}

MelFilterbank identity_filterbank(int bins, double rate) {
    MelFilterbank fb;
    fb.weights = MatrixXd::Identity(bins, bins);
    fb.inverse_weights = MatrixXd::Identity(bins, bins);
    fb.mel_bins = bins;
    fb.sample_rate = rate;
    return fb;
}

}  // namespace

TEST_CASE("stft of silence is all zero") {
    StftConfig cfg;
    cfg.window_size = 512;
    cfg.hop_size = 128;
    const auto spec = stft(AudioClip::silence(8000, 8000.0), cfg);
    CHECK(spec.values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(spec.num_bins() == 257);
}

TEST_CASE("stft matches a direct DFT oracle on a rectangular frame") {
    const int w = 256;
    const int k = 8;
    const double rate = 8000.0;
    StftConfig cfg;
    cfg.window_size = w;
    cfg.hop_size = w;
    cfg.window = "rect";

    AudioClip clip = sine_clip(k * rate / w, 3.0 * w / rate, rate);
    const auto spec = stft(clip, cfg);
    REQUIRE(spec.num_frames() == 3);

    // Frame 1 covers samples [w/2, 3w/2) of the signal exactly.
    std::vector<std::complex<double>> oracle(static_cast<size_t>(w / 2 + 1));
    for (int bin = 0; bin <= w / 2; ++bin) {
        std::complex<double> acc(0.0, 0.0);
        for (int n = 0; n < w; ++n) {
            const double x = clip.channels[0](w / 2 + n);
            const double ang = -2.0 * M_PI * bin * n / w;
            acc += x * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        oracle[static_cast<size_t>(bin)] = acc;
    }
    double max_diff = 0.0;
    for (int bin = 0; bin <= w / 2; ++bin)
        max_diff = std::max(max_diff,
                            std::abs(spec.values(bin, 1) - oracle[static_cast<size_t>(bin)]));
    CHECK(max_diff < 1e-9 * w);

    // Energy concentrated at bin k.
    double total = 0.0;
    for (int b = 0; b <= w / 2; ++b) total += std::norm(spec.values(b, 1));
    CHECK(std::norm(spec.values(k, 1)) / total > 0.9999);
}

TEST_CASE("paper-scale config gives 1025 bins and ceil(n/hop) frames") {
    StftConfig cfg;  // 2048 / 512 defaults
    const auto spec = stft(AudioClip::silence(153600, 48000.0), cfg);
    CHECK(spec.num_bins() == 1025);
    CHECK(spec.num_frames() == 300);
}

TEST_CASE("stft rejects empty and non-finite input") {
    StftConfig cfg;
    cfg.window_size = 64;
    cfg.hop_size = 16;
    CHECK_THROWS(stft(AudioClip::silence(0, 8000.0), cfg));
    AudioClip bad = AudioClip::silence(100, 8000.0);
    bad.channels[0](3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(stft(bad, cfg));
}

TEST_CASE("stft zero-pads inputs shorter than one window") {
    StftConfig cfg;
    cfg.window_size = 512;
    cfg.hop_size = 128;
    const auto spec = stft(noise_clip(100, 8000.0, 3), cfg);
    CHECK(spec.num_frames() == 1);
}

TEST_CASE("istft round trip reconstructs random clips") {
    StftConfig cfg;
    cfg.window_size = 512;
    cfg.hop_size = 128;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<Eigen::Index> len_dist(700, 9000);
        const Eigen::Index n = len_dist(rng);
        const AudioClip x = noise_clip(n, 8000.0, seed * 31 + 1);
        const AudioClip back = istft(stft(x, cfg));
        REQUIRE(back.num_samples() >= n);
        const double peak = x.channels[0].cwiseAbs().maxCoeff();
        const double err = (back.channels[0].head(n) - x.channels[0]).cwiseAbs().maxCoeff();
        CHECK(err < 1e-6 * peak);
    }
}

TEST_CASE("istft of an all-zero spectrogram is silence") {
    StftConfig cfg;
    cfg.window_size = 256;
    cfg.hop_size = 64;
    ComplexSpectrogram spec;
    spec.config = cfg;
    spec.sample_rate = 8000.0;
    spec.values = Eigen::MatrixXcd::Zero(129, 10);
    const AudioClip out = istft(spec);
    CHECK(out.channels[0].cwiseAbs().maxCoeff() == 0.0);

    spec.values.resize(129, 0);
    CHECK_THROWS(istft(spec));
}

TEST_CASE("unit mask with mixture phase reproduces the mixture") {
    StftConfig cfg;
    cfg.window_size = 512;
    cfg.hop_size = 128;
    const AudioClip mix = noise_clip(6000, 8000.0, 7);
    ComplexSpectrogram spec = stft(mix, cfg);
    spec.values = spec.values.cwiseProduct(
        MatrixXd::Ones(spec.num_bins(), spec.num_frames()).cast<std::complex<double>>());
    const AudioClip back = istft(spec);
    const double peak = mix.channels[0].cwiseAbs().maxCoeff();
    CHECK((back.channels[0].head(6000) - mix.channels[0]).cwiseAbs().maxCoeff() < 1e-6 * peak);
}

TEST_CASE("istft rejects non-COLA window/hop pairs") {
    StftConfig cfg;
    cfg.window_size = 512;
    cfg.hop_size = 255;  // does not divide the window
    ComplexSpectrogram spec;
    spec.config = cfg;
    spec.sample_rate = 8000.0;
    spec.values = Eigen::MatrixXcd::Zero(257, 4);
    CHECK_THROWS(istft(spec));
}

TEST_CASE("stft is deterministic") {
    StftConfig cfg;
    cfg.window_size = 256;
    cfg.hop_size = 64;
    const AudioClip x = noise_clip(3000, 8000.0, 11);
    const auto a = stft(x, cfg);
    const auto b = stft(x, cfg);
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("log magnitude definition, clamp, and silence") {
    StftConfig cfg;
    cfg.window_size = 4;
    cfg.hop_size = 4;
    ComplexSpectrogram spec;
    spec.config = cfg;
    spec.sample_rate = 8000.0;

    spec.values.resize(3, 1);
    spec.values << 1.0, 0.0, 0.5;
    MatrixXd lm = log_magnitude(spec, -80.0);
    CHECK(lm(0, 0) == doctest::Approx(0.0));       // magnitude 1 -> 0 dB
    CHECK(lm(1, 0) == doctest::Approx(-80.0));     // zero clamps to the floor
    CHECK(lm(2, 0) == doctest::Approx(20.0 * std::log10(0.5)));

    spec.values << 10.0, 1.0, 0.0;
    lm = log_magnitude(spec, -80.0);
    CHECK(lm(0, 0) == doctest::Approx(20.0));      // magnitude 10 -> +20 dB
    CHECK(lm(2, 0) == doctest::Approx(-60.0));     // floor is relative to the max

    spec.values.setZero();
    lm = log_magnitude(spec, -80.0);
    CHECK(lm.maxCoeff() == -80.0);
    CHECK(lm.minCoeff() == -80.0);
}

TEST_CASE("mel projection with an identity filterbank is the identity") {
    const auto fb = identity_filterbank(16, 8000.0);
    std::mt19937_64 rng(5);
    const MatrixXd mat = random_matrix(16, 7, rng);
    CHECK((mel_project(mat, fb) - mat).cwiseAbs().maxCoeff() == 0.0);
    CHECK(mel_project(MatrixXd::Zero(16, 7), fb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mel projection of a single hot bin lands in the owning rows") {
    MelFilterbank fb;
    fb.mel_bins = 2;
    fb.sample_rate = 8000.0;
    fb.weights = MatrixXd::Zero(2, 3);
    fb.weights(0, 0) = 0.3;
    fb.weights(1, 2) = 0.7;
    fb.inverse_weights = MatrixXd::Zero(3, 2);

    MatrixXd mat = MatrixXd::Zero(3, 4);
    mat(2, 1) = 2.0;  // hot bin f=2 at frame 1
    const MatrixXd mel = mel_project(mat, fb);
    CHECK(mel(1, 1) == doctest::Approx(1.4));  // w * value
    CHECK(mel(0, 1) == 0.0);
    CHECK(mel.col(0).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS(mel_project(MatrixXd::Zero(4, 4), fb));
}

TEST_CASE("mel projection is linear") {
    const auto fb = MelFilterbank::build(24, 257, 16000.0);
    std::mt19937_64 rng(9);
    const MatrixXd a = random_matrix(257, 5, rng);
    const MatrixXd b = random_matrix(257, 5, rng);
    const MatrixXd lhs = mel_project(2.5 * a - 0.7 * b, fb);
    const MatrixXd rhs = 2.5 * mel_project(a, fb) - 0.7 * mel_project(b, fb);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mel filterbank rows are nonnegative and never empty") {
    // The paper-scale setup exercises filters narrower than an FFT bin.
    const auto fb = MelFilterbank::build(300, 1025, 48000.0);
    fb.validate();
    CHECK(fb.weights.minCoeff() >= 0.0);
    for (Eigen::Index m = 0; m < fb.weights.rows(); ++m)
        CHECK(fb.weights.row(m).maxCoeff() > 0.0);
}

TEST_CASE("mask lifting stays in [0,1] and kills zero masks") {
    const auto fb = MelFilterbank::build(24, 257, 16000.0);
    const MatrixXd ones = mel_unproject_mask(MatrixXd::Ones(24, 3), fb);
    CHECK(ones.minCoeff() >= 0.0);
    CHECK(ones.maxCoeff() <= 1.0);
    CHECK(mel_unproject_mask(MatrixXd::Zero(24, 3), fb).cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 rng(13);
    const MatrixXd noisy = random_matrix(24, 3, rng, 0.0, 1.0);
    const MatrixXd lifted = mel_unproject_mask(noisy, fb);
    CHECK(lifted.minCoeff() >= 0.0);
    CHECK(lifted.maxCoeff() <= 1.0);
    CHECK_THROWS(mel_unproject_mask(MatrixXd::Zero(10, 3), fb));
}

TEST_CASE("one-hot mel mask lifts only into that filter's support") {
    const auto fb = MelFilterbank::build(16, 129, 8000.0);
    const int band = 6;
    MatrixXd mel_mask = MatrixXd::Zero(16, 1);
    mel_mask(band, 0) = 1.0;
    const MatrixXd lifted = mel_unproject_mask(mel_mask, fb);
    double inside = 0.0, outside = 0.0;
    for (Eigen::Index f = 0; f < 129; ++f) {
        if (fb.weights(band, f) > 0.0)
            inside += lifted(f, 0) * lifted(f, 0);
        else
            outside += lifted(f, 0) * lifted(f, 0);
    }
    CHECK(inside > 0.0);
    CHECK(outside == 0.0);
}

TEST_CASE("wav round trips float32 and pcm formats") {
    TempDir dir("wav");
    AudioClip clip = noise_clip(2000, 16000.0, 21);
    clip.channels[0] *= 0.9 / clip.channels[0].cwiseAbs().maxCoeff();  // inside PCM range
    clip.channels.push_back(clip.channels[0] * 0.5);  // stereo

    write_wav(dir.sub("f32.wav"), clip, WavFormat::float32);
    const AudioClip f32 = read_wav(dir.sub("f32.wav"));
    CHECK(f32.num_channels() == 2);
    CHECK(f32.sample_rate == 16000.0);
    double err = 0.0;
    for (int c = 0; c < 2; ++c)
        err = std::max(err, (f32.channels[c] - clip.channels[c]).cwiseAbs().maxCoeff());
    CHECK(err < 1e-7);  // float32 quantization only

    write_wav(dir.sub("p16.wav"), clip, WavFormat::pcm16);
    const AudioClip p16 = read_wav(dir.sub("p16.wav"));
    CHECK((p16.channels[0] - clip.channels[0]).cwiseAbs().maxCoeff() < 1.0 / 32000.0);

    write_wav(dir.sub("p24.wav"), clip, WavFormat::pcm24);
    const AudioClip p24 = read_wav(dir.sub("p24.wav"));
    CHECK((p24.channels[0] - clip.channels[0]).cwiseAbs().maxCoeff() < 1.0 / 8000000.0);

    CHECK_THROWS(read_wav(dir.sub("missing.wav")));
}

TEST_CASE("resampling keeps a sine at its frequency") {
    const AudioClip src = sine_clip(1000.0, 0.5, 48000.0, 0.5);
    const AudioClip down = resample(src, 16000.0);
    CHECK(down.sample_rate == 16000.0);
    CHECK(down.num_samples() == 8000);

    const AudioClip direct = sine_clip(1000.0, 0.5, 16000.0, 0.5);
    // Compare away from the boundary taps.
    const Eigen::Index a = 200, b = down.num_samples() - 200;
    const double err =
        (down.channels[0].segment(a, b - a) - direct.channels[0].segment(a, b - a))
            .cwiseAbs()
            .maxCoeff();
    CHECK(err < 0.02);
}
