#include "gmmsep/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>

namespace gmmsep {

void StftConfig::validate() const {
    require(window_size >= 2 && window_size % 2 == 0, "stft: window_size must be even and >= 2");
    require(hop_size > 0 && hop_size <= window_size, "stft: need 0 < hop_size <= window_size");
    make_window(window, window_size);  // throws on unknown name
}

VectorXd make_window(const std::string& name, int size) {
    require(size >= 1, "window: size must be >= 1");
    VectorXd w(size);
    if (name == "rect") {
        w.setOnes();
    } else if (name == "hann" || name == "sqrt_hann") {
        for (int n = 0; n < size; ++n)
            w(n) = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / size);  // periodic
        if (name == "sqrt_hann") w = w.cwiseSqrt();
    } else {
        throw std::invalid_argument("window: unknown window '" + name + "'");
    }
    return w;
}

namespace {

// Sum of squared windows over all hop offsets, evaluated on one hop period.
// COLA for weighted overlap-add means this is constant.
bool window_satisfies_cola(const VectorXd& w, int hop) {
    const int size = static_cast<int>(w.size());
    VectorXd acc = VectorXd::Zero(hop);
    for (int start = 0; start < size; start += hop)
        for (int n = 0; n < size; ++n) acc((start + n) % hop) += w(n) * w(n);
    const double lo = acc.minCoeff(), hi = acc.maxCoeff();
    return lo > 1e-12 && (hi - lo) <= 1e-6 * hi;
}

}  // namespace

ComplexSpectrogram stft(const AudioClip& clip, const StftConfig& cfg) {
    cfg.validate();
    require(clip.num_channels() == 1, "stft: mono input required");
    require(clip.num_samples() > 0, "stft: empty input");
    clip.validate();

    const Eigen::Index n = clip.num_samples();
    const int w = cfg.window_size;
    const int hop = cfg.hop_size;
    const int pad = w / 2;
    const Eigen::Index frames = (n + hop - 1) / hop;

    VectorXd padded = VectorXd::Zero(n + w);
    padded.segment(pad, n) = clip.channels[0];

    const VectorXd window = make_window(cfg.window, w);

    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    ComplexSpectrogram spec;
    spec.config = cfg;
    spec.sample_rate = clip.sample_rate;
    spec.values.resize(w / 2 + 1, frames);

    std::vector<double> frame(static_cast<size_t>(w));
    std::vector<std::complex<double>> bins;
    for (Eigen::Index t = 0; t < frames; ++t) {
        const Eigen::Index start = t * hop;
        for (int i = 0; i < w; ++i) frame[static_cast<size_t>(i)] = padded(start + i) * window(i);
        fft.fwd(bins, frame);  // real input -> half spectrum, w/2+1 bins
        for (int k = 0; k <= w / 2; ++k) spec.values(k, t) = bins[static_cast<size_t>(k)];
    }
    return spec;
}

AudioClip istft(const ComplexSpectrogram& spec) {
    spec.config.validate();
    require(spec.num_frames() > 0 && spec.num_bins() > 0, "istft: empty spectrogram");
    require(spec.num_bins() == spec.config.num_bins(), "istft: bin count does not match config");
    require(spec.sample_rate > 0.0, "istft: sample rate must be > 0");

    const int w = spec.config.window_size;
    const int hop = spec.config.hop_size;
    const Eigen::Index frames = spec.num_frames();
    const VectorXd window = make_window(spec.config.window, w);
    require(window_satisfies_cola(window, hop), "istft: window/hop pair does not satisfy COLA");

    VectorXd acc = VectorXd::Zero((frames - 1) * hop + w);
    VectorXd wsq = VectorXd::Zero(acc.size());

    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<std::complex<double>> bins(static_cast<size_t>(w / 2 + 1));
    std::vector<double> frame;
    for (Eigen::Index t = 0; t < frames; ++t) {
        for (int k = 0; k <= w / 2; ++k) bins[static_cast<size_t>(k)] = spec.values(k, t);
        fft.inv(frame, bins);  // half spectrum -> w real samples, scaled by 1/w
        const Eigen::Index start = t * hop;
        for (int i = 0; i < w; ++i) {
            acc(start + i) += frame[static_cast<size_t>(i)] * window(i);
            wsq(start + i) += window(i) * window(i);
        }
    }
    for (Eigen::Index i = 0; i < acc.size(); ++i)
        acc(i) = wsq(i) > 1e-12 ? acc(i) / wsq(i) : 0.0;

    // Drop the analysis padding; keep T * hop samples.
    VectorXd out = acc.segment(w / 2, frames * hop);
    return AudioClip::mono(std::move(out), spec.sample_rate);
}

MatrixXd log_magnitude(const ComplexSpectrogram& spec, double floor_db) {
    require(std::isfinite(floor_db), "log_magnitude: floor_db must be finite");
    const MatrixXd mag = spec.magnitude();
    const double ref = mag.maxCoeff();
    MatrixXd out(mag.rows(), mag.cols());
    if (ref <= 0.0) {
        out.setConstant(floor_db);
        return out;
    }
    const double floor_abs = 20.0 * std::log10(ref) + floor_db;
    for (Eigen::Index i = 0; i < mag.size(); ++i) {
        const double m = mag(i);
        out(i) = m > 0.0 ? std::max(20.0 * std::log10(m), floor_abs) : floor_abs;
    }
    return out;
}

namespace {
inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }
}  // namespace

MelFilterbank MelFilterbank::build(int mel_bins, int num_fft_bins, double sample_rate,
                                   double f_min, double f_max) {
    require(mel_bins >= 1, "mel: mel_bins must be >= 1");
    require(num_fft_bins >= 2, "mel: need at least 2 FFT bins");
    require(sample_rate > 0.0, "mel: sample rate must be > 0");
    if (f_max <= 0.0) f_max = sample_rate / 2.0;
    require(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0 + 1e-9,
            "mel: need 0 <= f_min < f_max <= Nyquist");

    const int fft_size = 2 * (num_fft_bins - 1);
    const double mel_min = hz_to_mel(f_min);
    const double mel_max = hz_to_mel(f_max);

    std::vector<double> edges(static_cast<size_t>(mel_bins) + 2);
    for (int i = 0; i < mel_bins + 2; ++i)
        edges[static_cast<size_t>(i)] =
            mel_to_hz(mel_min + (mel_max - mel_min) * i / (mel_bins + 1));

    MelFilterbank fb;
    fb.mel_bins = mel_bins;
    fb.sample_rate = sample_rate;
    fb.weights = MatrixXd::Zero(mel_bins, num_fft_bins);

    for (int m = 0; m < mel_bins; ++m) {
        const double left = edges[static_cast<size_t>(m)];
        const double center = edges[static_cast<size_t>(m) + 1];
        const double right = edges[static_cast<size_t>(m) + 2];
        const double norm = 2.0 / (right - left);  // constant area per filter
        for (int k = 0; k < num_fft_bins; ++k) {
            const double hz = static_cast<double>(k) * sample_rate / fft_size;
            double tri = 0.0;
            if (hz > left && hz < right)
                tri = hz <= center ? (hz - left) / (center - left) : (right - hz) / (right - center);
            fb.weights(m, k) = norm * tri;
        }
        if (fb.weights.row(m).maxCoeff() <= 0.0) {
            // Filter narrower than the bin spacing: pin it to the nearest bin.
            const int k = std::clamp(static_cast<int>(std::lround(center * fft_size / sample_rate)),
                                     0, num_fft_bins - 1);
            fb.weights(m, k) = norm;
        }
    }

    fb.inverse_weights = MatrixXd::Zero(num_fft_bins, mel_bins);
    for (int k = 0; k < num_fft_bins; ++k) {
        const double colsum = fb.weights.col(k).sum();
        if (colsum > 0.0) fb.inverse_weights.row(k) = fb.weights.col(k).transpose() / colsum;
    }
    fb.validate();
    return fb;
}

void MelFilterbank::validate() const {
    require(weights.rows() == mel_bins && mel_bins >= 1, "mel: bad weight shape");
    require(weights.allFinite() && weights.minCoeff() >= 0.0, "mel: weights must be finite and >= 0");
    for (Eigen::Index m = 0; m < weights.rows(); ++m)
        require(weights.row(m).maxCoeff() > 0.0, "mel: empty filter row");
}

MatrixXd mel_project(const MatrixXd& mat, const MelFilterbank& fb) {
    require(mat.rows() == fb.weights.cols(),
            "mel_project: input rows do not match filterbank bins");
    return fb.weights * mat;
}

MatrixXd mel_unproject_mask(const MatrixXd& mel_mask, const MelFilterbank& fb) {
    require(mel_mask.rows() == fb.mel_bins,
            "mel_unproject_mask: input rows do not match mel bins");
    require(mel_mask.allFinite(), "mel_unproject_mask: non-finite mask entry");
    MatrixXd lifted = fb.inverse_weights * mel_mask;
    return lifted.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace gmmsep
