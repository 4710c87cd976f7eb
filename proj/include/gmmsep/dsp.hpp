#ifndef GMMSEP_DSP_HPP
#define GMMSEP_DSP_HPP

#include <complex>
#include <string>

#include "gmmsep/audio.hpp"
#include "gmmsep/common.hpp"

namespace gmmsep {

// Analysis window names: "sqrt_hann" (default, COLA at hop = window/4 with
// matching synthesis window), "hann", "rect".
struct StftConfig {
    int window_size = 2048;
    int hop_size = 512;
    std::string window = "sqrt_hann";

    int num_bins() const { return window_size / 2 + 1; }
    void validate() const;
};

struct ComplexSpectrogram {
    Eigen::MatrixXcd values;  // F x T
    StftConfig config;
    double sample_rate = 0.0;

    Eigen::Index num_bins() const { return values.rows(); }
    Eigen::Index num_frames() const { return values.cols(); }
    MatrixXd magnitude() const { return values.cwiseAbs(); }
};

VectorXd make_window(const std::string& name, int size);

// Centered STFT: the signal is zero-padded by window/2 on both sides and
// framed at hop intervals, so T = ceil(n / hop). Mono input only.
ComplexSpectrogram stft(const AudioClip& clip, const StftConfig& cfg);

// Weighted overlap-add inverse. Output has T * hop samples; callers trim to
// the original length. Requires the window/hop pair to satisfy COLA.
AudioClip istft(const ComplexSpectrogram& spec);

// 20*log10(|X|) clamped below at floor_db relative to the spectrogram max.
// An all-zero spectrogram maps to a constant floor_db.
MatrixXd log_magnitude(const ComplexSpectrogram& spec, double floor_db = -80.0);

// Triangular mel filters on the 2595*log10(1 + f/700) scale with area
// normalization; rows that would land between FFT bins get a single
// nearest-bin weight so every filter stays non-empty.
struct MelFilterbank {
    MatrixXd weights;          // M x F
    MatrixXd inverse_weights;  // F x M, rows of weights^T normalized to sum 1
    int mel_bins = 0;
    double sample_rate = 0.0;

    static MelFilterbank build(int mel_bins, int num_fft_bins, double sample_rate,
                               double f_min = 0.0, double f_max = 0.0);
    void validate() const;
};

// fb.weights * mat; shapes F x T -> M x T.
MatrixXd mel_project(const MatrixXd& mat, const MelFilterbank& fb);

// Lift a mel-domain mask back to linear frequency with the normalized
// transpose, then clamp to [0, 1]. Shapes M x T -> F x T.
MatrixXd mel_unproject_mask(const MatrixXd& mel_mask, const MelFilterbank& fb);

}  // namespace gmmsep

#endif
