#ifndef GMMSEP_AUDIO_HPP
#define GMMSEP_AUDIO_HPP

#include <string>
#include <vector>

#include "gmmsep/common.hpp"

namespace gmmsep {

// Time-domain audio, one sample vector per channel. Samples are doubles in
// nominal [-1, 1]; nothing clips until a PCM write.
struct AudioClip {
    std::vector<VectorXd> channels;
    double sample_rate = 0.0;

    Eigen::Index num_channels() const { return static_cast<Eigen::Index>(channels.size()); }
    Eigen::Index num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
    double duration_seconds() const {
        return sample_rate > 0.0 ? static_cast<double>(num_samples()) / sample_rate : 0.0;
    }

    static AudioClip mono(VectorXd samples, double sample_rate);
    static AudioClip silence(Eigen::Index samples, double sample_rate, int channels = 1);

    // Average of all channels.
    AudioClip downmix_mono() const;

    // Throws unless: 1 or 2 channels of equal length, finite samples, rate > 0.
    void validate() const;
};

enum class WavFormat { pcm16, pcm24, float32 };

AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip, WavFormat format = WavFormat::float32);

// Windowed-sinc resampler. Returns the clip unchanged when rates match.
AudioClip resample(const AudioClip& clip, double target_rate);

// read_wav + resample when target_rate > 0 and differs from the file rate.
AudioClip load_audio(const std::string& path, double target_rate = 0.0);

}  // namespace gmmsep

#endif
