#include "gmmsep/audio.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace gmmsep {

AudioClip AudioClip::mono(VectorXd samples, double sample_rate) {
    AudioClip clip;
    clip.channels.push_back(std::move(samples));
    clip.sample_rate = sample_rate;
    return clip;
}

AudioClip AudioClip::silence(Eigen::Index samples, double sample_rate, int channels) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    for (int c = 0; c < channels; ++c) clip.channels.push_back(VectorXd::Zero(samples));
    return clip;
}

AudioClip AudioClip::downmix_mono() const {
    validate();
    if (num_channels() == 1) return *this;
    VectorXd sum = VectorXd::Zero(num_samples());
    for (const auto& ch : channels) sum += ch;
    sum /= static_cast<double>(num_channels());
    return AudioClip::mono(std::move(sum), sample_rate);
}

void AudioClip::validate() const {
    require(sample_rate > 0.0, "AudioClip: sample_rate must be > 0");
    require(!channels.empty() && channels.size() <= 2, "AudioClip: expected 1 or 2 channels");
    const Eigen::Index n = channels[0].size();
    for (const auto& ch : channels) {
        require(ch.size() == n, "AudioClip: channel lengths differ");
        require(ch.allFinite(), "AudioClip: non-finite sample");
    }
}

namespace {

struct ByteReader {
    const std::vector<unsigned char>& buf;
    size_t pos = 0;

    explicit ByteReader(const std::vector<unsigned char>& b) : buf(b) {}

    bool has(size_t n) const { return pos + n <= buf.size(); }

    uint32_t u32() {
        require(has(4), "wav: truncated file");
        uint32_t v = static_cast<uint32_t>(buf[pos]) | (static_cast<uint32_t>(buf[pos + 1]) << 8) |
                     (static_cast<uint32_t>(buf[pos + 2]) << 16) |
                     (static_cast<uint32_t>(buf[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    uint16_t u16() {
        require(has(2), "wav: truncated file");
        uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::string tag() {
        require(has(4), "wav: truncated file");
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), 4);
        pos += 4;
        return s;
    }
    void skip(size_t n) {
        require(has(n), "wav: truncated file");
        pos += n;
    }
};

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}
void put_u16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}
void put_tag(std::vector<unsigned char>& out, const char* t) {
    out.insert(out.end(), t, t + 4);
}

double decode_sample(const unsigned char* p, uint16_t bits, uint16_t fmt) {
    if (fmt == 3) {  // IEEE float
        float f;
        std::memcpy(&f, p, 4);
        return static_cast<double>(f);
    }
    if (bits == 16) {
        int16_t v = static_cast<int16_t>(p[0] | (p[1] << 8));
        return static_cast<double>(v) / 32768.0;
    }
    // 24-bit PCM, sign extended
    int32_t v = static_cast<int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
    if (v & 0x800000) v |= ~0xffffff;
    return static_cast<double>(v) / 8388608.0;
}

}  // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "wav: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    ByteReader r(buf);

    require(r.tag() == "RIFF", "wav: missing RIFF header in " + path);
    r.u32();  // riff size, unreliable in the wild
    require(r.tag() == "WAVE", "wav: not a WAVE file: " + path);

    uint16_t fmt = 0, num_channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    size_t data_pos = 0, data_size = 0;
    bool have_fmt = false, have_data = false;

    while (r.has(8)) {
        std::string chunk = r.tag();
        uint32_t size = r.u32();
        if (chunk == "fmt ") {
            size_t end = r.pos + size;
            fmt = r.u16();
            num_channels = r.u16();
            sample_rate = r.u32();
            r.u32();  // byte rate
            r.u16();  // block align
            bits = r.u16();
            if (fmt == 0xFFFE && r.pos + 8 <= end) {
                r.u16();                  // cbSize
                r.u16();                  // valid bits
                r.u32();                  // channel mask
                fmt = r.u16();            // first word of SubFormat GUID
                r.skip(end - r.pos);
            } else if (end > r.pos) {
                r.skip(end - r.pos);
            }
            have_fmt = true;
        } else if (chunk == "data") {
            data_pos = r.pos;
            data_size = std::min(static_cast<size_t>(size), buf.size() - r.pos);
            r.skip(data_size);
            have_data = true;
        } else {
            size_t padded = size + (size & 1);
            if (!r.has(padded)) break;
            r.skip(padded);
        }
        if (size & 1 && chunk == "data" && r.has(1)) r.skip(1);
    }

    require(have_fmt && have_data, "wav: missing fmt/data chunk in " + path);
    require(num_channels >= 1 && num_channels <= 2, "wav: unsupported channel count in " + path);
    require((fmt == 1 && (bits == 16 || bits == 24)) || (fmt == 3 && bits == 32),
            "wav: unsupported encoding in " + path + " (need 16/24-bit PCM or 32-bit float)");

    const size_t bytes_per_sample = bits / 8;
    const size_t frame_bytes = bytes_per_sample * num_channels;
    const size_t frames = data_size / frame_bytes;

    AudioClip clip;
    clip.sample_rate = static_cast<double>(sample_rate);
    for (int c = 0; c < num_channels; ++c) clip.channels.push_back(VectorXd::Zero(frames));
    for (size_t i = 0; i < frames; ++i) {
        const unsigned char* p = buf.data() + data_pos + i * frame_bytes;
        for (int c = 0; c < num_channels; ++c)
            clip.channels[c](static_cast<Eigen::Index>(i)) =
                decode_sample(p + c * bytes_per_sample, bits, fmt);
    }
    clip.validate();
    return clip;
}

void write_wav(const std::string& path, const AudioClip& clip, WavFormat format) {
    clip.validate();
    const int channels = static_cast<int>(clip.num_channels());
    const Eigen::Index frames = clip.num_samples();
    uint16_t bits = 0, fmt = 1;
    switch (format) {
        case WavFormat::pcm16: bits = 16; break;
        case WavFormat::pcm24: bits = 24; break;
        case WavFormat::float32: bits = 32; fmt = 3; break;
    }
    const uint32_t rate = static_cast<uint32_t>(clip.sample_rate);
    const uint16_t block_align = static_cast<uint16_t>(channels * bits / 8);
    const uint32_t data_size = static_cast<uint32_t>(frames) * block_align;

    std::vector<unsigned char> out;
    out.reserve(44 + data_size);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_size);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, fmt);
    put_u16(out, static_cast<uint16_t>(channels));
    put_u32(out, rate);
    put_u32(out, rate * block_align);
    put_u16(out, block_align);
    put_u16(out, bits);
    put_tag(out, "data");
    put_u32(out, data_size);

    for (Eigen::Index i = 0; i < frames; ++i) {
        for (int c = 0; c < channels; ++c) {
            const double x = clip.channels[c](i);
            if (format == WavFormat::float32) {
                float f = static_cast<float>(x);
                unsigned char b[4];
                std::memcpy(b, &f, 4);
                out.insert(out.end(), b, b + 4);
            } else if (format == WavFormat::pcm16) {
                const int32_t v = static_cast<int32_t>(
                    std::clamp(std::lrint(x * 32768.0), -32768L, 32767L));
                put_u16(out, static_cast<uint16_t>(v & 0xffff));
            } else {
                const int32_t v = static_cast<int32_t>(
                    std::clamp(std::lrint(x * 8388608.0), -8388608L, 8388607L));
                out.push_back(static_cast<unsigned char>(v & 0xff));
                out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
                out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
            }
        }
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), "wav: cannot write " + path);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    require(os.good(), "wav: write failed for " + path);
}

AudioClip resample(const AudioClip& clip, double target_rate) {
    clip.validate();
    require(target_rate > 0.0, "resample: target rate must be > 0");
    if (std::abs(clip.sample_rate - target_rate) < 1e-9) return clip;

    const double ratio = target_rate / clip.sample_rate;
    const Eigen::Index in_len = clip.num_samples();
    const Eigen::Index out_len = static_cast<Eigen::Index>(std::llround(in_len * ratio));
    const int taps = 32;
    // Cut-off at 95% of the narrower Nyquist, in cycles per input sample.
    const double fc = 0.5 * 0.95 * std::min(1.0, ratio);

    AudioClip out;
    out.sample_rate = target_rate;
    for (const auto& ch : clip.channels) {
        VectorXd y = VectorXd::Zero(out_len);
        for (Eigen::Index n = 0; n < out_len; ++n) {
            const double t = static_cast<double>(n) / ratio;
            const Eigen::Index center = static_cast<Eigen::Index>(std::floor(t));
            double acc = 0.0, wsum = 0.0;
            for (Eigen::Index j = center - taps + 1; j <= center + taps; ++j) {
                const double u = t - static_cast<double>(j);
                const double sinc = (std::abs(u) < 1e-12)
                                        ? 2.0 * fc
                                        : std::sin(2.0 * M_PI * fc * u) / (M_PI * u);
                const double win = 0.5 + 0.5 * std::cos(M_PI * u / taps);
                const double w = sinc * win;
                wsum += w;
                if (j >= 0 && j < in_len) acc += w * ch(j);
            }
            y(n) = (std::abs(wsum) > 1e-12) ? acc / wsum : 0.0;
        }
        out.channels.push_back(std::move(y));
    }
    return out;
}

AudioClip load_audio(const std::string& path, double target_rate) {
    AudioClip clip = read_wav(path);
    if (target_rate > 0.0 && std::abs(clip.sample_rate - target_rate) > 1e-9)
        clip = resample(clip, target_rate);
    return clip;
}

}  // namespace gmmsep
