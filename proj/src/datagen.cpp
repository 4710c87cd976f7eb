#include "gmmsep/datagen.hpp"

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace gmmsep {

namespace {

uint64_t derive_seed(uint64_t seed, uint64_t index) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double fraction_silent(const VectorXd& x) {
    if (x.size() == 0) return 1.0;
    Eigen::Index quiet = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (std::abs(x(i)) < 1e-4) ++quiet;
    return static_cast<double>(quiet) / static_cast<double>(x.size());
}

}  // namespace

std::vector<const StemEntry*> StemBank::entries_for(const std::string& class_name,
                                                    const std::string& split) const {
    std::vector<const StemEntry*> out;
    for (const auto& e : entries)
        if (e.class_name == class_name && e.split == split) out.push_back(&e);
    return out;
}

void StemBank::validate_for_split(const std::string& split, double excerpt_seconds) const {
    require(!classes.empty(), "bank: no classes declared");
    for (const auto& cls : classes) {
        const auto usable = entries_for(cls, split);
        require(!usable.empty(),
                "bank: class '" + cls + "' has no entries for split '" + split + "'");
        bool any_long_enough = false;
        for (const auto* e : usable)
            if (e->duration_seconds >= excerpt_seconds) any_long_enough = true;
        require(any_long_enough, "bank: class '" + cls + "' has no stem of at least " +
                                     std::to_string(excerpt_seconds) + " s in split '" + split + "'");
    }
}

StemBank load_stem_bank(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "bank: cannot open " + path);
    ordered_json j;
    in >> j;
    StemBank bank;
    const fs::path base = fs::absolute(fs::path(path)).parent_path();
    for (const auto& c : j.at("classes")) bank.classes.push_back(c.get<std::string>());
    for (const auto& e : j.at("entries")) {
        StemEntry entry;
        entry.class_name = e.at("class").get<std::string>();
        fs::path p = e.at("path").get<std::string>();
        entry.path = p.is_absolute() ? p.string() : (base / p).string();
        entry.split = e.at("split").get<std::string>();
        entry.song = e.at("song").get<std::string>();
        entry.duration_seconds = e.at("duration").get<double>();
        bank.entries.push_back(std::move(entry));
    }
    return bank;
}

void save_stem_bank(const std::string& path, const StemBank& bank) {
    ordered_json j;
    j["classes"] = bank.classes;
    j["entries"] = ordered_json::array();
    const fs::path base = fs::absolute(fs::path(path)).parent_path();
    for (const auto& e : bank.entries) {
        ordered_json je;
        je["class"] = e.class_name;
        je["path"] = fs::path(e.path).lexically_proximate(base).generic_string();
        je["split"] = e.split;
        je["song"] = e.song;
        je["duration"] = e.duration_seconds;
        j["entries"].push_back(je);
    }
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), "bank: cannot write " + path);
    out << j.dump(2) << "\n";
}

MixtureSpec sample_mixture_spec(const StemBank& bank, const std::string& split,
                                const SampleOptions& opts, uint64_t seed,
                                std::vector<std::string>* warnings) {
    require(opts.duration_seconds > 0.0 && opts.sample_rate > 0.0,
            "sample: duration and sample rate must be > 0");
    bank.validate_for_split(split, opts.duration_seconds);

    std::mt19937_64 rng(seed);
    std::set<std::string> split_songs;
    for (const auto& e : bank.entries)
        if (e.split == split) split_songs.insert(e.song);
    const bool want_distinct = split_songs.size() >= bank.classes.size();
    if (!want_distinct && warnings)
        warnings->push_back("bank has fewer songs than classes in split '" + split +
                            "'; distinct-song constraint relaxed");

    MixtureSpec spec;
    spec.duration_seconds = opts.duration_seconds;
    spec.sample_rate = opts.sample_rate;
    spec.seed = seed;

    std::set<std::string> used_songs;
    for (const auto& cls : bank.classes) {
        auto candidates = bank.entries_for(cls, split);
        std::erase_if(candidates, [&](const StemEntry* e) {
            return e->duration_seconds < opts.duration_seconds;
        });
        if (want_distinct) {
            auto distinct = candidates;
            std::erase_if(distinct,
                          [&](const StemEntry* e) { return used_songs.count(e->song) > 0; });
            if (!distinct.empty()) {
                candidates = distinct;
            } else if (warnings) {
                warnings->push_back("class '" + cls + "': no unused song left, reusing one");
            }
        }
        std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
        const StemEntry* entry = candidates[pick(rng)];
        used_songs.insert(entry->song);

        const double max_offset = entry->duration_seconds - opts.duration_seconds;
        std::uniform_real_distribution<double> offset_dist(0.0, std::max(max_offset, 0.0));
        double offset = offset_dist(rng);

        if (opts.check_silence && max_offset > 0.0) {
            const AudioClip stem = load_audio(entry->path, opts.sample_rate).downmix_mono();
            const Eigen::Index len =
                static_cast<Eigen::Index>(std::llround(opts.duration_seconds * opts.sample_rate));
            for (int attempt = 0; attempt < 10; ++attempt) {
                const Eigen::Index start =
                    static_cast<Eigen::Index>(std::llround(offset * opts.sample_rate));
                if (start + len > stem.num_samples()) break;
                if (fraction_silent(stem.channels[0].segment(start, len)) <= 0.99) break;
                offset = offset_dist(rng);
                if (attempt == 9 && warnings)
                    warnings->push_back("class '" + cls + "': excerpt still >99% silent after 10 draws");
            }
        }

        SourceSelection sel;
        sel.class_name = cls;
        sel.path = entry->path;
        sel.song = entry->song;
        sel.offset_seconds = offset;
        if (opts.gain_jitter_db > 0.0) {
            std::uniform_real_distribution<double> jitter(-opts.gain_jitter_db,
                                                          opts.gain_jitter_db);
            sel.gain = std::pow(10.0, jitter(rng) / 20.0);
        }
        spec.sources.push_back(std::move(sel));
    }
    return spec;
}

RenderedMixture render_mixture(const MixtureSpec& spec) {
    require(!spec.sources.empty(), "render: spec has no sources");
    const Eigen::Index len =
        static_cast<Eigen::Index>(std::llround(spec.duration_seconds * spec.sample_rate));
    require(len > 0, "render: zero-length excerpt");

    RenderedMixture out;
    VectorXd mix = VectorXd::Zero(len);
    for (const auto& src : spec.sources) {
        const AudioClip full = load_audio(src.path, spec.sample_rate).downmix_mono();
        const Eigen::Index start =
            static_cast<Eigen::Index>(std::llround(src.offset_seconds * spec.sample_rate));
        require(start >= 0 && start + len <= full.num_samples(),
                "render: stem too short for excerpt: " + src.path);
        VectorXd excerpt = full.channels[0].segment(start, len) * src.gain;
        mix += excerpt;
        out.stems.push_back(AudioClip::mono(std::move(excerpt), spec.sample_rate));
    }
    out.mixture = AudioClip::mono(std::move(mix), spec.sample_rate);
    return out;
}

namespace {

// Zero a half-spectrum outside [lo_hz, hi_hz] with raised-cosine edges.
void bandpass_fft(VectorXd& x, double sample_rate, double lo_hz, double hi_hz) {
    const Eigen::Index n = x.size();
    Eigen::FFT<double> fft;
    std::vector<double> time(x.data(), x.data() + n);
    std::vector<std::complex<double>> spec;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    if (n % 2 != 0) time.push_back(0.0);
    fft.fwd(spec, time);
    const double bin_hz = sample_rate / static_cast<double>(time.size());
    const double edge = std::min(200.0, lo_hz * 0.5);
    for (size_t k = 0; k < spec.size(); ++k) {
        const double f = bin_hz * static_cast<double>(k);
        double g = 0.0;
        if (f >= lo_hz && f <= hi_hz) {
            g = 1.0;
        } else if (f > lo_hz - edge && f < lo_hz) {
            g = 0.5 + 0.5 * std::cos(M_PI * (lo_hz - f) / edge);
        } else if (f > hi_hz && f < hi_hz + edge) {
            g = 0.5 + 0.5 * std::cos(M_PI * (f - hi_hz) / edge);
        }
        spec[k] *= g;
    }
    std::vector<double> back;
    fft.inv(back, spec);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = back[static_cast<size_t>(i)];
}

void normalize_stem(VectorXd& x) {
    const double rms = std::sqrt(x.squaredNorm() / std::max<Eigen::Index>(x.size(), 1));
    double scale = 0.1 / std::max(rms, 1e-9);
    const double peak = x.cwiseAbs().maxCoeff();
    if (scale * peak > 0.95) scale = 0.95 / std::max(peak, 1e-9);
    x *= scale;
}

void apply_fade(VectorXd& x, double sample_rate, double fade_seconds) {
    const Eigen::Index f =
        std::min<Eigen::Index>(static_cast<Eigen::Index>(fade_seconds * sample_rate), x.size() / 2);
    for (Eigen::Index i = 0; i < f; ++i) {
        const double g = static_cast<double>(i) / static_cast<double>(f);
        x(i) *= g;
        x(x.size() - 1 - i) *= g;
    }
}

// Note/phrase gating: on-segments with raised-cosine ramps separated by
// gaps, like real stems that play and rest. A fraction of the gaps are long
// rests so excerpts sometimes catch a class sitting out.
VectorXd phrase_envelope(std::mt19937_64& rng, Eigen::Index n, double sample_rate, double on_lo,
                         double on_hi, double gap_lo, double gap_hi, double ramp_seconds,
                         double rest_prob = 0.25, double rest_lo = 0.8, double rest_hi = 1.6) {
    VectorXd env = VectorXd::Zero(n);
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    const Eigen::Index ramp =
        std::max<Eigen::Index>(1, static_cast<Eigen::Index>(ramp_seconds * sample_rate));
    double t = 0.0;
    while (t * sample_rate < static_cast<double>(n)) {
        const double on = uni(on_lo, on_hi);
        const bool rest = std::bernoulli_distribution(rest_prob)(rng);
        const double gap = rest ? uni(rest_lo, rest_hi) : uni(gap_lo, gap_hi);
        const Eigen::Index a = static_cast<Eigen::Index>(t * sample_rate);
        const Eigen::Index b =
            std::min<Eigen::Index>(n, static_cast<Eigen::Index>((t + on) * sample_rate));
        for (Eigen::Index i = a; i < b; ++i) {
            double g = 1.0;
            if (i - a < ramp) g = 0.5 - 0.5 * std::cos(M_PI * (i - a) / ramp);
            if (b - 1 - i < ramp) g = std::min(g, 0.5 - 0.5 * std::cos(M_PI * (b - 1 - i) / ramp));
            env(i) = g;
        }
        t += on + gap;
    }
    return env;
}

}  // namespace

AudioClip synth_stem(const std::string& class_name, double duration_seconds, double sample_rate,
                     uint64_t seed) {
    require(duration_seconds > 0.0 && sample_rate > 0.0,
            "synth: duration and sample rate must be > 0");
    const Eigen::Index n =
        static_cast<Eigen::Index>(std::llround(duration_seconds * sample_rate));
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    const double dt = 1.0 / sample_rate;
    VectorXd x = VectorXd::Zero(n);

    if (class_name == "vocals") {
        const double f0 = uni(640.0, 1150.0);
        const double vib_rate = uni(5.0, 6.5);
        const double vib_depth = uni(0.015, 0.03);
        const double am_rate = uni(0.3, 0.8);
        const double am_depth = uni(0.1, 0.3);
        const double phi_v = uni(0.0, 2.0 * M_PI);
        const double phi_a = uni(0.0, 2.0 * M_PI);
        double phase = uni(0.0, 2.0 * M_PI);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t = i * dt;
            const double inst = f0 * (1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * t + phi_v));
            phase += 2.0 * M_PI * inst * dt;
            const double amp = 1.0 - am_depth * (0.5 + 0.5 * std::sin(2.0 * M_PI * am_rate * t + phi_a));
            x(i) = amp * std::sin(phase);
        }
        x = x.cwiseProduct(phrase_envelope(rng, n, sample_rate, 0.3, 0.8, 0.15, 0.5, 0.025,
                                           0.35, 0.8, 2.0));
    } else if (class_name == "bass") {
        const double f0 = uni(60.0, 120.0);
        const double trem_rate = uni(2.0, 4.0);
        const double phi_t = uni(0.0, 2.0 * M_PI);
        const double phi_2 = uni(0.0, 2.0 * M_PI);
        double phase = uni(0.0, 2.0 * M_PI);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t = i * dt;
            phase += 2.0 * M_PI * f0 * dt;
            const double amp = 1.0 - 0.2 * (0.5 + 0.5 * std::sin(2.0 * M_PI * trem_rate * t + phi_t));
            x(i) = amp * (std::sin(phase) + 0.2 * std::sin(2.0 * phase + phi_2));
        }
        x = x.cwiseProduct(phrase_envelope(rng, n, sample_rate, 0.3, 0.7, 0.12, 0.4, 0.04,
                                           0.3, 0.8, 1.8));
    } else if (class_name == "drums") {
        // Alternating kick-like and snare-like hits in sub-bands of the
        // reserved burst band, with per-hit amplitude and decay variation.
        const double hi = std::min(5600.0, 0.85 * sample_rate / 2.0);
        const double lo = std::min(2800.0, 0.5 * hi);
        const double split = lo + 0.45 * (hi - lo);
        const double tempo = uni(2.0, 4.0);
        const double t0 = uni(0.0, 1.0 / tempo);
        std::normal_distribution<double> gauss(0.0, 1.0);

        const int num_bursts = static_cast<int>(duration_seconds * tempo) + 2;
        std::vector<double> burst_amp, burst_tau;
        std::vector<int> burst_voice;  // 0 = low sub-band, 1 = high, 2 = both
        for (int b = 0; b < num_bursts; ++b) {
            burst_amp.push_back(uni(0.4, 1.0));
            burst_tau.push_back(uni(0.025, 0.07));
            const double r = uni(0.0, 1.0);
            burst_voice.push_back(r < 0.4 ? 0 : (r < 0.8 ? 1 : 2));
        }

        VectorXd low = VectorXd::Zero(n), high = VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t = i * dt;
            if (t < t0) continue;
            const int idx = static_cast<int>((t - t0) * tempo);
            if (idx >= num_bursts) continue;
            const double since = (t - t0) - idx / tempo;
            const double env = burst_amp[static_cast<size_t>(idx)] *
                               std::exp(-since / burst_tau[static_cast<size_t>(idx)]);
            const double sample = gauss(rng) * env;
            const int voice = burst_voice[static_cast<size_t>(idx)];
            if (voice == 0 || voice == 2) low(i) += sample;
            if (voice == 1 || voice == 2) high(i) += 0.9 * sample;
        }
        bandpass_fft(low, sample_rate, lo, split);
        bandpass_fft(high, sample_rate, split, hi);
        x = low + high;
    } else if (class_name == "other") {
        const double root = uni(1400.0, 1600.0);
        const double am_rate = uni(0.2, 0.5);
        const double phi_a = uni(0.0, 2.0 * M_PI);
        const double ratios[3] = {1.0, 1.25, 1.5};
        const double amps[3] = {1.0, 0.8, 0.6};
        double detune[3], phase[3];
        for (int p = 0; p < 3; ++p) {
            detune[p] = 1.0 + uni(-0.003, 0.003);
            phase[p] = uni(0.0, 2.0 * M_PI);
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t = i * dt;
            double s = 0.0;
            for (int p = 0; p < 3; ++p)
                s += amps[p] * std::sin(2.0 * M_PI * root * ratios[p] * detune[p] * t + phase[p]);
            const double am = 1.0 - 0.15 * (0.5 + 0.5 * std::sin(2.0 * M_PI * am_rate * t + phi_a));
            x(i) = s * am;
        }
        x = x.cwiseProduct(phrase_envelope(rng, n, sample_rate, 0.4, 1.0, 0.15, 0.5, 0.06,
                                           0.35, 0.8, 2.0));
    } else {
        throw std::invalid_argument("synth: unknown class '" + class_name + "'");
    }

    normalize_stem(x);
    return AudioClip::mono(std::move(x), sample_rate);
}

StemBank make_synthetic_bank(const std::string& dir, double sample_rate,
                             double stem_duration_seconds, int songs_train, int songs_val,
                             int songs_test, uint64_t seed) {
    StemBank bank;
    for (const auto& c : {"vocals", "drums", "bass", "other"}) bank.classes.push_back(c);

    fs::create_directories(fs::path(dir) / "stems");
    const std::vector<std::pair<std::string, int>> splits = {
        {"train", songs_train}, {"val", songs_val}, {"test", songs_test}};
    uint64_t song_counter = 0;
    for (size_t s = 0; s < splits.size(); ++s) {
        const auto& [split, count] = splits[s];
        for (int song = 0; song < count; ++song, ++song_counter) {
            char song_name[32];
            std::snprintf(song_name, sizeof(song_name), "%s_song%03d", split.c_str(), song);
            for (size_t c = 0; c < bank.classes.size(); ++c) {
                const std::string& cls = bank.classes[c];
                const uint64_t stem_seed =
                    derive_seed(seed, (song_counter << 8) | static_cast<uint64_t>(c));
                const AudioClip stem =
                    synth_stem(cls, stem_duration_seconds, sample_rate, stem_seed);
                const fs::path path =
                    fs::path(dir) / "stems" / (std::string(song_name) + "_" + cls + ".wav");
                write_wav(path.string(), stem, WavFormat::float32);

                StemEntry entry;
                entry.class_name = cls;
                entry.path = fs::absolute(path).string();
                entry.split = split;
                entry.song = song_name;
                entry.duration_seconds = stem_duration_seconds;
                bank.entries.push_back(std::move(entry));
            }
        }
    }
    save_stem_bank((fs::path(dir) / "bank.json").string(), bank);
    return bank;
}

namespace {

ordered_json spec_to_json(const MixtureSpec& spec) {
    ordered_json j;
    j["seed"] = spec.seed;
    j["duration"] = spec.duration_seconds;
    j["sample_rate"] = spec.sample_rate;
    if (!spec.render_dir.empty()) j["render_dir"] = spec.render_dir;
    j["sources"] = ordered_json::array();
    for (const auto& s : spec.sources) {
        ordered_json js;
        js["class"] = s.class_name;
        js["path"] = s.path;
        js["song"] = s.song;
        js["offset"] = s.offset_seconds;
        js["gain"] = s.gain;
        j["sources"].push_back(js);
    }
    return j;
}

MixtureSpec spec_from_json(const ordered_json& j) {
    MixtureSpec spec;
    spec.seed = j.at("seed").get<uint64_t>();
    spec.duration_seconds = j.at("duration").get<double>();
    spec.sample_rate = j.at("sample_rate").get<double>();
    if (j.contains("render_dir")) spec.render_dir = j.at("render_dir").get<std::string>();
    for (const auto& js : j.at("sources")) {
        SourceSelection s;
        s.class_name = js.at("class").get<std::string>();
        s.path = js.at("path").get<std::string>();
        s.song = js.at("song").get<std::string>();
        s.offset_seconds = js.at("offset").get<double>();
        s.gain = js.at("gain").get<double>();
        spec.sources.push_back(std::move(s));
    }
    return spec;
}

}  // namespace

void write_manifest(const std::string& path, const std::vector<MixtureSpec>& specs) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), "manifest: cannot write " + path);
    for (const auto& spec : specs) out << spec_to_json(spec).dump() << "\n";
}

std::vector<MixtureSpec> read_manifest(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "manifest: cannot open " + path);
    std::vector<MixtureSpec> specs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        specs.push_back(spec_from_json(ordered_json::parse(line)));
    }
    require(!specs.empty(), "manifest: empty manifest " + path);
    return specs;
}

std::string render_dataset(const StemBank& bank, const std::string& split, int count,
                           const SampleOptions& opts, uint64_t seed, const std::string& out_dir,
                           std::vector<std::string>* warnings) {
    require(count >= 1, "render_dataset: count must be >= 1");
    fs::create_directories(out_dir);

    std::vector<MixtureSpec> specs;
    for (int i = 0; i < count; ++i) {
        MixtureSpec spec =
            sample_mixture_spec(bank, split, opts, derive_seed(seed, static_cast<uint64_t>(i)),
                                warnings);
        char dirname[16];
        std::snprintf(dirname, sizeof(dirname), "mix_%05d", i);
        spec.render_dir = dirname;

        const RenderedMixture rendered = render_mixture(spec);
        const fs::path mixdir = fs::path(out_dir) / dirname;
        fs::create_directories(mixdir);
        write_wav((mixdir / "mixture.wav").string(), rendered.mixture, WavFormat::float32);
        for (size_t c = 0; c < spec.sources.size(); ++c)
            write_wav((mixdir / (spec.sources[c].class_name + ".wav")).string(),
                      rendered.stems[c], WavFormat::float32);
        specs.push_back(std::move(spec));
    }
    const std::string manifest = (fs::path(out_dir) / "manifest.jsonl").string();
    write_manifest(manifest, specs);
    return manifest;
}

}  // namespace gmmsep
