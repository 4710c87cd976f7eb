#ifndef GMMSEP_DATAGEN_HPP
#define GMMSEP_DATAGEN_HPP

#include <optional>
#include <string>
#include <vector>

#include "gmmsep/audio.hpp"

namespace gmmsep {

struct StemEntry {
    std::string class_name;
    std::string path;   // resolved on load
    std::string split;  // train / val / test
    std::string song;
    double duration_seconds = 0.0;
};

struct StemBank {
    std::vector<std::string> classes;
    std::vector<StemEntry> entries;

    std::vector<const StemEntry*> entries_for(const std::string& class_name,
                                              const std::string& split) const;
    // Every class must have at least one entry long enough for the excerpt.
    void validate_for_split(const std::string& split, double excerpt_seconds) const;
};

StemBank load_stem_bank(const std::string& path);
void save_stem_bank(const std::string& path, const StemBank& bank);

struct SourceSelection {
    std::string class_name;
    std::string path;
    std::string song;
    double offset_seconds = 0.0;
    double gain = 1.0;
};

struct MixtureSpec {
    std::vector<SourceSelection> sources;  // one per class, class order
    double duration_seconds = 0.0;
    double sample_rate = 0.0;
    uint64_t seed = 0;
    std::string render_dir;  // relative to the manifest, set when rendered
};

struct SampleOptions {
    double duration_seconds = 3.2;
    double sample_rate = 48000.0;
    bool check_silence = true;   // redraw offsets landing on >99% silent excerpts
    double gain_jitter_db = 0.0; // per-stem uniform jitter, 0 disables
};

// One stem per class, uniform over the split's entries, with stems from
// distinct songs whenever the split has at least C songs.
MixtureSpec sample_mixture_spec(const StemBank& bank, const std::string& split,
                                const SampleOptions& opts, uint64_t seed,
                                std::vector<std::string>* warnings = nullptr);

struct RenderedMixture {
    AudioClip mixture;
    std::vector<AudioClip> stems;  // class order of the spec
};

// Slices each referenced stem and sums sample-wise; the mixture is exactly
// the sum of the returned stems.
RenderedMixture render_mixture(const MixtureSpec& spec);

// Class-characteristic synthetic stems in reserved bands:
//   vocals - vibrato tone, 600-1200 Hz
//   bass   - low tone, 60-120 Hz
//   drums  - decaying band-passed noise bursts (~2.8-5.6 kHz, clamped below
//            Nyquist)
//   other  - mid-band chord pad, ~1.4-2.4 kHz
AudioClip synth_stem(const std::string& class_name, double duration_seconds, double sample_rate,
                     uint64_t seed);

// Writes synthetic stems under <dir>/stems and a bank.json describing them.
StemBank make_synthetic_bank(const std::string& dir, double sample_rate,
                             double stem_duration_seconds, int songs_train, int songs_val,
                             int songs_test, uint64_t seed);

// JSON-lines manifest, one MixtureSpec per line with resolved paths.
void write_manifest(const std::string& path, const std::vector<MixtureSpec>& specs);
std::vector<MixtureSpec> read_manifest(const std::string& path);

// Samples `count` specs, renders each to <out_dir>/mix_#####/, writes
// <out_dir>/manifest.jsonl. Returns the manifest path.
std::string render_dataset(const StemBank& bank, const std::string& split, int count,
                           const SampleOptions& opts, uint64_t seed, const std::string& out_dir,
                           std::vector<std::string>* warnings = nullptr);

}  // namespace gmmsep

#endif
