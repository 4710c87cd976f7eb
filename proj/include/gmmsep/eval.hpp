#ifndef GMMSEP_EVAL_HPP
#define GMMSEP_EVAL_HPP

#include <string>
#include <vector>

#include "gmmsep/trainer.hpp"

namespace gmmsep {

// 10*log10(||s||^2 / ||s - s_hat||^2), capped at 60 dB (vanishing residual).
// Stereo clips are scored over all channels jointly.
double sdr(const AudioClip& reference, const AudioClip& estimate);

struct TestsetEvaluation {
    std::string approach;
    std::vector<std::string> classes;
    std::vector<std::string> tracks;
    MatrixXd per_track;  // tracks x classes, NaN where a reference was skipped
    std::vector<std::string> skipped;

    VectorXd medians() const;
    VectorXd means() const;
};

// Separates every manifest mixture and scores per-class SDR against the
// reference stems. Missing references are skipped with a warning row.
TestsetEvaluation evaluate_testset(const std::string& manifest_path, const ModelState& model,
                                   const std::string& approach_name = "");

// The floor every model must beat: the unseparated mixture used as the
// estimate for every class.
TestsetEvaluation evaluate_mixture_baseline(const std::string& manifest_path,
                                            const std::vector<std::string>& classes,
                                            double sample_rate);

// CSV plus an aligned text table of per-class median SDR, one row per
// approach; a per-track CSV is written next to it as <csv>.tracks.csv.
void write_report(const std::string& csv_path, const std::string& txt_path,
                  const std::vector<TestsetEvaluation>& evaluations);

}  // namespace gmmsep

#endif
