#include "gmmsep/eval.hpp"

#include "gmmsep/separator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace gmmsep {

namespace {
constexpr double kSdrCap = 60.0;

double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace

double sdr(const AudioClip& reference, const AudioClip& estimate) {
    reference.validate();
    estimate.validate();
    require(reference.num_channels() == estimate.num_channels(),
            "sdr: channel count mismatch");
    require(reference.num_samples() == estimate.num_samples(), "sdr: length mismatch");
    require(std::abs(reference.sample_rate - estimate.sample_rate) < 1e-9,
            "sdr: sample rate mismatch");

    double ref_energy = 0.0, resid_energy = 0.0;
    for (Eigen::Index ch = 0; ch < reference.num_channels(); ++ch) {
        ref_energy += reference.channels[static_cast<size_t>(ch)].squaredNorm();
        resid_energy += (reference.channels[static_cast<size_t>(ch)] -
                         estimate.channels[static_cast<size_t>(ch)])
                            .squaredNorm();
    }
    require(ref_energy > 0.0, "sdr: all-zero reference");
    if (resid_energy < 1e-12 * ref_energy) return kSdrCap;
    return std::min(10.0 * std::log10(ref_energy / resid_energy), kSdrCap);
}

VectorXd TestsetEvaluation::medians() const {
    VectorXd out(per_track.cols());
    for (Eigen::Index c = 0; c < per_track.cols(); ++c) {
        std::vector<double> vals;
        for (Eigen::Index r = 0; r < per_track.rows(); ++r)
            if (std::isfinite(per_track(r, c))) vals.push_back(per_track(r, c));
        out(c) = median_of(vals);
    }
    return out;
}

VectorXd TestsetEvaluation::means() const {
    VectorXd out(per_track.cols());
    for (Eigen::Index c = 0; c < per_track.cols(); ++c) {
        double sum = 0.0;
        int n = 0;
        for (Eigen::Index r = 0; r < per_track.rows(); ++r)
            if (std::isfinite(per_track(r, c))) {
                sum += per_track(r, c);
                ++n;
            }
        out(c) = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

namespace {

TestsetEvaluation evaluate_common(const std::string& manifest_path,
                                  const std::vector<std::string>& classes, double sample_rate,
                                  const std::string& approach,
                                  const ModelState* model_or_null) {
    const std::vector<MixtureSpec> specs = read_manifest(manifest_path);
    const fs::path base = fs::absolute(fs::path(manifest_path)).parent_path();

    TestsetEvaluation eval;
    eval.approach = approach;
    eval.classes = classes;
    eval.per_track.resize(static_cast<Eigen::Index>(specs.size()),
                          static_cast<Eigen::Index>(classes.size()));
    eval.per_track.setConstant(std::numeric_limits<double>::quiet_NaN());

    for (size_t i = 0; i < specs.size(); ++i) {
        const auto& spec = specs[i];
        const std::string track =
            spec.render_dir.empty() ? ("track_" + std::to_string(i)) : spec.render_dir;
        eval.tracks.push_back(track);
        require(!spec.render_dir.empty(),
                "evaluate: manifest entries must reference rendered mixtures");
        const fs::path dir = base / spec.render_dir;

        AudioClip mixture;
        try {
            mixture = load_audio((dir / "mixture.wav").string(), sample_rate);
        } catch (const std::exception& e) {
            eval.skipped.push_back(track + ": " + e.what());
            continue;
        }

        std::vector<AudioClip> estimates;
        if (model_or_null != nullptr) {
            estimates = separate(mixture, *model_or_null);
        } else {
            estimates.assign(classes.size(), mixture);
        }

        for (size_t c = 0; c < classes.size(); ++c) {
            const fs::path ref_path = dir / (classes[c] + ".wav");
            if (!fs::exists(ref_path)) {
                eval.skipped.push_back(track + ": missing reference " + classes[c] + ".wav");
                continue;
            }
            try {
                const AudioClip ref = load_audio(ref_path.string(), sample_rate);
                eval.per_track(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                    sdr(ref, estimates[c]);
            } catch (const std::exception& e) {
                eval.skipped.push_back(track + "/" + classes[c] + ": " + e.what());
            }
        }
    }
    return eval;
}

}  // namespace

TestsetEvaluation evaluate_testset(const std::string& manifest_path, const ModelState& model,
                                   const std::string& approach_name) {
    std::string name = approach_name;
    if (name.empty()) {
        if (model.baseline) {
            name = "BLSTM";
        } else {
            const std::string kind = covariance_to_string(model.cfg.covariance);
            name = "DC/GMM - ";
            if (kind == "diag") name += "diag. (untied)";
            else if (kind == "diag-tied") name += "diag. (tied)";
            else if (kind == "sphr") name += "sphr. (untied)";
            else name += "sphr. (tied)";
        }
    }
    return evaluate_common(manifest_path, model.cfg.class_names, model.cfg.sample_rate, name,
                           &model);
}

TestsetEvaluation evaluate_mixture_baseline(const std::string& manifest_path,
                                            const std::vector<std::string>& classes,
                                            double sample_rate) {
    return evaluate_common(manifest_path, classes, sample_rate, "Mixture", nullptr);
}

void write_report(const std::string& csv_path, const std::string& txt_path,
                  const std::vector<TestsetEvaluation>& evaluations) {
    require(!evaluations.empty(), "report: nothing to write");
    const auto& classes = evaluations.front().classes;
    for (const auto& e : evaluations)
        require(e.classes == classes, "report: class sets differ between evaluations");

    std::ofstream csv(csv_path, std::ios::trunc);
    require(csv.good(), "report: cannot write " + csv_path);
    csv << "approach";
    for (const auto& c : classes) {
        std::string title = c;
        if (!title.empty()) title[0] = static_cast<char>(std::toupper(title[0]));
        csv << ',' << title;
    }
    csv << "\n" << std::fixed << std::setprecision(2);
    for (const auto& e : evaluations) {
        csv << e.approach;
        const VectorXd med = e.medians();
        for (Eigen::Index c = 0; c < med.size(); ++c) csv << ',' << med(c);
        csv << "\n";
    }

    std::ofstream txt(txt_path, std::ios::trunc);
    require(txt.good(), "report: cannot write " + txt_path);
    txt << "Median SDR (dB) per class. Plain energy-ratio SDR, not a BSSEval\n"
           "variant; values are not comparable to published museval scores.\n\n";
    txt << std::left << std::setw(28) << "Approach";
    for (const auto& c : classes) {
        std::string title = c;
        if (!title.empty()) title[0] = static_cast<char>(std::toupper(title[0]));
        txt << std::right << std::setw(9) << title;
    }
    txt << "\n" << std::string(28 + 9 * classes.size(), '-') << "\n";
    txt << std::fixed << std::setprecision(2);
    for (const auto& e : evaluations) {
        txt << std::left << std::setw(28) << e.approach;
        const VectorXd med = e.medians();
        for (Eigen::Index c = 0; c < med.size(); ++c) txt << std::right << std::setw(9) << med(c);
        txt << "\n";
    }
    bool any_skipped = false;
    for (const auto& e : evaluations) any_skipped = any_skipped || !e.skipped.empty();
    if (any_skipped) {
        txt << "\nSkipped tracks:\n";
        for (const auto& e : evaluations)
            for (const auto& s : e.skipped) txt << "  [" << e.approach << "] " << s << "\n";
    }

    std::ofstream tracks(csv_path + ".tracks.csv", std::ios::trunc);
    require(tracks.good(), "report: cannot write " + csv_path + ".tracks.csv");
    tracks << "approach,track,class,sdr\n" << std::fixed << std::setprecision(4);
    for (const auto& e : evaluations)
        for (size_t t = 0; t < e.tracks.size(); ++t)
            for (size_t c = 0; c < e.classes.size(); ++c) {
                const double v =
                    e.per_track(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
                if (std::isfinite(v))
                    tracks << e.approach << ',' << e.tracks[t] << ',' << e.classes[c] << ',' << v
                           << "\n";
            }
}

}  // namespace gmmsep
