#include "gmmsep/losses.hpp"

#include <cmath>

namespace gmmsep {

std::vector<MatrixXd> ideal_binary_masks(const std::vector<MatrixXd>& source_mags) {
    require(!source_mags.empty(), "ibm: empty source list");
    const Eigen::Index rows = source_mags[0].rows();
    const Eigen::Index cols = source_mags[0].cols();
    for (const auto& s : source_mags) {
        require(s.rows() == rows && s.cols() == cols, "ibm: source shape mismatch");
        require(s.allFinite(), "ibm: non-finite magnitude");
    }

    const size_t C = source_mags.size();
    std::vector<MatrixXd> masks(C, MatrixXd::Zero(rows, cols));
    for (Eigen::Index f = 0; f < rows; ++f) {
        for (Eigen::Index t = 0; t < cols; ++t) {
            size_t best = 0;
            double best_mag = source_mags[0](f, t);
            for (size_t c = 1; c < C; ++c) {
                if (source_mags[c](f, t) > best_mag) {
                    best_mag = source_mags[c](f, t);
                    best = c;
                }
            }
            masks[best](f, t) = 1.0;
        }
    }
    return masks;
}

AffinityTargets mel_affinity_targets(const std::vector<MatrixXd>& ibm, const MelFilterbank& fb,
                                     const MatrixXd& mix_mel_mag, double threshold_db) {
    require(!ibm.empty(), "affinity: empty IBM list");
    const Eigen::Index T = ibm[0].cols();
    const Eigen::Index M = fb.mel_bins;
    require(mix_mel_mag.rows() == M && mix_mel_mag.cols() == T,
            "affinity: mel magnitude shape mismatch");
    const Eigen::Index C = static_cast<Eigen::Index>(ibm.size());

    AffinityTargets out;
    out.values.resize(T * M, C);
    for (Eigen::Index c = 0; c < C; ++c) {
        const MatrixXd mel = mel_project(ibm[static_cast<size_t>(c)], fb).cwiseMax(0.0).cwiseMin(1.0);
        for (Eigen::Index t = 0; t < T; ++t)
            for (Eigen::Index m = 0; m < M; ++m) out.values(bin_index(t, m, M), c) = mel(m, t);
    }

    // Gate: linear mel magnitude within threshold_db of the loudest bin.
    // With an all-zero clip nothing passes.
    const double peak = mix_mel_mag.maxCoeff();
    const double cut = peak * std::pow(10.0, threshold_db / 20.0);
    out.weights = VectorXd::Zero(T * M);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index m = 0; m < M; ++m)
            if (mix_mel_mag(m, t) > cut) out.weights(bin_index(t, m, M)) = 1.0;
    return out;
}

double dc_loss(const MatrixXd& V, const AffinityTargets& targets) {
    require(V.rows() == targets.values.rows() && V.rows() == targets.weights.size(),
            "dc_loss: bin count mismatch");
    const double wsum = targets.weights.sum();
    if (wsum <= 0.0) return 0.0;

    const MatrixXd Vw = targets.weights.asDiagonal() * V;
    const MatrixXd A = V.transpose() * Vw;                    // K x K
    const MatrixXd B = Vw.transpose() * targets.values;       // K x C
    const MatrixXd Yw = targets.weights.asDiagonal() * targets.values;
    const MatrixXd D = targets.values.transpose() * Yw;       // C x C
    const double raw = A.squaredNorm() - 2.0 * B.squaredNorm() + D.squaredNorm();
    return std::max(raw, 0.0) / (wsum * wsum);
}

MatrixXd dc_loss_grad(const MatrixXd& V, const AffinityTargets& targets) {
    const double wsum = targets.weights.sum();
    if (wsum <= 0.0) return MatrixXd::Zero(V.rows(), V.cols());

    const MatrixXd Vw = targets.weights.asDiagonal() * V;
    const MatrixXd Yw = targets.weights.asDiagonal() * targets.values;
    const MatrixXd A = V.transpose() * Vw;
    const MatrixXd B = V.transpose() * Yw;
    return (4.0 * (Vw * A) - 4.0 * (Yw * B.transpose())) / (wsum * wsum);
}

double l1_mask_loss(const std::vector<MatrixXd>& masks, const MatrixXd& mix_mag,
                    const std::vector<MatrixXd>& source_mags) {
    require(!masks.empty() && masks.size() == source_mags.size(),
            "l1: mask/source count mismatch");
    double total = 0.0;
    for (size_t c = 0; c < masks.size(); ++c) {
        require(masks[c].rows() == mix_mag.rows() && masks[c].cols() == mix_mag.cols(),
                "l1: mask shape mismatch");
        require(source_mags[c].rows() == mix_mag.rows() && source_mags[c].cols() == mix_mag.cols(),
                "l1: source shape mismatch");
        total += (masks[c].cwiseProduct(mix_mag) - source_mags[c]).cwiseAbs().sum();
    }
    const double count = static_cast<double>(masks.size()) *
                         static_cast<double>(mix_mag.rows()) * static_cast<double>(mix_mag.cols());
    return total / count;
}

std::vector<MatrixXd> l1_mask_loss_grad(const std::vector<MatrixXd>& masks,
                                        const MatrixXd& mix_mag,
                                        const std::vector<MatrixXd>& source_mags) {
    const double count = static_cast<double>(masks.size()) *
                         static_cast<double>(mix_mag.rows()) * static_cast<double>(mix_mag.cols());
    std::vector<MatrixXd> grads;
    grads.reserve(masks.size());
    for (size_t c = 0; c < masks.size(); ++c) {
        const MatrixXd resid = masks[c].cwiseProduct(mix_mag) - source_mags[c];
        grads.push_back(resid.unaryExpr([](double r) {
                             return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
                         }).cwiseProduct(mix_mag) /
                        count);
    }
    return grads;
}

double combined_loss(double dc, double l1, double dc_weight, double l1_weight) {
    require(!std::isnan(dc) && !std::isnan(l1), "combined_loss: NaN loss, aborting");
    require(dc >= 0.0 && l1 >= 0.0, "combined_loss: losses must be >= 0");
    return dc_weight * dc + l1_weight * l1;
}

}  // namespace gmmsep
