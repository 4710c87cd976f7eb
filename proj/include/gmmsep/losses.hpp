#ifndef GMMSEP_LOSSES_HPP
#define GMMSEP_LOSSES_HPP

#include <vector>

#include "gmmsep/common.hpp"
#include "gmmsep/dsp.hpp"

namespace gmmsep {

// Per-bin source-membership targets, flattened frames-major like Embeddings.
// weights is the binary loudness gate.
struct AffinityTargets {
    MatrixXd values;  // (T*M) x C in [0, 1]
    VectorXd weights; // T*M, entries 0 or 1
};

// Per-bin argmax of source magnitude; exactly one 1 per bin, lowest class
// index wins ties.
std::vector<MatrixXd> ideal_binary_masks(const std::vector<MatrixXd>& source_mags);

// Mel-projected IBMs clamped to [0, 1], gated on bins whose mel magnitude is
// within threshold_db of the clip's loudest mel bin. mix_mel_mag is the
// linear mel magnitude (fb * |X|); a silent clip gates everything out.
AffinityTargets mel_affinity_targets(const std::vector<MatrixXd>& ibm, const MelFilterbank& fb,
                                     const MatrixXd& mix_mel_mag, double threshold_db = -40.0);

// Weighted affinity loss ||W^1/2 (VV^T - YY^T) W^1/2||_F^2 via the low-rank
// expansion, normalized by (sum of weights)^2.
double dc_loss(const MatrixXd& V, const AffinityTargets& targets);
MatrixXd dc_loss_grad(const MatrixXd& V, const AffinityTargets& targets);

// Sum over classes and bins of |mask .* mix - source|, normalized by the
// total residual count C*rows*cols.
double l1_mask_loss(const std::vector<MatrixXd>& masks, const MatrixXd& mix_mag,
                    const std::vector<MatrixXd>& source_mags);
std::vector<MatrixXd> l1_mask_loss_grad(const std::vector<MatrixXd>& masks,
                                        const MatrixXd& mix_mag,
                                        const std::vector<MatrixXd>& source_mags);

// Equal-weight combination by default. NaN input aborts training.
double combined_loss(double dc, double l1, double dc_weight = 0.5, double l1_weight = 0.5);

}  // namespace gmmsep

#endif
