#ifndef GMMSEP_SEPARATOR_HPP
#define GMMSEP_SEPARATOR_HPP

#include <string>
#include <vector>

#include "gmmsep/trainer.hpp"

namespace gmmsep {

// Full separation into one stem per class, channels processed independently
// with the mixture phase. Long inputs are cut into training-length chunks at
// 50% overlap and crossfaded on the waveform.
std::vector<AudioClip> separate(const AudioClip& mixture, const ModelState& model);

// Query-by-example: fit a single Gaussian to the query's embeddings (bins
// above the loudness gate), mask the mixture by its likelihood normalized to
// a global max of 1, resynthesize with the mixture phase.
AudioClip query_separate(const AudioClip& query, const AudioClip& mixture,
                         const ModelState& model,
                         CovarianceType query_covariance = CovarianceType::diagonal);

struct PcaResult {
    Eigen::RowVectorXd mean;   // 1 x K
    MatrixXd components;       // K x K, columns sorted by descending eigenvalue
    VectorXd eigenvalues;      // K, descending
};

PcaResult pca_fit(const MatrixXd& data);

// Writes a per-bin CSV (t, m, gated, label, pc1, pc2, e_0..e_{K-1}) and a
// JSON sidecar with the Gaussian parameters and PCA eigenvalues. PCA is fit
// on the bins above the loudness gate.
void export_embedding_views(const AudioClip& mixture, const ModelState& model,
                            const std::string& csv_path, const std::string& json_path);

// Standalone Gaussian parameter files for the query workflow.
void save_gaussian_params(const std::string& path, const GaussianParams& params);
GaussianParams load_gaussian_params(const std::string& path);

}  // namespace gmmsep

#endif
