#ifndef GMMSEP_CLASSGMM_HPP
#define GMMSEP_CLASSGMM_HPP

#include <string>
#include <vector>

#include "gmmsep/common.hpp"
#include "gmmsep/model.hpp"

namespace gmmsep {

enum class CovarianceType { diagonal, diagonal_tied, spherical, spherical_tied };

CovarianceType covariance_from_string(const std::string& s);
std::string covariance_to_string(CovarianceType kind);
bool covariance_is_tied(CovarianceType kind);
bool covariance_is_spherical(CovarianceType kind);

struct ClassLabel {
    int index = 0;
    std::string name;
};

// Canonical four-class label set: vocals, drums, bass, other.
std::vector<ClassLabel> default_class_labels();

constexpr double kVarianceFloor = 1e-4;

// Per-class Gaussians plus priors. The variance matrix is stored in its
// structural shape: C x K (diagonal), 1 x K (tied diagonal), C x 1
// (spherical), 1 x 1 (tied spherical).
struct GaussianParams {
    CovarianceType kind = CovarianceType::diagonal;
    MatrixXd means;      // C x K
    MatrixXd variances;  // structural shape, see above
    VectorXd priors;     // C, positive, sums to 1

    Eigen::Index num_classes() const { return means.rows(); }
    Eigen::Index dim() const { return means.cols(); }
    // Variances broadcast to C x K.
    MatrixXd effective_variances() const;
    void validate() const;
};

// Per-class soft masks over the time-mel grid, same flattening as Embeddings.
struct Mask {
    MatrixXd values;  // N x C
    Eigen::Index frames = 0;
    Eigen::Index mel_bins = 0;
    Eigen::Index num_classes() const { return values.cols(); }

    // Column c reshaped as an M x T matrix.
    MatrixXd class_grid(Eigen::Index c) const;
};

// Auxiliary class-conditional network: a linear map from one-hot class
// vectors to 2K+1 raw outputs per class (K mean, K raw variance, 1 prior
// logit). Tied/spherical structures average the raw variance outputs before
// the softplus, so one body serves all four covariance kinds.
class AuxClassNet {
public:
    AuxClassNet() = default;
    AuxClassNet(int num_classes, int embedding_dim, uint64_t seed);

    struct Cache {
        MatrixXd raw;      // C x (2K+1)
        MatrixXd pre_var;  // structural shape, pre-softplus
    };

    GaussianParams forward(CovarianceType kind, Cache& cache) const;
    GaussianParams forward(CovarianceType kind) const;
    // dvar_eff is against the effective C x K variances; dlog_priors against
    // log pi. Accumulates into parameter gradients.
    void backward(const Cache& cache, CovarianceType kind, const MatrixXd& dmeans,
                  const MatrixXd& dvar_eff, const VectorXd& dlog_priors);

    std::vector<NamedParam> params();
    void zero_grads();
    int num_classes() const { return num_classes_; }
    int embedding_dim() const { return embedding_dim_; }

private:
    int num_classes_ = 0;
    int embedding_dim_ = 0;
    MatrixXd weights_, bias_;  // C x (2K+1), 1 x (2K+1)
    MatrixXd dweights_, dbias_;
};

// Maps explicit one-hot rows through the auxiliary network. Rows must be
// exact one-hots covering every class once.
GaussianParams generate_params(const MatrixXd& class_onehots, const AuxClassNet& net,
                               CovarianceType kind);

// Posterior over classes per bin (softmax of log prior + log density),
// computed in log space.
Mask posterior_mask(const Embeddings& V, const GaussianParams& params);

struct PosteriorGrads {
    MatrixXd dV;           // N x K
    MatrixXd dmeans;       // C x K
    MatrixXd dvar_eff;     // C x K, against effective variances
    VectorXd dlog_priors;  // C
};

PosteriorGrads posterior_mask_backward(const Embeddings& V, const GaussianParams& params,
                                       const Mask& mask, const MatrixXd& dmask);

// Softmax over classes of (-alpha * ||v - mu_c||^2 / 2 + log pi_c). Equal to
// posterior_mask with tied spherical variance 1/alpha.
Mask soft_kmeans_mask(const Embeddings& V, const MatrixXd& means, double alpha,
                      const VectorXd& priors);

// Maximum-likelihood single Gaussian over all bins, variance floored.
// Kind selects the variance structure (tied and untied coincide at C = 1).
GaussianParams fit_single_gaussian(const Embeddings& V, CovarianceType kind);

// Log density of each bin under a single-component Gaussian, as an M x T
// grid. Callers that stitch chunks normalize against a global peak.
MatrixXd gaussian_log_density_grid(const Embeddings& V, const GaussianParams& gaussian);

// Density under the query Gaussian, normalized by the maximum over all
// mixture bins so the largest entry is exactly 1. Returned M x T.
MatrixXd likelihood_mask(const Embeddings& V_mixture, const GaussianParams& query_gaussian);

}  // namespace gmmsep

#endif
