#include "gmmsep/classgmm.hpp"

#include <cmath>

namespace gmmsep {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

CovarianceType covariance_from_string(const std::string& s) {
    if (s == "diag") return CovarianceType::diagonal;
    if (s == "diag-tied") return CovarianceType::diagonal_tied;
    if (s == "sphr") return CovarianceType::spherical;
    if (s == "sphr-tied") return CovarianceType::spherical_tied;
    throw std::invalid_argument("covariance: unknown kind '" + s +
                                "' (expected diag, diag-tied, sphr, sphr-tied)");
}

std::string covariance_to_string(CovarianceType kind) {
    switch (kind) {
        case CovarianceType::diagonal: return "diag";
        case CovarianceType::diagonal_tied: return "diag-tied";
        case CovarianceType::spherical: return "sphr";
        case CovarianceType::spherical_tied: return "sphr-tied";
    }
    return "diag";
}

bool covariance_is_tied(CovarianceType kind) {
    return kind == CovarianceType::diagonal_tied || kind == CovarianceType::spherical_tied;
}

bool covariance_is_spherical(CovarianceType kind) {
    return kind == CovarianceType::spherical || kind == CovarianceType::spherical_tied;
}

std::vector<ClassLabel> default_class_labels() {
    return {{0, "vocals"}, {1, "drums"}, {2, "bass"}, {3, "other"}};
}

MatrixXd GaussianParams::effective_variances() const {
    const Eigen::Index C = num_classes();
    const Eigen::Index K = dim();
    switch (kind) {
        case CovarianceType::diagonal: return variances;
        case CovarianceType::diagonal_tied: return variances.replicate(C, 1);
        case CovarianceType::spherical: return variances.replicate(1, K);
        case CovarianceType::spherical_tied:
            return MatrixXd::Constant(C, K, variances(0, 0));
    }
    return variances;
}

void GaussianParams::validate() const {
    const Eigen::Index C = num_classes();
    const Eigen::Index K = dim();
    require(C >= 1 && K >= 1, "gaussian: empty parameter set");
    switch (kind) {
        case CovarianceType::diagonal:
            require(variances.rows() == C && variances.cols() == K, "gaussian: bad variance shape");
            break;
        case CovarianceType::diagonal_tied:
            require(variances.rows() == 1 && variances.cols() == K, "gaussian: bad variance shape");
            break;
        case CovarianceType::spherical:
            require(variances.rows() == C && variances.cols() == 1, "gaussian: bad variance shape");
            break;
        case CovarianceType::spherical_tied:
            require(variances.rows() == 1 && variances.cols() == 1, "gaussian: bad variance shape");
            break;
    }
    require(means.allFinite() && variances.allFinite(), "gaussian: non-finite parameter");
    require(variances.minCoeff() >= kVarianceFloor * (1.0 - 1e-12),
            "gaussian: variance below floor");
    require(priors.size() == C, "gaussian: prior count mismatch");
    require(priors.minCoeff() > 0.0, "gaussian: priors must be positive");
    require(std::abs(priors.sum() - 1.0) <= 1e-6, "gaussian: priors must sum to 1");
}

MatrixXd Mask::class_grid(Eigen::Index c) const {
    MatrixXd grid(mel_bins, frames);
    for (Eigen::Index t = 0; t < frames; ++t)
        for (Eigen::Index m = 0; m < mel_bins; ++m) grid(m, t) = values(bin_index(t, m, mel_bins), c);
    return grid;
}

AuxClassNet::AuxClassNet(int num_classes, int embedding_dim, uint64_t seed)
    : num_classes_(num_classes), embedding_dim_(embedding_dim) {
    require(num_classes >= 1, "aux: num_classes must be >= 1");
    require(embedding_dim >= 1, "aux: embedding_dim must be >= 1");
    std::mt19937_64 rng(seed);
    const Eigen::Index width = 2 * embedding_dim + 1;
    weights_ = glorot_uniform(num_classes, width, rng);
    bias_ = MatrixXd::Zero(1, width);
    dweights_ = MatrixXd::Zero(num_classes, width);
    dbias_ = MatrixXd::Zero(1, width);
}

GaussianParams AuxClassNet::forward(CovarianceType kind, Cache& cache) const {
    const Eigen::Index C = num_classes_;
    const Eigen::Index K = embedding_dim_;
    cache.raw = weights_ + MatrixXd::Ones(C, 1) * bias_;

    GaussianParams p;
    p.kind = kind;
    p.means = cache.raw.leftCols(K);
    const MatrixXd raw_var = cache.raw.middleCols(K, K);
    switch (kind) {
        case CovarianceType::diagonal:
            cache.pre_var = raw_var;
            break;
        case CovarianceType::diagonal_tied:
            cache.pre_var = raw_var.colwise().mean();
            break;
        case CovarianceType::spherical:
            cache.pre_var = raw_var.rowwise().mean();
            break;
        case CovarianceType::spherical_tied:
            cache.pre_var = MatrixXd::Constant(1, 1, raw_var.mean());
            break;
    }
    p.variances = cache.pre_var.unaryExpr([](double v) { return softplus(v) + kVarianceFloor; });

    const VectorXd logits = cache.raw.col(2 * K);
    const double lse = log_sum_exp(logits.transpose());
    p.priors = (logits.array() - lse).exp();
    p.validate();
    return p;
}

GaussianParams AuxClassNet::forward(CovarianceType kind) const {
    Cache cache;
    return forward(kind, cache);
}

void AuxClassNet::backward(const Cache& cache, CovarianceType kind, const MatrixXd& dmeans,
                           const MatrixXd& dvar_eff, const VectorXd& dlog_priors) {
    const Eigen::Index C = num_classes_;
    const Eigen::Index K = embedding_dim_;

    // Effective C x K variance gradient -> structural shape.
    MatrixXd dvar_struct;
    switch (kind) {
        case CovarianceType::diagonal: dvar_struct = dvar_eff; break;
        case CovarianceType::diagonal_tied: dvar_struct = dvar_eff.colwise().sum(); break;
        case CovarianceType::spherical: dvar_struct = dvar_eff.rowwise().sum(); break;
        case CovarianceType::spherical_tied:
            dvar_struct = MatrixXd::Constant(1, 1, dvar_eff.sum());
            break;
    }
    const MatrixXd dpre =
        dvar_struct.array() * cache.pre_var.unaryExpr([](double v) { return sigmoid(v); }).array();

    // Structural pre-softplus gradient back to the raw C x K block.
    MatrixXd draw_var(C, K);
    switch (kind) {
        case CovarianceType::diagonal: draw_var = dpre; break;
        case CovarianceType::diagonal_tied:
            draw_var = dpre.replicate(C, 1) / static_cast<double>(C);
            break;
        case CovarianceType::spherical:
            draw_var = dpre.replicate(1, K) / static_cast<double>(K);
            break;
        case CovarianceType::spherical_tied:
            draw_var = MatrixXd::Constant(C, K, dpre(0, 0) / static_cast<double>(C * K));
            break;
    }

    // log pi = logits - lse(logits); softmax-shift backward.
    const VectorXd logits = cache.raw.col(2 * K);
    const double lse = log_sum_exp(logits.transpose());
    const VectorXd pi = (logits.array() - lse).exp();
    const VectorXd dlogits = dlog_priors - pi * dlog_priors.sum();

    MatrixXd draw(C, 2 * K + 1);
    draw.leftCols(K) = dmeans;
    draw.middleCols(K, K) = draw_var;
    draw.col(2 * K) = dlogits;

    dweights_ += draw;
    dbias_ += draw.colwise().sum();
}

std::vector<NamedParam> AuxClassNet::params() {
    return {{"aux.W", &weights_, &dweights_}, {"aux.b", &bias_, &dbias_}};
}

void AuxClassNet::zero_grads() {
    dweights_.setZero();
    dbias_.setZero();
}

GaussianParams generate_params(const MatrixXd& class_onehots, const AuxClassNet& net,
                               CovarianceType kind) {
    const Eigen::Index C = net.num_classes();
    require(class_onehots.rows() == C && class_onehots.cols() == C,
            "generate_params: one-hot matrix must be C x C");
    for (Eigen::Index r = 0; r < C; ++r) {
        int ones = 0;
        for (Eigen::Index c = 0; c < C; ++c) {
            const double v = class_onehots(r, c);
            require(v == 0.0 || v == 1.0, "generate_params: rows must be exact one-hots");
            ones += v == 1.0 ? 1 : 0;
        }
        require(ones == 1, "generate_params: rows must be exact one-hots");
    }
    require((class_onehots.colwise().sum().array() == 1.0).all(),
            "generate_params: one-hots must cover every class once");

    GaussianParams p = net.forward(kind);
    GaussianParams out = p;
    out.means = class_onehots * p.means;
    out.priors = class_onehots * p.priors;
    if (!covariance_is_tied(kind)) out.variances = class_onehots * p.variances;
    out.validate();
    return out;
}

namespace {

// Log joint log pi_c + log N(v_j | mu_c, sigma_c^2), N x C.
MatrixXd log_joint(const MatrixXd& V, const GaussianParams& params) {
    const Eigen::Index C = params.num_classes();
    const Eigen::Index K = params.dim();
    const MatrixXd var = params.effective_variances();
    const MatrixXd inv_var = var.cwiseInverse();

    MatrixXd a(V.rows(), C);
    for (Eigen::Index c = 0; c < C; ++c) {
        const double log_det = var.row(c).array().log().sum();
        const MatrixXd dev = V.rowwise() - params.means.row(c);
        const VectorXd quad = dev.array().square().matrix() * inv_var.row(c).transpose();
        a.col(c) = (-0.5 * (K * kLog2Pi + log_det) + std::log(params.priors(c))) -
                   0.5 * quad.array();
    }
    return a;
}

MatrixXd row_softmax(const MatrixXd& a) {
    MatrixXd out(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
        const double m = a.row(j).maxCoeff();
        Eigen::RowVectorXd e = (a.row(j).array() - m).exp();
        out.row(j) = e / e.sum();
    }
    return out;
}

}  // namespace

Mask posterior_mask(const Embeddings& V, const GaussianParams& params) {
    params.validate();
    require(V.values.allFinite(), "posterior_mask: non-finite embeddings");
    require(V.dim() == params.dim(), "posterior_mask: embedding dim mismatch");

    Mask mask;
    mask.frames = V.frames;
    mask.mel_bins = V.mel_bins;
    mask.values = row_softmax(log_joint(V.values, params));
    return mask;
}

PosteriorGrads posterior_mask_backward(const Embeddings& V, const GaussianParams& params,
                                       const Mask& mask, const MatrixXd& dmask) {
    const Eigen::Index C = params.num_classes();
    const MatrixXd& m = mask.values;
    require(dmask.rows() == m.rows() && dmask.cols() == m.cols(),
            "posterior backward: gradient shape mismatch");

    // Softmax backward: da = m .* (dmask - rowsum(dmask .* m)).
    const VectorXd dot = (dmask.array() * m.array()).rowwise().sum();
    const MatrixXd da = m.array() * (dmask.colwise() - dot).array();

    const MatrixXd var = params.effective_variances();
    const MatrixXd inv_var = var.cwiseInverse();

    PosteriorGrads g;
    g.dlog_priors = da.colwise().sum().transpose();
    g.dmeans.resize(C, params.dim());
    g.dvar_eff.resize(C, params.dim());
    for (Eigen::Index c = 0; c < C; ++c) {
        const MatrixXd dev = V.values.rowwise() - params.means.row(c);
        const Eigen::RowVectorXd s1 = da.col(c).transpose() * dev;                      // sum da*dev
        const Eigen::RowVectorXd s2 = da.col(c).transpose() * dev.array().square().matrix();
        g.dmeans.row(c) = s1.array() * inv_var.row(c).array();
        g.dvar_eff.row(c) =
            0.5 * inv_var.row(c).array() *
            (s2.array() * inv_var.row(c).array() - da.col(c).sum());
    }
    g.dV = da * inv_var.cwiseProduct(params.means) - V.values.cwiseProduct(da * inv_var);
    return g;
}

Mask soft_kmeans_mask(const Embeddings& V, const MatrixXd& means, double alpha,
                      const VectorXd& priors) {
    require(alpha > 0.0, "soft_kmeans_mask: alpha must be > 0");
    require(V.dim() == means.cols(), "soft_kmeans_mask: dim mismatch");
    require(priors.size() == means.rows(), "soft_kmeans_mask: prior count mismatch");
    require(priors.minCoeff() > 0.0, "soft_kmeans_mask: priors must be positive");

    const Eigen::Index C = means.rows();
    MatrixXd a(V.values.rows(), C);
    for (Eigen::Index c = 0; c < C; ++c) {
        const VectorXd sq = (V.values.rowwise() - means.row(c)).rowwise().squaredNorm();
        a.col(c) = std::log(priors(c)) - 0.5 * alpha * sq.array();
    }
    Mask mask;
    mask.frames = V.frames;
    mask.mel_bins = V.mel_bins;
    mask.values = row_softmax(a);
    return mask;
}

GaussianParams fit_single_gaussian(const Embeddings& V, CovarianceType kind) {
    const Eigen::Index n = V.values.rows();
    require(n >= 2, "fit_single_gaussian: need at least 2 bins");
    require(V.values.allFinite(), "fit_single_gaussian: non-finite embeddings");

    GaussianParams p;
    p.kind = kind;
    p.means = V.values.colwise().mean();
    const MatrixXd dev = V.values.rowwise() - p.means.row(0);
    const Eigen::RowVectorXd var_diag = dev.array().square().colwise().mean();
    if (covariance_is_spherical(kind)) {
        p.variances = MatrixXd::Constant(1, 1, std::max(var_diag.mean(), kVarianceFloor));
    } else {
        p.variances = var_diag.cwiseMax(kVarianceFloor);  // 1 x K; tied == untied at C = 1
    }
    p.priors = VectorXd::Ones(1);
    p.validate();
    return p;
}

MatrixXd gaussian_log_density_grid(const Embeddings& V, const GaussianParams& gaussian) {
    gaussian.validate();
    require(gaussian.num_classes() == 1, "log_density: expected a single component");
    require(V.dim() == gaussian.dim(), "log_density: dim mismatch");
    require(V.frames * V.mel_bins == V.values.rows(), "log_density: embeddings missing grid dims");

    const MatrixXd a = log_joint(V.values, gaussian);
    MatrixXd out(V.mel_bins, V.frames);
    for (Eigen::Index t = 0; t < V.frames; ++t)
        for (Eigen::Index m = 0; m < V.mel_bins; ++m)
            out(m, t) = a(bin_index(t, m, V.mel_bins), 0);
    return out;
}

MatrixXd likelihood_mask(const Embeddings& V_mixture, const GaussianParams& query_gaussian) {
    const MatrixXd logdens = gaussian_log_density_grid(V_mixture, query_gaussian);
    const double peak = logdens.maxCoeff();
    return (logdens.array() - peak).exp();
}

}  // namespace gmmsep
