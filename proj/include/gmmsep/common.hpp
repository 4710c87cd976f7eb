#ifndef GMMSEP_COMMON_HPP
#define GMMSEP_COMMON_HPP

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmmsep {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Flattened bin index for T x M grids, frames-major: j = t*M + m.
inline Eigen::Index bin_index(Eigen::Index t, Eigen::Index m, Eigen::Index mel_bins) {
    return t * mel_bins + m;
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// log(sum(exp(v))) without overflow.
inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Named parameter tensor plus its gradient accumulator; the optimizer and the
// checkpoint writer address parameters through this table.
struct NamedParam {
    std::string name;
    MatrixXd* value = nullptr;
    MatrixXd* grad = nullptr;
};

inline MatrixXd glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = dist(rng);
    return out;
}

// Orthogonal square matrix via QR of a Gaussian draw, sign-fixed so the
// result is unique for a given draw.
inline MatrixXd orthogonal_init(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) a(i, j) = dist(rng);
    Eigen::HouseholderQR<MatrixXd> qr(a);
    MatrixXd q = qr.householderQ();
    MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

}  // namespace gmmsep

#endif
