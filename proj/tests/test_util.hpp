#ifndef GMMSEP_TEST_UTIL_HPP
#define GMMSEP_TEST_UTIL_HPP

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "gmmsep/common.hpp"

namespace gmmsep::testutil {

inline MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                              double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = dist(rng);
    return out;
}

inline VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
    return random_matrix(n, 1, rng, lo, hi).col(0);
}

// Central finite difference of f over every entry of x, written into grad.
inline MatrixXd finite_difference(const std::function<double()>& f, MatrixXd& x,
                                  double eps = 1e-6) {
    MatrixXd grad(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double saved = x(i, j);
            x(i, j) = saved + eps;
            const double fp = f();
            x(i, j) = saved - eps;
            const double fm = f();
            x(i, j) = saved;
            grad(i, j) = (fp - fm) / (2.0 * eps);
        }
    }
    return grad;
}

inline double rel_error(double analytic, double numeric) {
    // Differences at the finite-difference noise floor count as exact.
    if (std::abs(analytic - numeric) < 1e-7) return 0.0;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

// Max relative error between an analytic gradient and finite differences.
inline double max_rel_error(const MatrixXd& analytic, const MatrixXd& numeric) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.rows(); ++i)
        for (Eigen::Index j = 0; j < analytic.cols(); ++j)
            worst = std::max(worst, rel_error(analytic(i, j), numeric(i, j)));
    return worst;
}

// Unique temp directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("gmmsep_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

}  // namespace gmmsep::testutil

#endif
