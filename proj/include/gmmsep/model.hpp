#ifndef GMMSEP_MODEL_HPP
#define GMMSEP_MODEL_HPP

#include <random>
#include <vector>

#include "gmmsep/common.hpp"

namespace gmmsep {

struct EmbeddingNetConfig {
    int num_recurrent_layers = 4;
    int hidden_units_per_direction = 300;
    int embedding_dim = 15;  // K
    int mel_bins = 300;      // M
    bool unit_normalize = false;
    void validate() const;
};

struct BaselineConfig {
    int num_recurrent_layers = 4;
    int hidden_units_per_direction = 300;
    int num_classes = 4;  // C
    int mel_bins = 300;
    void validate() const;
};

// One K-vector per time-mel bin, flattened frames-major: row t*M + m.
struct Embeddings {
    MatrixXd values;  // N x K, N = frames * mel_bins
    Eigen::Index frames = 0;
    Eigen::Index mel_bins = 0;
    Eigen::Index dim() const { return values.cols(); }
    Eigen::Index num_bins() const { return values.rows(); }
};

// Single-direction LSTM, gate rows ordered [input; forget; cell; output].
struct LstmDirection {
    MatrixXd W;  // 4H x I
    MatrixXd U;  // 4H x H
    MatrixXd b;  // 4H x 1
    MatrixXd dW, dU, db;

    void init(Eigen::Index input_size, Eigen::Index hidden, std::mt19937_64& rng);
    Eigen::Index hidden() const { return U.cols(); }

    struct Cache {
        MatrixXd x;                          // I x T, in this direction's time order
        MatrixXd gi, gf, gg, go, c, tc, h;   // H x T
    };

    MatrixXd forward(const MatrixXd& x, Cache& cache) const;   // returns h, H x T
    MatrixXd backward(const Cache& cache, const MatrixXd& dh); // returns dx, accumulates grads
};

// Bidirectional layer: forward pass over t and a reversed pass, concatenated
// to 2H rows per frame.
struct BlstmLayer {
    LstmDirection fwd, bwd;

    struct Cache {
        LstmDirection::Cache fwd, bwd;
    };

    void init(Eigen::Index input_size, Eigen::Index hidden, std::mt19937_64& rng);
    MatrixXd forward(const MatrixXd& x, Cache& cache) const;   // 2H x T
    MatrixXd backward(const Cache& cache, const MatrixXd& dout);
};

struct RecurrentStack {
    std::vector<BlstmLayer> layers;

    struct Cache {
        std::vector<BlstmLayer::Cache> layers;
    };

    void init(Eigen::Index input_size, int num_layers, Eigen::Index hidden, std::mt19937_64& rng);
    MatrixXd forward(const MatrixXd& x, Cache& cache) const;
    void backward(const Cache& cache, const MatrixXd& dout);
    void collect_params(const std::string& prefix, std::vector<NamedParam>& out);
    Eigen::Index output_size() const { return 2 * layers.back().fwd.hidden(); }
};

// Embedding network: BLSTM stack, then a dense layer giving M*K outputs per
// frame through tanh; row m*K + k of the dense output is dimension k of mel
// bin m. Optional unit normalization of each K-vector.
class EmbeddingNet {
public:
    EmbeddingNet() = default;
    EmbeddingNet(const EmbeddingNetConfig& cfg, uint64_t seed);

    struct Cache {
        RecurrentStack::Cache stack;
        MatrixXd stack_out;  // 2H x T
        MatrixXd activ;      // (M*K) x T, post-tanh
        MatrixXd raw;        // N x K pre-normalization (only when unit_normalize)
    };

    Embeddings forward(const MatrixXd& logmel, Cache& cache) const;
    Embeddings forward(const MatrixXd& logmel) const;
    // Accumulates parameter gradients from dV (N x K).
    void backward(const Cache& cache, const MatrixXd& dV);

    std::vector<NamedParam> params();
    void zero_grads();
    const EmbeddingNetConfig& config() const { return cfg_; }

private:
    EmbeddingNetConfig cfg_;
    RecurrentStack stack_;
    MatrixXd w_out_, b_out_;
    MatrixXd dw_out_, db_out_;
};

// Mask-inference baseline: same stack, dense M*C outputs per frame through a
// sigmoid. Not simplex-constrained.
class BaselineNet {
public:
    BaselineNet() = default;
    BaselineNet(const BaselineConfig& cfg, uint64_t seed);

    struct Cache {
        RecurrentStack::Cache stack;
        MatrixXd stack_out;
        MatrixXd activ;  // (M*C) x T post-sigmoid
    };

    // Returns mel-domain masks, N x C with row t*M + m.
    MatrixXd forward(const MatrixXd& logmel, Cache& cache) const;
    MatrixXd forward(const MatrixXd& logmel) const;
    void backward(const Cache& cache, const MatrixXd& dmask);

    std::vector<NamedParam> params();
    void zero_grads();
    const BaselineConfig& config() const { return cfg_; }

private:
    BaselineConfig cfg_;
    RecurrentStack stack_;
    MatrixXd w_out_, b_out_;
    MatrixXd dw_out_, db_out_;
};

Embeddings embed(const MatrixXd& logmel, const EmbeddingNet& net);
MatrixXd baseline_forward(const MatrixXd& logmel, const BaselineNet& net);

}  // namespace gmmsep

#endif
