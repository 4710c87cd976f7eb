#include "gmmsep/model.hpp"

namespace gmmsep {

void EmbeddingNetConfig::validate() const {
    require(num_recurrent_layers >= 1, "model: num_recurrent_layers must be >= 1");
    require(hidden_units_per_direction >= 1, "model: hidden units must be >= 1");
    require(embedding_dim >= 1, "model: embedding_dim must be >= 1");
    require(mel_bins >= 1, "model: mel_bins must be >= 1");
    require(embedding_dim <= 2 * hidden_units_per_direction,
            "model: embedding_dim exceeds stack output width");
}

void BaselineConfig::validate() const {
    require(num_recurrent_layers >= 1, "model: num_recurrent_layers must be >= 1");
    require(hidden_units_per_direction >= 1, "model: hidden units must be >= 1");
    require(num_classes >= 2, "model: num_classes must be >= 2");
    require(mel_bins >= 1, "model: mel_bins must be >= 1");
}

void LstmDirection::init(Eigen::Index input_size, Eigen::Index hidden, std::mt19937_64& rng) {
    W = glorot_uniform(4 * hidden, input_size, rng);
    U.resize(4 * hidden, hidden);
    for (int g = 0; g < 4; ++g) U.middleRows(g * hidden, hidden) = orthogonal_init(hidden, rng);
    b = MatrixXd::Zero(4 * hidden, 1);
    b.block(hidden, 0, hidden, 1).setOnes();  // forget-gate bias 1
    dW = MatrixXd::Zero(W.rows(), W.cols());
    dU = MatrixXd::Zero(U.rows(), U.cols());
    db = MatrixXd::Zero(b.rows(), b.cols());
}

MatrixXd LstmDirection::forward(const MatrixXd& x, Cache& cache) const {
    const Eigen::Index H = hidden();
    const Eigen::Index T = x.cols();
    cache.x = x;
    cache.gi.resize(H, T);
    cache.gf.resize(H, T);
    cache.gg.resize(H, T);
    cache.go.resize(H, T);
    cache.c.resize(H, T);
    cache.tc.resize(H, T);
    cache.h.resize(H, T);

    const MatrixXd wx = W * x;  // 4H x T
    VectorXd h_prev = VectorXd::Zero(H);
    VectorXd c_prev = VectorXd::Zero(H);
    for (Eigen::Index t = 0; t < T; ++t) {
        VectorXd z = wx.col(t) + U * h_prev + b.col(0);
        for (Eigen::Index k = 0; k < H; ++k) {
            cache.gi(k, t) = sigmoid(z(k));
            cache.gf(k, t) = sigmoid(z(H + k));
            cache.gg(k, t) = std::tanh(z(2 * H + k));
            cache.go(k, t) = sigmoid(z(3 * H + k));
        }
        cache.c.col(t) = cache.gf.col(t).cwiseProduct(c_prev) +
                         cache.gi.col(t).cwiseProduct(cache.gg.col(t));
        cache.tc.col(t) = cache.c.col(t).array().tanh();
        cache.h.col(t) = cache.go.col(t).cwiseProduct(cache.tc.col(t));
        h_prev = cache.h.col(t);
        c_prev = cache.c.col(t);
    }
    return cache.h;
}

MatrixXd LstmDirection::backward(const Cache& cache, const MatrixXd& dh_in) {
    const Eigen::Index H = hidden();
    const Eigen::Index T = cache.x.cols();
    MatrixXd dz_all = MatrixXd::Zero(4 * H, T);

    VectorXd dh_next = VectorXd::Zero(H);
    VectorXd dc_next = VectorXd::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const VectorXd dh = dh_in.col(t) + dh_next;
        const VectorXd d_o = dh.cwiseProduct(cache.tc.col(t));
        VectorXd dc = dh.cwiseProduct(cache.go.col(t))
                          .cwiseProduct((1.0 - cache.tc.col(t).array().square()).matrix()) +
                      dc_next;
        const VectorXd c_prev =
            t > 0 ? VectorXd(cache.c.col(t - 1)) : VectorXd(VectorXd::Zero(H));
        const VectorXd d_f = dc.cwiseProduct(c_prev);
        const VectorXd d_i = dc.cwiseProduct(cache.gg.col(t));
        const VectorXd d_g = dc.cwiseProduct(cache.gi.col(t));
        dc_next = dc.cwiseProduct(cache.gf.col(t));

        for (Eigen::Index k = 0; k < H; ++k) {
            const double i = cache.gi(k, t), f = cache.gf(k, t), g = cache.gg(k, t),
                         o = cache.go(k, t);
            dz_all(k, t) = d_i(k) * i * (1.0 - i);
            dz_all(H + k, t) = d_f(k) * f * (1.0 - f);
            dz_all(2 * H + k, t) = d_g(k) * (1.0 - g * g);
            dz_all(3 * H + k, t) = d_o(k) * o * (1.0 - o);
        }
        dh_next = U.transpose() * dz_all.col(t);
    }

    MatrixXd h_prev(H, T);
    h_prev.col(0).setZero();
    if (T > 1) h_prev.rightCols(T - 1) = cache.h.leftCols(T - 1);
    dW += dz_all * cache.x.transpose();
    dU += dz_all * h_prev.transpose();
    db.col(0) += dz_all.rowwise().sum();
    return W.transpose() * dz_all;
}

void BlstmLayer::init(Eigen::Index input_size, Eigen::Index hidden, std::mt19937_64& rng) {
    fwd.init(input_size, hidden, rng);
    bwd.init(input_size, hidden, rng);
}

MatrixXd BlstmLayer::forward(const MatrixXd& x, Cache& cache) const {
    const Eigen::Index H = fwd.hidden();
    const Eigen::Index T = x.cols();
    const MatrixXd hf = fwd.forward(x, cache.fwd);
    const MatrixXd hb = bwd.forward(x.rowwise().reverse(), cache.bwd);
    MatrixXd out(2 * H, T);
    out.topRows(H) = hf;
    out.bottomRows(H) = hb.rowwise().reverse();
    return out;
}

MatrixXd BlstmLayer::backward(const Cache& cache, const MatrixXd& dout) {
    const Eigen::Index H = fwd.hidden();
    const MatrixXd dxf = fwd.backward(cache.fwd, dout.topRows(H));
    const MatrixXd dxb =
        bwd.backward(cache.bwd, dout.bottomRows(H).rowwise().reverse());
    return dxf + dxb.rowwise().reverse();
}

void RecurrentStack::init(Eigen::Index input_size, int num_layers, Eigen::Index hidden,
                          std::mt19937_64& rng) {
    layers.resize(static_cast<size_t>(num_layers));
    Eigen::Index in = input_size;
    for (auto& layer : layers) {
        layer.init(in, hidden, rng);
        in = 2 * hidden;
    }
}

MatrixXd RecurrentStack::forward(const MatrixXd& x, Cache& cache) const {
    cache.layers.resize(layers.size());
    MatrixXd cur = x;
    for (size_t l = 0; l < layers.size(); ++l) cur = layers[l].forward(cur, cache.layers[l]);
    return cur;
}

void RecurrentStack::backward(const Cache& cache, const MatrixXd& dout) {
    MatrixXd cur = dout;
    for (size_t l = layers.size(); l-- > 0;) cur = layers[l].backward(cache.layers[l], cur);
}

void RecurrentStack::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string base = prefix + ".l" + std::to_string(l);
        for (auto [dir, tag] : {std::pair{&layers[l].fwd, ".fwd"}, std::pair{&layers[l].bwd, ".bwd"}}) {
            out.push_back({base + tag + ".W", &dir->W, &dir->dW});
            out.push_back({base + tag + ".U", &dir->U, &dir->dU});
            out.push_back({base + tag + ".b", &dir->b, &dir->db});
        }
    }
}

EmbeddingNet::EmbeddingNet(const EmbeddingNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    stack_.init(cfg_.mel_bins, cfg_.num_recurrent_layers, cfg_.hidden_units_per_direction, rng);
    const Eigen::Index out_dim =
        static_cast<Eigen::Index>(cfg_.mel_bins) * cfg_.embedding_dim;
    w_out_ = glorot_uniform(out_dim, stack_.output_size(), rng);
    b_out_ = MatrixXd::Zero(out_dim, 1);
    dw_out_ = MatrixXd::Zero(w_out_.rows(), w_out_.cols());
    db_out_ = MatrixXd::Zero(b_out_.rows(), 1);
}

Embeddings EmbeddingNet::forward(const MatrixXd& logmel, Cache& cache) const {
    require(logmel.rows() == cfg_.mel_bins, "embed: mel bin count does not match config");
    require(logmel.allFinite(), "embed: non-finite input");
    const Eigen::Index T = logmel.cols();
    const Eigen::Index M = cfg_.mel_bins;
    const Eigen::Index K = cfg_.embedding_dim;

    cache.stack_out = stack_.forward(logmel, cache.stack);
    cache.activ = ((w_out_ * cache.stack_out).colwise() + b_out_.col(0)).array().tanh();

    Embeddings emb;
    emb.frames = T;
    emb.mel_bins = M;
    emb.values.resize(T * M, K);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index m = 0; m < M; ++m)
            for (Eigen::Index k = 0; k < K; ++k)
                emb.values(bin_index(t, m, M), k) = cache.activ(m * K + k, t);

    if (cfg_.unit_normalize) {
        cache.raw = emb.values;
        for (Eigen::Index j = 0; j < emb.values.rows(); ++j) {
            const double n = std::max(emb.values.row(j).norm(), 1e-12);
            emb.values.row(j) /= n;
        }
    }
    return emb;
}

Embeddings EmbeddingNet::forward(const MatrixXd& logmel) const {
    Cache cache;
    return forward(logmel, cache);
}

void EmbeddingNet::backward(const Cache& cache, const MatrixXd& dV_in) {
    const Eigen::Index T = cache.activ.cols();
    const Eigen::Index M = cfg_.mel_bins;
    const Eigen::Index K = cfg_.embedding_dim;

    MatrixXd dV = dV_in;
    if (cfg_.unit_normalize) {
        for (Eigen::Index j = 0; j < dV.rows(); ++j) {
            const double n = std::max(cache.raw.row(j).norm(), 1e-12);
            const Eigen::RowVectorXd unit = cache.raw.row(j) / n;
            dV.row(j) = (dV_in.row(j) - unit * (unit.dot(dV_in.row(j)))) / n;
        }
    }

    MatrixXd dact(M * K, T);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index m = 0; m < M; ++m)
            for (Eigen::Index k = 0; k < K; ++k)
                dact(m * K + k, t) = dV(bin_index(t, m, M), k);

    const MatrixXd dpre = dact.array() * (1.0 - cache.activ.array().square());
    dw_out_ += dpre * cache.stack_out.transpose();
    db_out_.col(0) += dpre.rowwise().sum();
    stack_.backward(cache.stack, w_out_.transpose() * dpre);
}

std::vector<NamedParam> EmbeddingNet::params() {
    std::vector<NamedParam> out;
    stack_.collect_params("embed", out);
    out.push_back({"embed.out.W", &w_out_, &dw_out_});
    out.push_back({"embed.out.b", &b_out_, &db_out_});
    return out;
}

void EmbeddingNet::zero_grads() {
    for (auto& p : params()) p.grad->setZero();
}

BaselineNet::BaselineNet(const BaselineConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    stack_.init(cfg_.mel_bins, cfg_.num_recurrent_layers, cfg_.hidden_units_per_direction, rng);
    const Eigen::Index out_dim = static_cast<Eigen::Index>(cfg_.mel_bins) * cfg_.num_classes;
    w_out_ = glorot_uniform(out_dim, stack_.output_size(), rng);
    b_out_ = MatrixXd::Zero(out_dim, 1);
    dw_out_ = MatrixXd::Zero(w_out_.rows(), w_out_.cols());
    db_out_ = MatrixXd::Zero(b_out_.rows(), 1);
}

MatrixXd BaselineNet::forward(const MatrixXd& logmel, Cache& cache) const {
    require(logmel.rows() == cfg_.mel_bins, "baseline: mel bin count does not match config");
    require(logmel.allFinite(), "baseline: non-finite input");
    const Eigen::Index T = logmel.cols();
    const Eigen::Index M = cfg_.mel_bins;
    const Eigen::Index C = cfg_.num_classes;

    cache.stack_out = stack_.forward(logmel, cache.stack);
    MatrixXd pre = (w_out_ * cache.stack_out).colwise() + b_out_.col(0);
    cache.activ = pre.unaryExpr([](double v) { return sigmoid(v); });

    MatrixXd masks(T * M, C);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index m = 0; m < M; ++m)
            for (Eigen::Index c = 0; c < C; ++c)
                masks(bin_index(t, m, M), c) = cache.activ(m * C + c, t);
    return masks;
}

MatrixXd BaselineNet::forward(const MatrixXd& logmel) const {
    Cache cache;
    return forward(logmel, cache);
}

void BaselineNet::backward(const Cache& cache, const MatrixXd& dmask) {
    const Eigen::Index T = cache.activ.cols();
    const Eigen::Index M = cfg_.mel_bins;
    const Eigen::Index C = cfg_.num_classes;

    MatrixXd dact(M * C, T);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index m = 0; m < M; ++m)
            for (Eigen::Index c = 0; c < C; ++c)
                dact(m * C + c, t) = dmask(bin_index(t, m, M), c);

    const MatrixXd dpre =
        dact.array() * cache.activ.array() * (1.0 - cache.activ.array());
    dw_out_ += dpre * cache.stack_out.transpose();
    db_out_.col(0) += dpre.rowwise().sum();
    stack_.backward(cache.stack, w_out_.transpose() * dpre);
}

std::vector<NamedParam> BaselineNet::params() {
    std::vector<NamedParam> out;
    stack_.collect_params("base", out);
    out.push_back({"base.out.W", &w_out_, &dw_out_});
    out.push_back({"base.out.b", &b_out_, &db_out_});
    return out;
}

void BaselineNet::zero_grads() {
    for (auto& p : params()) p.grad->setZero();
}

Embeddings embed(const MatrixXd& logmel, const EmbeddingNet& net) {
    return net.forward(logmel);
}

MatrixXd baseline_forward(const MatrixXd& logmel, const BaselineNet& net) {
    return net.forward(logmel);
}

}  // namespace gmmsep
