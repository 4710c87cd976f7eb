#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gmmsep/model.hpp"
#include "test_util.hpp"

using namespace gmmsep;
using namespace gmmsep::testutil;

namespace {

EmbeddingNetConfig tiny_config() {
    EmbeddingNetConfig cfg;
    cfg.num_recurrent_layers = 1;
    cfg.hidden_units_per_direction = 4;
    cfg.embedding_dim = 3;
    cfg.mel_bins = 2;
    cfg.unit_normalize = false;
    return cfg;
}

}  // namespace

TEST_CASE("embedding output shape follows the input frame count") {
    EmbeddingNetConfig cfg = tiny_config();
    EmbeddingNet net(cfg, 1);
    std::mt19937_64 rng(2);
    for (Eigen::Index T : {1, 5, 17}) {
        const Embeddings emb = embed(random_matrix(2, T, rng), net);
        CHECK(emb.frames == T);
        CHECK(emb.mel_bins == 2);
        CHECK(emb.values.rows() == T * 2);
        CHECK(emb.values.cols() == 3);
        CHECK(emb.values.allFinite());
    }
    CHECK_THROWS(embed(MatrixXd::Zero(3, 4), net));  // mel bin mismatch
}

TEST_CASE("unit normalization produces unit-length embedding vectors") {
    EmbeddingNetConfig cfg = tiny_config();
    cfg.unit_normalize = true;
    EmbeddingNet net(cfg, 3);
    std::mt19937_64 rng(4);
    const Embeddings emb = embed(random_matrix(2, 9, rng), net);
    for (Eigen::Index j = 0; j < emb.values.rows(); ++j)
        CHECK(std::abs(emb.values.row(j).norm() - 1.0) < 1e-5);
}

TEST_CASE("inference is deterministic and batch-order independent") {
    EmbeddingNet net(tiny_config(), 5);
    std::mt19937_64 rng(6);
    const MatrixXd a = random_matrix(2, 7, rng);
    const MatrixXd b = random_matrix(2, 11, rng);

    const Embeddings a1 = embed(a, net);
    const Embeddings b1 = embed(b, net);
    const Embeddings b2 = embed(b, net);  // other order
    const Embeddings a2 = embed(a, net);
    CHECK((a1.values - a2.values).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b1.values - b2.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("baseline masks live in (0,1) with the configured class count") {
    BaselineConfig cfg;
    cfg.num_recurrent_layers = 1;
    cfg.hidden_units_per_direction = 4;
    cfg.num_classes = 4;
    cfg.mel_bins = 3;
    BaselineNet net(cfg, 7);
    std::mt19937_64 rng(8);
    const MatrixXd out = baseline_forward(random_matrix(3, 6, rng), net);
    CHECK(out.rows() == 6 * 3);
    CHECK(out.cols() == 4);
    CHECK(out.minCoeff() > 0.0);
    CHECK(out.maxCoeff() < 1.0);

    // All-zero weights: sigmoid(0) = 0.5 exactly.
    for (auto& p : net.params()) p.value->setZero();
    const MatrixXd mid = baseline_forward(random_matrix(3, 6, rng), net);
    CHECK((mid.array() == 0.5).all());
}

TEST_CASE("tiny-net parameter gradients match central finite differences") {
    // 2 mel bins, K=3, 1 layer, 4 hidden units; loss = 0.5 ||V - G||^2.
    for (bool normalize : {false, true}) {
        EmbeddingNetConfig cfg = tiny_config();
        cfg.unit_normalize = normalize;
        EmbeddingNet net(cfg, 11);
        std::mt19937_64 rng(12);
        const MatrixXd logmel = random_matrix(2, 5, rng);
        const MatrixXd G = random_matrix(10, 3, rng);

        auto loss = [&]() {
            const Embeddings emb = net.forward(logmel);
            return 0.5 * (emb.values - G).squaredNorm();
        };

        net.zero_grads();
        EmbeddingNet::Cache cache;
        const Embeddings emb = net.forward(logmel, cache);
        net.backward(cache, emb.values - G);

        for (auto& p : net.params()) {
            const MatrixXd fd = finite_difference(loss, *p.value);
            CHECK_MESSAGE(max_rel_error(*p.grad, fd) < 1e-4,
                          "param=", p.name, " normalize=", normalize);
        }
    }
}

TEST_CASE("baseline parameter gradients match central finite differences") {
    BaselineConfig cfg;
    cfg.num_recurrent_layers = 1;
    cfg.hidden_units_per_direction = 4;
    cfg.num_classes = 2;
    cfg.mel_bins = 2;
    BaselineNet net(cfg, 13);
    std::mt19937_64 rng(14);
    const MatrixXd logmel = random_matrix(2, 4, rng);
    const MatrixXd G = random_matrix(8, 2, rng, 0.0, 1.0);

    auto loss = [&]() { return 0.5 * (net.forward(logmel) - G).squaredNorm(); };

    net.zero_grads();
    BaselineNet::Cache cache;
    const MatrixXd out = net.forward(logmel, cache);
    net.backward(cache, out - G);

    for (auto& p : net.params()) {
        const MatrixXd fd = finite_difference(loss, *p.value);
        CHECK_MESSAGE(max_rel_error(*p.grad, fd) < 1e-4, "param=", p.name);
    }
}

TEST_CASE("config invariants reject bad settings") {
    EmbeddingNetConfig cfg = tiny_config();
    cfg.embedding_dim = 9;  // exceeds 2 * hidden
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config();
    cfg.num_recurrent_layers = 0;
    CHECK_THROWS(cfg.validate());
    BaselineConfig bcfg;
    bcfg.num_classes = 1;
    CHECK_THROWS(bcfg.validate());
}

TEST_CASE("bidirectional recurrence sees future frames") {
    // A change in the last frame must reach the first frame's embedding.
    EmbeddingNet net(tiny_config(), 15);
    std::mt19937_64 rng(16);
    MatrixXd logmel = random_matrix(2, 6, rng);
    const Embeddings before = net.forward(logmel);
    logmel(0, 5) += 1.0;
    const Embeddings after = net.forward(logmel);
    CHECK((before.values.row(0) - after.values.row(0)).cwiseAbs().maxCoeff() > 1e-12);
}
