#include "gmmsep/separator.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace gmmsep {

namespace {

struct ChunkPlan {
    Eigen::Index start = 0;
    Eigen::Index length = 0;
    Eigen::Index ramp_left = 0;   // crossfade-in samples
    Eigen::Index ramp_right = 0;  // crossfade-out samples
};

// Training-length chunks at 50% overlap; the last chunk is pulled back so it
// ends exactly at the signal end.
std::vector<ChunkPlan> plan_chunks(Eigen::Index n, double excerpt_seconds, double sample_rate) {
    const Eigen::Index chunk =
        excerpt_seconds > 0.0
            ? static_cast<Eigen::Index>(std::llround(excerpt_seconds * sample_rate))
            : 0;
    std::vector<ChunkPlan> plans;
    if (chunk <= 0 || n <= chunk) {
        plans.push_back({0, n, 0, 0});
        return plans;
    }
    const Eigen::Index hop = std::max<Eigen::Index>(chunk / 2, 1);
    std::vector<Eigen::Index> starts;
    for (Eigen::Index s = 0; s + chunk < n; s += hop) starts.push_back(s);
    starts.push_back(n - chunk);
    for (size_t i = 0; i + 1 < starts.size(); ++i)
        if (starts[i + 1] <= starts[i]) starts.erase(starts.begin() + static_cast<long>(i + 1)), --i;

    for (size_t i = 0; i < starts.size(); ++i) {
        ChunkPlan p;
        p.start = starts[i];
        p.length = chunk;
        if (i > 0) p.ramp_left = starts[i - 1] + chunk - starts[i];
        if (i + 1 < starts.size()) p.ramp_right = starts[i] + chunk - starts[i + 1];
        p.ramp_left = std::clamp<Eigen::Index>(p.ramp_left, 0, chunk);
        p.ramp_right = std::clamp<Eigen::Index>(p.ramp_right, 0, chunk);
        plans.push_back(p);
    }
    return plans;
}

VectorXd chunk_window(const ChunkPlan& p) {
    VectorXd w = VectorXd::Ones(p.length);
    for (Eigen::Index i = 0; i < p.ramp_left; ++i)
        w(i) = (static_cast<double>(i) + 0.5) / static_cast<double>(p.ramp_left);
    for (Eigen::Index i = 0; i < p.ramp_right; ++i)
        w(p.length - 1 - i) =
            std::min(w(p.length - 1 - i),
                     (static_cast<double>(i) + 0.5) / static_cast<double>(p.ramp_right));
    return w;
}

// Masked resynthesis of one chunk: lift each class's mel mask, scale the
// complex spectrogram, invert with the mixture phase.
std::vector<VectorXd> apply_masks(const ComplexSpectrogram& spec, const Mask& mel_mask,
                                  const MelFilterbank& fb) {
    std::vector<VectorXd> out;
    for (Eigen::Index c = 0; c < mel_mask.num_classes(); ++c) {
        const MatrixXd lifted = mel_unproject_mask(mel_mask.class_grid(c), fb);
        ComplexSpectrogram masked = spec;
        masked.values = spec.values.cwiseProduct(lifted.cast<std::complex<double>>());
        out.push_back(istft(masked).channels[0]);
    }
    return out;
}

}  // namespace

std::vector<AudioClip> separate(const AudioClip& mixture, const ModelState& model) {
    mixture.validate();
    require(mixture.num_samples() > 0, "separate: empty input");
    const TrainConfig& cfg = model.cfg;
    const MelFilterbank fb =
        MelFilterbank::build(cfg.mel_bins, cfg.stft.num_bins(), cfg.sample_rate);
    const Eigen::Index C = static_cast<Eigen::Index>(cfg.class_names.size());
    const Eigen::Index n = mixture.num_samples();

    GaussianParams params;
    if (!model.baseline) params = model.aux.forward(cfg.covariance);

    std::vector<AudioClip> stems(static_cast<size_t>(C));
    for (auto& s : stems) {
        s.sample_rate = mixture.sample_rate;
        s.channels.assign(static_cast<size_t>(mixture.num_channels()), VectorXd::Zero(n));
    }

    const auto plans = plan_chunks(n, model.excerpt_seconds, cfg.sample_rate);
    for (Eigen::Index ch = 0; ch < mixture.num_channels(); ++ch) {
        std::vector<VectorXd> acc(static_cast<size_t>(C), VectorXd::Zero(n));
        VectorXd wacc = VectorXd::Zero(n);
        for (const auto& plan : plans) {
            const AudioClip chunk = AudioClip::mono(
                mixture.channels[static_cast<size_t>(ch)].segment(plan.start, plan.length),
                mixture.sample_rate);
            const ComplexSpectrogram spec = stft(chunk, cfg.stft);
            const MatrixXd logmel = input_logmel(spec, cfg, fb);

            Mask mel_mask;
            if (model.baseline) {
                mel_mask.values = model.base.forward(logmel);
                mel_mask.frames = spec.num_frames();
                mel_mask.mel_bins = cfg.mel_bins;
            } else {
                mel_mask = posterior_mask(model.embed.forward(logmel), params);
            }

            const std::vector<VectorXd> rendered = apply_masks(spec, mel_mask, fb);
            const VectorXd w = chunk_window(plan);
            for (Eigen::Index c = 0; c < C; ++c)
                acc[static_cast<size_t>(c)].segment(plan.start, plan.length) +=
                    w.cwiseProduct(rendered[static_cast<size_t>(c)].head(plan.length));
            wacc.segment(plan.start, plan.length) += w;
        }
        for (Eigen::Index c = 0; c < C; ++c) {
            VectorXd& buf = stems[static_cast<size_t>(c)].channels[static_cast<size_t>(ch)];
            for (Eigen::Index i = 0; i < n; ++i)
                buf(i) = wacc(i) > 1e-12 ? acc[static_cast<size_t>(c)](i) / wacc(i) : 0.0;
        }
    }
    return stems;
}

AudioClip query_separate(const AudioClip& query, const AudioClip& mixture,
                         const ModelState& model, CovarianceType query_covariance) {
    query.validate();
    mixture.validate();
    require(query.num_samples() > 0, "query: empty query clip");
    require(mixture.num_samples() > 0, "query: empty mixture");
    require(!model.baseline, "query: requires a class-conditional embedding checkpoint");

    const TrainConfig& cfg = model.cfg;
    const MelFilterbank fb =
        MelFilterbank::build(cfg.mel_bins, cfg.stft.num_bins(), cfg.sample_rate);

    // Embed the query in training-length chunks like any other input, then
    // fit one Gaussian on all frames jointly, gated bins only.
    const AudioClip q_mono = query.downmix_mono();
    const auto q_plans = plan_chunks(q_mono.num_samples(), model.excerpt_seconds, cfg.sample_rate);
    std::vector<Embeddings> q_embs;
    std::vector<MatrixXd> q_mels;
    double q_peak = 0.0;
    Eigen::Index q_bins = 0;
    for (const auto& plan : q_plans) {
        const AudioClip chunk = AudioClip::mono(
            q_mono.channels[0].segment(plan.start, plan.length), q_mono.sample_rate);
        const ComplexSpectrogram spec = stft(chunk, cfg.stft);
        q_mels.push_back(mel_project(spec.magnitude(), fb));
        q_embs.push_back(model.embed.forward(input_logmel(spec, cfg, fb)));
        q_peak = std::max(q_peak, q_mels.back().maxCoeff());
        q_bins += q_embs.back().num_bins();
    }
    const double q_cut = q_peak * std::pow(10.0, cfg.gate_threshold_db / 20.0);
    MatrixXd q_rows(q_bins, model.embed.config().embedding_dim);
    Eigen::Index at = 0;
    for (size_t i = 0; i < q_embs.size(); ++i) {
        const Embeddings& emb = q_embs[i];
        for (Eigen::Index t = 0; t < emb.frames; ++t)
            for (Eigen::Index m = 0; m < emb.mel_bins; ++m)
                if (q_mels[i](m, t) > q_cut)
                    q_rows.row(at++) = emb.values.row(bin_index(t, m, emb.mel_bins));
    }
    Embeddings gated;
    gated.values = at >= 2 ? MatrixXd(q_rows.topRows(at)) : q_embs.front().values;
    gated.frames = gated.values.rows();
    gated.mel_bins = 1;
    const GaussianParams query_gaussian = fit_single_gaussian(gated, query_covariance);

    // Pass 1: embeddings and log densities per chunk, tracking the global peak.
    struct ChunkWork {
        Eigen::Index channel;
        ChunkPlan plan;
        ComplexSpectrogram spec;
        MatrixXd logdens;
    };
    const Eigen::Index n = mixture.num_samples();
    const auto plans = plan_chunks(n, model.excerpt_seconds, cfg.sample_rate);
    std::vector<ChunkWork> work;
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index ch = 0; ch < mixture.num_channels(); ++ch) {
        for (const auto& plan : plans) {
            ChunkWork cw;
            cw.channel = ch;
            cw.plan = plan;
            const AudioClip chunk = AudioClip::mono(
                mixture.channels[static_cast<size_t>(ch)].segment(plan.start, plan.length),
                mixture.sample_rate);
            cw.spec = stft(chunk, cfg.stft);
            const Embeddings V = model.embed.forward(input_logmel(cw.spec, cfg, fb));
            cw.logdens = gaussian_log_density_grid(V, query_gaussian);
            peak = std::max(peak, cw.logdens.maxCoeff());
            work.push_back(std::move(cw));
        }
    }

    // Pass 2: normalize to the global peak, mask, resynthesize, crossfade.
    AudioClip out;
    out.sample_rate = mixture.sample_rate;
    out.channels.assign(static_cast<size_t>(mixture.num_channels()), VectorXd::Zero(n));
    std::vector<VectorXd> wacc(static_cast<size_t>(mixture.num_channels()), VectorXd::Zero(n));
    for (const auto& cw : work) {
        const MatrixXd mel_mask = (cw.logdens.array() - peak).exp();
        const MatrixXd lifted = mel_unproject_mask(mel_mask, fb);
        ComplexSpectrogram masked = cw.spec;
        masked.values = cw.spec.values.cwiseProduct(lifted.cast<std::complex<double>>());
        const VectorXd rendered = istft(masked).channels[0];
        const VectorXd w = chunk_window(cw.plan);
        out.channels[static_cast<size_t>(cw.channel)].segment(cw.plan.start, cw.plan.length) +=
            w.cwiseProduct(rendered.head(cw.plan.length));
        wacc[static_cast<size_t>(cw.channel)].segment(cw.plan.start, cw.plan.length) += w;
    }
    for (Eigen::Index ch = 0; ch < mixture.num_channels(); ++ch) {
        VectorXd& buf = out.channels[static_cast<size_t>(ch)];
        const VectorXd& w = wacc[static_cast<size_t>(ch)];
        for (Eigen::Index i = 0; i < n; ++i) buf(i) = w(i) > 1e-12 ? buf(i) / w(i) : 0.0;
    }
    return out;
}

PcaResult pca_fit(const MatrixXd& data) {
    require(data.rows() >= 2, "pca: need at least 2 rows");
    PcaResult res;
    res.mean = data.colwise().mean();
    const MatrixXd centered = data.rowwise() - res.mean;
    const MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(data.rows() - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);
    const Eigen::Index K = data.cols();
    res.components.resize(K, K);
    res.eigenvalues.resize(K);
    for (Eigen::Index i = 0; i < K; ++i) {
        res.eigenvalues(i) = solver.eigenvalues()(K - 1 - i);
        VectorXd v = solver.eigenvectors().col(K - 1 - i);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0.0) v = -v;
        res.components.col(i) = v;
    }
    return res;
}

void export_embedding_views(const AudioClip& mixture, const ModelState& model,
                            const std::string& csv_path, const std::string& json_path) {
    require(!model.baseline, "inspect: requires a class-conditional embedding checkpoint");
    const TrainConfig& cfg = model.cfg;
    const MelFilterbank fb =
        MelFilterbank::build(cfg.mel_bins, cfg.stft.num_bins(), cfg.sample_rate);

    const ComplexSpectrogram spec = stft(mixture.downmix_mono(), cfg.stft);
    const Embeddings V = model.embed.forward(input_logmel(spec, cfg, fb));
    const GaussianParams params = model.aux.forward(cfg.covariance);
    const Mask mask = posterior_mask(V, params);

    // Loudness gate, matching the training-time affinity gate.
    const MatrixXd mel_mag = mel_project(spec.magnitude(), fb);
    const double cut =
        mel_mag.maxCoeff() * std::pow(10.0, cfg.gate_threshold_db / 20.0);
    std::vector<bool> gate(static_cast<size_t>(V.num_bins()), false);
    Eigen::Index gated_count = 0;
    for (Eigen::Index t = 0; t < V.frames; ++t)
        for (Eigen::Index m = 0; m < V.mel_bins; ++m)
            if (mel_mag(m, t) > cut) {
                gate[static_cast<size_t>(bin_index(t, m, V.mel_bins))] = true;
                ++gated_count;
            }

    MatrixXd pca_data;
    if (gated_count >= 2) {
        pca_data.resize(gated_count, V.dim());
        Eigen::Index r = 0;
        for (Eigen::Index j = 0; j < V.num_bins(); ++j)
            if (gate[static_cast<size_t>(j)]) pca_data.row(r++) = V.values.row(j);
    } else {
        pca_data = V.values;
    }
    const PcaResult pca = pca_fit(pca_data);
    const MatrixXd coords = (V.values.rowwise() - pca.mean) * pca.components.leftCols(2);

    std::ofstream csv(csv_path, std::ios::trunc);
    require(csv.good(), "inspect: cannot write " + csv_path);
    csv << "t,m,gated,label,pc1,pc2";
    for (Eigen::Index k = 0; k < V.dim(); ++k) csv << ",e_" << k;
    csv << "\n";
    csv.precision(8);
    for (Eigen::Index t = 0; t < V.frames; ++t) {
        for (Eigen::Index m = 0; m < V.mel_bins; ++m) {
            const Eigen::Index j = bin_index(t, m, V.mel_bins);
            Eigen::Index label = 0;
            mask.values.row(j).maxCoeff(&label);  // first max: lowest class index
            csv << t << ',' << m << ',' << (gate[static_cast<size_t>(j)] ? 1 : 0) << ','
                << label << ',' << coords(j, 0) << ',' << coords(j, 1);
            for (Eigen::Index k = 0; k < V.dim(); ++k) csv << ',' << V.values(j, k);
            csv << "\n";
        }
    }

    nlohmann::ordered_json j;
    j["classes"] = cfg.class_names;
    j["covariance"] = covariance_to_string(params.kind);
    j["means"] = std::vector<std::vector<double>>();
    for (Eigen::Index c = 0; c < params.num_classes(); ++c) {
        std::vector<double> row(params.means.row(c).begin(), params.means.row(c).end());
        j["means"].push_back(row);
    }
    j["variances"] = std::vector<std::vector<double>>();
    for (Eigen::Index r = 0; r < params.variances.rows(); ++r) {
        std::vector<double> row(params.variances.row(r).begin(), params.variances.row(r).end());
        j["variances"].push_back(row);
    }
    j["priors"] = std::vector<double>(params.priors.begin(), params.priors.end());
    j["pca_eigenvalues"] = std::vector<double>(pca.eigenvalues.begin(), pca.eigenvalues.end());
    j["frames"] = V.frames;
    j["mel_bins"] = V.mel_bins;
    std::ofstream js(json_path, std::ios::trunc);
    require(js.good(), "inspect: cannot write " + json_path);
    js << j.dump(2) << "\n";
}

void save_gaussian_params(const std::string& path, const GaussianParams& params) {
    params.validate();
    nlohmann::ordered_json j;
    j["kind"] = covariance_to_string(params.kind);
    j["num_classes"] = params.num_classes();
    j["dim"] = params.dim();
    j["means"] = std::vector<std::vector<double>>();
    for (Eigen::Index c = 0; c < params.means.rows(); ++c)
        j["means"].push_back(
            std::vector<double>(params.means.row(c).begin(), params.means.row(c).end()));
    j["variances"] = std::vector<std::vector<double>>();
    for (Eigen::Index r = 0; r < params.variances.rows(); ++r)
        j["variances"].push_back(std::vector<double>(params.variances.row(r).begin(),
                                                     params.variances.row(r).end()));
    j["priors"] = std::vector<double>(params.priors.begin(), params.priors.end());
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), "gaussian: cannot write " + path);
    out << j.dump(2) << "\n";
}

GaussianParams load_gaussian_params(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "gaussian: cannot open " + path);
    nlohmann::ordered_json j;
    in >> j;
    GaussianParams p;
    p.kind = covariance_from_string(j.at("kind").get<std::string>());
    const auto means = j.at("means").get<std::vector<std::vector<double>>>();
    const auto vars = j.at("variances").get<std::vector<std::vector<double>>>();
    const auto priors = j.at("priors").get<std::vector<double>>();
    p.means.resize(static_cast<Eigen::Index>(means.size()),
                   static_cast<Eigen::Index>(means.at(0).size()));
    for (size_t r = 0; r < means.size(); ++r)
        for (size_t c = 0; c < means[r].size(); ++c)
            p.means(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = means[r][c];
    p.variances.resize(static_cast<Eigen::Index>(vars.size()),
                       static_cast<Eigen::Index>(vars.at(0).size()));
    for (size_t r = 0; r < vars.size(); ++r)
        for (size_t c = 0; c < vars[r].size(); ++c)
            p.variances(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = vars[r][c];
    p.priors.resize(static_cast<Eigen::Index>(priors.size()));
    for (size_t i = 0; i < priors.size(); ++i)
        p.priors(static_cast<Eigen::Index>(i)) = priors[i];
    p.validate();
    return p;
}

}  // namespace gmmsep
