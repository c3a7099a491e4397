#include "ndesteer/scg.hpp"

#include <cmath>

#include <json.hpp>

#include "ndesteer/errors.hpp"
#include "ndesteer/linalg.hpp"
#include "ndesteer/rng.hpp"
#include "ndesteer/synthetic.hpp"

namespace ndesteer {

using nlohmann::json;

void ScgSpec::validate() const {
    for (double x : {alpha_t, beta_v, gamma_f, noise_sigma}) {
        if (!std::isfinite(x)) throw ConfigError("scg spec: coefficients must be finite");
    }
    if (noise_sigma < 0.0) throw ConfigError("scg spec: noise_sigma must be >= 0");
    if (dim == 0) throw ConfigError("scg spec: dim must be positive");
}

std::string ScgSpec::to_json() const {
    nlohmann::ordered_json j;
    j["alpha_t"] = alpha_t;
    j["beta_v"] = beta_v;
    j["gamma_f"] = gamma_f;
    j["fusion"] = fusion == Fusion::sum ? "sum" : "product";
    j["noise_sigma"] = noise_sigma;
    j["seed"] = seed;
    if (dim != 1) j["dim"] = dim;
    return j.dump();
}

ScgSpec ScgSpec::from_json(std::string_view text) {
    ScgSpec s;
    try {
        const json j = json::parse(text);
        s.alpha_t = j.value("alpha_t", s.alpha_t);
        s.beta_v = j.value("beta_v", s.beta_v);
        s.gamma_f = j.value("gamma_f", s.gamma_f);
        const std::string fusion = j.value("fusion", std::string("sum"));
        if (fusion == "sum") {
            s.fusion = Fusion::sum;
        } else if (fusion == "product") {
            s.fusion = Fusion::product;
        } else {
            throw ParseError("scg spec: unknown fusion '" + fusion + "'");
        }
        s.noise_sigma = j.value("noise_sigma", 0.0);
        s.seed = j.value("seed", std::uint64_t{0});
        s.dim = j.value("dim", std::size_t{1});
    } catch (const json::exception& e) {
        throw ParseError(std::string("scg spec JSON: ") + e.what());
    }
    s.validate();
    return s;
}

double fuse(Fusion fusion, double t, double v) { return fusion == Fusion::sum ? t + v : t * v; }

std::vector<double> simulate_outcome(const ScgSpec& spec, std::span<const double> t, std::span<const double> v,
                                     std::optional<std::span<const double>> noise_draw) {
    spec.validate();
    if (t.size() != spec.dim || v.size() != spec.dim) {
        throw ShapeError("simulate_outcome: t and v must have " + std::to_string(spec.dim) + " entries");
    }
    if (noise_draw && noise_draw->size() != spec.dim) throw ShapeError("simulate_outcome: noise draw length");
    std::optional<Xorshift64Star> rng;
    if (!noise_draw && spec.noise_sigma > 0.0) rng.emplace(spec.seed);
    std::vector<double> out(spec.dim);
    for (std::size_t i = 0; i < spec.dim; ++i) {
        double a = spec.alpha_t * t[i] + spec.beta_v * v[i] + spec.gamma_f * fuse(spec.fusion, t[i], v[i]);
        if (noise_draw) {
            a += (*noise_draw)[i];
        } else if (rng) {
            a += spec.noise_sigma * rng->next_gaussian();
        }
        out[i] = a;
    }
    return out;
}

double simulate_outcome(const ScgSpec& spec, double t, double v) {
    ScgSpec s = spec;
    s.dim = 1;
    return simulate_outcome(s, std::span<const double>(&t, 1), std::span<const double>(&v, 1))[0];
}

std::vector<double> oracle_nde(const ScgSpec& spec, NdeKind kind, std::span<const double> t,
                               std::span<const double> v, std::span<const double> treated,
                               std::optional<std::span<const double>> null_v) {
    spec.validate();
    if (spec.noise_sigma > 0.0) throw NoiseError("counterfactual contrasts need noise_sigma = 0");
    if (treated.size() != spec.dim) throw ShapeError("oracle_nde: treated input length");
    auto y = [&](std::span<const double> tt, std::span<const double> vv) {
        const std::vector<double> zero(spec.dim, 0.0);
        return simulate_outcome(spec, tt, vv, std::span<const double>(zero));
    };
    std::vector<double> lhs, rhs;
    switch (kind) {
        case NdeKind::V:
            lhs = y(t, v);
            rhs = y(t, treated);
            break;
        case NdeKind::T:
            lhs = y(t, v);
            rhs = y(treated, v);
            break;
        case NdeKind::VT:
            if (!null_v) throw MissingNull("NDE(V,T) needs a null visual input");
            if (null_v->size() != spec.dim) throw ShapeError("oracle_nde: null input length");
            lhs = y(t, treated);
            rhs = y(t, *null_v);
            break;
    }
    for (std::size_t i = 0; i < lhs.size(); ++i) lhs[i] -= rhs[i];
    return lhs;
}

double oracle_nde(const ScgSpec& spec, NdeKind kind, double t, double v, double treated,
                  std::optional<double> null_v) {
    ScgSpec s = spec;
    s.dim = 1;
    std::optional<std::span<const double>> nv;
    if (null_v) nv = std::span<const double>(&*null_v, 1);
    return oracle_nde(s, kind, std::span<const double>(&t, 1), std::span<const double>(&v, 1),
                      std::span<const double>(&treated, 1), nv)[0];
}

// --- planted models -----------------------------------------------------

std::vector<float> random_unit_vector(std::size_t d, std::uint64_t seed) {
    Xorshift64Star rng(seed);
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(rng.next_gaussian());
    return linalg::normalized(v);
}

namespace {

void fill_uniform(Tensor& t, Xorshift64Star& rng, double scale) {
    for (float& x : t.data()) x = static_cast<float>(rng.next_symmetric() * scale);
}

// strength * (row ⊗ u + sigma * G / sqrt(d)) written into a [rows x d] matrix
void fill_rank_one(Tensor& w, std::span<const double> row_weights, std::span<const float> u, double strength,
                   double sigma, Xorshift64Star& rng) {
    const std::size_t d = w.cols();
    const double noise_scale = sigma / std::sqrt(static_cast<double>(d));
    for (std::size_t r = 0; r < w.rows(); ++r) {
        auto out = w.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = static_cast<float>(strength * (row_weights[r] * u[c] + noise_scale * rng.next_gaussian()));
        }
    }
}

std::vector<double> gaussians(std::size_t n, Xorshift64Star& rng) {
    std::vector<double> g(n);
    for (auto& x : g) x = rng.next_gaussian();
    return g;
}

}  // namespace

PlantedModel gen_planted_model(const ToyVlmConfig& config, Family family, std::span<const float> u,
                               double strength, std::uint64_t seed, double noise_sigma, std::size_t layer) {
    config.validate();
    const std::size_t d = config.d_model;
    if (u.size() != d) throw ConfigError("planted direction must have d_model entries");
    if (std::abs(linalg::norm(u) - 1.0) > 1e-6) throw ConfigError("planted direction must be unit norm");
    if (!(strength >= 0.0) || !(noise_sigma >= 0.0)) throw ConfigError("strength and sigma must be >= 0");
    if (layer < 1 || layer > config.n_layers) throw ConfigError("planted layer outside [1, n_layers]");

    Xorshift64Star rng(seed);
    ModelWeights w = zero_weights(config);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    fill_uniform(w.head_w, rng, scale);
    fill_uniform(w.head_b, rng, scale);
    BlockWeights& block = w.blocks[layer - 1];

    switch (family) {
        case Family::vision: {
            fill_uniform(w.tok_embed, rng, 1.0);
            fill_uniform(w.patch_b, rng, 1.0);
            const auto pixel_weights = gaussians(config.patch_dim(), rng);
            fill_rank_one(w.patch_w, pixel_weights, u, strength, noise_sigma, rng);
            break;
        }
        case Family::text: {
            std::vector<float> base(d);
            for (auto& x : base) x = static_cast<float>(rng.next_symmetric());
            const double noise_scale = noise_sigma / std::sqrt(static_cast<double>(d));
            for (std::size_t t = 0; t < w.tok_embed.rows(); ++t) {
                const double c = rng.next_gaussian();
                auto row = w.tok_embed.row(t);
                for (std::size_t k = 0; k < d; ++k) {
                    row[k] = static_cast<float>(base[k] + strength * (c * u[k] + noise_scale * rng.next_gaussian()));
                }
            }
            for (float& x : block.wv.data()) x = static_cast<float>(rng.next_gaussian() * scale);
            const auto z = gaussians(d, rng);
            fill_rank_one(block.wo, z, u, strength, noise_sigma, rng);
            break;
        }
        case Family::crossmodal: {
            fill_uniform(w.tok_embed, rng, 1.0);
            fill_uniform(w.patch_b, rng, 1.0);
            for (float& x : block.wq.data()) x = static_cast<float>(rng.next_gaussian() * 2.0 * scale);
            for (float& x : block.wk.data()) x = static_cast<float>(rng.next_gaussian() * 2.0 * scale);
            for (float& x : block.wv.data()) x = static_cast<float>(rng.next_gaussian() * scale);
            const auto z = gaussians(d, rng);
            fill_rank_one(block.wo, z, u, strength, noise_sigma, rng);
            break;
        }
    }

    PlantedModel out{Model(config, std::move(w)), family, std::vector<float>(u.begin(), u.end()), layer,
                     strength, noise_sigma};
    return out;
}

RecoveryResult planted_recovery(const PlantedModel& planted, std::size_t n_samples, const MaskSpec& masks,
                                std::uint64_t sample_seed, std::size_t pca_dim) {
    EstimatorOptions opts;
    opts.layers = {planted.layer};
    const Model& model = planted.model;
    FamilyEstimate est;
    switch (planted.family) {
        case Family::vision: {
            const auto images = synthetic::random_images(model.config(), n_samples, sample_seed);
            est = estimate_nde_v(model, images, masks, pca_dim, opts);
            break;
        }
        case Family::text: {
            const auto pairs = synthetic::random_caption_pairs(model.vocab(), n_samples, sample_seed);
            est = estimate_nde_t(model, pairs, pca_dim, opts);
            break;
        }
        case Family::crossmodal: {
            const auto captions = synthetic::random_captions(model.vocab(), n_samples, sample_seed);
            est = estimate_nde_vt(model, captions, pca_dim, opts);
            break;
        }
    }
    RecoveryResult r;
    r.family = planted.family;
    r.n_samples = n_samples;
    r.estimate = est.layers.at(planted.layer).directions.front();
    r.abs_cosine = std::abs(linalg::cosine_similarity(r.estimate, planted.u));
    return r;
}

}  // namespace ndesteer
