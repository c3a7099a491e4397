#include "ndesteer/nde.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "float_format.hpp"
#include "ndesteer/diagnostics.hpp"
#include "ndesteer/errors.hpp"
#include "ndesteer/linalg.hpp"
#include "parallel.hpp"

namespace ndesteer {

using nlohmann::json;

std::string_view to_string(Family f) {
    switch (f) {
        case Family::vision: return "vision";
        case Family::text: return "text";
        case Family::crossmodal: return "crossmodal";
    }
    return "?";
}

std::string_view family_key(Family f) {
    switch (f) {
        case Family::vision: return "v";
        case Family::text: return "t";
        case Family::crossmodal: return "vt";
    }
    return "?";
}

const std::optional<std::vector<float>>& LayerDirections::get(Family f) const {
    return f == Family::vision ? v : f == Family::text ? t : vt;
}

std::optional<std::vector<float>>& LayerDirections::get(Family f) {
    return f == Family::vision ? v : f == Family::text ? t : vt;
}

// --- direction set ------------------------------------------------------

void DirectionSet::set(std::size_t layer, Family family, std::vector<float> direction) {
    const double n = linalg::norm(direction);
    if (!(std::abs(n - 1.0) <= 1e-6)) {
        throw InvariantError("direction for layer " + std::to_string(layer) + " family " +
                             std::string(to_string(family)) + " has norm " + std::to_string(n));
    }
    layers_[layer].get(family) = std::move(direction);
}

const std::vector<float>* DirectionSet::find(std::size_t layer, Family family) const {
    auto it = layers_.find(layer);
    if (it == layers_.end()) return nullptr;
    const auto& d = it->second.get(family);
    return d ? &*d : nullptr;
}

bool DirectionSet::has_family(Family family) const {
    for (const auto& [layer, dirs] : layers_) {
        if (dirs.get(family)) return true;
    }
    return false;
}

bool DirectionSet::check_digest(const std::string& model_digest, bool strict) const {
    if (meta.model_digest == model_digest) return true;
    const std::string msg = "direction set was estimated on model " + meta.model_digest +
                            " but is applied to model " + model_digest;
    if (strict) throw DigestMismatch(msg);
    warn(msg);
    return false;
}

std::string DirectionSet::to_json() const {
    json m;
    m["n_samples"] = meta.n_samples;
    m["masks"] = meta.masks;
    m["mask_fraction"] = meta.mask_fraction;
    m["pca_dim"] = meta.pca_dim;
    m["seeds"] = {{"mask", meta.mask_seed}, {"sample", meta.sample_seed}};
    m["attention_mode"] = meta.attention_mode;
    m["model_digest"] = meta.model_digest;

    json layers = json::object();
    for (const auto& [layer, dirs] : layers_) {
        json entry = json::object();
        for (Family f : {Family::vision, Family::text, Family::crossmodal}) {
            if (const auto& d = dirs.get(f)) {
                json arr = json::array();
                for (float x : *d) arr.push_back(detail::f32_json(x));
                entry[std::string(family_key(f))] = std::move(arr);
            }
        }
        layers[std::to_string(layer)] = std::move(entry);
    }
    return json{{"meta", m}, {"layers", layers}}.dump() + "\n";
}

DirectionSet DirectionSet::from_json(std::string_view text) {
    DirectionSet ds;
    try {
        const json j = json::parse(text);
        const json& m = j.at("meta");
        ds.meta.n_samples = m.value("n_samples", std::size_t{0});
        ds.meta.masks = m.value("masks", std::size_t{0});
        ds.meta.mask_fraction = m.value("mask_fraction", 0.0);
        ds.meta.pca_dim = m.value("pca_dim", std::size_t{1});
        if (m.contains("seeds")) {
            ds.meta.mask_seed = m["seeds"].value("mask", std::uint64_t{0});
            ds.meta.sample_seed = m["seeds"].value("sample", std::uint64_t{0});
        }
        ds.meta.attention_mode = m.value("attention_mode", std::string{});
        ds.meta.model_digest = m.value("model_digest", std::string{});
        for (const auto& [key, entry] : j.at("layers").items()) {
            std::size_t layer = 0;
            try {
                std::size_t used = 0;
                layer = std::stoul(key, &used);
                if (used != key.size()) throw std::invalid_argument(key);
            } catch (const std::exception&) {
                throw ParseError("direction set: bad layer key '" + key + "'");
            }
            for (Family f : {Family::vision, Family::text, Family::crossmodal}) {
                const std::string k(family_key(f));
                if (!entry.contains(k)) continue;
                std::vector<float> dir;
                for (const auto& x : entry.at(k)) dir.push_back(static_cast<float>(x.get<double>()));
                ds.set(layer, f, std::move(dir));
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("direction set JSON: ") + e.what());
    } catch (const InvariantError& e) {
        throw ParseError(std::string("direction set: ") + e.what());
    }
    return ds;
}

void DirectionSet::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << to_json();
}

DirectionSet DirectionSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

DirectionSet directionset_roundtrip(const DirectionSet& ds, const std::filesystem::path& path,
                                    const std::optional<std::string>& expected_digest, bool strict) {
    ds.save(path);
    DirectionSet loaded = DirectionSet::load(path);
    if (expected_digest) loaded.check_digest(*expected_digest, strict);
    return loaded;
}

// --- estimators ---------------------------------------------------------

namespace {

std::vector<std::size_t> resolve_layers(const Model& model, const EstimatorOptions& options) {
    const std::size_t n = model.config().n_layers;
    std::vector<std::size_t> layers = options.layers;
    if (layers.empty()) {
        for (std::size_t i = 1; i <= n; ++i) layers.push_back(i);
    }
    for (auto l : layers) {
        if (l > n) throw ConfigError("layer " + std::to_string(l) + " outside [0, " + std::to_string(n) + "]");
    }
    return layers;
}

void require_samples(std::size_t n, const char* what) {
    if (n < 2) throw ConfigError(std::string(what) + ": need at least 2 samples, got " + std::to_string(n));
}

std::vector<TokenId> caption_ids(const Model& model, std::string_view caption, const EstimatorOptions& o) {
    std::vector<TokenId> ids;
    if (o.prepend_bos) ids.push_back(model.vocab().bos());
    const auto words = model.vocab().tokenize(caption);
    ids.insert(ids.end(), words.begin(), words.end());
    if (ids.empty()) throw ShapeError("caption '" + std::string(caption) + "' has no tokens");
    return ids;
}

ActivationTrace record(const Model& model, VisionInput vision, std::vector<TokenId> ids) {
    ForwardRequest req;
    req.vision = std::move(vision);
    req.text_ids = std::move(ids);
    req.record = true;
    return std::move(*forward(model, req).trace);
}

// per-sample blocks of rows, concatenated in sample order
std::map<std::size_t, Tensor> stack_rows(const std::vector<std::size_t>& layers, std::size_t d,
                                         const std::vector<std::map<std::size_t, std::vector<float>>>& per_sample,
                                         std::size_t rows_per_sample) {
    std::map<std::size_t, Tensor> out;
    for (auto layer : layers) {
        std::vector<float> data;
        data.reserve(per_sample.size() * rows_per_sample * d);
        for (const auto& s : per_sample) {
            const auto& rows = s.at(layer);
            data.insert(data.end(), rows.begin(), rows.end());
        }
        out.emplace(layer, Tensor({per_sample.size() * rows_per_sample, d}, std::move(data)));
    }
    return out;
}

FamilyEstimate reduce(Family family, const std::map<std::size_t, Tensor>& diffs, std::size_t pca_dim) {
    FamilyEstimate est;
    est.family = family;
    for (const auto& [layer, matrix] : diffs) {
        est.rows_per_layer = matrix.rows();
        try {
            est.layers.emplace(layer, pca_principal_directions(matrix, pca_dim));
        } catch (const DegenerateVariance& e) {
            throw DegenerateVariance(std::string(to_string(family)) + " differences at layer " +
                                     std::to_string(layer) + ": " + e.what());
        }
    }
    return est;
}

}  // namespace

std::map<std::size_t, Tensor> vision_differences(const Model& model, std::span<const Tensor> images,
                                                 const MaskSpec& spec, const EstimatorOptions& options) {
    require_samples(images.size(), "vision estimator");
    const auto layers = resolve_layers(model, options);
    const auto& cfg = model.config();
    const std::size_t d = cfg.d_model, n_patches = cfg.n_patches();
    std::vector<TokenId> prompt = options.vision_prompt;
    if (prompt.empty()) prompt.push_back(model.vocab().bos());

    std::vector<std::map<std::size_t, std::vector<float>>> per_sample(images.size());
    detail::parallel_for(images.size(), options.threads, [&](std::size_t i) {
        const ActivationTrace clean = record(model, Image{images[i]}, prompt);
        const auto masked = gen_masks(images[i], spec);
        std::map<std::size_t, std::vector<double>> sums;
        for (auto layer : layers) sums[layer].assign(n_patches * d, 0.0);
        for (const auto& img : masked) {
            const ActivationTrace t = record(model, Image{img}, prompt);
            for (auto layer : layers) {
                auto& acc = sums[layer];
                for (std::size_t k = 0; k < n_patches; ++k) {
                    const auto h = t.hidden(layer, k);
                    for (std::size_t c = 0; c < d; ++c) acc[k * d + c] += h[c];
                }
            }
        }
        const double inv_m = 1.0 / static_cast<double>(masked.size());
        for (auto layer : layers) {
            const auto& acc = sums[layer];
            std::vector<float> rows(n_patches * d);
            for (std::size_t k = 0; k < n_patches; ++k) {
                const auto h = clean.hidden(layer, k);
                for (std::size_t c = 0; c < d; ++c) {
                    rows[k * d + c] = static_cast<float>(acc[k * d + c] * inv_m - h[c]);
                }
            }
            per_sample[i][layer] = std::move(rows);
        }
    });
    return stack_rows(layers, d, per_sample, n_patches);
}

std::map<std::size_t, Tensor> text_differences(const Model& model, std::span<const CaptionPair> pairs,
                                               const EstimatorOptions& options) {
    require_samples(pairs.size(), "text estimator");
    const auto layers = resolve_layers(model, options);
    const std::size_t d = model.config().d_model;

    std::vector<std::map<std::size_t, std::vector<float>>> per_sample(pairs.size());
    detail::parallel_for(pairs.size(), options.threads, [&](std::size_t i) {
        const ActivationTrace orig = record(model, std::monostate{}, caption_ids(model, pairs[i].original, options));
        const ActivationTrace hall =
            record(model, std::monostate{}, caption_ids(model, pairs[i].hallucinated, options));
        for (auto layer : layers) {
            const auto a = hall.hidden(layer, hall.seq_len() - 1);
            const auto b = orig.hidden(layer, orig.seq_len() - 1);
            std::vector<float> row(d);
            for (std::size_t c = 0; c < d; ++c) row[c] = a[c] - b[c];
            per_sample[i][layer] = std::move(row);
        }
    });
    return stack_rows(layers, d, per_sample, 1);
}

std::map<std::size_t, Tensor> crossmodal_differences(const Model& model, std::span<const std::string> captions,
                                                     const EstimatorOptions& options) {
    require_samples(captions.size(), "cross-modal estimator");
    const auto layers = resolve_layers(model, options);
    const auto& cfg = model.config();
    const std::size_t d = cfg.d_model, n_patches = cfg.n_patches();
    const Tensor black = black_image(cfg.image_h, cfg.image_w);
    const VisionEmbeddings null = null_visual(cfg);

    std::vector<std::map<std::size_t, std::vector<float>>> per_sample(captions.size());
    detail::parallel_for(captions.size(), options.threads, [&](std::size_t i) {
        const auto ids = caption_ids(model, captions[i], options);
        const ActivationTrace with_black = record(model, Image{black}, ids);
        const ActivationTrace with_null = record(model, null, ids);
        for (auto layer : layers) {
            std::vector<float> rows(n_patches * d);
            for (std::size_t k = 0; k < n_patches; ++k) {
                const auto a = with_black.hidden(layer, k);
                const auto b = with_null.hidden(layer, k);
                for (std::size_t c = 0; c < d; ++c) rows[k * d + c] = a[c] - b[c];
            }
            per_sample[i][layer] = std::move(rows);
        }
    });
    return stack_rows(layers, d, per_sample, n_patches);
}

FamilyEstimate estimate_nde_v(const Model& model, std::span<const Tensor> images, const MaskSpec& spec,
                              std::size_t pca_dim, const EstimatorOptions& options) {
    return reduce(Family::vision, vision_differences(model, images, spec, options), pca_dim);
}

FamilyEstimate estimate_nde_t(const Model& model, std::span<const CaptionPair> pairs, std::size_t pca_dim,
                              const EstimatorOptions& options) {
    return reduce(Family::text, text_differences(model, pairs, options), pca_dim);
}

FamilyEstimate estimate_nde_vt(const Model& model, std::span<const std::string> captions,
                               std::size_t pca_dim, const EstimatorOptions& options) {
    const auto diffs = crossmodal_differences(model, captions, options);
    // Pooling over positions would otherwise turn position-to-position
    // spread into a direction even when no caption reaches the vision slots.
    const std::size_t block = model.config().n_patches() * model.config().d_model;
    for (const auto& [layer, matrix] : diffs) {
        const auto v = matrix.values();
        bool identical = true;
        for (std::size_t off = block; identical && off < v.size(); off += block)
            identical = std::equal(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(block),
                                   v.begin() + static_cast<std::ptrdiff_t>(off));
        if (identical) {
            throw DegenerateVariance("crossmodal differences at layer " + std::to_string(layer) +
                                     " are identical for every caption (attention mode " +
                                     std::string(to_string(model.config().attention_mode)) + ")");
        }
    }
    return reduce(Family::crossmodal, diffs, pca_dim);
}

void store_estimate(DirectionSet& ds, const FamilyEstimate& estimate) {
    for (const auto& [layer, dirs] : estimate.layers) {
        ds.set(layer, estimate.family, dirs.directions.front());
    }
}

}  // namespace ndesteer
