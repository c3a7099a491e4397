#include "ndesteer/vlm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "ndesteer/errors.hpp"
#include "ndesteer/linalg.hpp"
#include "ndesteer/rng.hpp"

namespace ndesteer {

using nlohmann::json;

std::string_view to_string(AttentionMode mode) {
    return mode == AttentionMode::fully_causal ? "fully_causal" : "prefix_bidirectional";
}

AttentionMode attention_mode_from_string(std::string_view s) {
    if (s == "prefix_bidirectional") return AttentionMode::prefix_bidirectional;
    if (s == "fully_causal") return AttentionMode::fully_causal;
    throw ConfigError("unknown attention mode '" + std::string(s) + "'");
}

std::string_view to_string(PositionRole role) {
    switch (role) {
        case PositionRole::vision: return "vision";
        case PositionRole::text: return "text";
        case PositionRole::generated: return "generated";
    }
    return "?";
}

// --- config -------------------------------------------------------------

void ToyVlmConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0) fail("sizes must be positive");
    if (d_model % n_heads != 0) {
        fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
             std::to_string(n_heads));
    }
    if (patch == 0 || image_h == 0 || image_w == 0) fail("image sizes must be positive");
    if (image_h % patch != 0 || image_w % patch != 0) fail("patch must divide both image dims");
    if (max_seq == 0) fail("max_seq must be positive");
    for (auto reserved : {kUnkToken, kBosToken, kEosToken}) {
        const auto n = std::count(vocab.begin(), vocab.end(), reserved);
        if (n != 1) fail("vocab must contain " + std::string(reserved) + " exactly once");
    }
    std::vector<std::string> sorted = vocab;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) fail("duplicate vocab entry");
    for (const auto& w : vocab) {
        if (w.empty()) fail("empty vocab entry");
        for (unsigned char c : w) {
            if (std::isspace(c)) fail("vocab entry contains whitespace: '" + w + "'");
        }
    }
}

std::string ToyVlmConfig::to_json() const {
    json j;
    j["d_model"] = d_model;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["d_ff"] = d_ff;
    j["vocab"] = vocab;
    j["image_h"] = image_h;
    j["image_w"] = image_w;
    j["patch"] = patch;
    j["max_seq"] = max_seq;
    j["attention_mode"] = std::string(to_string(attention_mode));
    j["seed"] = seed;
    return j.dump();
}

ToyVlmConfig ToyVlmConfig::from_json(std::string_view text) {
    ToyVlmConfig c;
    try {
        const json j = json::parse(text);
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.vocab = j.at("vocab").get<std::vector<std::string>>();
        c.image_h = j.at("image_h").get<std::size_t>();
        c.image_w = j.at("image_w").get<std::size_t>();
        c.patch = j.at("patch").get<std::size_t>();
        c.max_seq = j.at("max_seq").get<std::size_t>();
        c.attention_mode = attention_mode_from_string(j.at("attention_mode").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config JSON: ") + e.what());
    }
    c.validate();
    return c;
}

// --- tokenizer ----------------------------------------------------------

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    for (const auto& w : split_words(text)) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        index_.emplace(words_[i], static_cast<TokenId>(i));
    }
    auto find = [&](std::string_view w) {
        auto it = index_.find(std::string(w));
        return it == index_.end() ? TokenId{-1} : it->second;
    };
    unk_ = find(kUnkToken);
    bos_ = find(kBosToken);
    eos_ = find(kEosToken);
}

bool Vocabulary::contains(std::string_view word) const {
    return index_.find(std::string(word)) != index_.end();
}

TokenId Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? unk_ : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
        throw ShapeError("token id " + std::to_string(id) + " out of range");
    }
    return words_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

// --- weights ------------------------------------------------------------

std::vector<std::pair<std::string, std::vector<std::size_t>>> section_shapes(const ToyVlmConfig& cfg) {
    const std::size_t d = cfg.d_model, v = cfg.vocab.size(), ff = cfg.d_ff;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    out.push_back({"tok_embed", {v, d}});
    out.push_back({"pos_embed", {cfg.max_seq, d}});
    out.push_back({"patch_w", {cfg.patch_dim(), d}});
    out.push_back({"patch_b", {d}});
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        out.push_back({p + "ln1.gain", {d}});
        out.push_back({p + "ln1.shift", {d}});
        out.push_back({p + "attn.wq", {d, d}});
        out.push_back({p + "attn.wk", {d, d}});
        out.push_back({p + "attn.wv", {d, d}});
        out.push_back({p + "attn.wo", {d, d}});
        out.push_back({p + "ln2.gain", {d}});
        out.push_back({p + "ln2.shift", {d}});
        out.push_back({p + "mlp.w_up", {d, ff}});
        out.push_back({p + "mlp.b_up", {ff}});
        out.push_back({p + "mlp.w_down", {ff, d}});
        out.push_back({p + "mlp.b_down", {d}});
    }
    out.push_back({"head_w", {d, v}});
    out.push_back({"head_b", {v}});
    return out;
}

namespace {

bool is_layer_norm_gain(const std::string& name) {
    return name.ends_with("ln1.gain") || name.ends_with("ln2.gain");
}
bool is_layer_norm_shift(const std::string& name) {
    return name.ends_with("ln1.shift") || name.ends_with("ln2.shift");
}

}  // namespace

ModelWeights zero_weights(const ToyVlmConfig& cfg) {
    cfg.validate();
    ModelWeights w;
    w.blocks.resize(cfg.n_layers);
    const auto shapes = section_shapes(cfg);
    std::size_t idx = 0;
    for_each_section(w, [&](const std::string& name, Tensor& t) {
        t = Tensor(shapes[idx++].second);
        if (is_layer_norm_gain(name)) std::fill(t.data().begin(), t.data().end(), 1.0f);
    });
    return w;
}

Model::Model(ToyVlmConfig config, ModelWeights weights)
    : config_(std::move(config)), weights_(std::move(weights)), vocab_(config_.vocab) {
    config_.validate();
    if (weights_.blocks.size() != config_.n_layers) {
        throw ShapeError("model has " + std::to_string(weights_.blocks.size()) +
                         " blocks, config says " + std::to_string(config_.n_layers));
    }
    const auto shapes = section_shapes(config_);
    std::size_t idx = 0;
    for_each_section(weights_, [&](const std::string& name, const Tensor& t) {
        if (t.dims() != shapes[idx].second) {
            throw ShapeError("section " + name + " has shape " + t.shape_string());
        }
        t.check_finite(name.c_str());
        ++idx;
    });
    digest_ = sha256_hex(encode_checkpoint(config_, weights_));
}

Model init_seeded(const ToyVlmConfig& config) {
    ModelWeights w = zero_weights(config);
    Xorshift64Star rng(config.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    for_each_section(w, [&](const std::string& name, Tensor& t) {
        if (is_layer_norm_gain(name) || is_layer_norm_shift(name)) return;
        for (float& v : t.data()) v = static_cast<float>(rng.next_symmetric() * scale);
    });
    return Model(config, std::move(w));
}

// --- forward ------------------------------------------------------------

Tensor encode_image(const Model& model, const Tensor& image) {
    const auto& cfg = model.config();
    if (image.rank() != 2 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w) {
        throw ShapeError("image shape " + image.shape_string() + " does not match config " +
                         std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w));
    }
    const std::size_t p = cfg.patch;
    const std::size_t grid_w = cfg.image_w / p;
    Tensor patches({cfg.n_patches(), cfg.patch_dim()});
    for (std::size_t k = 0; k < cfg.n_patches(); ++k) {
        const std::size_t r0 = (k / grid_w) * p, c0 = (k % grid_w) * p;
        auto dst = patches.row(k);
        for (std::size_t dr = 0; dr < p; ++dr)
            for (std::size_t dc = 0; dc < p; ++dc) dst[dr * p + dc] = image.at(r0 + dr, c0 + dc);
    }
    return linalg::affine(patches, model.weights().patch_w, model.weights().patch_b);
}

namespace {

Tensor self_attention(const Tensor& x, const BlockWeights& b, std::size_t n_heads,
                      AttentionMode mode, std::size_t prompt_len) {
    const std::size_t seq = x.rows(), d = x.cols(), dh = d / n_heads;
    const Tensor q = linalg::matmul(x, b.wq);
    const Tensor k = linalg::matmul(x, b.wk);
    const Tensor v = linalg::matmul(x, b.wv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor heads({seq, d});
    std::vector<double> scores(seq);
    std::vector<double> acc(dh);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < seq; ++i) {
            // visible keys for query i
            std::size_t hi = i + 1;
            if (mode == AttentionMode::prefix_bidirectional && i < prompt_len) hi = prompt_len;
            const auto qi = q.row(i).subspan(off, dh);
            double max_s = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < hi; ++j) {
                scores[j] = linalg::dot(qi, k.row(j).subspan(off, dh)) * scale;
                max_s = std::max(max_s, scores[j]);
            }
            double total = 0.0;
            for (std::size_t j = 0; j < hi; ++j) {
                scores[j] = std::exp(scores[j] - max_s);
                total += scores[j];
            }
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < hi; ++j) {
                const double a = scores[j] / total;
                const auto vj = v.row(j).subspan(off, dh);
                for (std::size_t c = 0; c < dh; ++c) acc[c] += a * vj[c];
            }
            auto out = heads.row(i).subspan(off, dh);
            for (std::size_t c = 0; c < dh; ++c) out[c] = static_cast<float>(acc[c]);
        }
    }
    return linalg::matmul(heads, b.wo);
}

Tensor mlp(const Tensor& x, const BlockWeights& b) {
    return linalg::affine(linalg::gelu(linalg::affine(x, b.w_up, b.b_up)), b.w_down, b.b_down);
}

}  // namespace

ForwardResult forward(const Model& model, const ForwardRequest& request) {
    const auto& cfg = model.config();
    const auto& w = model.weights();
    const std::size_t d = cfg.d_model;

    Tensor vision_rows;
    if (const auto* img = std::get_if<Image>(&request.vision)) {
        vision_rows = encode_image(model, img->pixels);
    } else if (const auto* emb = std::get_if<VisionEmbeddings>(&request.vision)) {
        if (emb->rows.rank() != 2 || emb->rows.dim(0) != cfg.n_patches() || emb->rows.dim(1) != d) {
            throw ShapeError("vision embeddings must be [" + std::to_string(cfg.n_patches()) + " x " +
                             std::to_string(d) + "], got " + emb->rows.shape_string());
        }
        vision_rows = emb->rows;
    }
    const std::size_t n_vision = vision_rows.empty() ? 0 : vision_rows.rows();
    const std::size_t n_text = request.text_ids.size();
    const std::size_t seq = n_vision + n_text;
    if (seq == 0) throw ShapeError("forward: empty sequence");
    if (seq > cfg.max_seq) {
        throw OverflowError("sequence length " + std::to_string(seq) + " exceeds max_seq " +
                            std::to_string(cfg.max_seq));
    }
    if (request.n_generated > n_text) throw ShapeError("n_generated exceeds text length");

    std::vector<PositionRole> roles(seq, PositionRole::text);
    for (std::size_t k = 0; k < n_vision; ++k) roles[k] = PositionRole::vision;
    for (std::size_t k = seq - request.n_generated; k < seq; ++k) roles[k] = PositionRole::generated;
    const std::size_t prompt_len = seq - request.n_generated;

    Tensor h({seq, d});
    for (std::size_t k = 0; k < seq; ++k) {
        auto dst = h.row(k);
        std::span<const float> src;
        if (k < n_vision) {
            src = vision_rows.row(k);
        } else {
            const TokenId id = request.text_ids[k - n_vision];
            if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab.size()) {
                throw ShapeError("token id " + std::to_string(id) + " out of range");
            }
            src = w.tok_embed.row(static_cast<std::size_t>(id));
        }
        const auto pos = w.pos_embed.row(k);
        for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] + pos[c];
    }
    h.check_finite("embedding");

    ForwardResult result;
    if (request.record) {
        result.trace.emplace();
        result.trace->roles = roles;
        result.trace->n_vision = n_vision;
        result.trace->layers.reserve(cfg.n_layers + 1);
        result.trace->layers.push_back(h);
    }

    for (std::size_t layer = 1; layer <= cfg.n_layers; ++layer) {
        const BlockWeights& b = w.blocks[layer - 1];
        linalg::add_inplace(h, self_attention(linalg::layer_norm(h, b.ln1_gain, b.ln1_shift), b,
                                              cfg.n_heads, cfg.attention_mode, prompt_len));
        linalg::add_inplace(h, mlp(linalg::layer_norm(h, b.ln2_gain, b.ln2_shift), b));
        if (request.hook) {
            request.hook->on_block_output(layer, h, roles);
            h.check_finite("intervention output");
        }
        if (request.record) result.trace->layers.push_back(h);
    }

    result.logits = linalg::affine(h, w.head_w, w.head_b);
    return result;
}

std::vector<TokenId> generate_greedy(const Model& model, const VisionInput& vision,
                                     std::span<const TokenId> prompt, std::size_t max_new,
                                     const HiddenStateHook* hook) {
    if (max_new == 0) throw ConfigError("generate: max_new must be >= 1");
    ForwardRequest req;
    req.vision = vision;
    req.text_ids.assign(prompt.begin(), prompt.end());
    req.hook = hook;
    std::vector<TokenId> out;
    const TokenId eos = model.vocab().eos();
    while (out.size() < max_new) {
        const ForwardResult r = forward(model, req);
        const auto last = r.logits.row(r.logits.rows() - 1);
        std::size_t best = 0;
        for (std::size_t j = 1; j < last.size(); ++j) {
            if (last[j] > last[best]) best = j;
        }
        const auto next = static_cast<TokenId>(best);
        out.push_back(next);
        if (next == eos) break;
        req.text_ids.push_back(next);
        ++req.n_generated;
    }
    return out;
}

}  // namespace ndesteer
