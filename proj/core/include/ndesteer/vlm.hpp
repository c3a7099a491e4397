#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ndesteer/tensor.hpp"

namespace ndesteer {

using TokenId = std::int32_t;

inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kBosToken = "[BOS]";
inline constexpr std::string_view kEosToken = "[EOS]";

enum class AttentionMode {
    // prompt positions (vision + text) attend to each other freely,
    // generated positions attend causally
    prefix_bidirectional,
    fully_causal,
};

std::string_view to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(std::string_view s);

enum class PositionRole : std::uint8_t { vision, text, generated };

std::string_view to_string(PositionRole role);

struct ToyVlmConfig {
    std::size_t d_model = 32;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 64;
    std::vector<std::string> vocab;
    std::size_t image_h = 8;
    std::size_t image_w = 8;
    std::size_t patch = 2;
    std::size_t max_seq = 64;
    AttentionMode attention_mode = AttentionMode::prefix_bidirectional;
    std::uint64_t seed = 0;

    // ConfigError on any broken invariant
    void validate() const;

    std::size_t n_patches() const { return (image_h / patch) * (image_w / patch); }
    std::size_t patch_dim() const { return patch * patch; }

    std::string to_json() const;
    static ToyVlmConfig from_json(std::string_view text);

    friend bool operator==(const ToyVlmConfig&, const ToyVlmConfig&) = default;
};

// Whitespace tokenizer over a fixed word list.
class Vocabulary {
public:
    explicit Vocabulary(std::vector<std::string> words);

    std::size_t size() const noexcept { return words_.size(); }
    TokenId unk() const noexcept { return unk_; }
    TokenId bos() const noexcept { return bos_; }
    TokenId eos() const noexcept { return eos_; }

    bool contains(std::string_view word) const;
    TokenId id(std::string_view word) const;  // UNK when absent
    const std::string& word(TokenId id) const;

    std::vector<TokenId> tokenize(std::string_view text) const;
    std::string detokenize(std::span<const TokenId> ids) const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId unk_ = -1, bos_ = -1, eos_ = -1;
};

// Splits on ASCII whitespace and re-joins with single spaces.
std::string normalize_whitespace(std::string_view text);
std::vector<std::string> split_words(std::string_view text);

struct BlockWeights {
    Tensor ln1_gain, ln1_shift;   // [d]
    Tensor wq, wk, wv, wo;        // [d x d], no biases
    Tensor ln2_gain, ln2_shift;   // [d]
    Tensor w_up, b_up;            // [d x ff], [ff]
    Tensor w_down, b_down;        // [ff x d], [d]
};

struct ModelWeights {
    Tensor tok_embed;  // [vocab x d]
    Tensor pos_embed;  // [max_seq x d]
    Tensor patch_w;    // [patch*patch x d]
    Tensor patch_b;    // [d]
    std::vector<BlockWeights> blocks;
    Tensor head_w;     // [d x vocab]
    Tensor head_b;     // [vocab]
};

// Canonical (name, tensor) listing used by the checkpoint format and by
// init_seeded's draw order.
template <typename Weights, typename Fn>
void for_each_section(Weights& w, Fn&& fn) {
    fn(std::string("tok_embed"), w.tok_embed);
    fn(std::string("pos_embed"), w.pos_embed);
    fn(std::string("patch_w"), w.patch_w);
    fn(std::string("patch_b"), w.patch_b);
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        auto& b = w.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        fn(p + "ln1.gain", b.ln1_gain);
        fn(p + "ln1.shift", b.ln1_shift);
        fn(p + "attn.wq", b.wq);
        fn(p + "attn.wk", b.wk);
        fn(p + "attn.wv", b.wv);
        fn(p + "attn.wo", b.wo);
        fn(p + "ln2.gain", b.ln2_gain);
        fn(p + "ln2.shift", b.ln2_shift);
        fn(p + "mlp.w_up", b.w_up);
        fn(p + "mlp.b_up", b.b_up);
        fn(p + "mlp.w_down", b.w_down);
        fn(p + "mlp.b_down", b.b_down);
    }
    fn(std::string("head_w"), w.head_w);
    fn(std::string("head_b"), w.head_b);
}

// Expected shape of every section for a config (same order as for_each_section).
std::vector<std::pair<std::string, std::vector<std::size_t>>> section_shapes(const ToyVlmConfig& cfg);

// All-zero weights of the right shapes, with layer-norm gains set to one.
ModelWeights zero_weights(const ToyVlmConfig& cfg);

// Immutable model: config, weights, vocabulary and a SHA-256 digest of the
// serialized checkpoint.
class Model {
public:
    // ConfigError / ShapeError when config or weights are inconsistent
    Model(ToyVlmConfig config, ModelWeights weights);

    const ToyVlmConfig& config() const noexcept { return config_; }
    const ModelWeights& weights() const noexcept { return weights_; }
    const Vocabulary& vocab() const noexcept { return vocab_; }
    const std::string& digest() const noexcept { return digest_; }

private:
    ToyVlmConfig config_;
    ModelWeights weights_;
    Vocabulary vocab_;
    std::string digest_;
};

// Weights drawn from Xorshift64Star(config.seed): every matrix/bias element is
// uniform in [-1, 1) scaled by 1/sqrt(d_model), drawn in section order;
// layer-norm gains are 1 and shifts 0 (no draws consumed).
Model init_seeded(const ToyVlmConfig& config);

// --- inputs -------------------------------------------------------------

struct Image {
    Tensor pixels;  // [image_h x image_w]
};

// Pre-computed vision-slot embeddings that bypass the patch encoder.
struct VisionEmbeddings {
    Tensor rows;  // [n_patches x d_model]
};

using VisionInput = std::variant<std::monostate, Image, VisionEmbeddings>;

// Patch embeddings of an image: non-overlapping patches in raster order, each
// flattened row-major, projected by patch_w and shifted by patch_b.
Tensor encode_image(const Model& model, const Tensor& image);

// Per-call activations: layers[0] is the embedding output, layers[i] the
// residual stream after block i (after any intervention at that layer).
struct ActivationTrace {
    std::vector<PositionRole> roles;
    std::vector<Tensor> layers;  // n_layers + 1 entries of [seq x d]
    std::size_t n_vision = 0;

    std::size_t seq_len() const noexcept { return roles.size(); }
    std::span<const float> hidden(std::size_t layer, std::size_t pos) const {
        return layers.at(layer).row(pos);
    }
};

// Edits the residual stream after a block. Implementations must be safe to
// call from concurrent forward passes.
class HiddenStateHook {
public:
    virtual ~HiddenStateHook() = default;
    virtual void on_block_output(std::size_t layer, Tensor& hidden,
                                 std::span<const PositionRole> roles) const = 0;
};

struct ForwardRequest {
    VisionInput vision;
    std::vector<TokenId> text_ids;
    std::size_t n_generated = 0;  // trailing text ids that came from decoding
    const HiddenStateHook* hook = nullptr;
    bool record = false;
};

struct ForwardResult {
    Tensor logits;  // [seq x vocab]
    std::optional<ActivationTrace> trace;
};

// ShapeError on malformed inputs or an empty sequence, OverflowError when the
// sequence exceeds max_seq.
ForwardResult forward(const Model& model, const ForwardRequest& request);

// Greedy decoding: argmax with ties to the lowest id, stops after EOS (which
// is included in the output) or after max_new tokens. ConfigError if
// max_new == 0.
std::vector<TokenId> generate_greedy(const Model& model, const VisionInput& vision,
                                     std::span<const TokenId> prompt, std::size_t max_new,
                                     const HiddenStateHook* hook = nullptr);

// --- checkpoint ---------------------------------------------------------

// "TVLM" | version u8 | u32 config length | config JSON (UTF-8) |
// sections: (u32 name length | name | TNSR tensor)* until end of file
inline constexpr std::uint8_t kCheckpointVersion = 0x01;

std::vector<std::uint8_t> encode_checkpoint(const ToyVlmConfig& config, const ModelWeights& weights);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);
Model checkpoint_roundtrip(const Model& model, const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace ndesteer
