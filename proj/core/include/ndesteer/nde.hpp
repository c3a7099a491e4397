#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndesteer/pca.hpp"
#include "ndesteer/perturb.hpp"
#include "ndesteer/vlm.hpp"

namespace ndesteer {

// The three direct-effect families.
//   vision     : mean(masked) - clean, at vision positions
//   text       : hallucinated - original, at the last text token
//   crossmodal : black image - null visual, at vision positions
enum class Family { vision, text, crossmodal };

std::string_view to_string(Family f);
// JSON keys used in direction-set files: "v", "t", "vt"
std::string_view family_key(Family f);

struct DirectionSetMeta {
    std::size_t n_samples = 0;
    std::size_t masks = 0;
    double mask_fraction = 0.0;
    std::size_t pca_dim = 1;
    std::uint64_t mask_seed = 0;
    std::uint64_t sample_seed = 0;
    std::string attention_mode;
    std::string model_digest;

    friend bool operator==(const DirectionSetMeta&, const DirectionSetMeta&) = default;
};

struct LayerDirections {
    std::optional<std::vector<float>> v;
    std::optional<std::vector<float>> t;
    std::optional<std::vector<float>> vt;

    const std::optional<std::vector<float>>& get(Family f) const;
    std::optional<std::vector<float>>& get(Family f);
};

// Per-layer unit steering vectors (layers 1..n_layers), any family optional.
class DirectionSet {
public:
    DirectionSetMeta meta;

    // InvariantError unless |direction| = 1 +- 1e-6
    void set(std::size_t layer, Family family, std::vector<float> direction);
    const std::vector<float>* find(std::size_t layer, Family family) const;
    const std::map<std::size_t, LayerDirections>& layers() const noexcept { return layers_; }
    bool has_family(Family family) const;

    // Throws DigestMismatch when strict, otherwise emits a warning. Returns
    // whether the digests matched.
    bool check_digest(const std::string& model_digest, bool strict) const;

    // {"meta": {...}, "layers": {"1": {"v": [...], "t": [...], "vt": [...]}}}
    // with floats written as shortest round-trip f32 decimals.
    std::string to_json() const;
    static DirectionSet from_json(std::string_view text);  // ParseError

    void save(const std::filesystem::path& path) const;
    static DirectionSet load(const std::filesystem::path& path);

private:
    std::map<std::size_t, LayerDirections> layers_;
};

// save + load; when `expected_digest` is given the loaded digest is checked
// (DigestMismatch if strict, warning otherwise).
DirectionSet directionset_roundtrip(const DirectionSet& ds, const std::filesystem::path& path,
                                    const std::optional<std::string>& expected_digest = {},
                                    bool strict = false);

struct EstimatorOptions {
    // layers to estimate; empty means 1..n_layers (the embedding layer 0 is
    // allowed when listed explicitly)
    std::vector<std::size_t> layers;
    // text paired with each image in the vision estimator; empty means [BOS]
    std::vector<TokenId> vision_prompt;
    // prefix caption token sequences with [BOS]
    bool prepend_bos = true;
    // worker threads for trace collection; 0 = hardware concurrency
    std::size_t threads = 0;
};

struct FamilyEstimate {
    Family family = Family::vision;
    std::map<std::size_t, PrincipalDirections> layers;
    std::size_t rows_per_layer = 0;
};

// Each estimator stacks the per-sample difference vectors of a layer (all
// positions pooled into one matrix, rows in input order) and extracts
// pca_dim principal directions. ConfigError when fewer than 2 samples are
// given; DegenerateVariance (naming the layer) when a layer has no variance.
FamilyEstimate estimate_nde_v(const Model& model, std::span<const Tensor> images, const MaskSpec& spec,
                              std::size_t pca_dim, const EstimatorOptions& options = {});
FamilyEstimate estimate_nde_t(const Model& model, std::span<const CaptionPair> pairs, std::size_t pca_dim,
                              const EstimatorOptions& options = {});
FamilyEstimate estimate_nde_vt(const Model& model, std::span<const std::string> captions,
                               std::size_t pca_dim, const EstimatorOptions& options = {});

// Raw difference matrices ([rows x d_model] per layer) behind the estimators.
std::map<std::size_t, Tensor> vision_differences(const Model& model, std::span<const Tensor> images,
                                                 const MaskSpec& spec, const EstimatorOptions& options = {});
std::map<std::size_t, Tensor> text_differences(const Model& model, std::span<const CaptionPair> pairs,
                                               const EstimatorOptions& options = {});
std::map<std::size_t, Tensor> crossmodal_differences(const Model& model, std::span<const std::string> captions,
                                                     const EstimatorOptions& options = {});

// Stores the leading direction of every layer of `estimate` into `ds`.
void store_estimate(DirectionSet& ds, const FamilyEstimate& estimate);

}  // namespace ndesteer
