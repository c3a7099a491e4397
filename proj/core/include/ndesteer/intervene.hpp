#pragma once

#include <array>
#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndesteer/nde.hpp"
#include "ndesteer/vlm.hpp"

namespace ndesteer {

struct InterventionConfig {
    float a = 0.9f;  // vision positions: + a * v
    float b = 0.9f;  // text positions:   + b * vt
    float c = 0.9f;  //                   + c * t
    std::optional<std::vector<std::size_t>> layers;  // nullopt = every layer
    bool apply_to_generated = true;
    bool strict_digest = false;

    bool targets(std::size_t layer) const;
    std::vector<std::size_t> resolve_layers(std::size_t n_layers) const;

    // {"a":0.9,"b":0.9,"c":0.9,"layers":"all","apply_to_generated":true,"strict_digest":false}
    std::string to_json() const;
    static InterventionConfig from_json(std::string_view text);  // ParseError
};

// Remembers which direction families were found missing so each one is
// reported once.
class MissingFamilyLog {
public:
    void report(Family family, std::size_t layer);
    bool reported(Family family) const;

private:
    std::array<std::atomic<bool>, 3> seen_{};
};

// Additive edit of one hidden state:
//   vision               -> hidden + a * v[layer]
//   text (and generated) -> hidden + b * vt[layer] + c * t[layer]
// Layers outside cfg.layers, generated positions when apply_to_generated is
// off, and zero coefficients leave the input untouched bit-for-bit. Missing
// families count as zero vectors (reported once through `log`). ShapeError
// when a direction's length differs from the hidden state's.
std::vector<float> apply_intervention(std::span<const float> hidden, PositionRole role, std::size_t layer,
                                      const DirectionSet& ds, const InterventionConfig& cfg,
                                      MissingFamilyLog* log = nullptr);

// In-place variant used by the forward hook.
void apply_intervention_inplace(std::span<float> hidden, PositionRole role, std::size_t layer,
                                const DirectionSet& ds, const InterventionConfig& cfg,
                                MissingFamilyLog* log = nullptr);

// Forward-pass hook that applies the edit after every targeted block.
class Intervention final : public HiddenStateHook {
public:
    // Checks the digest (DigestMismatch when cfg.strict_digest, warning
    // otherwise), the layer range (ConfigError) and direction lengths
    // (ShapeError).
    Intervention(const Model& model, DirectionSet ds, InterventionConfig cfg);

    void on_block_output(std::size_t layer, Tensor& hidden,
                         std::span<const PositionRole> roles) const override;

    const DirectionSet& directions() const noexcept { return ds_; }
    const InterventionConfig& config() const noexcept { return cfg_; }

private:
    DirectionSet ds_;
    InterventionConfig cfg_;
    mutable MissingFamilyLog log_;
};

struct ReportEntry {
    enum class Severity { warning, error } severity;
    std::string code;
    std::string message;
};

struct ValidationReport {
    std::vector<ReportEntry> entries;

    bool empty() const noexcept { return entries.empty(); }
    bool has_errors() const;
    std::string to_json() const;
};

// Read-only consistency check of (config, directions, model). Codes:
// non_finite_coefficient, layer_out_of_range, missing_direction,
// digest_mismatch, bad_norm, dim_mismatch.
ValidationReport validate_config(const InterventionConfig& cfg, const DirectionSet& ds, const Model& model);

}  // namespace ndesteer
