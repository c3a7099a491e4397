#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndesteer/nde.hpp"
#include "ndesteer/perturb.hpp"
#include "ndesteer/vlm.hpp"

namespace ndesteer {

// Structural causal model over text T, vision V, fused knowledge F and
// answer A:
//   A = alpha_t * t + beta_v * v + gamma_f * F(t, v) + eps
// with F(t, v) = t + v (sum) or t * v (product, elementwise) and
// eps ~ N(0, noise_sigma^2). t and v are vectors of length `dim`
// (dim = 1 is the scalar case).
enum class Fusion { sum, product };

struct ScgSpec {
    double alpha_t = 1.0;
    double beta_v = 1.0;
    double gamma_f = 1.0;
    Fusion fusion = Fusion::sum;
    double noise_sigma = 0.0;
    std::size_t dim = 1;
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError

    // {"alpha_t":..,"beta_v":..,"gamma_f":..,"fusion":"sum","noise_sigma":0.0,"seed":0}
    // ("dim" is written only when it differs from 1)
    std::string to_json() const;
    static ScgSpec from_json(std::string_view text);  // ParseError / ConfigError
};

double fuse(Fusion fusion, double t, double v);

// Structural outcome. Noise comes from `noise_draw` when given, otherwise
// from Xorshift64Star(spec.seed) Gaussian draws (none when sigma = 0).
// ShapeError when t, v or the draw do not have `dim` entries.
std::vector<double> simulate_outcome(const ScgSpec& spec, std::span<const double> t, std::span<const double> v,
                                     std::optional<std::span<const double>> noise_draw = {});
double simulate_outcome(const ScgSpec& spec, double t, double v);

enum class NdeKind { V, T, VT };

// Direct-effect contrasts, each term re-evaluating F under its own inputs:
//   V : Y(t, v, F(t, v))   - Y(t, v*, F(t, v*))
//   T : Y(t, v, F(t, v))   - Y(t*, v, F(t*, v))
//   VT: Y(t, v*, F(t, v*)) - Y(t, v_null, F(t, v_null))
// `treated` is v* for V and VT, t* for T. NoiseError when sigma > 0;
// MissingNull for VT without null_v.
std::vector<double> oracle_nde(const ScgSpec& spec, NdeKind kind, std::span<const double> t,
                               std::span<const double> v, std::span<const double> treated,
                               std::optional<std::span<const double>> null_v = {});
double oracle_nde(const ScgSpec& spec, NdeKind kind, double t, double v, double treated,
                  std::optional<double> null_v = {});

// A toy model whose `family` differences at layer `layer` (and every later
// layer) lie along the unit vector u up to noise.
//
// Construction (all random draws from Xorshift64Star(seed); g = standard
// normal, G_d = matrix of normals scaled by 1/sqrt(d_model)):
//   common     : every block is the identity (zero attention output and MLP),
//                pos_embed = 0, head random.
//   vision     : patch_w = strength * (w ⊗ u + sigma * G_d), w ~ g per pixel,
//                patch_b random. Mask differences are linear in pixels.
//   text       : tok_embed[w] = base + strength * (c_w u + sigma * n_w); block
//                `layer` attends uniformly (Wq = Wk = 0) and writes
//                strength * (z ⊗ u + sigma * G_d) through Wo, so the last
//                token sees the whole caption.
//   crossmodal : patch_w = 0, patch_b = random b; block `layer` has random
//                Wq/Wk/Wv and Wo = strength * (z ⊗ u + sigma * G_d). Black
//                and null slots differ by the constant b (removed by
//                centering) plus a caption-dependent attention term along u.
// strength = 0 removes every input-dependent pathway, so estimators see no
// variance. ConfigError when |u| != 1, u has the wrong length, strength < 0,
// sigma < 0 or layer is outside [1, n_layers].
struct PlantedModel {
    Model model;
    Family family;
    std::vector<float> u;
    std::size_t layer = 1;
    double strength = 1.0;
    double noise_sigma = 0.0;
};

PlantedModel gen_planted_model(const ToyVlmConfig& config, Family family, std::span<const float> u,
                               double strength, std::uint64_t seed, double noise_sigma = 0.0,
                               std::size_t layer = 1);

// Random unit vector of length d.
std::vector<float> random_unit_vector(std::size_t d, std::uint64_t seed);

struct RecoveryResult {
    Family family;
    std::size_t n_samples = 0;
    double abs_cosine = 0.0;
    std::vector<float> estimate;
};

// Draws n_samples inputs from `sample_seed` (images for vision, caption pairs
// for text, captions for crossmodal), runs the family's estimator at the
// planted layer and compares the leading direction with u.
RecoveryResult planted_recovery(const PlantedModel& planted, std::size_t n_samples, const MaskSpec& masks,
                                std::uint64_t sample_seed, std::size_t pca_dim = 1);

}  // namespace ndesteer
