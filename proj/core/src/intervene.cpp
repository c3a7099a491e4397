#include "ndesteer/intervene.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "float_format.hpp"
#include "ndesteer/diagnostics.hpp"
#include "ndesteer/errors.hpp"
#include "ndesteer/linalg.hpp"

namespace ndesteer {

using nlohmann::json;

bool InterventionConfig::targets(std::size_t layer) const {
    if (layer == 0) return false;
    if (!layers) return true;
    return std::find(layers->begin(), layers->end(), layer) != layers->end();
}

std::vector<std::size_t> InterventionConfig::resolve_layers(std::size_t n_layers) const {
    if (layers) return *layers;
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i <= n_layers; ++i) out.push_back(i);
    return out;
}

std::string InterventionConfig::to_json() const {
    nlohmann::ordered_json j;
    j["a"] = detail::f32_json(a).get<double>();
    j["b"] = detail::f32_json(b).get<double>();
    j["c"] = detail::f32_json(c).get<double>();
    j["layers"] = layers ? nlohmann::ordered_json(*layers) : nlohmann::ordered_json("all");
    j["apply_to_generated"] = apply_to_generated;
    j["strict_digest"] = strict_digest;
    return j.dump();
}

InterventionConfig InterventionConfig::from_json(std::string_view text) {
    InterventionConfig cfg;
    try {
        const json j = json::parse(text);
        cfg.a = static_cast<float>(j.value("a", 0.9));
        cfg.b = static_cast<float>(j.value("b", 0.9));
        cfg.c = static_cast<float>(j.value("c", 0.9));
        if (j.contains("layers")) {
            const json& l = j["layers"];
            if (l.is_string()) {
                if (l.get<std::string>() != "all") throw ParseError("layers must be \"all\" or a list");
            } else {
                cfg.layers = l.get<std::vector<std::size_t>>();
            }
        }
        cfg.apply_to_generated = j.value("apply_to_generated", true);
        cfg.strict_digest = j.value("strict_digest", false);
    } catch (const json::exception& e) {
        throw ParseError(std::string("intervention config JSON: ") + e.what());
    }
    return cfg;
}

void MissingFamilyLog::report(Family family, std::size_t layer) {
    if (!seen_[static_cast<std::size_t>(family)].exchange(true)) {
        warn("no " + std::string(to_string(family)) + " direction for layer " + std::to_string(layer) +
             "; treating it as zero (reported once)");
    }
}

bool MissingFamilyLog::reported(Family family) const {
    return seen_[static_cast<std::size_t>(family)].load();
}

namespace {

void add_scaled(std::span<float> hidden, float coeff, const DirectionSet& ds, std::size_t layer,
                Family family, MissingFamilyLog* log) {
    if (coeff == 0.0f) return;
    const std::vector<float>* dir = ds.find(layer, family);
    if (!dir) {
        if (log) log->report(family, layer);
        return;
    }
    if (dir->size() != hidden.size()) {
        throw ShapeError("direction length " + std::to_string(dir->size()) + " != hidden size " +
                         std::to_string(hidden.size()));
    }
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] += coeff * (*dir)[i];
}

}  // namespace

void apply_intervention_inplace(std::span<float> hidden, PositionRole role, std::size_t layer,
                                const DirectionSet& ds, const InterventionConfig& cfg, MissingFamilyLog* log) {
    if (!cfg.targets(layer)) return;
    switch (role) {
        case PositionRole::vision:
            add_scaled(hidden, cfg.a, ds, layer, Family::vision, log);
            break;
        case PositionRole::generated:
            if (!cfg.apply_to_generated) return;
            [[fallthrough]];
        case PositionRole::text:
            add_scaled(hidden, cfg.b, ds, layer, Family::crossmodal, log);
            add_scaled(hidden, cfg.c, ds, layer, Family::text, log);
            break;
    }
}

std::vector<float> apply_intervention(std::span<const float> hidden, PositionRole role, std::size_t layer,
                                      const DirectionSet& ds, const InterventionConfig& cfg,
                                      MissingFamilyLog* log) {
    std::vector<float> out(hidden.begin(), hidden.end());
    apply_intervention_inplace(out, role, layer, ds, cfg, log);
    return out;
}

// --- hook ---------------------------------------------------------------

Intervention::Intervention(const Model& model, DirectionSet ds, InterventionConfig cfg)
    : ds_(std::move(ds)), cfg_(std::move(cfg)) {
    const std::size_t n = model.config().n_layers;
    for (auto l : cfg_.resolve_layers(n)) {
        if (l < 1 || l > n) {
            throw ConfigError("intervention layer " + std::to_string(l) + " outside [1, " + std::to_string(n) + "]");
        }
    }
    for (float x : {cfg_.a, cfg_.b, cfg_.c}) {
        if (!std::isfinite(x)) throw ConfigError("intervention coefficients must be finite");
    }
    for (const auto& [layer, dirs] : ds_.layers()) {
        for (Family f : {Family::vision, Family::text, Family::crossmodal}) {
            if (dirs.get(f) && dirs.get(f)->size() != model.config().d_model) {
                throw ShapeError("direction at layer " + std::to_string(layer) + " has length " +
                                 std::to_string(dirs.get(f)->size()) + ", model d_model is " +
                                 std::to_string(model.config().d_model));
            }
        }
    }
    ds_.check_digest(model.digest(), cfg_.strict_digest);
}

void Intervention::on_block_output(std::size_t layer, Tensor& hidden, std::span<const PositionRole> roles) const {
    if (!cfg_.targets(layer)) return;
    for (std::size_t k = 0; k < roles.size(); ++k) {
        apply_intervention_inplace(hidden.row(k), roles[k], layer, ds_, cfg_, &log_);
    }
}

// --- validation ---------------------------------------------------------

bool ValidationReport::has_errors() const {
    return std::any_of(entries.begin(), entries.end(),
                       [](const ReportEntry& e) { return e.severity == ReportEntry::Severity::error; });
}

std::string ValidationReport::to_json() const {
    json arr = json::array();
    for (const auto& e : entries) {
        arr.push_back({{"severity", e.severity == ReportEntry::Severity::error ? "error" : "warning"},
                       {"code", e.code},
                       {"message", e.message}});
    }
    return arr.dump();
}

ValidationReport validate_config(const InterventionConfig& cfg, const DirectionSet& ds, const Model& model) {
    ValidationReport report;
    auto add = [&](ReportEntry::Severity s, std::string code, std::string msg) {
        report.entries.push_back({s, std::move(code), std::move(msg)});
    };
    using S = ReportEntry::Severity;
    const std::size_t n = model.config().n_layers;
    const std::size_t d = model.config().d_model;

    for (float x : {cfg.a, cfg.b, cfg.c}) {
        if (!std::isfinite(x)) add(S::error, "non_finite_coefficient", "coefficients must be finite");
    }
    for (auto l : cfg.resolve_layers(n)) {
        if (l < 1 || l > n) {
            add(S::error, "layer_out_of_range",
                "layer " + std::to_string(l) + " outside [1, " + std::to_string(n) + "]");
            continue;
        }
        const std::pair<float, Family> needs[] = {
            {cfg.a, Family::vision}, {cfg.b, Family::crossmodal}, {cfg.c, Family::text}};
        for (const auto& [coeff, family] : needs) {
            if (coeff != 0.0f && !ds.find(l, family)) {
                add(S::warning, "missing_direction",
                    "layer " + std::to_string(l) + " has no " + std::string(to_string(family)) + " direction");
            }
        }
    }
    if (ds.meta.model_digest != model.digest()) {
        add(cfg.strict_digest ? S::error : S::warning, "digest_mismatch",
            "direction set digest " + ds.meta.model_digest + " != model digest " + model.digest());
    }
    for (const auto& [layer, dirs] : ds.layers()) {
        for (Family f : {Family::vision, Family::text, Family::crossmodal}) {
            const auto& dir = dirs.get(f);
            if (!dir) continue;
            const std::string where = "layer " + std::to_string(layer) + " " + std::string(to_string(f));
            if (dir->size() != d) {
                add(S::error, "dim_mismatch", where + " has length " + std::to_string(dir->size()));
                continue;
            }
            const double norm = linalg::norm(*dir);
            if (!(std::abs(norm - 1.0) <= 1e-6)) {
                add(S::error, "bad_norm", where + " has norm " + std::to_string(norm));
            }
        }
    }
    return report;
}

}  // namespace ndesteer
