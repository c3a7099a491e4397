#include "ndesteer/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "http_json.hpp"
#include "ndesteer/diagnostics.hpp"
#include "ndesteer/errors.hpp"
#include "ndesteer/rng.hpp"

namespace ndesteer {

using nlohmann::json;

void MaskSpec::validate() const {
    if (m < 1) throw ConfigError("mask spec: m must be >= 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("mask spec: fraction must be in (0, 1]");
    if (block < 1) throw ConfigError("mask spec: block must be >= 1");
}

std::size_t MaskSpec::blocks_per_mask(std::size_t image_h, std::size_t image_w) const {
    validate();
    if (image_h % block != 0 || image_w % block != 0) {
        throw ConfigError("mask block " + std::to_string(block) + " does not divide image " +
                          std::to_string(image_h) + "x" + std::to_string(image_w));
    }
    const std::size_t n_blocks = (image_h / block) * (image_w / block);
    // the epsilon keeps exact products such as 0.25 * 16 from rounding up
    const auto want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n_blocks) - 1e-9));
    return std::clamp<std::size_t>(want, 1, n_blocks);
}

std::vector<Tensor> gen_masks(const Tensor& image, const MaskSpec& spec) {
    if (image.rank() != 2) throw ShapeError("gen_masks: image must be [H, W]");
    const std::size_t h = image.dim(0), w = image.dim(1);
    const std::size_t count = spec.blocks_per_mask(h, w);
    const std::size_t grid_w = w / spec.block;
    const std::size_t n_blocks = (h / spec.block) * grid_w;

    Xorshift64Star rng(spec.seed);
    std::vector<std::size_t> order(n_blocks);
    std::vector<Tensor> out;
    out.reserve(spec.m);
    for (std::size_t j = 0; j < spec.m; ++j) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t pick = i + static_cast<std::size_t>(rng.next_below(n_blocks - i));
            std::swap(order[i], order[pick]);
        }
        Tensor masked = image;
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t r0 = (order[i] / grid_w) * spec.block;
            const std::size_t c0 = (order[i] % grid_w) * spec.block;
            for (std::size_t r = r0; r < r0 + spec.block; ++r)
                for (std::size_t c = c0; c < c0 + spec.block; ++c) masked.at(r, c) = 0.0f;
        }
        out.push_back(std::move(masked));
    }
    return out;
}

Tensor black_image(std::size_t h, std::size_t w) { return Tensor({h, w}); }

VisionEmbeddings null_visual(const ToyVlmConfig& config) {
    config.validate();
    return VisionEmbeddings{Tensor({config.n_patches(), config.d_model})};
}

std::string_view to_string(CaptionSource s) {
    switch (s) {
        case CaptionSource::file: return "file";
        case CaptionSource::rule: return "rule";
        case CaptionSource::external: return "external";
    }
    return "?";
}

void validate_caption_pair(const CaptionPair& pair) {
    const std::string a = normalize_whitespace(pair.original);
    const std::string b = normalize_whitespace(pair.hallucinated);
    if (a.empty() || b.empty()) throw InvariantError("caption pair has an empty side");
    if (a == b) throw InvariantError("hallucinated caption equals the original");
}

// --- lexicon ------------------------------------------------------------

void HallucinationLexicon::validate(const Vocabulary& vocab) const {
    for (const auto& [from, to] : swaps) {
        if (from == to) throw InvariantError("lexicon maps '" + from + "' to itself");
        for (const auto* w : {&from, &to}) {
            if (!vocab.contains(*w)) throw InvariantError("lexicon word '" + *w + "' is not in the vocab");
        }
    }
    for (const auto& phrase : phantoms) {
        const auto words = split_words(phrase);
        if (words.empty()) throw InvariantError("empty phantom phrase");
        for (const auto& w : words) {
            if (!vocab.contains(w)) throw InvariantError("phantom word '" + w + "' is not in the vocab");
        }
    }
}

std::vector<std::string> HallucinationLexicon::object_words() const {
    std::set<std::string> out;
    for (const auto& [from, to] : swaps) {
        out.insert(from);
        out.insert(to);
    }
    for (const auto& phrase : phantoms) {
        const auto words = split_words(phrase);
        if (!words.empty()) out.insert(words.back());
    }
    return {out.begin(), out.end()};
}

std::vector<std::string> HallucinationLexicon::hallucination_words() const {
    std::set<std::string> sources;
    for (const auto& [from, to] : swaps) sources.insert(from);
    std::set<std::string> out;
    for (const auto& [from, to] : swaps) out.insert(to);
    for (const auto& phrase : phantoms) {
        const auto words = split_words(phrase);
        if (!words.empty() && !sources.contains(words.back())) out.insert(words.back());
    }
    return {out.begin(), out.end()};
}

HallucinationLexicon HallucinationLexicon::from_json(std::string_view text) {
    HallucinationLexicon lex;
    try {
        const json j = json::parse(text);
        if (j.contains("swaps")) lex.swaps = j.at("swaps").get<std::map<std::string, std::string>>();
        if (j.contains("phantoms")) lex.phantoms = j.at("phantoms").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("lexicon JSON: ") + e.what());
    }
    return lex;
}

HallucinationLexicon HallucinationLexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

std::string HallucinationLexicon::to_json() const {
    json j;
    j["swaps"] = swaps;
    j["phantoms"] = phantoms;
    return j.dump(2);
}

std::string hallucinate_caption_rule(std::string_view caption, const HallucinationLexicon& lexicon,
                                     std::uint64_t seed) {
    if (lexicon.swaps.empty() && lexicon.phantoms.empty()) throw EmptyLexicon("hallucination lexicon is empty");
    auto words = split_words(caption);
    if (words.empty()) throw InvariantError("cannot hallucinate an empty caption");
    for (auto& w : words) {
        auto it = lexicon.swaps.find(w);
        if (it != lexicon.swaps.end() && it->second != w) {
            w = it->second;
            std::string out;
            for (const auto& x : words) out += (out.empty() ? "" : " ") + x;
            return out;
        }
    }
    if (lexicon.phantoms.empty()) {
        throw EmptyLexicon("no lexicon word matches the caption and there are no phantom phrases");
    }
    Xorshift64Star rng(seed);
    const auto& phrase = lexicon.phantoms[rng.next_below(lexicon.phantoms.size())];
    return normalize_whitespace(caption) + " " + normalize_whitespace(phrase);
}

// --- caption pair files -------------------------------------------------

CaptionPairFile load_caption_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    CaptionPairFile out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (normalize_whitespace(line).empty()) continue;
        CaptionPair pair;
        try {
            const json j = json::parse(line);
            pair.original = j.at("original").get<std::string>();
            pair.hallucinated = j.at("hallucinated").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        try {
            validate_caption_pair(pair);
        } catch (const InvariantError& e) {
            out.rejected.push_back({lineno, e.what()});
            warn(path.string() + ":" + std::to_string(lineno) + ": rejected: " + e.what());
            continue;
        }
        pair.source = CaptionSource::file;
        out.pairs.push_back(std::move(pair));
    }
    return out;
}

void save_caption_pairs(const std::filesystem::path& path, const std::vector<CaptionPair>& pairs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    for (const auto& p : pairs) {
        json j;
        j["original"] = p.original;
        j["hallucinated"] = p.hallucinated;
        out << j.dump() << '\n';
    }
}

std::string request_external_hallucination(const std::string& endpoint, std::string_view caption,
                                           std::chrono::milliseconds timeout) {
    const json body = detail::post_json(endpoint, json{{"caption", std::string(caption)}}, timeout);
    if (!body.is_object() || !body.contains("hallucinated") || !body["hallucinated"].is_string()) {
        throw ProtocolError("response from " + endpoint + " lacks a string 'hallucinated' field");
    }
    CaptionPair pair{std::string(caption), body["hallucinated"].get<std::string>(), CaptionSource::external};
    validate_caption_pair(pair);
    return pair.hallucinated;
}

}  // namespace ndesteer
