#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ndesteer/tensor.hpp"
#include "ndesteer/vlm.hpp"

namespace ndesteer {

// Random square-block masking. Blocks are drawn without replacement until
// the masked area reaches `fraction` of the image, i.e.
// ceil(fraction * n_blocks) blocks per mask.
struct MaskSpec {
    std::size_t m = 5;
    double fraction = 0.25;
    std::size_t block = 2;
    std::uint64_t seed = 0;

    // ConfigError unless m >= 1, 0 < fraction <= 1, block >= 1
    void validate() const;
    std::size_t blocks_per_mask(std::size_t image_h, std::size_t image_w) const;
};

// m masked copies of `image`: pixels inside chosen blocks become 0.0, all
// other pixels are copied bit-for-bit. The block choice depends only on the
// spec, so every image masked with the same spec gets the same masks.
std::vector<Tensor> gen_masks(const Tensor& image, const MaskSpec& spec);

Tensor black_image(std::size_t h, std::size_t w);

// n_patches zero embeddings placed directly in the vision slots.
VisionEmbeddings null_visual(const ToyVlmConfig& config);

enum class CaptionSource { file, rule, external };

std::string_view to_string(CaptionSource s);

struct CaptionPair {
    std::string original;
    std::string hallucinated;
    CaptionSource source = CaptionSource::file;
};

// InvariantError if either side is blank or both are equal after whitespace
// normalization.
void validate_caption_pair(const CaptionPair& pair);

struct HallucinationLexicon {
    std::map<std::string, std::string> swaps;  // object word -> plausible substitute
    std::vector<std::string> phantoms;         // phrases appended when nothing swaps

    // InvariantError when a word maps to itself or any lexicon word is missing
    // from `vocab`.
    void validate(const Vocabulary& vocab) const;

    // swap keys, swap targets and the last word of every phantom phrase
    std::vector<std::string> object_words() const;
    // swap targets plus every object word that only occurs in phantom phrases
    std::vector<std::string> hallucination_words() const;

    static HallucinationLexicon from_json(std::string_view text);
    static HallucinationLexicon load(const std::filesystem::path& path);
    std::string to_json() const;
};

// Swaps the first word of `caption` that has a lexicon substitute; when no
// word matches, appends a phantom phrase chosen by Xorshift64Star(seed).
// The result is whitespace-normalized and always differs from the input.
// EmptyLexicon when neither route is available; InvariantError on a blank
// caption.
std::string hallucinate_caption_rule(std::string_view caption, const HallucinationLexicon& lexicon,
                                     std::uint64_t seed);

struct RejectedLine {
    std::size_t line = 0;
    std::string reason;
};

struct CaptionPairFile {
    std::vector<CaptionPair> pairs;
    std::vector<RejectedLine> rejected;
};

// JSONL, one {"original": str, "hallucinated": str} per line; blank lines are
// skipped. Lines that parse but break the pair invariants are rejected and
// reported; malformed lines raise ParseError naming the line.
CaptionPairFile load_caption_pairs(const std::filesystem::path& path);
void save_caption_pairs(const std::filesystem::path& path, const std::vector<CaptionPair>& pairs);

// POSTs {"caption": ...} to `endpoint` (http://host:port/path) and expects
// 200 with {"hallucinated": ...}. NetworkError / TimeoutError on transport
// failure, ProtocolError on a bad status or body, InvariantError when the
// response equals the input.
std::string request_external_hallucination(const std::string& endpoint, std::string_view caption,
                                           std::chrono::milliseconds timeout);

}  // namespace ndesteer
