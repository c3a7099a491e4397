#include "ndesteer/synthetic.hpp"

#include <algorithm>
#include <cstdio>

#include "ndesteer/errors.hpp"
#include "ndesteer/rng.hpp"

namespace ndesteer::synthetic {

namespace {

const std::vector<std::string> kFunctionWords = {"a", "the", "on", "in", "is", "there", "with", "and",
                                                 "of", "near", "next", "to", "under", "any", "image"};
const std::vector<std::string> kColours = {"red", "blue", "green", "white", "black", "small", "big"};
const std::vector<std::string> kObjects = {"dog",   "cat",    "person", "car",    "bus",   "truck",
                                           "table", "chair",  "fork",   "knife",  "spoon", "cup",
                                           "bottle", "umbrella", "horse", "bird", "tree",  "grass",
                                           "sky",   "boat",   "pizza",  "bench",  "clock", "bowl"};

}  // namespace

std::vector<std::string> demo_objects() { return kObjects; }

std::vector<std::string> demo_vocab() {
    std::vector<std::string> v = {std::string(kUnkToken), std::string(kBosToken), std::string(kEosToken),
                                  "yes", "no"};
    v.insert(v.end(), kFunctionWords.begin(), kFunctionWords.end());
    v.insert(v.end(), kColours.begin(), kColours.end());
    v.insert(v.end(), kObjects.begin(), kObjects.end());
    return v;
}

ToyVlmConfig demo_config(std::uint64_t seed) {
    ToyVlmConfig c;
    c.vocab = demo_vocab();
    c.seed = seed;
    return c;
}

HallucinationLexicon demo_lexicon() {
    HallucinationLexicon lex;
    lex.swaps = {{"dog", "cat"},    {"cat", "dog"},     {"car", "truck"}, {"bus", "car"},
                 {"fork", "knife"}, {"knife", "spoon"}, {"cup", "bowl"},  {"horse", "dog"},
                 {"bird", "clock"}, {"boat", "bus"}};
    lex.phantoms = {"with a red umbrella", "next to a bottle", "near a bench"};
    return lex;
}

std::vector<Tensor> random_images(const ToyVlmConfig& config, std::size_t n, std::uint64_t seed) {
    Xorshift64Star rng(seed);
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor img({config.image_h, config.image_w});
        for (float& v : img.data()) v = static_cast<float>(rng.next_double());
        out.push_back(std::move(img));
    }
    return out;
}

namespace {

std::vector<TokenId> content_ids(const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        const auto id = static_cast<TokenId>(i);
        if (id != vocab.unk() && id != vocab.bos() && id != vocab.eos()) ids.push_back(id);
    }
    if (ids.size() < 2) throw ConfigError("vocabulary needs at least two non-reserved words");
    return ids;
}

std::vector<TokenId> random_word_ids(const std::vector<TokenId>& pool, Xorshift64Star& rng) {
    const std::size_t len = 3 + rng.next_below(5);
    std::vector<TokenId> ids(len);
    for (auto& id : ids) id = pool[rng.next_below(pool.size())];
    return ids;
}

}  // namespace

std::vector<std::string> random_captions(const Vocabulary& vocab, std::size_t n, std::uint64_t seed) {
    const auto pool = content_ids(vocab);
    Xorshift64Star rng(seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(vocab.detokenize(random_word_ids(pool, rng)));
    return out;
}

std::vector<CaptionPair> random_caption_pairs(const Vocabulary& vocab, std::size_t n, std::uint64_t seed) {
    const auto pool = content_ids(vocab);
    Xorshift64Star rng(seed);
    std::vector<CaptionPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ids = random_word_ids(pool, rng);
        auto swapped = ids;
        const std::size_t pos = rng.next_below(ids.size());
        // shift by a nonzero offset so the replacement always differs
        const std::size_t cur = static_cast<std::size_t>(
            std::find(pool.begin(), pool.end(), ids[pos]) - pool.begin());
        swapped[pos] = pool[(cur + 1 + rng.next_below(pool.size() - 1)) % pool.size()];
        out.push_back({vocab.detokenize(ids), vocab.detokenize(swapped), CaptionSource::rule});
    }
    return out;
}

std::vector<CaptionPair> demo_caption_pairs(std::size_t n, std::uint64_t seed) {
    const auto lex = demo_lexicon();
    Xorshift64Star rng(seed);
    const std::vector<std::string> places = {"grass", "table", "bench", "boat"};
    std::vector<CaptionPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& colour = kColours[rng.next_below(kColours.size())];
        const auto& object = kObjects[rng.next_below(kObjects.size())];
        const auto& place = places[rng.next_below(places.size())];
        std::string caption;
        switch (rng.next_below(3)) {
            case 0: caption = "a " + colour + " " + object + " on the " + place; break;
            case 1: caption = "there is a " + object + " near the " + place; break;
            default: caption = "the " + object + " is " + colour; break;
        }
        const std::uint64_t hseed = rng.next_u64();
        out.push_back({caption, hallucinate_caption_rule(caption, lex, hseed), CaptionSource::rule});
    }
    return out;
}

std::vector<AnnotationRecord> random_annotations(std::span<const std::string> objects, std::size_t n,
                                                 std::uint64_t seed, std::size_t min_present,
                                                 std::size_t max_present) {
    if (objects.empty()) throw ConfigError("random_annotations: empty object pool");
    max_present = std::clamp<std::size_t>(max_present, 1, objects.size());
    min_present = std::clamp<std::size_t>(min_present, 1, max_present);
    Xorshift64Star rng(seed);
    std::vector<AnnotationRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> pool(objects.begin(), objects.end());
        const std::size_t k = min_present + rng.next_below(max_present - min_present + 1);
        AnnotationRecord rec;
        char name[32];
        std::snprintf(name, sizeof name, "img_%04zu", i);
        rec.image_id = name;
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t pick = j + rng.next_below(pool.size() - j);
            std::swap(pool[j], pool[pick]);
            rec.present_objects.insert(pool[j]);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<JudgeQuery> demo_judge_queries(std::size_t n, std::uint64_t seed) {
    const auto lex = demo_lexicon();
    Xorshift64Star rng(seed);
    std::vector<JudgeQuery> out;
    for (std::size_t i = 0; i < n; ++i) {
        JudgeQuery q;
        q.question_id = "q" + std::to_string(i);
        q.category = std::string(mmhal_categories[rng.next_below(mmhal_categories.size())]);
        const auto& a = kObjects[rng.next_below(kObjects.size())];
        const auto& b = kObjects[rng.next_below(kObjects.size())];
        q.question = "what is in the image";
        q.reference = "a " + a + " and a " + b;
        switch (rng.next_below(3)) {
            case 0: q.response = "there is a " + a + " and a " + b; break;
            case 1: q.response = "there is a " + a; break;
            default: {
                const auto it = lex.swaps.find(a);
                q.response = "there is a " + (it != lex.swaps.end() ? it->second : std::string("umbrella"));
                break;
            }
        }
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace ndesteer::synthetic
