#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ndesteer/eval.hpp"
#include "ndesteer/perturb.hpp"
#include "ndesteer/tensor.hpp"
#include "ndesteer/vlm.hpp"

// Seeded synthetic inputs for demos, planted-model checks and tests.
namespace ndesteer::synthetic {

// Reserved tokens, function words, colours, "yes"/"no" and object nouns.
std::vector<std::string> demo_vocab();
std::vector<std::string> demo_objects();

// Default model config over demo_vocab().
ToyVlmConfig demo_config(std::uint64_t seed = 0);

// Object swaps between easily confused nouns plus a few phantom phrases.
HallucinationLexicon demo_lexicon();

// Images with pixels uniform in [0, 1).
std::vector<Tensor> random_images(const ToyVlmConfig& config, std::size_t n, std::uint64_t seed);

// Captions of 3..7 random non-reserved vocab words.
std::vector<std::string> random_captions(const Vocabulary& vocab, std::size_t n, std::uint64_t seed);

// Random captions, each with one word replaced by a different random word.
std::vector<CaptionPair> random_caption_pairs(const Vocabulary& vocab, std::size_t n, std::uint64_t seed);

// Template captions ("a red dog on the grass") over demo objects, with a
// rule-hallucinated counterpart.
std::vector<CaptionPair> demo_caption_pairs(std::size_t n, std::uint64_t seed);

// n images named img_0000.. each with present objects drawn from `objects`
// (between min_present and max_present distinct words, both clamped to the
// pool size).
std::vector<AnnotationRecord> random_annotations(std::span<const std::string> objects, std::size_t n,
                                                 std::uint64_t seed, std::size_t min_present = 2,
                                                 std::size_t max_present = 5);

// Judge queries over random categories: the reference names one or two demo
// objects and the response either repeats them, drops one or adds a swap.
std::vector<JudgeQuery> demo_judge_queries(std::size_t n, std::uint64_t seed);

}  // namespace ndesteer::synthetic
