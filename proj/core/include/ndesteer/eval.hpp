#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ndesteer/perturb.hpp"
#include "ndesteer/vlm.hpp"

namespace ndesteer {

// --- POPE-style yes/no probing -------------------------------------------

struct AnnotationRecord {
    std::string image_id;
    std::set<std::string> present_objects;
};

// InvariantError on an empty present set or a blank image id; when `vocab` is
// given every object must be a known word.
void validate_annotation(const AnnotationRecord& rec, const Vocabulary* vocab = nullptr);

// JSONL {"image_id": str, "present": [str, ...]}; blank lines skipped,
// ParseError naming path:line otherwise.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

struct CorpusStats {
    std::set<std::string> objects;                   // candidate universe
    std::map<std::string, std::size_t> frequency;    // images containing the object
    std::map<std::pair<std::string, std::string>, std::size_t> cooccurrence;  // key ordered (a < b)

    std::size_t freq(const std::string& o) const;
    std::size_t cooc(const std::string& a, const std::string& b) const;
};

// Counts over the annotations. `extra_objects` join the candidate universe
// with zero counts (e.g. vocabulary objects never annotated).
CorpusStats build_corpus_stats(std::span<const AnnotationRecord> annotations,
                               std::span<const std::string> extra_objects = {});

enum class PopeStrategy { random, popular, adversarial };
std::string_view to_string(PopeStrategy s);
PopeStrategy parse_strategy(std::string_view s);  // ConfigError

enum class Answer { yes, no, unparseable };
std::string_view to_string(Answer a);

struct PopeQuestion {
    std::string question_id;  // "<image_id>:<index>"
    std::string image_id;
    std::string object;
    Answer label = Answer::yes;  // yes or no
    PopeStrategy strategy = PopeStrategy::random;

    std::string prompt() const;  // "is there a <object> in the image"

    friend bool operator==(const PopeQuestion&, const PopeQuestion&) = default;
};

// Per image (input order): k yes-questions drawn uniformly from the present
// objects, then k no-questions from the absent ones (universe minus present):
//   random      : uniform draw
//   popular     : highest frequency
//   adversarial : highest summed co-occurrence with the present objects
// Ties go to the lexicographically smaller word. Draws come from one
// Xorshift64Star(seed) consumed in image order.
// InsufficientObjects when an image lacks k present or k absent candidates.
std::vector<PopeQuestion> build_pope_questions(std::span<const AnnotationRecord> annotations,
                                               const CorpusStats& stats, PopeStrategy strategy,
                                               std::size_t k_per_image, std::uint64_t seed);

std::vector<PopeQuestion> load_pope_questions(const std::filesystem::path& path);
void save_pope_questions(const std::filesystem::path& path, const std::vector<PopeQuestion>& qs);

// Looks at the first sentence only. The first word decides; a first sentence
// that also holds the opposite word is unparseable.
Answer parse_yes_no(std::string_view response);

struct Metrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t unparseable = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;

    std::size_t total() const { return tp + fp + fn + tn; }
    std::string to_json() const;  // flat object
};

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn,
                            std::size_t unparseable = 0);

// Yes is the positive class. An unparseable answer is scored as the wrong
// label. LengthMismatch when the lists differ in size.
Metrics score_pope(std::span<const std::string> responses, std::span<const PopeQuestion> questions);

struct Prediction {
    std::string question_id;
    std::string answer;
};

// JSONL {"question_id": str, "answer": str}
std::vector<Prediction> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds);

// Responses in question order; ParseError on a missing or duplicated id.
std::vector<std::string> align_predictions(std::span<const Prediction> preds,
                                           std::span<const PopeQuestion> questions);

// --- MMHal-style judging ---------------------------------------------------

inline constexpr std::array<std::string_view, 8> mmhal_categories = {
    "attribute", "adversarial", "comparison", "counting", "relation", "environment", "holistic", "other"};

bool is_mmhal_category(std::string_view c);

struct MmhalRecord {
    std::string question_id;
    std::string category;
    double score = 0.0;
};

struct MmhalSummary {
    std::map<std::string, double> category_means;  // only categories with records
    std::vector<std::string> empty_categories;
    double overall = 0.0;  // mean over all records
    double hallucination_rate = 0.0;
    std::size_t n_records = 0;

    std::string to_json() const;
};

// RangeError on an unknown category or a score outside [0, 6] (or NaN);
// a warning per empty category.
MmhalSummary aggregate_mmhal(std::span<const MmhalRecord> records, double hallucination_threshold = 3.0);

struct JudgeQuery {
    std::string question_id;
    std::string category;
    std::string question;
    std::string response;
    std::string reference;
};

// JSONL with the JudgeQuery fields ("question_id", "category", "question",
// "response", "reference").
std::vector<JudgeQuery> load_judge_queries(const std::filesystem::path& path);
void save_judge_queries(const std::filesystem::path& path, const std::vector<JudgeQuery>& qs);

class Judge {
public:
    virtual ~Judge() = default;
    // score in [0, 6]
    virtual double score(const JudgeQuery& q) const = 0;
};

// POST {"question","response","reference","category"} -> {"score": number}
class HttpJudge final : public Judge {
public:
    HttpJudge(std::string endpoint, std::chrono::milliseconds timeout);
    double score(const JudgeQuery& q) const override;

private:
    std::string endpoint_;
    std::chrono::milliseconds timeout_;
};

// Keyword judge: 0 when the response names a hallucination word the
// reference does not, 6 when it names every object of the reference, 3
// otherwise.
class StubJudge final : public Judge {
public:
    explicit StubJudge(const HallucinationLexicon& lexicon);
    double score(const JudgeQuery& q) const override;

private:
    std::set<std::string> objects_;
    std::set<std::string> hallucination_;
};

double judge_request(const std::string& endpoint, const JudgeQuery& q, std::chrono::milliseconds timeout);

// Scores every query (up to `threads` at once, 0 = hardware) and returns the
// records in input order. The first failure is rethrown after all workers stop.
std::vector<MmhalRecord> judge_all(const Judge& judge, std::span<const JudgeQuery> queries,
                                   std::size_t threads = 1);

}  // namespace ndesteer
