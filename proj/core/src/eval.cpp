#include "ndesteer/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>

#include <json.hpp>

#include "http_json.hpp"
#include "ndesteer/diagnostics.hpp"
#include "ndesteer/errors.hpp"
#include "ndesteer/rng.hpp"
#include "parallel.hpp"

namespace ndesteer {

using nlohmann::json;

namespace {

std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

// Calls fn(json, lineno) for each non-blank line.
template <typename Fn>
void read_jsonl(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (normalize_whitespace(line).empty()) continue;
        try {
            fn(json::parse(line), lineno);
        } catch (const json::exception& e) {
            throw ParseError(where(path, lineno) + ": " + e.what());
        }
    }
}

template <typename T, typename Fn>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items, Fn&& to_json) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    for (const auto& it : items) out << to_json(it).dump() << '\n';
}

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// k picks without replacement from `pool` (partial Fisher-Yates)
std::vector<std::string> draw(std::vector<std::string> pool, std::size_t k, Xorshift64Star& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

// top k by score, ties to the smaller word
std::vector<std::string> top_k(std::vector<std::pair<std::size_t, std::string>> scored, std::size_t k) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
    return out;
}

std::vector<std::string> lower_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

}  // namespace

// --- annotations -------------------------------------------------------------

void validate_annotation(const AnnotationRecord& rec, const Vocabulary* vocab) {
    if (normalize_whitespace(rec.image_id).empty()) throw InvariantError("annotation has a blank image_id");
    if (rec.present_objects.empty()) throw InvariantError("image " + rec.image_id + " has no present objects");
    if (vocab) {
        for (const auto& o : rec.present_objects) {
            if (!vocab->contains(o)) throw InvariantError("image " + rec.image_id + ": '" + o + "' not in vocab");
        }
    }
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
    std::vector<AnnotationRecord> out;
    read_jsonl(path, [&](const json& j, std::size_t lineno) {
        AnnotationRecord rec;
        rec.image_id = j.at("image_id").get<std::string>();
        for (const auto& o : j.at("present")) rec.present_objects.insert(o.get<std::string>());
        try {
            validate_annotation(rec);
        } catch (const InvariantError& e) {
            throw ParseError(where(path, lineno) + ": " + e.what());
        }
        out.push_back(std::move(rec));
    });
    return out;
}

void save_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
    write_jsonl(path, records, [](const AnnotationRecord& r) {
        return json{{"image_id", r.image_id},
                    {"present", std::vector<std::string>(r.present_objects.begin(), r.present_objects.end())}};
    });
}

std::size_t CorpusStats::freq(const std::string& o) const {
    const auto it = frequency.find(o);
    return it == frequency.end() ? 0 : it->second;
}

std::size_t CorpusStats::cooc(const std::string& a, const std::string& b) const {
    const auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    const auto it = cooccurrence.find(key);
    return it == cooccurrence.end() ? 0 : it->second;
}

CorpusStats build_corpus_stats(std::span<const AnnotationRecord> annotations,
                               std::span<const std::string> extra_objects) {
    CorpusStats s;
    for (const auto& o : extra_objects) s.objects.insert(o);
    for (const auto& rec : annotations) {
        for (auto a = rec.present_objects.begin(); a != rec.present_objects.end(); ++a) {
            s.objects.insert(*a);
            ++s.frequency[*a];
            for (auto b = std::next(a); b != rec.present_objects.end(); ++b) ++s.cooccurrence[{*a, *b}];
        }
    }
    return s;
}

// --- POPE ------------------------------------------------------------------

std::string_view to_string(PopeStrategy s) {
    switch (s) {
        case PopeStrategy::random: return "random";
        case PopeStrategy::popular: return "popular";
        case PopeStrategy::adversarial: return "adversarial";
    }
    return "?";
}

PopeStrategy parse_strategy(std::string_view s) {
    if (s == "random") return PopeStrategy::random;
    if (s == "popular") return PopeStrategy::popular;
    if (s == "adversarial") return PopeStrategy::adversarial;
    throw ConfigError("unknown strategy '" + std::string(s) + "' (random, popular, adversarial)");
}

std::string_view to_string(Answer a) {
    switch (a) {
        case Answer::yes: return "yes";
        case Answer::no: return "no";
        case Answer::unparseable: return "unparseable";
    }
    return "?";
}

std::string PopeQuestion::prompt() const { return "is there a " + object + " in the image"; }

std::vector<PopeQuestion> build_pope_questions(std::span<const AnnotationRecord> annotations,
                                               const CorpusStats& stats, PopeStrategy strategy,
                                               std::size_t k_per_image, std::uint64_t seed) {
    if (k_per_image == 0) throw ConfigError("k_per_image must be >= 1");
    Xorshift64Star rng(seed);
    std::vector<PopeQuestion> out;
    for (const auto& rec : annotations) {
        validate_annotation(rec);
        std::vector<std::string> present(rec.present_objects.begin(), rec.present_objects.end());
        std::vector<std::string> absent;
        for (const auto& o : stats.objects) {
            if (!rec.present_objects.count(o)) absent.push_back(o);
        }
        if (present.size() < k_per_image || absent.size() < k_per_image) {
            throw InsufficientObjects("image " + rec.image_id + " has " + std::to_string(present.size()) +
                                      " present and " + std::to_string(absent.size()) + " absent objects, need " +
                                      std::to_string(k_per_image) + " of each");
        }
        const auto yes = draw(present, k_per_image, rng);
        std::vector<std::string> no;
        switch (strategy) {
            case PopeStrategy::random:
                no = draw(absent, k_per_image, rng);
                break;
            case PopeStrategy::popular: {
                std::vector<std::pair<std::size_t, std::string>> scored;
                for (const auto& o : absent) scored.emplace_back(stats.freq(o), o);
                no = top_k(std::move(scored), k_per_image);
                break;
            }
            case PopeStrategy::adversarial: {
                std::vector<std::pair<std::size_t, std::string>> scored;
                for (const auto& o : absent) {
                    std::size_t total = 0;
                    for (const auto& p : present) total += stats.cooc(o, p);
                    scored.emplace_back(total, o);
                }
                no = top_k(std::move(scored), k_per_image);
                break;
            }
        }
        std::size_t idx = 0;
        auto push = [&](const std::string& obj, Answer label) {
            out.push_back({rec.image_id + ":" + std::to_string(idx++), rec.image_id, obj, label, strategy});
        };
        for (const auto& o : yes) push(o, Answer::yes);
        for (const auto& o : no) push(o, Answer::no);
    }
    return out;
}

std::vector<PopeQuestion> load_pope_questions(const std::filesystem::path& path) {
    std::vector<PopeQuestion> out;
    read_jsonl(path, [&](const json& j, std::size_t lineno) {
        PopeQuestion q;
        q.question_id = j.at("question_id").get<std::string>();
        q.image_id = j.at("image_id").get<std::string>();
        q.object = j.at("object").get<std::string>();
        const auto label = j.at("label").get<std::string>();
        if (label != "yes" && label != "no") throw ParseError(where(path, lineno) + ": label must be yes or no");
        q.label = label == "yes" ? Answer::yes : Answer::no;
        try {
            q.strategy = parse_strategy(j.at("strategy").get<std::string>());
        } catch (const ConfigError& e) {
            throw ParseError(where(path, lineno) + ": " + e.what());
        }
        out.push_back(std::move(q));
    });
    return out;
}

void save_pope_questions(const std::filesystem::path& path, const std::vector<PopeQuestion>& qs) {
    write_jsonl(path, qs, [](const PopeQuestion& q) {
        return json{{"question_id", q.question_id},
                    {"image_id", q.image_id},
                    {"object", q.object},
                    {"label", std::string(to_string(q.label))},
                    {"strategy", std::string(to_string(q.strategy))}};
    });
}

Answer parse_yes_no(std::string_view response) {
    const auto end = response.find_first_of(".!?\n");
    const auto words = lower_words(response.substr(0, end));
    if (words.empty()) return Answer::unparseable;
    const bool has_yes = std::find(words.begin(), words.end(), "yes") != words.end();
    const bool has_no = std::find(words.begin(), words.end(), "no") != words.end();
    if (has_yes && has_no) return Answer::unparseable;
    if (words.front() == "yes") return Answer::yes;
    if (words.front() == "no") return Answer::no;
    return Answer::unparseable;
}

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn,
                            std::size_t unparseable) {
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.tn = tn;
    m.unparseable = unparseable;
    m.accuracy = ratio(tp + tn, m.total());
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    const double pr = m.precision + m.recall;
    m.f1 = pr == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / pr;
    return m;
}

std::string Metrics::to_json() const {
    json j;
    j["accuracy"] = accuracy;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    j["tp"] = tp;
    j["fp"] = fp;
    j["fn"] = fn;
    j["tn"] = tn;
    j["unparseable"] = unparseable;
    j["total"] = total();
    return j.dump();
}

Metrics score_pope(std::span<const std::string> responses, std::span<const PopeQuestion> questions) {
    if (responses.size() != questions.size()) {
        throw LengthMismatch("score_pope: " + std::to_string(responses.size()) + " responses for " +
                             std::to_string(questions.size()) + " questions");
    }
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0, bad = 0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        Answer a = parse_yes_no(responses[i]);
        const bool truth = questions[i].label == Answer::yes;
        if (a == Answer::unparseable) {
            ++bad;
            a = truth ? Answer::no : Answer::yes;
        }
        const bool said_yes = a == Answer::yes;
        if (said_yes && truth) ++tp;
        else if (said_yes) ++fp;
        else if (truth) ++fn;
        else ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn, bad);
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    std::vector<Prediction> out;
    read_jsonl(path, [&](const json& j, std::size_t) {
        out.push_back({j.at("question_id").get<std::string>(), j.at("answer").get<std::string>()});
    });
    return out;
}

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
    write_jsonl(path, preds,
                [](const Prediction& p) { return json{{"question_id", p.question_id}, {"answer", p.answer}}; });
}

std::vector<std::string> align_predictions(std::span<const Prediction> preds,
                                           std::span<const PopeQuestion> questions) {
    std::map<std::string, const std::string*> by_id;
    for (const auto& p : preds) {
        if (!by_id.emplace(p.question_id, &p.answer).second) {
            throw ParseError("duplicate prediction for " + p.question_id);
        }
    }
    std::vector<std::string> out;
    out.reserve(questions.size());
    for (const auto& q : questions) {
        const auto it = by_id.find(q.question_id);
        if (it == by_id.end()) throw ParseError("no prediction for " + q.question_id);
        out.push_back(*it->second);
    }
    return out;
}

// --- MMHal ---------------------------------------------------------------

bool is_mmhal_category(std::string_view c) {
    return std::find(mmhal_categories.begin(), mmhal_categories.end(), c) != mmhal_categories.end();
}

std::string MmhalSummary::to_json() const {
    json j;
    j["overall"] = overall;
    j["hallucination_rate"] = hallucination_rate;
    j["n_records"] = n_records;
    for (const auto& [c, m] : category_means) j["category." + c] = m;
    j["empty_categories"] = empty_categories;
    return j.dump();
}

MmhalSummary aggregate_mmhal(std::span<const MmhalRecord> records, double hallucination_threshold) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    MmhalSummary s;
    double total = 0.0;
    std::size_t below = 0;
    for (const auto& r : records) {
        if (!is_mmhal_category(r.category)) {
            throw RangeError("record " + r.question_id + ": unknown category '" + r.category + "'");
        }
        if (!(r.score >= 0.0 && r.score <= 6.0)) {
            throw RangeError("record " + r.question_id + ": score " + std::to_string(r.score) + " outside [0, 6]");
        }
        auto& [sum, n] = acc[r.category];
        sum += r.score;
        ++n;
        total += r.score;
        if (r.score < hallucination_threshold) ++below;
    }
    for (const auto c : mmhal_categories) {
        const auto it = acc.find(std::string(c));
        if (it == acc.end()) {
            s.empty_categories.emplace_back(c);
            warn("mmhal: category '" + std::string(c) + "' has no records");
            continue;
        }
        s.category_means[it->first] = it->second.first / static_cast<double>(it->second.second);
    }
    s.n_records = records.size();
    if (!records.empty()) {
        s.overall = total / static_cast<double>(records.size());
        s.hallucination_rate = ratio(below, records.size());
    }
    return s;
}

std::vector<JudgeQuery> load_judge_queries(const std::filesystem::path& path) {
    std::vector<JudgeQuery> out;
    read_jsonl(path, [&](const json& j, std::size_t lineno) {
        JudgeQuery q;
        q.question_id = j.at("question_id").get<std::string>();
        q.category = j.at("category").get<std::string>();
        q.question = j.at("question").get<std::string>();
        q.response = j.at("response").get<std::string>();
        q.reference = j.at("reference").get<std::string>();
        if (!is_mmhal_category(q.category)) {
            throw ParseError(where(path, lineno) + ": unknown category '" + q.category + "'");
        }
        out.push_back(std::move(q));
    });
    return out;
}

void save_judge_queries(const std::filesystem::path& path, const std::vector<JudgeQuery>& qs) {
    write_jsonl(path, qs, [](const JudgeQuery& q) {
        return json{{"question_id", q.question_id},
                    {"category", q.category},
                    {"question", q.question},
                    {"response", q.response},
                    {"reference", q.reference}};
    });
}

HttpJudge::HttpJudge(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {}

double HttpJudge::score(const JudgeQuery& q) const { return judge_request(endpoint_, q, timeout_); }

double judge_request(const std::string& endpoint, const JudgeQuery& q, std::chrono::milliseconds timeout) {
    const json body = detail::post_json(
        endpoint,
        json{{"question", q.question}, {"response", q.response}, {"reference", q.reference}, {"category", q.category}},
        timeout);
    if (!body.is_object() || !body.contains("score") || !body["score"].is_number()) {
        throw ProtocolError("judge response from " + endpoint + " lacks a numeric 'score'");
    }
    const double s = body["score"].get<double>();
    if (!(s >= 0.0 && s <= 6.0)) throw RangeError("judge score " + body["score"].dump() + " outside [0, 6]");
    return s;
}

StubJudge::StubJudge(const HallucinationLexicon& lexicon) {
    for (const auto& w : lexicon.object_words()) objects_.insert(w);
    for (const auto& w : lexicon.hallucination_words()) hallucination_.insert(w);
}

double StubJudge::score(const JudgeQuery& q) const {
    const auto resp = lower_words(q.response);
    const auto ref = lower_words(q.reference);
    const std::set<std::string> in_resp(resp.begin(), resp.end());
    const std::set<std::string> in_ref(ref.begin(), ref.end());
    for (const auto& w : in_resp) {
        if (hallucination_.count(w) && !in_ref.count(w)) return 0.0;
    }
    for (const auto& w : in_ref) {
        if (objects_.count(w) && !in_resp.count(w)) return 3.0;
    }
    return 6.0;
}

std::vector<MmhalRecord> judge_all(const Judge& judge, std::span<const JudgeQuery> queries, std::size_t threads) {
    std::vector<MmhalRecord> out(queries.size());
    detail::parallel_for(queries.size(), threads, [&](std::size_t i) {
        const auto& q = queries[i];
        out[i] = {q.question_id, q.category, judge.score(q)};
    });
    return out;
}

}  // namespace ndesteer
