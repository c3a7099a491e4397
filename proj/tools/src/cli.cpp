#include "ndesteer_cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ndesteer/diagnostics.hpp"
#include "ndesteer/errors.hpp"
#include "ndesteer/eval.hpp"
#include "ndesteer/intervene.hpp"
#include "ndesteer/nde.hpp"
#include "ndesteer/perturb.hpp"
#include "ndesteer/rng.hpp"
#include "ndesteer/scg.hpp"
#include "ndesteer/synthetic.hpp"
#include "ndesteer/tensor_io.hpp"
#include "ndesteer/vlm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ndesteer::cli {

namespace {

struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// missing inputs, too few samples and similar problems with the data itself
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw data_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write " + p.string());
    out << text;
}

const std::string& need(const std::string& value, const char* flag) {
    if (value.empty()) throw usage_error(std::string("missing required --") + flag);
    return value;
}

// <dir>/*.tnsr sorted by file name
std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw data_error("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".tnsr") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Tensor read_image(const fs::path& p) {
    std::size_t clamped = 0;
    Tensor t = load_image(p, &clamped);
    if (clamped) warn(p.string() + ": clamped " + std::to_string(clamped) + " pixels into [0, 1]");
    return t;
}

// n indices out of `available`, seeded, returned in ascending order
std::vector<std::size_t> pick_samples(std::size_t available, std::size_t n, std::uint64_t seed, const char* what) {
    if (available < n) {
        throw data_error(std::string("need ") + std::to_string(n) + " " + what + ", found " +
                         std::to_string(available));
    }
    std::vector<std::size_t> idx(available);
    for (std::size_t i = 0; i < available; ++i) idx[i] = i;
    Xorshift64Star rng(seed);
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.next_below(available - i)]);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

MaskSpec mask_spec(const RunConfig& rc) {
    MaskSpec s;
    s.m = rc.masks;
    s.fraction = rc.mask_fraction;
    s.block = rc.mask_block;
    s.seed = rc.seed;
    return s;
}

InterventionConfig intervention_config(const RunConfig& rc) {
    InterventionConfig cfg;
    cfg.a = static_cast<float>(rc.a);
    cfg.b = static_cast<float>(rc.b);
    cfg.c = static_cast<float>(rc.c);
    cfg.layers = rc.layers;
    return cfg;
}

std::vector<TokenId> prompt_ids(const Model& model, std::string_view text) {
    std::vector<TokenId> ids{model.vocab().bos()};
    const auto rest = model.vocab().tokenize(text);
    ids.insert(ids.end(), rest.begin(), rest.end());
    return ids;
}

std::string decoded_text(const Model& model, std::vector<TokenId> ids) {
    if (!ids.empty() && ids.back() == model.vocab().eos()) ids.pop_back();
    return model.vocab().detokenize(ids);
}

void emit(std::ostream& out, const json& j) { out << j.dump() << '\n'; }

// --- subcommands ---------------------------------------------------------------

void run_init(const RunConfig& rc, std::size_t n_items, std::ostream& out) {
    const fs::path dir = need(rc.out, "out");
    fs::create_directories(dir / "images");
    const Model model = init_seeded(synthetic::demo_config(rc.seed));
    save_checkpoint(dir / "model.tvlm", model);

    const auto annotations = synthetic::random_annotations(synthetic::demo_objects(), n_items, rc.seed + 1, 3, 6);
    const auto images = synthetic::random_images(model.config(), n_items, rc.seed + 2);
    for (std::size_t i = 0; i < n_items; ++i) {
        save_tensor(dir / "images" / (annotations[i].image_id + ".tnsr"), images[i]);
    }
    save_annotations(dir / "annotations.jsonl", annotations);
    save_caption_pairs(dir / "pairs.jsonl", synthetic::demo_caption_pairs(n_items, rc.seed + 3));
    save_judge_queries(dir / "queries.jsonl", synthetic::demo_judge_queries(n_items, rc.seed + 4));
    write_text(dir / "lexicon.json", synthetic::demo_lexicon().to_json() + "\n");
    write_text(dir / "run.json", RunConfig{}.to_json() + "\n");
    emit(out, {{"out", dir.string()}, {"items", n_items}, {"model_digest", model.digest()}});
}

void run_estimate(const RunConfig& rc, std::ostream& out) {
    const Model model = load_checkpoint(need(rc.model, "model"));
    const auto image_paths = list_images(need(rc.images, "images"));
    const auto pair_file = load_caption_pairs(need(rc.pairs, "pairs"));
    const fs::path dest = need(rc.out, "out");

    std::vector<Tensor> images;
    for (auto i : pick_samples(image_paths.size(), rc.n_samples, rc.seed, "images")) {
        images.push_back(read_image(image_paths[i]));
    }
    std::vector<CaptionPair> pairs;
    std::vector<std::string> captions;
    for (auto i : pick_samples(pair_file.pairs.size(), rc.n_samples, rc.seed, "caption pairs")) {
        pairs.push_back(pair_file.pairs[i]);
        captions.push_back(pair_file.pairs[i].original);
    }

    EstimatorOptions opts;
    if (rc.layers) opts.layers = *rc.layers;
    opts.threads = rc.threads;
    const MaskSpec masks = mask_spec(rc);

    DirectionSet ds;
    ds.meta.n_samples = rc.n_samples;
    ds.meta.masks = masks.m;
    ds.meta.mask_fraction = masks.fraction;
    ds.meta.pca_dim = rc.pca_dim;
    ds.meta.mask_seed = masks.seed;
    ds.meta.sample_seed = rc.seed;
    ds.meta.attention_mode = std::string(to_string(model.config().attention_mode));
    ds.meta.model_digest = model.digest();
    store_estimate(ds, estimate_nde_v(model, images, masks, rc.pca_dim, opts));
    store_estimate(ds, estimate_nde_t(model, pairs, rc.pca_dim, opts));
    store_estimate(ds, estimate_nde_vt(model, captions, rc.pca_dim, opts));
    ds.save(dest);

    json layers = json::array();
    for (const auto& [l, _] : ds.layers()) layers.push_back(l);
    emit(out, {{"out", dest.string()}, {"layers", layers}, {"model_digest", model.digest()}});
}

std::unique_ptr<Intervention> make_intervention(const Model& model, const RunConfig& rc) {
    if (rc.directions.empty()) return nullptr;
    DirectionSet ds = DirectionSet::load(rc.directions);
    const InterventionConfig cfg = intervention_config(rc);
    const auto report = validate_config(cfg, ds, model);
    for (const auto& e : report.entries) {
        if (e.code != "digest_mismatch") warn(e.code + ": " + e.message);
    }
    return std::make_unique<Intervention>(model, std::move(ds), cfg);
}

void run_generate(const RunConfig& rc, const std::string& image, bool use_null, const std::string& prompt,
                  std::ostream& out) {
    const Model model = load_checkpoint(need(rc.model, "model"));
    const auto hook = make_intervention(model, rc);

    if (!rc.questions.empty()) {
        // batch mode: answer every POPE question about its image
        const auto questions = load_pope_questions(rc.questions);
        const fs::path dir = need(rc.images, "images");
        const fs::path dest = need(rc.out, "out");
        std::vector<Prediction> preds;
        for (const auto& q : questions) {
            const Image img{read_image(dir / (q.image_id + ".tnsr"))};
            const auto ids = generate_greedy(model, img, prompt_ids(model, q.prompt()), rc.max_new, hook.get());
            preds.push_back({q.question_id, decoded_text(model, ids)});
        }
        save_predictions(dest, preds);
        emit(out, {{"out", dest.string()}, {"predictions", preds.size()}});
        return;
    }

    if (!image.empty() && use_null) throw usage_error("--image and --null-visual are exclusive");
    VisionInput vision;
    if (!image.empty()) {
        vision = Image{read_image(image)};
    } else if (use_null) {
        vision = null_visual(model.config());
    }
    const auto ids = generate_greedy(model, vision, prompt_ids(model, prompt), rc.max_new, hook.get());
    const json result = {{"ids", ids}, {"text", decoded_text(model, ids)}};
    if (rc.out.empty()) {
        emit(out, result);
    } else {
        write_text(rc.out, result.dump() + "\n");
    }
}

void run_eval_pope(const RunConfig& rc, std::ostream& out) {
    const fs::path dir = need(rc.out, "out");
    fs::create_directories(dir);
    std::vector<PopeQuestion> questions;
    if (!rc.annotations.empty()) {
        const auto annotations = load_annotations(rc.annotations);
        const auto stats = build_corpus_stats(annotations);
        questions = build_pope_questions(annotations, stats, parse_strategy(rc.strategy), rc.k, rc.seed);
        save_pope_questions(dir / "questions.jsonl", questions);
    } else {
        questions = load_pope_questions(need(rc.questions, "questions or --annotations"));
    }
    json result = {{"questions", questions.size()}};
    if (!rc.predictions.empty()) {
        const auto preds = load_predictions(rc.predictions);
        const Metrics m = score_pope(align_predictions(preds, questions), questions);
        write_text(dir / "metrics.json", m.to_json() + "\n");
        result = json::parse(m.to_json());
    }
    emit(out, result);
}

void run_eval_mmhal(const RunConfig& rc, std::ostream& out) {
    const auto queries = load_judge_queries(need(rc.queries, "queries"));
    std::unique_ptr<Judge> judge;
    if (rc.stub_judge && !rc.judge_endpoint.empty()) {
        throw usage_error("--stub-judge and --judge-endpoint are exclusive");
    }
    if (rc.stub_judge) {
        const auto lex = rc.lexicon.empty() ? synthetic::demo_lexicon() : HallucinationLexicon::load(rc.lexicon);
        judge = std::make_unique<StubJudge>(lex);
    } else if (!rc.judge_endpoint.empty()) {
        judge = std::make_unique<HttpJudge>(rc.judge_endpoint, std::chrono::milliseconds(rc.timeout_ms));
    } else {
        throw usage_error("eval-mmhal needs --stub-judge or --judge-endpoint");
    }
    const auto records = judge_all(*judge, queries, rc.threads == 0 ? 4 : rc.threads);
    const auto summary = aggregate_mmhal(records, rc.threshold);
    if (!rc.out.empty()) write_text(rc.out, summary.to_json() + "\n");
    emit(out, json::parse(summary.to_json()));
}

struct ScgArgs {
    std::string spec_path;
    double alpha = 1.0, beta = 1.0, gamma = 1.0, sigma = 0.0;
    std::string fusion = "sum";
    double t = 1.0, v = 1.0, t_star = 0.0, v_star = 0.0, v_null = 0.0;
    bool recovery = false;
    double planted_sigma = 0.05;
};

void run_simulate_scg(const RunConfig& rc, const ScgArgs& args, std::ostream& out) {
    ScgSpec spec;
    if (!args.spec_path.empty()) {
        spec = ScgSpec::from_json(read_text(args.spec_path));
    } else {
        spec.alpha_t = args.alpha;
        spec.beta_v = args.beta;
        spec.gamma_f = args.gamma;
        spec.noise_sigma = args.sigma;
        spec.seed = rc.seed;
        if (args.fusion == "sum") {
            spec.fusion = Fusion::sum;
        } else if (args.fusion == "product") {
            spec.fusion = Fusion::product;
        } else {
            throw usage_error("--fusion must be sum or product");
        }
    }
    spec.validate();
    json result;
    result["spec"] = json::parse(spec.to_json());
    result["y"] = simulate_outcome(spec, args.t, args.v);
    if (spec.noise_sigma == 0.0) {
        result["nde_v"] = oracle_nde(spec, NdeKind::V, args.t, args.v, args.v_star);
        result["nde_t"] = oracle_nde(spec, NdeKind::T, args.t, args.v, args.t_star);
        result["nde_vt"] = oracle_nde(spec, NdeKind::VT, args.t, args.v, args.v_star, args.v_null);
    } else {
        warn("noise_sigma > 0: counterfactual contrasts skipped");
    }

    if (args.recovery) {
        const ToyVlmConfig cfg = synthetic::demo_config(rc.seed);
        const auto u = random_unit_vector(cfg.d_model, rc.seed + 1);
        MaskSpec masks = mask_spec(rc);
        json rec;
        for (Family f : {Family::vision, Family::text, Family::crossmodal}) {
            const auto planted = gen_planted_model(cfg, f, u, 1.0, rc.seed + 2, args.planted_sigma);
            const auto r = planted_recovery(planted, rc.n_samples, masks, rc.seed + 3, rc.pca_dim);
            rec[std::string(family_key(f))] = r.abs_cosine;
        }
        result["recovery"] = {{"n_samples", rc.n_samples}, {"sigma", args.planted_sigma}, {"abs_cosine", rec}};
    }
    if (!rc.out.empty()) write_text(rc.out, result.dump() + "\n");
    emit(out, result);
}

json summarize_tensor(const Tensor& t) {
    json j = {{"kind", "tensor"}, {"shape", t.dims()}};
    if (!t.empty()) {
        double lo = t.values()[0], hi = lo, sum = 0.0;
        for (float x : t.values()) {
            lo = std::min<double>(lo, x);
            hi = std::max<double>(hi, x);
            sum += x;
        }
        j["min"] = lo;
        j["max"] = hi;
        j["mean"] = sum / static_cast<double>(t.size());
    }
    return j;
}

void run_inspect(const std::string& path, std::ostream& out) {
    const std::string bytes = read_text(path);
    json j;
    if (bytes.rfind("TVLM", 0) == 0) {
        const Model model = load_checkpoint(path);
        j = {{"kind", "checkpoint"}, {"digest", model.digest()}, {"config", json::parse(model.config().to_json())}};
        json sections = json::array();
        std::size_t params = 0;
        for (const auto& [name, shape] : section_shapes(model.config())) {
            sections.push_back({{"name", name}, {"shape", shape}});
            params += shape_product(shape);
        }
        j["sections"] = sections;
        j["parameters"] = params;
    } else if (bytes.rfind("TNSR", 0) == 0) {
        j = summarize_tensor(load_tensor(path));
    } else {
        json doc;
        bool single = true;
        try {
            doc = json::parse(bytes);
        } catch (const json::exception&) {
            single = false;
        }
        if (single && doc.is_object() && doc.contains("meta") && doc.contains("layers")) {
            const auto ds = DirectionSet::from_json(bytes);
            j = {{"kind", "directions"}, {"meta", doc["meta"]}};
            json layers = json::object();
            for (const auto& [l, dirs] : ds.layers()) {
                json fams = json::array();
                for (Family f : {Family::vision, Family::text, Family::crossmodal}) {
                    if (dirs.get(f)) fams.push_back(family_key(f));
                }
                layers[std::to_string(l)] = fams;
            }
            j["layers"] = layers;
        } else if (single) {
            j = {{"kind", "json"}, {"value", doc}};
        } else {
            std::istringstream in(bytes);
            std::string line;
            std::size_t n = 0, lineno = 0;
            json first;
            while (std::getline(in, line)) {
                ++lineno;
                if (normalize_whitespace(line).empty()) continue;
                try {
                    auto rec = json::parse(line);
                    if (n++ == 0) first = std::move(rec);
                } catch (const json::exception& e) {
                    throw ParseError(path + ":" + std::to_string(lineno) + ": not JSON or JSONL: " + e.what());
                }
            }
            j = {{"kind", "jsonl"}, {"records", n}, {"first", first}};
        }
    }
    out << j.dump(2) << '\n';
}

std::optional<std::string> find_config_flag(std::span<const std::string> args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw usage_error("--config needs a file");
            return args[i + 1];
        }
        if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
    }
    return std::nullopt;
}

}  // namespace

// --- RunConfig ------------------------------------------------------------------

std::optional<std::vector<std::size_t>> parse_layers(std::string_view text) {
    if (text == "all") return std::nullopt;
    std::vector<std::size_t> out;
    std::string item;
    std::istringstream in{std::string(text)};
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            const auto v = std::stoul(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad layer list '" + std::string(text) + "' (use \"all\" or e.g. 1,2,3)");
        }
    }
    if (out.empty()) throw ConfigError("empty layer list");
    return out;
}

std::string RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["model"] = model;
    j["directions"] = directions;
    j["images"] = images;
    j["pairs"] = pairs;
    j["annotations"] = annotations;
    j["questions"] = questions;
    j["predictions"] = predictions;
    j["queries"] = queries;
    j["lexicon"] = lexicon;
    j["out"] = out;
    j["n_samples"] = n_samples;
    j["masks"] = masks;
    j["mask_fraction"] = mask_fraction;
    j["mask_block"] = mask_block;
    j["pca_dim"] = pca_dim;
    j["seed"] = seed;
    j["threads"] = threads;
    j["a"] = a;
    j["b"] = b;
    j["c"] = c;
    j["layers"] = layers ? nlohmann::ordered_json(*layers) : nlohmann::ordered_json("all");
    j["max_new"] = max_new;
    j["strategy"] = strategy;
    j["k"] = k;
    j["judge_endpoint"] = judge_endpoint;
    j["stub_judge"] = stub_judge;
    j["timeout_ms"] = timeout_ms;
    j["threshold"] = threshold;
    return j.dump();
}

RunConfig RunConfig::from_json(std::string_view text, RunConfig base) {
    RunConfig rc = std::move(base);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("run config: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("run config must be a JSON object");
    const json defaults = json::parse(RunConfig{}.to_json());
    try {
        for (const auto& [key, value] : j.items()) {
            if (!defaults.contains(key)) throw ParseError("run config: unknown key '" + key + "'");
        }
        auto str = [&](const char* key, std::string& dst) {
            if (j.contains(key)) dst = j[key].get<std::string>();
        };
        auto num = [&](const char* key, auto& dst) {
            if (j.contains(key)) dst = j[key].get<std::decay_t<decltype(dst)>>();
        };
        str("model", rc.model);
        str("directions", rc.directions);
        str("images", rc.images);
        str("pairs", rc.pairs);
        str("annotations", rc.annotations);
        str("questions", rc.questions);
        str("predictions", rc.predictions);
        str("queries", rc.queries);
        str("lexicon", rc.lexicon);
        str("out", rc.out);
        num("n_samples", rc.n_samples);
        num("masks", rc.masks);
        num("mask_fraction", rc.mask_fraction);
        num("mask_block", rc.mask_block);
        num("pca_dim", rc.pca_dim);
        num("seed", rc.seed);
        num("threads", rc.threads);
        num("a", rc.a);
        num("b", rc.b);
        num("c", rc.c);
        if (j.contains("layers")) {
            const auto& l = j["layers"];
            if (l.is_string()) {
                rc.layers = parse_layers(l.get<std::string>());
            } else {
                rc.layers = l.get<std::vector<std::size_t>>();
            }
        }
        num("max_new", rc.max_new);
        str("strategy", rc.strategy);
        num("k", rc.k);
        str("judge_endpoint", rc.judge_endpoint);
        num("stub_judge", rc.stub_judge);
        num("timeout_ms", rc.timeout_ms);
        num("threshold", rc.threshold);
    } catch (const json::exception& e) {
        throw ParseError(std::string("run config: ") + e.what());
    }
    return rc;
}

RunConfig RunConfig::from_json(std::string_view text) { return from_json(text, RunConfig{}); }

// --- dispatch ------------------------------------------------------------------

int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    const auto previous = set_warning_handler([&err](std::string_view msg) { err << "warning: " << msg << '\n'; });
    struct restore {
        WarningHandler h;
        ~restore() { set_warning_handler(std::move(h)); }
    } restore_handler{previous};

    CLI::App app{"Direct-effect steering toolkit for a toy vision-language model", "ndesteer"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    RunConfig rc;
    std::string layers_text;
    std::string config_path;
    std::size_t init_items = 64;
    std::string gen_image, gen_prompt = "describe the image";
    bool gen_null = false;
    std::string inspect_path;
    ScgArgs scg;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run config; flags override its values");
        sub->add_option("--seed", rc.seed, "Seed for every random draw");
        sub->add_option("--out", rc.out, "Output file or directory");
        sub->add_option("--threads", rc.threads, "Worker threads (0 = hardware)");
    };
    auto model_flags = [&](CLI::App* sub) { sub->add_option("--model", rc.model, "Model checkpoint (.tvlm)"); };
    auto steer_flags = [&](CLI::App* sub) {
        sub->add_option("--directions", rc.directions, "Direction set JSON; omit for no intervention");
        sub->add_option("--a", rc.a, "Vision coefficient");
        sub->add_option("--b", rc.b, "Cross-modal coefficient");
        sub->add_option("--c", rc.c, "Text coefficient");
        sub->add_option("--layers", layers_text, "Layers to edit or estimate: all or a list like 1,2");
    };

    auto* init = app.add_subcommand("init", "Write a demo model, images, captions, annotations and queries");
    common(init);
    init->add_option("--items", init_items, "Images, caption pairs and queries to write")->check(CLI::PositiveNumber);

    auto* estimate = app.add_subcommand("estimate", "Estimate vision, text and cross-modal directions");
    common(estimate);
    model_flags(estimate);
    estimate->add_option("--layers", layers_text, "Layers to estimate: all or a list like 1,2");
    estimate->add_option("--images", rc.images, "Directory of .tnsr images");
    estimate->add_option("--pairs", rc.pairs, "Caption pair JSONL");
    estimate->add_option("--n-samples", rc.n_samples, "Samples per family")->check(CLI::PositiveNumber);
    estimate->add_option("--masks", rc.masks, "Masked copies per image")->check(CLI::PositiveNumber);
    estimate->add_option("--mask-fraction", rc.mask_fraction, "Masked share of the image");
    estimate->add_option("--mask-block", rc.mask_block, "Mask block side in pixels");
    estimate->add_option("--pca-dim", rc.pca_dim, "Principal components per layer")->check(CLI::PositiveNumber);

    auto* generate = app.add_subcommand("generate", "Greedy decoding with optional intervention");
    common(generate);
    model_flags(generate);
    steer_flags(generate);
    generate->add_option("--image", gen_image, "Image tensor (.tnsr)");
    generate->add_flag("--null-visual", gen_null, "Use zero vision embeddings");
    generate->add_option("--prompt", gen_prompt, "Prompt text");
    generate->add_option("--max-new", rc.max_new, "Tokens to generate")->check(CLI::PositiveNumber);
    generate->add_option("--questions", rc.questions, "Answer a POPE question file instead (needs --images)");
    generate->add_option("--images", rc.images, "Directory of <image_id>.tnsr for --questions");

    auto* pope = app.add_subcommand("eval-pope", "Build POPE questions and score predictions");
    common(pope);
    pope->add_option("--annotations", rc.annotations, "Annotation JSONL to build questions from");
    pope->add_option("--questions", rc.questions, "Existing question JSONL");
    pope->add_option("--predictions", rc.predictions, "Prediction JSONL to score");
    pope->add_option("--strategy", rc.strategy, "Negative sampling")
        ->check(CLI::IsMember({"random", "popular", "adversarial"}));
    pope->add_option("--k", rc.k, "Yes and no questions per image")->check(CLI::PositiveNumber);

    auto* mmhal = app.add_subcommand("eval-mmhal", "Judge responses and aggregate per category");
    common(mmhal);
    mmhal->add_option("--queries", rc.queries, "Judge query JSONL");
    mmhal->add_option("--judge-endpoint", rc.judge_endpoint, "http://host:port/path of a remote judge");
    mmhal->add_flag("--stub-judge", rc.stub_judge, "Use the keyword judge");
    mmhal->add_option("--lexicon", rc.lexicon, "Lexicon JSON for the keyword judge");
    mmhal->add_option("--timeout-ms", rc.timeout_ms, "Per-request timeout");
    mmhal->add_option("--threshold", rc.threshold, "Scores below this count as hallucinations");

    auto* sim = app.add_subcommand("simulate-scg", "Causal-graph contrasts and planted-direction recovery");
    common(sim);
    sim->add_option("--spec", scg.spec_path, "Spec JSON (otherwise built from flags)");
    sim->add_option("--alpha", scg.alpha, "Text weight");
    sim->add_option("--beta", scg.beta, "Vision weight");
    sim->add_option("--gamma", scg.gamma, "Fusion weight");
    sim->add_option("--fusion", scg.fusion, "sum or product");
    sim->add_option("--sigma", scg.sigma, "Outcome noise");
    sim->add_option("--t", scg.t, "Text input");
    sim->add_option("--v", scg.v, "Vision input");
    sim->add_option("--t-star", scg.t_star, "Treated text input");
    sim->add_option("--v-star", scg.v_star, "Treated vision input");
    sim->add_option("--v-null", scg.v_null, "Null vision input");
    sim->add_flag("--recovery", scg.recovery, "Also run planted-direction recovery for every family");
    sim->add_option("--planted-sigma", scg.planted_sigma, "Noise of the planted models");
    sim->add_option("--n-samples", rc.n_samples, "Samples for recovery")->check(CLI::PositiveNumber);
    sim->add_option("--masks", rc.masks, "Masked copies per image")->check(CLI::PositiveNumber);
    sim->add_option("--pca-dim", rc.pca_dim, "Principal components")->check(CLI::PositiveNumber);

    auto* inspect = app.add_subcommand("inspect", "Describe a checkpoint, tensor, direction set or JSON(L) file");
    inspect->add_option("file", inspect_path, "File to inspect")->required();

    auto* config = app.add_subcommand("config", "Print the effective run config");
    common(config);
    model_flags(config);
    steer_flags(config);
    config->add_option("--n-samples", rc.n_samples, "Samples per family");
    config->add_option("--pca-dim", rc.pca_dim, "Principal components per layer");
    config->add_option("--masks", rc.masks, "Masked copies per image");

    try {
        if (const auto path = find_config_flag(args)) rc = RunConfig::from_json(read_text(*path));
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        if (!layers_text.empty()) rc.layers = parse_layers(layers_text);

        if (*init) {
            run_init(rc, init_items, out);
        } else if (*estimate) {
            run_estimate(rc, out);
        } else if (*generate) {
            run_generate(rc, gen_image, gen_null, gen_prompt, out);
        } else if (*pope) {
            run_eval_pope(rc, out);
        } else if (*mmhal) {
            run_eval_mmhal(rc, out);
        } else if (*sim) {
            run_simulate_scg(rc, scg, out);
        } else if (*inspect) {
            run_inspect(inspect_path, out);
        } else if (*config) {
            out << nlohmann::ordered_json::parse(rc.to_json()).dump(2) << '\n';
        }
        return 0;
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    } catch (const usage_error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const NetworkError& e) {
        err << "network error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace ndesteer::cli
