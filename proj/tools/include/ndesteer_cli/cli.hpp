#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ndesteer::cli {

// Everything a subcommand may read. Values come from the defaults below, then
// a --config JSON file (same key names), then command-line flags.
struct RunConfig {
    // paths
    std::string model;
    std::string directions;
    std::string images;       // directory of <image_id>.tnsr files
    std::string pairs;        // caption pair JSONL
    std::string annotations;  // POPE annotation JSONL
    std::string questions;    // POPE question JSONL
    std::string predictions;  // POPE prediction JSONL
    std::string queries;      // MMHal judge query JSONL
    std::string lexicon;
    std::string out;

    // estimation
    std::size_t n_samples = 50;
    std::size_t masks = 5;
    double mask_fraction = 0.25;
    std::size_t mask_block = 2;
    std::size_t pca_dim = 1;
    std::uint64_t seed = 0;
    std::size_t threads = 0;

    // intervention
    double a = 0.9;
    double b = 0.9;
    double c = 0.9;
    std::optional<std::vector<std::size_t>> layers;  // nullopt = all

    // generation
    std::size_t max_new = 4;

    // evaluation
    std::string strategy = "random";
    std::size_t k = 3;
    std::string judge_endpoint;
    bool stub_judge = false;
    std::uint64_t timeout_ms = 10000;
    double threshold = 3.0;

    std::string to_json() const;
    // Keys missing from `text` keep the value in `base`. Unknown keys raise
    // ParseError.
    static RunConfig from_json(std::string_view text, RunConfig base);
    static RunConfig from_json(std::string_view text);
};

std::optional<std::vector<std::size_t>> parse_layers(std::string_view text);  // "all" or "1,2,3"

// args excludes the program name. Results go to `out`, diagnostics to `err`.
// Exit codes: 0 ok, 1 usage, 2 data or format, 3 network.
int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace ndesteer::cli
