#pragma once

#include "freetuner/pipeline.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ft {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;      // bad flags, malformed or invalid config
inline constexpr int kExitNumerical = 2;  // divergence or non-finite math
inline constexpr int kExitIo = 3;         // unreadable or unwritable files

struct SubjectConfig {
    std::string image;           // PPM path
    std::string mask;            // PPM path, gray >= 0.5 means subject
    std::string class_name;      // words that must appear in the prompt
    std::vector<int> placement;  // empty, or {y0, x0, y1, x1}
    int style_index = -1;        // route into the "styles" array (multi-style runs)
};

struct StyleConfig {
    std::string image;
    std::string scope = "whole_image";  // or "subject_only"
};

struct TrainSection {
    int steps = 2500;
    int batch = 4;
    int T = 50;
    double lr = 2e-3;
    double min_lr_frac = 0.1;
    double prompt_dropout = 0.1;
    int image_size = 32;
    DenoiserArch arch;
};

struct AblateSection {
    std::vector<std::uint64_t> seeds = {0, 1, 2};
};

struct DiagSection {
    std::vector<std::string> words;
};

/// One JSON document drives every subcommand; together with the seed it
/// fully determines the run. Unknown keys anywhere are rejected.
struct RunConfig {
    std::string model;  // checkpoint path (generate / ablate / diag)
    std::string out = "out";
    std::uint64_t seed = 0;
    std::string prompt;

    GenerationConfig generation;  // generation.seed is overwritten by `seed`
    NullTextOpts inversion;       // inversion.s follows generation.s

    std::vector<SubjectConfig> subjects;
    bool has_style = false;
    StyleConfig style;
    std::vector<StyleConfig> styles;  // per-subject styles, via style_index
    std::string structure_image;
    double structure_weight = 0.0;

    TrainSection train;
    AblateSection ablate;
    DiagSection diag;

    bool trace = false;
    bool no_style = false;
    bool black_bg = false;
};

/// Parses and validates a config document. Malformed JSON raises
/// std::invalid_argument carrying the line and column of the defect.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Entry point behind the `freetuner` binary: args exclude the program
/// name. Returns one of the kExit* codes and never throws.
int run_cli(const std::vector<std::string>& args);

}  // namespace ft
