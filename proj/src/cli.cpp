#include "freetuner/cli.hpp"

#include "freetuner/autoencoder.hpp"
#include "freetuner/dataset.hpp"
#include "freetuner/errors.hpp"
#include "freetuner/image.hpp"
#include "freetuner/rng.hpp"
#include "freetuner/sampler.hpp"
#include "freetuner/schedule.hpp"
#include "freetuner/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace ft {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    if (!f && !f.eof()) throw IoError("read failed: " + path);
    return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
}

// ---- config parsing -------------------------------------------------------

void expect_keys(const json& j, const std::string& where,
                 std::initializer_list<const char*> allowed) {
    check_arg(j.is_object(), where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        check_arg(known, "unknown config key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
void take(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

BoxRegion parse_box(const json& a, const std::string& where) {
    check_arg(a.is_array() && a.size() == 4, where + " must be [y0,x0,y1,x1]");
    return BoxRegion{a[0].get<int>(), a[1].get<int>(), a[2].get<int>(), a[3].get<int>()};
}

void parse_generation(const json& j, GenerationConfig& g) {
    expect_keys(j, "generation",
                {"T", "tau", "content_steps", "s", "lambda_l", "lambda_s", "lambda_c",
                 "extractor_seed", "full_res_layers_only", "verbatim_outer_box",
                 "invert_blend_mask", "clip_norm", "sa_swap_steps", "latent_swap_steps"});
    take(j, "T", g.T);
    take(j, "tau", g.tau);
    take(j, "content_steps", g.content_steps);
    take(j, "s", g.s);
    take(j, "lambda_l", g.lambda_l);
    take(j, "lambda_s", g.lambda_s);
    take(j, "lambda_c", g.lambda_c);
    take(j, "extractor_seed", g.extractor_seed);
    take(j, "full_res_layers_only", g.full_res_layers_only);
    take(j, "verbatim_outer_box", g.verbatim_outer_box);
    take(j, "invert_blend_mask", g.invert_blend_mask);
    take(j, "clip_norm", g.clip_norm);
    // Naming either step list replaces the derived swap schedule outright:
    // an absent list then means "that swap is off", not "use the default".
    if (j.contains("sa_swap_steps") || j.contains("latent_swap_steps")) {
        SwapSchedule sw;
        sw.tau = g.tau;
        if (j.contains("sa_swap_steps"))
            for (int v : j.at("sa_swap_steps").get<std::vector<int>>()) sw.sa_swap_steps.insert(v);
        if (j.contains("latent_swap_steps"))
            for (int v : j.at("latent_swap_steps").get<std::vector<int>>())
                sw.latent_swap_steps.insert(v);
        g.swaps = sw;
    }
}

SubjectConfig parse_subject(const json& j, const std::string& where) {
    expect_keys(j, where, {"image", "mask", "class", "placement", "style_index"});
    SubjectConfig s;
    take(j, "image", s.image);
    take(j, "mask", s.mask);
    take(j, "class", s.class_name);
    take(j, "style_index", s.style_index);
    if (j.contains("placement")) {
        const BoxRegion b = parse_box(j.at("placement"), where + ".placement");
        s.placement = {b.y0, b.x0, b.y1, b.x1};
    }
    check_arg(!s.image.empty() && !s.mask.empty() && !s.class_name.empty(),
              where + " needs image, mask, and class");
    return s;
}

StyleConfig parse_style(const json& j, const std::string& where) {
    expect_keys(j, where, {"image", "scope"});
    StyleConfig s;
    take(j, "image", s.image);
    take(j, "scope", s.scope);
    check_arg(!s.image.empty(), where + " needs an image");
    check_arg(s.scope == "whole_image" || s.scope == "subject_only",
              where + ".scope must be whole_image or subject_only");
    return s;
}

void parse_train(const json& j, TrainSection& t) {
    expect_keys(j, "train",
                {"steps", "batch", "T", "lr", "min_lr_frac", "prompt_dropout", "image_size",
                 "arch"});
    take(j, "steps", t.steps);
    take(j, "batch", t.batch);
    take(j, "T", t.T);
    take(j, "lr", t.lr);
    take(j, "min_lr_frac", t.min_lr_frac);
    take(j, "prompt_dropout", t.prompt_dropout);
    take(j, "image_size", t.image_size);
    if (j.contains("arch")) {
        const json& a = j.at("arch");
        expect_keys(a, "train.arch", {"latent_hw", "c1", "c2", "d_text", "d_time", "seed"});
        take(a, "latent_hw", t.arch.latent_hw);
        take(a, "c1", t.arch.c1);
        take(a, "c2", t.arch.c2);
        take(a, "d_text", t.arch.d_text);
        take(a, "d_time", t.arch.d_time);
        take(a, "seed", t.arch.seed);
    }
}

std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    const std::size_t n = std::min(byte > 0 ? byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

StyleScope scope_of(const StyleConfig& s) {
    return s.scope == "subject_only" ? StyleScope::subject_only : StyleScope::whole_image;
}

// ---- shared command plumbing ----------------------------------------------

std::vector<SubjectSpec> load_subjects(const Denoiser& model, const NoiseSchedule& sched,
                                       const RunConfig& rc) {
    PreprocessOpts opts;
    opts.inversion = rc.inversion;
    opts.inversion.s = rc.generation.s;
    opts.black_bg = rc.black_bg;
    std::vector<SubjectSpec> out;
    for (const auto& sc : rc.subjects) {
        const Tensor img = load_ppm(sc.image);
        const Tensor mask = load_mask(sc.mask);
        BoxRegion box{};
        const bool placed = !sc.placement.empty();
        if (placed) box = BoxRegion{sc.placement[0], sc.placement[1], sc.placement[2],
                                    sc.placement[3]};
        SubjectSpec spec = preprocess_subject(model, sched, img, mask, sc.class_name,
                                              placed ? &box : nullptr, opts);
        spec.style_index = sc.style_index;
        out.push_back(std::move(spec));
    }
    return out;
}

std::vector<std::string> subject_words(const std::vector<SubjectSpec>& subjects) {
    std::vector<std::string> words;
    for (const auto& sub : subjects) {
        std::istringstream in(sub.class_name);
        std::string w;
        while (in >> w)
            if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    }
    return words;
}

int thread_cap() {
    int cap = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("FREETUNER_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        check_arg(end && *end == '\0' && v >= 1, "FREETUNER_THREADS must be a positive integer");
        cap = static_cast<int>(std::min(v, 256L));
    }
    return cap;
}

// ---- commands --------------------------------------------------------------

int cmd_train_toy(const RunConfig& rc, const std::string& config_text) {
    const TrainSection& ts = rc.train;
    check_arg(ts.image_size == 2 * ts.arch.latent_hw,
              "train.image_size must be twice train.arch.latent_hw");
    const ToyDataset dataset(ts.image_size);
    TrainConfig tc;
    tc.steps = ts.steps;
    tc.batch = ts.batch;
    tc.T = ts.T;
    tc.lr = ts.lr;
    tc.min_lr_frac = ts.min_lr_frac;
    tc.prompt_dropout = ts.prompt_dropout;
    tc.seed = rc.seed;
    const TrainResult result = train_toy(dataset, ts.arch, tc);
    fs::create_directories(rc.out);
    result.model.save(rc.out + "/toy_model.ftck");
    write_loss_csv(rc.out + "/loss.csv", result.loss_curve);
    write_file(rc.out + "/config.json", config_text);
    return kExitOk;
}

int cmd_generate(const RunConfig& rc, const std::string& config_text) {
    check_arg(!rc.prompt.empty(), "generate needs a prompt");
    check_arg(!rc.model.empty(), "generate needs a model checkpoint");
    const Denoiser model = Denoiser::load(rc.model);
    const NoiseSchedule sched = make_schedule(rc.generation.T);
    const PerceptualEncoder enc =
        build_extractor(static_cast<unsigned>(rc.generation.extractor_seed));

    GenerationConfig g = rc.generation;
    g.seed = rc.seed;
    if (!rc.structure_image.empty()) {
        ExternalCondition cond;
        cond.kind = ExternalConditionKind::structure_map;
        cond.structure_edges = edges(load_ppm(rc.structure_image));
        cond.weight = rc.structure_weight;
        g = attach_external_condition(std::move(g), cond);
    }
    // Without a style stage every step runs content-stage behavior.
    if (rc.no_style) g.content_steps = g.T;

    const std::vector<SubjectSpec> subjects = load_subjects(model, sched, rc);
    GenerationTrace tr;
    GenerationTrace* trp = rc.trace ? &tr : nullptr;

    Tensor img;
    if (!rc.styles.empty() && !rc.no_style) {
        std::vector<StyleSpec> styles;
        for (const auto& sc : rc.styles) styles.push_back({load_ppm(sc.image), scope_of(sc)});
        img = generate_multi_style(model, sched, enc, g, subjects, styles, rc.prompt, trp);
    } else {
        StyleSpec style;
        const bool styled = rc.has_style && !rc.no_style;
        if (styled) style = StyleSpec{load_ppm(rc.style.image), scope_of(rc.style)};
        img = generate(model, sched, enc, g, subjects, styled ? &style : nullptr, rc.prompt, trp);
    }

    fs::create_directories(rc.out);
    save_ppm(rc.out + "/image.ppm", img);
    if (trp) write_trace(rc.out + "/trace", tr, model.tokenize(rc.prompt), subject_words(subjects));
    write_file(rc.out + "/config.json", config_text);
    return kExitOk;
}

struct AblationRow {
    int cell = 0;
    std::uint64_t seed = 0;
    bool on[6] = {};  // ca_swap, sa_swap, latent_swap, spatial, style, content
    double subject_mse = 0.0;
    double style_distance = 0.0;
};

int cmd_ablate(const RunConfig& rc, const std::string& config_text) {
    check_arg(!rc.prompt.empty(), "ablate needs a prompt");
    check_arg(!rc.model.empty(), "ablate needs a model checkpoint");
    check_arg(!rc.subjects.empty(), "ablate needs at least one subject");
    check_arg(rc.has_style, "ablate needs a style image");
    check_arg(!rc.ablate.seeds.empty(), "ablate needs at least one seed");
    const Denoiser model = Denoiser::load(rc.model);
    const NoiseSchedule sched = make_schedule(rc.generation.T);
    const PerceptualEncoder enc =
        build_extractor(static_cast<unsigned>(rc.generation.extractor_seed));
    const std::vector<SubjectSpec> subjects = load_subjects(model, sched, rc);
    const StyleSpec style{load_ppm(rc.style.image), scope_of(rc.style)};

    // Reference reconstructions: what the inversion replays for each subject.
    std::vector<Tensor> recon;
    for (const auto& sub : subjects)
        recon.push_back(decode(
            record_reconstruction(model, sched, sub.inversion, sub.prompt, rc.generation.s)
                .z_sub_after(1)));

    constexpr int kCells = 1 << 6;
    const std::size_t total = static_cast<std::size_t>(kCells) * rc.ablate.seeds.size();
    std::vector<AblationRow> rows(total);
    std::vector<Tensor> images(total);

    auto run_one = [&](std::size_t idx) {
        const int cell = static_cast<int>(idx / rc.ablate.seeds.size());
        const std::uint64_t seed = rc.ablate.seeds[idx % rc.ablate.seeds.size()];
        AblationRow row;
        row.cell = cell;
        row.seed = seed;
        for (int b = 0; b < 6; ++b) row.on[b] = (cell >> b) & 1;

        GenerationConfig g = rc.generation;
        g.seed = seed;
        SwapSchedule sw = default_swap_schedule(g.T, g.content_steps, g.tau);
        if (!row.on[0]) sw.tau = 0.0;  // CA swap window empty
        if (!row.on[1]) sw.sa_swap_steps.clear();
        if (!row.on[2]) sw.latent_swap_steps.clear();
        g.swaps = sw;
        if (!row.on[3]) g.lambda_l = 0.0;
        if (!row.on[4]) g.lambda_s = 0.0;
        if (!row.on[5]) g.lambda_c = 0.0;

        const Tensor img = generate(model, sched, enc, g, subjects, &style, rc.prompt);
        double mse = 0.0;
        for (std::size_t k = 0; k < subjects.size(); ++k) {
            const Tensor& mask = subjects[k].mask;
            double acc = 0.0, area = 0.0;
            for (int c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < mask.numel(); ++p)
                    if (mask.at(p) == 1.0) {
                        const double d = img.at(static_cast<std::size_t>(c) * mask.numel() + p) -
                                         recon[k].at(static_cast<std::size_t>(c) * mask.numel() + p);
                        acc += d * d;
                        area += 1.0;
                    }
            mse += acc / area;
        }
        row.subject_mse = mse / static_cast<double>(subjects.size());
        row.style_distance = style_energy(img, style.image, enc).value();
        rows[idx] = row;
        images[idx] = img;
    };

    const int workers =
        std::min<int>(thread_cap(), static_cast<int>(total));
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex err_mx;
    auto worker = [&] {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= total || failed.load()) return;
            try {
                run_one(idx);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mx);
                if (!first_error) first_error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);

    fs::create_directories(rc.out);
    std::ofstream report(rc.out + "/report.csv");
    if (!report) throw IoError("cannot open for writing: " + rc.out + "/report.csv");
    report << "cell,seed,ca_swap,sa_swap,latent_swap,spatial,style,content,"
              "subject_mse,style_distance\n";
    for (const auto& row : rows) {
        report << row.cell << "," << row.seed;
        for (bool b : row.on) report << "," << (b ? 1 : 0);
        report << "," << row.subject_mse << "," << row.style_distance << "\n";
    }
    if (!report) throw IoError("write failed: " + rc.out + "/report.csv");

    // 8x8 montage per seed, cells in index order.
    const int H = images[0].dim(1), W = images[0].dim(2);
    for (std::size_t si = 0; si < rc.ablate.seeds.size(); ++si) {
        std::vector<double> grid(static_cast<std::size_t>(3) * 8 * H * 8 * W, 0.0);
        for (int cell = 0; cell < kCells; ++cell) {
            const Tensor& img = images[static_cast<std::size_t>(cell) * rc.ablate.seeds.size() + si];
            const int gy = (cell / 8) * H, gx = (cell % 8) * W;
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        grid[(static_cast<std::size_t>(c) * 8 * H + gy + y) * 8 * W + gx + x] =
                            img.at((static_cast<std::size_t>(c) * H + y) * W + x);
        }
        save_ppm(rc.out + "/grid_seed" + std::to_string(rc.ablate.seeds[si]) + ".ppm",
                 Tensor(Shape{3, 8 * H, 8 * W}, std::move(grid)));
    }
    write_file(rc.out + "/config.json", config_text);
    return kExitOk;
}

int cmd_diag(const RunConfig& rc, const std::string& config_text) {
    check_arg(!rc.prompt.empty(), "diag needs a prompt");
    check_arg(!rc.model.empty(), "diag needs a model checkpoint");
    check_arg(!rc.diag.words.empty(), "diag needs at least one word");
    const Denoiser model = Denoiser::load(rc.model);
    const NoiseSchedule sched = make_schedule(rc.generation.T);
    const PromptEmbedding prompt = model.tokenize(rc.prompt);
    const PromptEmbedding null_emb = model.null_prompt();
    for (const auto& w : rc.diag.words)
        check_arg(prompt.word_index_map.count(w) > 0,
                  "diag word \"" + w + "\" is not in the prompt");

    const int T = sched.T;
    const int hw = model.arch().latent_hw;
    const int C = model.arch().latent_ch;
    const std::size_t plane = static_cast<std::size_t>(hw) * hw;

    Rng rng(rc.seed);
    Tensor z = random_latent(model.arch(), rng);
    std::map<std::string, std::vector<double>> heat;
    for (const auto& w : rc.diag.words) heat[w].assign(plane, 0.0);
    std::vector<double> rows_flat(static_cast<std::size_t>(T) * plane * C);

    for (int t = T; t >= 1; --t) {
        std::vector<AttentionRecord> recs;
        const Tensor eps = cfg_eps(model, z, t, prompt, null_emb, rc.generation.s, nullptr, &recs);
        const AttentionRecord* full = nullptr;
        for (const auto& r : recs)
            if (r.is_cross && (!full || r.h > full->h)) full = &r;
        check_arg(full != nullptr, "conditional pass produced no cross-attention records");
        const int K = full->map.dim(1);
        for (const auto& w : rc.diag.words) {
            const auto& cols = prompt.word_index_map.at(w);
            for (std::size_t q = 0; q < plane; ++q) {
                double acc = 0.0;
                for (int col : cols) acc += full->map.at(q * static_cast<std::size_t>(K) + col);
                heat[w][q] += acc / static_cast<double>(cols.size());
            }
        }
        z = ddim_step(z, t, eps, sched);
        const int step = T - t;  // 0-based denoising iteration
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < plane; ++p)
                rows_flat[(static_cast<std::size_t>(step) * plane + p) * C + c] =
                    z.at(static_cast<std::size_t>(c) * plane + p);
    }

    fs::create_directories(rc.out);
    // Per-word time-averaged CA maps, min-max scaled to [0,1] before the
    // 8-bit quantization (a constant map renders black).
    for (auto& [word, acc] : heat) {
        double lo = acc[0], hi = acc[0];
        for (double v : acc) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (double& v : acc) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        save_ppm_gray(rc.out + "/ca_" + word + ".ppm", Tensor(Shape{hw, hw}, acc));
    }

    // Top-3 principal components of the per-position latent features across
    // all steps, one RGB frame per step, channels min-max scaled globally.
    const Tensor proj = pca_project(
        Tensor(Shape{T * static_cast<int>(plane), C}, std::move(rows_flat)), 3);
    double lo[3], hi[3];
    for (int j = 0; j < 3; ++j) {
        lo[j] = proj.at(j);
        hi[j] = proj.at(j);
    }
    for (std::size_t n = 0; n < proj.numel() / 3; ++n)
        for (int j = 0; j < 3; ++j) {
            const double v = proj.at(n * 3 + j);
            lo[j] = std::min(lo[j], v);
            hi[j] = std::max(hi[j], v);
        }
    for (int step = 1; step <= T; ++step) {
        std::vector<double> img(3 * plane, 0.0);
        for (std::size_t p = 0; p < plane; ++p)
            for (int j = 0; j < 3; ++j) {
                const double v =
                    proj.at((static_cast<std::size_t>(step - 1) * plane + p) * 3 + j);
                img[static_cast<std::size_t>(j) * plane + p] =
                    hi[j] > lo[j] ? (v - lo[j]) / (hi[j] - lo[j]) : 0.0;
            }
        char name[32];
        std::snprintf(name, sizeof(name), "pca_step_%03d.ppm", step);
        save_ppm(rc.out + "/" + name, Tensor(Shape{3, hw, hw}, std::move(img)));
    }
    write_file(rc.out + "/config.json", config_text);
    return kExitOk;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_col(json_text, e.byte);
        throw std::invalid_argument("config parse error at line " + std::to_string(line) +
                                    ", column " + std::to_string(col) + ": " + e.what());
    }
    try {
        expect_keys(doc, "config root",
                    {"model", "out", "seed", "prompt", "generation", "inversion", "subjects",
                     "style", "styles", "structure", "train", "ablate", "diag", "trace",
                     "no_style", "black_bg"});
        RunConfig rc;
        take(doc, "model", rc.model);
        take(doc, "out", rc.out);
        take(doc, "seed", rc.seed);
        take(doc, "prompt", rc.prompt);
        take(doc, "trace", rc.trace);
        take(doc, "no_style", rc.no_style);
        take(doc, "black_bg", rc.black_bg);
        if (doc.contains("generation")) parse_generation(doc.at("generation"), rc.generation);
        if (doc.contains("inversion")) {
            const json& inv = doc.at("inversion");
            expect_keys(inv, "inversion", {"inner_steps", "lr"});
            take(inv, "inner_steps", rc.inversion.inner_steps);
            take(inv, "lr", rc.inversion.lr);
        }
        if (doc.contains("subjects")) {
            const json& subs = doc.at("subjects");
            check_arg(subs.is_array(), "subjects must be an array");
            for (std::size_t i = 0; i < subs.size(); ++i)
                rc.subjects.push_back(
                    parse_subject(subs[i], "subjects[" + std::to_string(i) + "]"));
        }
        if (doc.contains("style")) {
            rc.style = parse_style(doc.at("style"), "style");
            rc.has_style = true;
        }
        if (doc.contains("styles")) {
            const json& arr = doc.at("styles");
            check_arg(arr.is_array(), "styles must be an array");
            for (std::size_t i = 0; i < arr.size(); ++i)
                rc.styles.push_back(parse_style(arr[i], "styles[" + std::to_string(i) + "]"));
        }
        if (doc.contains("structure")) {
            const json& st = doc.at("structure");
            expect_keys(st, "structure", {"image", "weight"});
            take(st, "image", rc.structure_image);
            take(st, "weight", rc.structure_weight);
            check_arg(!rc.structure_image.empty(), "structure needs an image");
        }
        if (doc.contains("train")) parse_train(doc.at("train"), rc.train);
        if (doc.contains("ablate")) {
            const json& ab = doc.at("ablate");
            expect_keys(ab, "ablate", {"seeds"});
            take(ab, "seeds", rc.ablate.seeds);
        }
        if (doc.contains("diag")) {
            const json& dg = doc.at("diag");
            expect_keys(dg, "diag", {"words"});
            take(dg, "words", rc.diag.words);
        }
        return rc;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config value error: ") + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(read_file(path));
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"training-free subject and style composition on a toy latent diffusion stack"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool trace = false, no_style = false, verbatim = false, invert = false, black = false;
    std::vector<CLI::Option*> seed_opts, out_opts;

    const auto attach = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        seed_opts.push_back(sub->add_option("--seed", seed_override, "override the config seed"));
        out_opts.push_back(sub->add_option("--out", out_override, "override the output directory"));
        sub->add_flag("--trace", trace, "write per-step diagnostics");
        sub->add_flag("--no-style", no_style, "drop the style stage; every step is content-stage");
        sub->add_flag("--verbatim-outer-box", verbatim,
                      "score the outer spatial loss in its published inverted form");
        sub->add_flag("--invert-blend-mask", invert,
                      "blend the reconstruction background instead of the subject");
        sub->add_flag("--black-bg", black, "compose subjects on black instead of mid-gray");
    };
    CLI::App* train = app.add_subcommand("train-toy", "train the toy denoiser");
    CLI::App* generate = app.add_subcommand("generate", "run a composition");
    CLI::App* ablate = app.add_subcommand("ablate", "on/off grid over the six components");
    CLI::App* diag = app.add_subcommand("diag", "attention and latent-PCA visualizations");
    for (CLI::App* sub : {train, generate, ablate, diag}) attach(sub);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::string text = read_file(config_path);
        RunConfig rc = parse_run_config(text);
        for (const CLI::Option* o : seed_opts)
            if (o->count() > 0) rc.seed = seed_override;
        for (const CLI::Option* o : out_opts)
            if (o->count() > 0) rc.out = out_override;
        rc.trace = rc.trace || trace;
        rc.no_style = rc.no_style || no_style;
        rc.black_bg = rc.black_bg || black;
        rc.generation.verbatim_outer_box = rc.generation.verbatim_outer_box || verbatim;
        rc.generation.invert_blend_mask = rc.generation.invert_blend_mask || invert;

        if (app.got_subcommand(train)) return cmd_train_toy(rc, text);
        if (app.got_subcommand(generate)) return cmd_generate(rc, text);
        if (app.got_subcommand(ablate)) return cmd_ablate(rc, text);
        return cmd_diag(rc, text);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace ft
