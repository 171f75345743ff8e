#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "styleplane/gradcheck.hpp"
#include "styleplane/image_io.hpp"
#include "styleplane/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace styleplane {

// Exit codes: 0 success, 2 config error, 3 numeric failure, 4 verification
// failure (hash or gradcheck).
struct CliError {
    int code;
    std::string message;
};

void to_json(json& j, const GeneratorConfig& c) {
    j = {{"image_res", c.image_res},           {"latent_channels", c.latent_channels},
         {"latent_k", c.latent_k},             {"plane_channels", c.plane_channels},
         {"plane_res", c.plane_res},           {"sml_layers", c.sml_layers},
         {"modnet_hidden", c.modnet_hidden}};
}

void from_json(const json& j, GeneratorConfig& c) {
    j.at("image_res").get_to(c.image_res);
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("latent_k").get_to(c.latent_k);
    j.at("plane_channels").get_to(c.plane_channels);
    j.at("plane_res").get_to(c.plane_res);
    j.at("sml_layers").get_to(c.sml_layers);
    j.at("modnet_hidden").get_to(c.modnet_hidden);
}

void to_json(json& j, const TrainConfig& c) {
    j = {{"iterations", c.iterations},
         {"batch_size", c.batch_size},
         {"lambda_rec", c.lambda_rec},
         {"lambda_dr", c.lambda_dr},
         {"dr_noise_scale", c.dr_noise_scale},
         {"dr_points", c.dr_points},
         {"lr", c.adam.lr},
         {"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"eps", c.adam.eps},
         {"lr_decay", c.lr_decay},
         {"checkpoint_every", c.checkpoint_every},
         {"train_render_size", c.train_render_size},
         {"train_render_samples", c.train_render_samples}};
}

void from_json(const json& j, TrainConfig& c) {
    j.at("iterations").get_to(c.iterations);
    j.at("batch_size").get_to(c.batch_size);
    j.at("lambda_rec").get_to(c.lambda_rec);
    j.at("lambda_dr").get_to(c.lambda_dr);
    j.at("dr_noise_scale").get_to(c.dr_noise_scale);
    j.at("dr_points").get_to(c.dr_points);
    j.at("lr").get_to(c.adam.lr);
    j.at("beta1").get_to(c.adam.beta1);
    j.at("beta2").get_to(c.adam.beta2);
    j.at("eps").get_to(c.adam.eps);
    j.at("lr_decay").get_to(c.lr_decay);
    j.at("checkpoint_every").get_to(c.checkpoint_every);
    j.at("train_render_size").get_to(c.train_render_size);
    j.at("train_render_samples").get_to(c.train_render_samples);
}

namespace {

// All module parameters in one place; every run resolves this fully and
// writes the result next to its outputs.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string scale = "desk";
    std::uint64_t pool_seed = 42;  // identity pool for pretraining sources
    int pool_size = 8;
    ScenePriorConfig scene;
    StyleEditorConfig editor;
    GeneratorConfig generator;
    TrainConfig train;
};

// Merge user keys over the serialized defaults so partial sections work
// while unknown keys are still rejected.
template <class C>
C merge_section(const json& user, const C& defaults, const std::string& where) {
    json full = defaults;
    for (const auto& [key, value] : user.items()) {
        if (!full.contains(key)) {
            throw CliError{2, "config: unknown key '" + where + "." + key + "'"};
        }
        full[key] = value;
    }
    try {
        return full.get<C>();
    } catch (const json::exception& e) {
        throw CliError{2, "config: bad value in '" + where + "': " + e.what()};
    }
}

void apply_paper_scale(RunConfig& cfg) {
    // Paper scale (k=32, R=256, 96 plane channels, 512x512 images) is kept
    // for completeness; it is not CPU-feasible for actual training runs.
    cfg.generator.image_res = 512;
    cfg.generator.latent_k = 32;
    cfg.generator.plane_channels = 32;
    cfg.generator.plane_res = 256;
    cfg.scene.plane_res = 256;
    cfg.scene.coarse_res = 16;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw CliError{2, "config file not found: " + path};
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw CliError{2, "config: parse error in " + path + ": " + e.what()};
    }
    static const std::vector<std::string> top = {"seed",  "scale",     "pool_seed", "pool_size",
                                                 "scene", "editor",    "generator", "train"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(top.begin(), top.end(), key) == top.end()) {
            throw CliError{2, "config: unknown key '" + key + "'"};
        }
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.scale = j.value("scale", cfg.scale);
    cfg.pool_seed = j.value("pool_seed", cfg.pool_seed);
    cfg.pool_size = j.value("pool_size", cfg.pool_size);
    if (cfg.scale != "desk" && cfg.scale != "paper") {
        throw CliError{2, "config: scale must be 'desk' or 'paper', got '" + cfg.scale + "'"};
    }
    if (cfg.scale == "paper") {
        std::cerr << "warning: paper-scale preset selected; this configuration is not "
                     "CPU-feasible for training\n";
        apply_paper_scale(cfg);
    }
    if (j.contains("scene")) cfg.scene = merge_section(j["scene"], cfg.scene, "scene");
    if (j.contains("editor")) cfg.editor = merge_section(j["editor"], cfg.editor, "editor");
    if (j.contains("generator"))
        cfg.generator = merge_section(j["generator"], cfg.generator, "generator");
    if (j.contains("train")) cfg.train = merge_section(j["train"], cfg.train, "train");
    if (cfg.pool_size < 1) throw CliError{2, "config: pool_size must be >= 1"};
    return cfg;
}

fs::path resolve_run_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("STYLEPLANE_RUN_ROOT")) return env;
    return "runs";
}

// Fresh directory <root>/<command>-NNN; outputs never land on existing runs.
fs::path make_run_dir(const fs::path& root, const std::string& command) {
    fs::create_directories(root);
    for (int n = 1; n < 10000; ++n) {
        std::ostringstream name;
        name << command << "-" << std::setw(3) << std::setfill('0') << n;
        const fs::path dir = root / name.str();
        if (!fs::exists(dir)) {
            fs::create_directories(dir);
            return dir;
        }
    }
    throw CliError{2, "run root exhausted: " + root.string()};
}

void write_resolved_config(const fs::path& run_dir, const std::string& command,
                           const RunConfig& cfg, int workers, const json& extras = json::object()) {
    json train = cfg.train;
    train["seed"] = cfg.seed;
    json j = {{"command", command},   {"seed", cfg.seed},
              {"scale", cfg.scale},   {"pool_seed", cfg.pool_seed},
              {"pool_size", cfg.pool_size}, {"workers", workers},
              {"scene", cfg.scene},   {"editor", cfg.editor},
              {"generator", cfg.generator}, {"train", train}};
    for (const auto& [key, value] : extras.items()) j[key] = value;
    std::ofstream out(run_dir / "resolved_config.json");
    out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint_checked(const std::string& path) {
    if (!fs::exists(path)) throw CliError{2, "checkpoint not found: " + path};
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        throw CliError{4, "checkpoint failed verification: " + std::string(e.what())};
    }
}

FewShotDataset load_dataset_checked(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.json")) {
        throw CliError{2, "dataset directory has no manifest.json: " + dir};
    }
    try {
        return load_dataset(dir);
    } catch (const std::exception& e) {
        throw CliError{4, "dataset failed verification: " + std::string(e.what())};
    }
}

Tensorf input_image(const RunConfig& cfg, const std::string& image_path) {
    if (image_path.empty()) {
        return scene_render(cfg.scene, CameraView{});
    }
    if (!fs::exists(image_path)) throw CliError{2, "image blob not found: " + image_path};
    Tensorf img = load_tensor_blob(image_path);
    const int r = cfg.generator.image_res;
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != r || img.dim(2) != r) {
        throw CliError{2, "image blob must be [3," + std::to_string(r) + "," +
                              std::to_string(r) + "], got " + img.shape_str()};
    }
    return img;
}

std::vector<CameraView> parse_views(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon != std::string::npos) {
        const std::string kind = spec.substr(0, colon);
        int n = 0;
        try {
            n = std::stoi(spec.substr(colon + 1));
        } catch (const std::exception&) {
            throw CliError{2, "bad --views count in '" + spec + "'"};
        }
        if (n < 1) throw CliError{2, "--views count must be >= 1"};
        if (kind == "grid") return make_view_grid(n);
        if (kind == "orbit") {
            std::vector<CameraView> views;
            for (int k = 0; k < n; ++k) {
                CameraView v;
                v.yaw_deg = n == 1 ? 0.0f
                                   : -30.0f + 60.0f * static_cast<float>(k) /
                                                  static_cast<float>(n - 1);
                views.push_back(v);
            }
            return views;
        }
    }
    throw CliError{2, "--views must be orbit:N or grid:i, got '" + spec + "'"};
}

std::vector<float> parse_alphas(const std::string& list) {
    std::vector<float> alphas;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            alphas.push_back(std::stof(item));
        } catch (const std::exception&) {
            throw CliError{2, "bad alpha value '" + item + "'"};
        }
    }
    if (alphas.size() < 2) throw CliError{2, "--alphas needs at least two values"};
    return alphas;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_pretrain(const RunConfig& cfg, const fs::path& run_dir, int workers,
                 int iterations_override) {
    RunConfig rc = cfg;
    if (iterations_override > 0) rc.train.iterations = iterations_override;
    rc.train.seed = rc.seed;
    write_resolved_config(run_dir, "pretrain", rc, workers);

    GeneratorModel model(rc.generator, rc.seed);
    SceneSource source = make_scene_source(rc.scene, rc.pool_seed, rc.pool_size);
    const fs::path ck_path = run_dir / "checkpoint.spck";
    TrainResult res = pretrain(model, source, rc.train, ck_path);
    save_history_csv(run_dir / "history.csv", res.history);

    if (res.aborted_non_finite) {
        std::cerr << "pretrain: non-finite loss at iteration " << res.iterations_run + 1
                  << "; last good checkpoint kept\n";
        return 3;
    }
    std::cout << "pretrain: " << res.iterations_run << " iterations, loss "
              << res.history.front().l_total << " -> " << res.history.back().l_total << "\n"
              << "checkpoint " << ck_path.string() << " params_hash "
              << hash_hex(params_hash(model.named_params())) << "\n";
    return 0;
}

int cmd_build_dataset(const RunConfig& cfg, const fs::path& run_dir, int workers,
                      const std::string& prompt, int grid_i, float tau) {
    RunConfig rc = cfg;
    if (!prompt.empty()) rc.editor.prompt = prompt;
    if (tau >= 0.0f) rc.editor.tau = tau;
    if (rc.editor.prompt.empty()) throw CliError{2, "build-dataset: --prompt must not be empty"};
    if (rc.editor.tau < 0.0f || rc.editor.tau > 1.0f) {
        throw CliError{2, "build-dataset: tau must be in [0,1]"};
    }
    if (grid_i < 1) throw CliError{2, "build-dataset: --i must be >= 1"};
    write_resolved_config(run_dir, "build-dataset", rc, workers, {{"grid_i", grid_i}});

    FewShotDataset ds = build_dataset(rc.scene, rc.editor, grid_i, rc.seed, workers);
    const fs::path dir = run_dir / "dataset";
    save_dataset(ds, dir);
    std::cout << "build-dataset: " << ds.entries.size() << " entries (i=" << grid_i
              << ", tau=" << rc.editor.tau << ") -> " << dir.string() << "\n"
              << "content_hash " << hash_hex(dataset_content_hash(ds)) << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg, const fs::path& run_dir, int workers,
                 const std::string& dataset_dir, const std::string& checkpoint_path,
                 int iterations_override) {
    RunConfig rc = cfg;
    if (iterations_override > 0) rc.train.iterations = iterations_override;
    rc.train.seed = rc.seed;

    Checkpoint ck = load_checkpoint_checked(checkpoint_path);
    GeneratorModel model = [&] {
        try {
            return load_pretrained(ck);
        } catch (const std::exception& e) {
            throw CliError{2, std::string(e.what())};
        }
    }();
    FewShotDataset ds = load_dataset_checked(dataset_dir);
    rc.scene = ds.scene;
    rc.editor = ds.editor;
    write_resolved_config(run_dir, "finetune", rc, workers,
                          {{"dataset", dataset_dir}, {"checkpoint", checkpoint_path}});

    ScenePrior prior(ds.scene);
    const std::uint64_t dec_hash = params_hash(prior.decoder().named_params());
    const std::uint64_t sr_hash = params_hash(prior.super_resolver().named_params());

    const fs::path ck_out = run_dir / "checkpoint.spck";
    TrainResult res = finetune(model, ds, prior.decoder(), prior.super_resolver(), rc.train, ck_out);
    save_history_csv(run_dir / "history.csv", res.history);

    const bool frozen_ok = dec_hash == params_hash(prior.decoder().named_params()) &&
                           sr_hash == params_hash(prior.super_resolver().named_params());
    std::cout << "frozen renderer hashes " << (frozen_ok ? "unchanged" : "CHANGED") << " (decoder "
              << hash_hex(dec_hash) << ", super-resolver " << hash_hex(sr_hash) << ")\n";
    if (!frozen_ok) return 4;
    if (res.aborted_non_finite) {
        std::cerr << "finetune: non-finite loss at iteration " << res.iterations_run + 1
                  << "; last good checkpoint kept\n";
        return 3;
    }
    std::cout << "finetune: " << res.iterations_run << " iterations, l_rec "
              << res.history.front().l_rec << " -> " << res.history.back().l_rec << "\n"
              << "checkpoint " << ck_out.string() << " params_hash "
              << hash_hex(params_hash(model.named_params())) << "\n";
    return 0;
}

int cmd_render(const RunConfig& cfg, const fs::path& run_dir, int workers,
               const std::string& checkpoint_path, const std::string& views_spec,
               const std::string& image_path) {
    Checkpoint ck = load_checkpoint_checked(checkpoint_path);
    GeneratorModel model = GeneratorModel::from_checkpoint(ck);
    std::vector<CameraView> views = parse_views(views_spec);
    write_resolved_config(run_dir, "render", cfg, workers,
                          {{"checkpoint", checkpoint_path}, {"views", views_spec}});

    ScenePrior prior(cfg.scene);
    Tensorf img = input_image(cfg, image_path);
    save_png(run_dir / "input.png", img);
    Triplane tp = model.generate(img).detached();

    for (std::size_t k = 0; k < views.size(); ++k) {
        RenderResult rr = render(tp, prior.decoder(), prior.super_resolver(), views[k]);
        std::ostringstream stem;
        stem << std::setw(3) << std::setfill('0') << k;
        save_png(run_dir / ("frame_" + stem.str() + ".png"), rr.image.value());
        save_png_gray(run_dir / ("depth_" + stem.str() + ".png"), rr.depth, 2.0f, 3.4f);
    }
    save_view_manifest(run_dir / "views.json", views);
    std::cout << "render: " << views.size() << " frames -> " << run_dir.string() << "\n";
    return 0;
}

int cmd_mix(const RunConfig& cfg, const fs::path& run_dir, int workers,
            const std::string& ck_a, const std::string& image_a, const std::string& ck_b,
            const std::string& image_b, const std::string& alpha_list) {
    std::vector<float> alphas = parse_alphas(alpha_list);
    GeneratorModel model_a = GeneratorModel::from_checkpoint(load_checkpoint_checked(ck_a));
    GeneratorModel model_b = GeneratorModel::from_checkpoint(load_checkpoint_checked(ck_b));
    if (!(model_a.config() == model_b.config())) {
        throw CliError{2, "mix: checkpoints have different generator configurations"};
    }
    write_resolved_config(run_dir, "mix", cfg, workers,
                          {{"checkpoint_a", ck_a}, {"checkpoint_b", ck_b}, {"alphas", alphas}});

    ScenePrior prior(cfg.scene);
    Tensorf img_a = input_image(cfg, image_a);
    Tensorf img_b = input_image(cfg, image_b);
    const Tensorf ws_a = model_a.encode(img_a).value();
    const Tensorf ws_b = model_b.encode(img_b).value();

    // alpha interpolates in the style latent space; the modulation stack that
    // renders the mix is model A's (both models share the frozen renderer).
    std::vector<Tensorf> frames;
    for (std::size_t k = 0; k < alphas.size(); ++k) {
        const Tensorf ws = mix_styles(ws_a, ws_b, alphas[k]);
        Triplane tp = model_a.generate_from_latent(Varf::constant(ws)).detached();
        RenderResult rr = render(tp, prior.decoder(), prior.super_resolver(), CameraView{});
        std::ostringstream stem;
        stem << std::setw(3) << std::setfill('0') << k;
        save_png(run_dir / ("mix_" + stem.str() + ".png"), rr.image.value());
        frames.push_back(rr.image.value());
    }

    std::vector<float> gaps;
    for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        double l1 = 0;
        for (std::size_t i = 0; i < frames[k].numel(); ++i) {
            l1 += std::abs(frames[k][i] - frames[k + 1][i]);
        }
        gaps.push_back(static_cast<float>(l1 / static_cast<double>(frames[k].numel())));
    }
    json report = {{"alphas", alphas}, {"adjacent_l1_gaps", gaps}};
    std::ofstream(run_dir / "mix.json") << report.dump(2) << "\n";
    std::cout << "mix: " << frames.size() << " frames -> " << run_dir.string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& run_dir, int workers,
             const std::string& dataset_dir, const std::string& checkpoint_path) {
    Checkpoint ck = load_checkpoint_checked(checkpoint_path);
    GeneratorModel model = GeneratorModel::from_checkpoint(ck);
    FewShotDataset ds = load_dataset_checked(dataset_dir);
    write_resolved_config(run_dir, "eval", cfg, workers,
                          {{"dataset", dataset_dir}, {"checkpoint", checkpoint_path}});

    ScenePrior prior(ds.scene);
    PerceptualProxy proxy;
    std::vector<Tensorf> raw, recon;
    double psnr_sum = 0;
    for (const auto& entry : ds.entries) {
        raw.push_back(entry.stylized);
        Triplane tp = model.generate(entry.stylized).detached();
        Tensorf r =
            render(tp, prior.decoder(), prior.super_resolver(), entry.view).image.value();
        psnr_sum += psnr(r, entry.stylized);
        recon.push_back(std::move(r));
    }
    const float disp_raw = cross_view_consistency(raw, proxy).dispersion;
    const float disp_model = cross_view_consistency(recon, proxy).dispersion;
    const float psnr_mean = static_cast<float>(psnr_sum / static_cast<double>(ds.entries.size()));

    // shape smoothness of the triplane generated from the most frontal entry
    std::size_t frontal = 0;
    for (std::size_t k = 1; k < ds.entries.size(); ++k) {
        const auto& v = ds.entries[k].view;
        const auto& b = ds.entries[frontal].view;
        if (std::abs(v.pitch_deg) + std::abs(v.yaw_deg) <
            std::abs(b.pitch_deg) + std::abs(b.yaw_deg)) {
            frontal = k;
        }
    }
    Triplane tp = model.generate(ds.entries[frontal].stylized).detached();
    const float smooth = depth_smoothness(tp, prior.decoder(),
                                          {{0, 0}, {30, 30}, {30, -30}, {-30, 30}, {-30, -30}});

    json report = {{"entries", ds.entries.size()},
                   {"dispersion_raw", disp_raw},
                   {"dispersion_model", disp_model},
                   {"consistency_improved", disp_model < disp_raw},
                   {"psnr_mean_db", psnr_mean},
                   {"depth_smoothness", smooth}};
    std::ofstream(run_dir / "report.json") << report.dump(2) << "\n";
    std::ofstream csv(run_dir / "report.csv");
    csv << "metric,value\n";
    for (const auto& [key, value] : report.items()) csv << key << "," << value << "\n";
    std::cout << "eval: dispersion raw " << disp_raw << " model " << disp_model
              << (disp_model < disp_raw ? " (improved)" : " (not improved)") << ", psnr "
              << psnr_mean << " dB, depth_smoothness " << smooth << "\n"
              << "report " << (run_dir / "report.json").string() << "\n";
    return 0;
}

// Elementwise 2x with a backward that under-reports the gradient by 10%.
// Exists only as the gradcheck negative control behind --inject-wrong-gradient.
Var<double> double_wrong_grad(const Var<double>& x) {
    Tensor<double> v = x.value();
    for (auto& e : v.vec()) e *= 2.0;
    Var<double> out = ops::detail::make_node("double_wrong_grad", std::move(v), {x});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto xn = x.node();
        out.node()->backprop = [o, xn] {
            if (!xn->requires_grad) return;
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += 1.8 * o->grad[i];
        };
    }
    return out;
}

struct ProbeRow {
    std::string name;
    double rel_err;
    bool pass;
};

void print_table(const std::vector<ProbeRow>& rows) {
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(28) << r.name << std::scientific
                  << std::setprecision(2) << r.rel_err << (r.pass ? "  PASS" : "  FAIL") << "\n";
    }
    std::cout.unsetf(std::ios::scientific);
}

std::vector<ProbeRow> gradcheck_ops(bool inject_wrong) {
    std::vector<GradCheckCase<double>> cases = standard_op_cases<double>(123);
    if (inject_wrong) {
        Rng rng(5);
        cases.push_back({"wrong_gradient (control)",
                         {Tensor<double>::randn({3, 4}, rng)},
                         [](std::vector<Var<double>>& l) {
                             return ops::sum(ops::mul(double_wrong_grad(l[0]), l[0]));
                         }});
    }
    std::vector<ProbeRow> rows;
    for (const auto& c : cases) {
        GradCheckResult<double> r = run_gradcheck(c, 1e-5, 1e-6);
        rows.push_back({r.name, r.max_rel_err, r.pass});
    }
    return rows;
}

// 4x4-pixel render through the full generator; finite differences on a few
// parameters of every stage. The forward value is accumulated in double and
// Richardson-extrapolated so fp32 noise does not swamp the comparison.
std::vector<ProbeRow> gradcheck_pipeline() {
    // A reduced generator keeps the fp32 accumulation noise of the forward
    // pass well below the finite-difference signal; the code path is the same
    // as at desk scale.
    GeneratorConfig gcfg;
    gcfg.image_res = 16;
    gcfg.latent_channels = 16;
    gcfg.latent_k = 4;
    gcfg.plane_res = 8;
    gcfg.sml_layers = 3;
    gcfg.modnet_hidden = 8;
    ScenePrior prior(ScenePriorConfig{});
    GeneratorModel model(gcfg, 5);
    CameraView input_cam;
    input_cam.width = input_cam.height = 8;
    const Tensorf img = prior.render_view(input_cam);
    CameraView cam;
    cam.width = cam.height = 4;
    RenderOptions opt;
    opt.n_samples = 8;

    Rng wr(17);
    const Tensorf w = Tensorf::uniform({3, 8, 8}, wr, 0.25f, 1.75f);
    auto loss_value = [&]() {
        Triplane tp = model.generate(img);
        RenderResult rr = render(tp, prior.decoder(), prior.super_resolver(), cam, opt);
        double acc = 0;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            acc += static_cast<double>(w[i]) * static_cast<double>(rr.image.value()[i]);
        }
        return std::pair{acc, rr.image};
    };

    Varf image = loss_value().second;
    Varf loss = ops::sum(ops::mul(image, Varf::constant(w)));
    backward(loss);

    auto params = model.named_params();
    struct Probe {
        std::string name;
        Varf var;
        std::size_t idx;
        double an;
    };
    std::vector<Probe> probes;
    Rng pr(31);
    // two probe indices per parameter tensor, spread over every stage;
    // analytic values are captured before any further backward pass runs
    for (std::size_t pi = 0; pi < params.size(); pi += 2) {
        auto& [name, var] = params[pi];
        const int reps = var.value().numel() > 1 ? 2 : 1;
        for (int rep = 0; rep < reps; ++rep) {
            const std::size_t idx = static_cast<std::size_t>(
                pr.uniform_int(0, static_cast<int>(var.value().numel()) - 1));
            const double an = var.has_grad() ? static_cast<double>(var.grad()[idx]) : 0.0;
            probes.push_back({name + "[" + std::to_string(idx) + "]", var, idx, an});
        }
    }

    std::vector<ProbeRow> rows;
    for (auto& p : probes) {
        float& slot = p.var.mutable_value()[p.idx];
        const float saved = slot;
        auto central = [&](float step) {
            slot = saved + step;
            const double up = loss_value().first;
            slot = saved - step;
            const double dn = loss_value().first;
            slot = saved;
            return (up - dn) / (2.0 * static_cast<double>(step));
        };
        // Stage 1: pointwise central differences over a step-size sweep.
        // Large steps cross leaky-ReLU kinks, small ones sink into fp32
        // forward noise; the dip of the curve is the comparison point.
        double rel = 1e30;
        for (float h : {0.04f, 0.02f, 0.01f, 0.005f}) {
            const double fd = (4.0 * central(h / 2) - central(h)) / 3.0;
            rel = std::min(rel, std::abs(fd - p.an) / std::max({1.0, std::abs(fd), std::abs(p.an)}));
        }
        // Stage 2 for parameters whose kink spacing defeats pointwise FD
        // (channel biases shift whole activation maps coherently): the secant
        // (f(x+h)-f(x-h))/2h equals the exact mean of the true derivative
        // over [x-h, x+h], so compare it against the midpoint-rule average of
        // the analytic gradient. A wrong backward shifts the average and
        // still fails.
        if (rel >= 1e-3) {
            const float h = 0.02f;
            const double secant = central(h);
            const int quad = 128;
            double mean_g = 0;
            for (int q = 0; q < quad; ++q) {
                slot = saved - h + (static_cast<float>(q) + 0.5f) * (2 * h / quad);
                Varf im = loss_value().second;
                Varf l = ops::sum(ops::mul(im, Varf::constant(w)));
                p.var.zero_grad();
                backward(l);
                mean_g += static_cast<double>(p.var.grad()[p.idx]) / quad;
            }
            slot = saved;
            rel = std::min(rel, std::abs(mean_g - secant) /
                                    std::max({1.0, std::abs(mean_g), std::abs(secant)}));
        }
        rows.push_back({p.name, rel, rel < 1e-3});
    }
    return rows;
}

int cmd_gradcheck(const std::string& scope, bool inject_wrong) {
    if (scope != "op" && scope != "pipeline" && scope != "all") {
        throw CliError{2, "gradcheck: --scope must be op, pipeline or all"};
    }
    std::vector<ProbeRow> rows;
    if (scope == "op" || scope == "all") {
        auto ops_rows = gradcheck_ops(inject_wrong);
        rows.insert(rows.end(), ops_rows.begin(), ops_rows.end());
    }
    if (scope == "pipeline" || scope == "all") {
        auto pipe_rows = gradcheck_pipeline();
        rows.insert(rows.end(), pipe_rows.begin(), pipe_rows.end());
    }
    print_table(rows);
    const std::size_t failed =
        static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(),
                                               [](const ProbeRow& r) { return !r.pass; }));
    std::cout << rows.size() - failed << "/" << rows.size() << " probes passed\n";
    return failed == 0 ? 0 : 4;
}

}  // namespace
}  // namespace styleplane

int main(int argc, char** argv) {
    using namespace styleplane;

    CLI::App app{"text-driven freestyle 3D-aware portrait synthesis (desk scale)"};
    app.require_subcommand(1);

    std::string config_path, run_root_flag;
    int workers = default_worker_count();
    app.add_option("--config", config_path, "run config JSON (defaults used when omitted)");
    app.add_option("--run-root", run_root_flag,
                   "run directory root (default $STYLEPLANE_RUN_ROOT or ./runs)");
    app.add_option("--workers", workers, "worker threads for dataset building")
        ->check(CLI::PositiveNumber);

    auto* pre = app.add_subcommand("pretrain", "pretrain the 3D latent feature generator");
    int pre_iters = 0;
    pre->add_option("--iterations", pre_iters, "override train.iterations");

    auto* bds = app.add_subcommand("build-dataset", "construct the few-shot stylized dataset");
    std::string prompt;
    int grid_i = 10;
    float tau = -1.0f;
    bds->add_option("--prompt", prompt, "style prompt t")->required();
    bds->add_option("--i", grid_i, "view grid side (i*i entries)");
    bds->add_option("--tau", tau, "noise level in [0,1]");

    auto* ft = app.add_subcommand("finetune", "cross-view fine-tuning on a stylized dataset");
    std::string ft_dataset, ft_checkpoint;
    int ft_iters = 0;
    ft->add_option("--dataset", ft_dataset, "dataset directory")->required();
    ft->add_option("--checkpoint", ft_checkpoint, "pretrained checkpoint")->required();
    ft->add_option("--iterations", ft_iters, "override train.iterations");

    auto* ren = app.add_subcommand("render", "render a view sequence with depth maps");
    std::string ren_checkpoint, ren_views = "orbit:8", ren_image;
    ren->add_option("--checkpoint", ren_checkpoint, "generator checkpoint")->required();
    ren->add_option("--views", ren_views, "orbit:N or grid:i");
    ren->add_option("--image", ren_image, "input image blob (.sptb); default: scene prior");

    auto* mix = app.add_subcommand("mix", "style-mixing interpolation strip");
    std::string mix_ck_a, mix_ck_b, mix_img_a, mix_img_b, mix_alphas = "0,0.25,0.5,0.75,1";
    mix->add_option("--checkpoint-a", mix_ck_a, "style A checkpoint")->required();
    mix->add_option("--checkpoint-b", mix_ck_b, "style B checkpoint")->required();
    mix->add_option("--image-a", mix_img_a, "style A input blob (.sptb)");
    mix->add_option("--image-b", mix_img_b, "style B input blob (.sptb)");
    mix->add_option("--alphas", mix_alphas, "comma-separated mixing weights");

    auto* ev = app.add_subcommand("eval", "consistency / reconstruction metrics report");
    std::string ev_dataset, ev_checkpoint;
    ev->add_option("--dataset", ev_dataset, "dataset directory")->required();
    ev->add_option("--checkpoint", ev_checkpoint, "generator checkpoint")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_scope = "all";
    bool gc_inject = false;
    gc->add_option("--scope", gc_scope, "op, pipeline or all");
    gc->add_flag("--inject-wrong-gradient", gc_inject, "add the negative-control op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = load_run_config(config_path);
        if (gc->parsed()) return cmd_gradcheck(gc_scope, gc_inject);

        const fs::path run_dir =
            make_run_dir(resolve_run_root(run_root_flag), app.get_subcommands().front()->get_name());
        std::cout << "run directory " << run_dir.string() << "\n";
        try {
            if (pre->parsed()) return cmd_pretrain(cfg, run_dir, workers, pre_iters);
            if (bds->parsed()) return cmd_build_dataset(cfg, run_dir, workers, prompt, grid_i, tau);
            if (ft->parsed())
                return cmd_finetune(cfg, run_dir, workers, ft_dataset, ft_checkpoint, ft_iters);
            if (ren->parsed()) return cmd_render(cfg, run_dir, workers, ren_checkpoint, ren_views,
                                                 ren_image);
            if (mix->parsed())
                return cmd_mix(cfg, run_dir, workers, mix_ck_a, mix_img_a, mix_ck_b, mix_img_b,
                               mix_alphas);
            if (ev->parsed()) return cmd_eval(cfg, run_dir, workers, ev_dataset, ev_checkpoint);
            return 2;
        } catch (...) {
            // commands that fail before producing anything leave no stub run
            if (fs::exists(run_dir) && fs::is_empty(run_dir)) fs::remove(run_dir);
            throw;
        }
    } catch (const CliError& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        const std::string msg = e.what();
        return msg.find("hash") != std::string::npos ? 4 : 2;
    }
}
