#include "styleplane/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "styleplane/image_io.hpp"
#include "styleplane/serialization.hpp"

namespace styleplane {

namespace {

std::string entry_stem(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "view_%03d", idx);
    return buf;
}

nlohmann::json style_to_json(const StyleParams& p) {
    return {{"color", p.color},
            {"gamma", p.gamma},
            {"warp_amp", p.warp_amp},
            {"warp_freq", p.warp_freq},
            {"warp_phase_x", p.warp_phase_x},
            {"warp_phase_y", p.warp_phase_y},
            {"overlay_amp", p.overlay_amp},
            {"overlay_seed", p.overlay_seed}};
}

StyleParams style_from_json(const nlohmann::json& j) {
    StyleParams p;
    j.at("color").get_to(p.color);
    j.at("gamma").get_to(p.gamma);
    j.at("warp_amp").get_to(p.warp_amp);
    j.at("warp_freq").get_to(p.warp_freq);
    j.at("warp_phase_x").get_to(p.warp_phase_x);
    j.at("warp_phase_y").get_to(p.warp_phase_y);
    j.at("overlay_amp").get_to(p.overlay_amp);
    j.at("overlay_seed").get_to(p.overlay_seed);
    return p;
}

}  // namespace

FewShotDataset build_dataset(const ScenePriorConfig& scene, const StyleEditorConfig& editor,
                             int i, std::uint64_t seed, int workers) {
    if (i < 1) throw std::invalid_argument("build_dataset: i must be >= 1");
    assemble_prompt(editor);  // validates the prompt up front

    FewShotDataset ds;
    ds.scene = scene;
    ds.editor = editor;
    ds.grid_i = i;
    ds.seed = seed;

    ScenePrior prior(scene);
    const auto views = make_view_grid(i);
    const int res = CameraView{}.height * 2;  // super-resolved output
    Rng rng(seed);
    ds.noise = Tensorf::randn({3, res / 4, res / 4}, rng);  // n, drawn once

    ds.entries.resize(views.size());
    parallel_for(static_cast<int>(views.size()), workers, [&](int b, int e) {
        for (int v = b; v < e; ++v) {
            DatasetEntry& entry = ds.entries[static_cast<std::size_t>(v)];
            entry.view = views[static_cast<std::size_t>(v)];
            entry.source = prior.render_view(entry.view);
            Tensorf n_star = add_noise(encode_latent(entry.source), ds.noise, editor.tau);
            entry.stylized = edit(entry.source, n_star, editor, entry.view);
            entry.style = view_style_params(editor, entry.view);
        }
    });
    return ds;
}

std::uint64_t dataset_content_hash(const FewShotDataset& ds) {
    std::uint64_t h = tensor_content_hash(ds.noise);
    for (const auto& e : ds.entries) {
        h = tensor_content_hash(e.stylized, h);
        h = tensor_content_hash(e.source, h);
    }
    return h;
}

void save_dataset(const FewShotDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format"] = "styleplane-dataset";
    manifest["version"] = 1;
    manifest["scene"] = ds.scene;
    manifest["editor"] = ds.editor;
    manifest["grid_i"] = ds.grid_i;
    manifest["seed"] = ds.seed;
    manifest["content_hash"] = hash_hex(dataset_content_hash(ds));

    save_tensor_blob(dir / "noise.sptb", ds.noise);
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t idx = 0; idx < ds.entries.size(); ++idx) {
        const auto& e = ds.entries[idx];
        const std::string stem = entry_stem(static_cast<int>(idx));
        save_tensor_blob(dir / (stem + "_styled.sptb"), e.stylized);
        save_tensor_blob(dir / (stem + "_source.sptb"), e.source);
        save_png(dir / (stem + "_styled.png"), e.stylized);
        save_png(dir / (stem + "_source.png"), e.source);
        entries.push_back({{"stem", stem},
                           {"pitch_deg", e.view.pitch_deg},
                           {"yaw_deg", e.view.yaw_deg},
                           {"style", style_to_json(e.style)}});
    }
    manifest["entries"] = std::move(entries);

    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("save_dataset: failed to write manifest");
}

namespace {

nlohmann::json read_manifest(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw std::runtime_error("dataset: cannot open " + file.string());
    nlohmann::json manifest = nlohmann::json::parse(is, nullptr, true);
    if (manifest.value("format", "") != "styleplane-dataset") {
        throw std::runtime_error("dataset: " + file.string() + " is not a dataset manifest");
    }
    return manifest;
}

}  // namespace

FewShotDataset load_dataset(const std::filesystem::path& dir) {
    const nlohmann::json manifest = read_manifest(dir / "manifest.json");

    FewShotDataset ds;
    ds.scene = manifest.at("scene").get<ScenePriorConfig>();
    ds.editor = manifest.at("editor").get<StyleEditorConfig>();
    ds.grid_i = manifest.at("grid_i");
    ds.seed = manifest.at("seed");
    ds.noise = load_tensor_blob(dir / "noise.sptb");

    for (const auto& je : manifest.at("entries")) {
        DatasetEntry e;
        e.view.pitch_deg = je.at("pitch_deg");
        e.view.yaw_deg = je.at("yaw_deg");
        const std::string stem = je.at("stem");
        e.stylized = load_tensor_blob(dir / (stem + "_styled.sptb"));
        e.source = load_tensor_blob(dir / (stem + "_source.sptb"));
        e.style = style_from_json(je.at("style"));
        ds.entries.push_back(std::move(e));
    }

    const std::string expect = manifest.at("content_hash");
    const std::string got = hash_hex(dataset_content_hash(ds));
    if (got != expect) {
        throw std::runtime_error("load_dataset: content hash mismatch (manifest " + expect +
                                 ", blobs " + got + ")");
    }
    return ds;
}

FewShotDataset rebuild_from_manifest(const std::filesystem::path& manifest_file, int workers) {
    const nlohmann::json manifest = read_manifest(manifest_file);
    return build_dataset(manifest.at("scene").get<ScenePriorConfig>(),
                         manifest.at("editor").get<StyleEditorConfig>(),
                         manifest.at("grid_i"), manifest.at("seed"), workers);
}

}  // namespace styleplane
