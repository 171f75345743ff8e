#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "styleplane/dataset.hpp"
#include "styleplane/serialization.hpp"

using namespace styleplane;
namespace fs = std::filesystem;

namespace {

StyleEditorConfig editor_cfg() {
    StyleEditorConfig e;
    e.prompt = "bronze statue";
    return e;
}

fs::path fresh_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("build_dataset: entry count, shared noise, grid corners") {
    FewShotDataset ds = build_dataset(ScenePriorConfig{}, editor_cfg(), 2, 7);
    CHECK(ds.entries.size() == 4);
    CHECK(ds.noise.shape() == std::vector<int>{3, 16, 16});

    // i=2 puts the views at the pitch/yaw extremes
    CHECK(ds.entries[0].view.pitch_deg == doctest::Approx(-30.0f));
    CHECK(ds.entries[0].view.yaw_deg == doctest::Approx(-30.0f));
    CHECK(ds.entries[3].view.pitch_deg == doctest::Approx(30.0f));
    CHECK(ds.entries[3].view.yaw_deg == doctest::Approx(30.0f));

    for (const auto& e : ds.entries) {
        CHECK(e.stylized.shape() == std::vector<int>{3, 64, 64});
        CHECK(e.source.shape() == std::vector<int>{3, 64, 64});
        CHECK(e.stylized.all_finite());
    }

    CHECK_THROWS_AS(build_dataset(ScenePriorConfig{}, editor_cfg(), 0, 7), std::invalid_argument);
    CHECK_THROWS_AS(build_dataset(ScenePriorConfig{}, StyleEditorConfig{}, 2, 7),
                    std::invalid_argument);  // empty prompt
}

TEST_CASE("build_dataset: i=10 yields 100 entries") {
    FewShotDataset ds = build_dataset(ScenePriorConfig{}, editor_cfg(), 10, 7);
    CHECK(ds.entries.size() == 100);
}

TEST_CASE("build_dataset is bit-deterministic, also across worker counts") {
    FewShotDataset a = build_dataset(ScenePriorConfig{}, editor_cfg(), 2, 7, 1);
    FewShotDataset b = build_dataset(ScenePriorConfig{}, editor_cfg(), 2, 7, 4);
    CHECK(dataset_content_hash(a) == dataset_content_hash(b));

    FewShotDataset c = build_dataset(ScenePriorConfig{}, editor_cfg(), 2, 8);
    CHECK(dataset_content_hash(a) != dataset_content_hash(c));
}

TEST_CASE("zero view jitter records one shared style parameter set") {
    StyleEditorConfig e = editor_cfg();
    e.view_jitter = 0.0f;
    FewShotDataset ds = build_dataset(ScenePriorConfig{}, e, 3, 7);
    for (const auto& entry : ds.entries) CHECK(entry.style.flat() == ds.entries[0].style.flat());
}

TEST_CASE("save/load round trip is bit-exact and hash-verified") {
    const fs::path dir = fresh_dir("styleplane_ds_roundtrip");
    FewShotDataset ds = build_dataset(ScenePriorConfig{}, editor_cfg(), 2, 7);
    save_dataset(ds, dir);

    FewShotDataset back = load_dataset(dir);
    CHECK(back.entries.size() == ds.entries.size());
    CHECK(back.noise.vec() == ds.noise.vec());
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        CHECK(back.entries[i].stylized.vec() == ds.entries[i].stylized.vec());
        CHECK(back.entries[i].source.vec() == ds.entries[i].source.vec());
        CHECK(back.entries[i].view.yaw_deg == ds.entries[i].view.yaw_deg);
        CHECK(back.entries[i].style.flat() == ds.entries[i].style.flat());
    }
    CHECK(dataset_content_hash(back) == dataset_content_hash(ds));
    fs::remove_all(dir);
}

TEST_CASE("corrupted blobs are refused with a diagnostic, not a crash") {
    const fs::path dir = fresh_dir("styleplane_ds_corrupt");
    FewShotDataset ds = build_dataset(ScenePriorConfig{}, editor_cfg(), 2, 7);
    save_dataset(ds, dir);

    SUBCASE("truncated blob") {
        fs::resize_file(dir / "view_001_styled.sptb", 40);
        CHECK_THROWS(load_dataset(dir));
    }
    SUBCASE("flipped pixel fails the manifest hash") {
        const fs::path blob = dir / "view_000_source.sptb";
        Tensorf t = load_tensor_blob(blob);
        t[0] += 0.25f;
        save_tensor_blob(blob, t);
        CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("hash mismatch"),
                             std::runtime_error);
    }
    SUBCASE("missing manifest") {
        fs::remove(dir / "manifest.json");
        CHECK_THROWS(load_dataset(dir));
    }
    fs::remove_all(dir);
}

TEST_CASE("manifest alone reproduces an identical dataset") {
    const fs::path dir = fresh_dir("styleplane_ds_rebuild");
    ScenePriorConfig scene;
    scene.identity_seed = 55;
    StyleEditorConfig e = editor_cfg();
    e.tau = 0.7f;
    FewShotDataset ds = build_dataset(scene, e, 2, 99);
    save_dataset(ds, dir);

    FewShotDataset rebuilt = rebuild_from_manifest(dir / "manifest.json");
    CHECK(dataset_content_hash(rebuilt) == dataset_content_hash(ds));
    fs::remove_all(dir);
}
