#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "styleplane/serialization.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
};

const fs::path g_work = fs::temp_directory_path() / "styleplane_cli_test";

CliResult run_cli(const std::string& args) {
    static int n = 0;
    fs::create_directories(g_work);
    const fs::path log = g_work / ("cli_" + std::to_string(n++) + ".log");
    const std::string cmd =
        std::string(STYLEPLANE_BIN) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Each doctest case gets a fresh run root; expensive artifacts (pretrained
// checkpoint, small dataset) are built once and shared read-only.
fs::path fresh_root(const std::string& name) {
    const fs::path root = g_work / name;
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

const fs::path& shared_checkpoint() {
    static fs::path ck = [] {
        const fs::path root = fresh_root("shared_pretrain");
        CliResult r = run_cli("--run-root " + root.string() + " pretrain --iterations 30");
        REQUIRE(r.code == 0);
        return root / "pretrain-001" / "checkpoint.spck";
    }();
    return ck;
}

const fs::path& shared_dataset() {
    static fs::path ds = [] {
        const fs::path root = fresh_root("shared_dataset");
        CliResult r = run_cli("--run-root " + root.string() +
                              " build-dataset --prompt \"bronze statue\" --i 2");
        REQUIRE(r.code == 0);
        return root / "build-dataset-001" / "dataset";
    }();
    return ds;
}

}  // namespace

TEST_CASE("config errors: missing file, unknown keys, bad scale") {
    const fs::path root = fresh_root("config_errors");

    CliResult missing = run_cli("--config " + (root / "nope.json").string() + " --run-root " +
                                root.string() + " pretrain");
    CHECK(missing.code == 2);
    CHECK(missing.out.find("not found") != std::string::npos);
    // a config error must leave no partial run directory behind
    CHECK(fs::is_empty(root));

    std::ofstream(root / "bad.json") << R"({"trian": {"iterations": 5}})";
    CliResult unknown = run_cli("--config " + (root / "bad.json").string() + " --run-root " +
                                root.string() + " pretrain");
    CHECK(unknown.code == 2);
    CHECK(unknown.out.find("unknown key 'trian'") != std::string::npos);

    std::ofstream(root / "bad2.json") << R"({"train": {"iterationz": 5}})";
    CHECK(run_cli("--config " + (root / "bad2.json").string() + " --run-root " + root.string() +
                  " pretrain")
              .code == 2);

    std::ofstream(root / "bad3.json") << R"({"scale": "gpu"})";
    CliResult scale = run_cli("--config " + (root / "bad3.json").string() + " --run-root " +
                              root.string() + " pretrain");
    CHECK(scale.code == 2);
    CHECK(scale.out.find("desk") != std::string::npos);
}

TEST_CASE("pretrain smoke run writes checkpoint, history and resolved config") {
    const fs::path run = shared_checkpoint().parent_path();
    CHECK(fs::exists(run / "checkpoint.spck"));
    CHECK(fs::exists(run / "resolved_config.json"));

    std::ifstream hist(run / "history.csv");
    std::string header;
    std::getline(hist, header);
    CHECK(header == "iteration,l_rec,l_dr,l_total");
    int rows = 0;
    for (std::string line; std::getline(hist, line);) ++rows;
    CHECK(rows == 30);

    const json cfg = json::parse(std::ifstream(run / "resolved_config.json"));
    CHECK(cfg.at("command") == "pretrain");
    CHECK(cfg.at("train").at("iterations") == 30);
    CHECK(cfg.at("scale") == "desk");
}

TEST_CASE("pretrain rerun with the same seed reproduces the checkpoint bit-exactly") {
    const fs::path root = fresh_root("pretrain_repro");
    REQUIRE(run_cli("--run-root " + root.string() + " pretrain --iterations 30").code == 0);
    CHECK(file_bytes(root / "pretrain-001" / "checkpoint.spck") ==
          file_bytes(shared_checkpoint()));
}

TEST_CASE("build-dataset: entry count, prompt validation, tau boundary") {
    const fs::path root = fresh_root("build_dataset");

    CliResult r = run_cli("--run-root " + root.string() +
                          " build-dataset --prompt \"bronze statue\" --i 10");
    CHECK(r.code == 0);
    CHECK(r.out.find("100 entries") != std::string::npos);
    const json manifest =
        json::parse(std::ifstream(root / "build-dataset-001" / "dataset" / "manifest.json"));
    CHECK(manifest.at("entries").size() == 100);

    CliResult empty = run_cli("--run-root " + root.string() + " build-dataset --prompt \"\"");
    CHECK(empty.code == 2);
    CHECK(empty.out.find("prompt") != std::string::npos);

    CHECK(run_cli("--run-root " + root.string() +
                  " build-dataset --prompt \"bronze statue\" --i 2 --tau 0")
              .code == 0);
    CHECK(run_cli("--run-root " + root.string() +
                  " build-dataset --prompt \"bronze statue\" --i 2 --tau 1.5")
              .code == 2);
}

TEST_CASE("finetune: required flags, smoke run, frozen-renderer log") {
    const fs::path root = fresh_root("finetune");

    CHECK(run_cli("--run-root " + root.string() + " finetune --dataset " +
                  shared_dataset().string())
              .code == 2);
    CHECK(run_cli("--run-root " + root.string() + " finetune --checkpoint " +
                  shared_checkpoint().string() + " --dataset " + (root / "no_ds").string())
              .code == 2);

    CliResult r = run_cli("--run-root " + root.string() + " finetune --dataset " +
                          shared_dataset().string() + " --checkpoint " +
                          shared_checkpoint().string() + " --iterations 3");
    CHECK(r.code == 0);
    CHECK(r.out.find("frozen renderer hashes unchanged") != std::string::npos);
    CHECK(fs::exists(root / "finetune-001" / "checkpoint.spck"));
    CHECK(fs::exists(root / "finetune-001" / "history.csv"));
}

TEST_CASE("finetune refuses a checkpoint that is not from pretraining") {
    const fs::path root = fresh_root("finetune_gate");
    // a bare tensor blob is not a checkpoint at all
    styleplane::save_tensor_blob(root / "fake.spck", styleplane::Tensorf({2, 2}, 1.0f));
    CliResult r = run_cli("--run-root " + root.string() + " finetune --dataset " +
                          shared_dataset().string() + " --checkpoint " +
                          (root / "fake.spck").string());
    CHECK(r.code == 4);
}

TEST_CASE("render: orbit and grid frame counts, byte-identical re-render") {
    const fs::path root = fresh_root("render");

    CliResult orbit = run_cli("--run-root " + root.string() + " render --checkpoint " +
                              shared_checkpoint().string() + " --views orbit:8");
    CHECK(orbit.code == 0);
    int frames = 0, depths = 0;
    for (const auto& e : fs::directory_iterator(root / "render-001")) {
        const std::string name = e.path().filename().string();
        frames += name.starts_with("frame_");
        depths += name.starts_with("depth_");
    }
    CHECK(frames == 8);
    CHECK(depths == 8);
    CHECK(fs::exists(root / "render-001" / "views.json"));

    CliResult grid = run_cli("--run-root " + root.string() + " render --checkpoint " +
                             shared_checkpoint().string() + " --views grid:3");
    CHECK(grid.code == 0);
    CHECK(fs::exists(root / "render-002" / "frame_008.png"));
    CHECK(!fs::exists(root / "render-002" / "frame_009.png"));

    CliResult again = run_cli("--run-root " + root.string() + " render --checkpoint " +
                              shared_checkpoint().string() + " --views orbit:8");
    CHECK(again.code == 0);
    CHECK(file_bytes(root / "render-001" / "frame_000.png") ==
          file_bytes(root / "render-003" / "frame_000.png"));

    CHECK(run_cli("--run-root " + root.string() + " render --checkpoint " +
                  shared_checkpoint().string() + " --views spiral:4")
              .code == 2);
}

TEST_CASE("mix: alpha endpoints equal the pure renders, gaps recorded") {
    const fs::path root = fresh_root("mix");

    CliResult r = run_cli("--run-root " + root.string() + " mix --checkpoint-a " +
                          shared_checkpoint().string() + " --checkpoint-b " +
                          shared_checkpoint().string() + " --alphas 0,0.5,1");
    CHECK(r.code == 0);

    // both checkpoints are the same model here, so every frame must be the
    // pure render; in particular alpha=0 matches a plain frontal render
    CliResult pure = run_cli("--run-root " + root.string() + " render --checkpoint " +
                             shared_checkpoint().string() + " --views orbit:1");
    REQUIRE(pure.code == 0);
    CHECK(file_bytes(root / "mix-001" / "mix_000.png") ==
          file_bytes(root / "render-001" / "frame_000.png"));
    CHECK(file_bytes(root / "mix-001" / "mix_002.png") ==
          file_bytes(root / "render-001" / "frame_000.png"));

    const json rep = json::parse(std::ifstream(root / "mix-001" / "mix.json"));
    CHECK(rep.at("adjacent_l1_gaps").size() == 2);

    CHECK(run_cli("--run-root " + root.string() + " mix --checkpoint-a " +
                  shared_checkpoint().string() + " --checkpoint-b " +
                  shared_checkpoint().string() + " --alphas 1")
              .code == 2);
}

TEST_CASE("eval: report present and reruns reproduce it exactly") {
    const fs::path root = fresh_root("eval");

    CliResult r = run_cli("--run-root " + root.string() + " eval --dataset " +
                          shared_dataset().string() + " --checkpoint " +
                          shared_checkpoint().string());
    CHECK(r.code == 0);
    const json rep = json::parse(std::ifstream(root / "eval-001" / "report.json"));
    for (const char* key : {"dispersion_raw", "dispersion_model", "consistency_improved",
                            "psnr_mean_db", "depth_smoothness", "entries"}) {
        CHECK(rep.contains(key));
    }
    CHECK(fs::exists(root / "eval-001" / "report.csv"));

    CliResult again = run_cli("--run-root " + root.string() + " eval --dataset " +
                              shared_dataset().string() + " --checkpoint " +
                              shared_checkpoint().string());
    CHECK(again.code == 0);
    CHECK(file_bytes(root / "eval-001" / "report.json") ==
          file_bytes(root / "eval-002" / "report.json"));
}

TEST_CASE("gradcheck: op table coverage, pipeline probe, negative control") {
    CliResult op = run_cli("gradcheck --scope op");
    CHECK(op.code == 0);
    for (const char* name : {"add", "conv2d", "channel_norm", "bilinear_sample",
                             "composite_rays", "matmul", "softplus"}) {
        CHECK(op.out.find(name) != std::string::npos);
    }
    CHECK(op.out.find("FAIL") == std::string::npos);

    CliResult pipe = run_cli("gradcheck --scope pipeline");
    CHECK(pipe.code == 0);
    CHECK(pipe.out.find("seed_features") != std::string::npos);
    CHECK(pipe.out.find("to_planes") != std::string::npos);

    CliResult inj = run_cli("gradcheck --scope op --inject-wrong-gradient");
    CHECK(inj.code == 4);
    CHECK(inj.out.find("wrong_gradient (control)") != std::string::npos);
    CHECK(inj.out.find("FAIL") != std::string::npos);

    CHECK(run_cli("gradcheck --scope everything").code == 2);
}
