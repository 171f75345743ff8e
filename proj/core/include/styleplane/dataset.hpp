#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "styleplane/parallel.hpp"
#include "styleplane/priors.hpp"

namespace styleplane {

struct DatasetEntry {
    CameraView view;
    Tensorf stylized;   // I_s [3,H,W]
    Tensorf source;     // I   [3,H,W]
    StyleParams style;  // per-view style-parameter record
};

// Few-shot stylized dataset: i^2 per-view edits of one identity, all sharing
// a single noise draw so the identity is unchanged across views.
struct FewShotDataset {
    ScenePriorConfig scene;
    StyleEditorConfig editor;
    int grid_i = 0;
    std::uint64_t seed = 0;  // drives the shared noise draw
    Tensorf noise;           // n, sampled once, [3,H/4,W/4]
    std::vector<DatasetEntry> entries;
};

FewShotDataset build_dataset(const ScenePriorConfig& scene, const StyleEditorConfig& editor,
                             int i, std::uint64_t seed,
                             int workers = default_worker_count());

// Hash of every image blob plus the shared noise, in entry order.
std::uint64_t dataset_content_hash(const FewShotDataset& ds);

// Directory layout: manifest.json + view_###_{styled,source}.sptb blobs +
// PNG previews. The manifest alone suffices to rebuild the dataset.
void save_dataset(const FewShotDataset& ds, const std::filesystem::path& dir);
FewShotDataset load_dataset(const std::filesystem::path& dir);

// Re-run build_dataset from a saved manifest's recorded configs.
FewShotDataset rebuild_from_manifest(const std::filesystem::path& manifest_file,
                                     int workers = default_worker_count());

}  // namespace styleplane
