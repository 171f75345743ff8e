#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "styleplane/tensor.hpp"

#include "json.hpp"

namespace styleplane {

// Tensor blob: "SPTB" magic, u32 version, u32 rank, u32 dims[rank], then
// little-endian fp32 payload.
void write_tensor_blob(std::ostream& os, const Tensorf& t);
Tensorf read_tensor_blob(std::istream& is);

void save_tensor_blob(const std::filesystem::path& path, const Tensorf& t);
Tensorf load_tensor_blob(const std::filesystem::path& path);

// Checkpoint: "SPCK" magic, u32 version, u64 json length, json header
// (config echo, seed, parameter name/shape table), then the parameter blobs
// in table order. Loading validates the shape table.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensorf>> params;

    const Tensorf* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Hash of a tensor's raw fp32 payload, used for frozen-parameter checks and
// dataset manifests.
std::uint64_t tensor_content_hash(const Tensorf& t, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hash_hex(std::uint64_t h);

}  // namespace styleplane
