#include "styleplane/serialization.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace styleplane {

namespace {

constexpr std::uint32_t kBlobMagic = 0x42545053;  // "SPTB" little-endian
constexpr std::uint32_t kBlobVersion = 1;
constexpr std::uint32_t kCheckpointMagic = 0x4b435053;  // "SPCK"
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("tensor blob: truncated stream");
    return v;
}

}  // namespace

void write_tensor_blob(std::ostream& os, const Tensorf& t) {
    write_raw(os, kBlobMagic);
    write_raw(os, kBlobVersion);
    write_raw(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_raw(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

Tensorf read_tensor_blob(std::istream& is) {
    if (read_raw<std::uint32_t>(is) != kBlobMagic) throw std::runtime_error("tensor blob: bad magic");
    if (read_raw<std::uint32_t>(is) != kBlobVersion) throw std::runtime_error("tensor blob: bad version");
    const auto rank = read_raw<std::uint32_t>(is);
    if (rank > 8) throw std::runtime_error("tensor blob: implausible rank");
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = static_cast<int>(read_raw<std::uint32_t>(is));
        if (d <= 0) throw std::runtime_error("tensor blob: bad dimension");
        n *= static_cast<std::size_t>(d);
    }
    std::vector<float> data(n);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw std::runtime_error("tensor blob: truncated payload");
    return Tensorf(std::move(shape), std::move(data));
}

void save_tensor_blob(const std::filesystem::path& path, const Tensorf& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    write_tensor_blob(os, t);
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensorf load_tensor_blob(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    return read_tensor_blob(is);
}

const Tensorf* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json meta = ck.meta;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [name, t] : ck.params) {
        table.push_back({{"name", name}, {"shape", t.shape()}});
    }
    meta["param_table"] = table;
    const std::string header = meta.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    std::uint32_t magic = kCheckpointMagic, ver = kCheckpointVersion;
    os.write(reinterpret_cast<const char*>(&magic), 4);
    os.write(reinterpret_cast<const char*>(&ver), 4);
    const std::uint64_t len = header.size();
    os.write(reinterpret_cast<const char*>(&len), 8);
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : ck.params) write_tensor_blob(os, t);
    if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::uint32_t magic = 0, ver = 0;
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&magic), 4);
    is.read(reinterpret_cast<char*>(&ver), 4);
    is.read(reinterpret_cast<char*>(&len), 8);
    if (!is || magic != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
    if (ver != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("checkpoint: truncated header");

    Checkpoint ck;
    ck.meta = nlohmann::json::parse(header);
    if (!ck.meta.contains("param_table")) throw std::runtime_error("checkpoint: missing param table");
    for (const auto& entry : ck.meta["param_table"]) {
        const std::string name = entry.at("name");
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensorf t = read_tensor_blob(is);
        if (t.shape() != shape) {
            throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "': table says " +
                                     Tensorf::shape_str(shape) + ", blob is " + t.shape_str());
        }
        ck.params.emplace_back(name, std::move(t));
    }
    return ck;
}

std::uint64_t tensor_content_hash(const Tensorf& t, std::uint64_t h) {
    h = fnv1a64(t.shape().data(), t.shape().size() * sizeof(int), h);
    return fnv1a64(t.data(), t.numel() * sizeof(float), h);
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace styleplane
