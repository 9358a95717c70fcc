#include "driftlab/gradcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw ConfigError("checkpoint truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header;
    header["meta"] = ckpt.meta;
    header["blocks"] = nlohmann::json::array();
    for (const auto& p : ckpt.params)
        header["blocks"].push_back({{"name", p.name}, {"group", to_string(p.group)}, {"shape", p.value.shape()}});
    const std::string text = header.dump();

    std::string out = "DLAB";
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& p : ckpt.params)
        out.append(reinterpret_cast<const char*>(p.value.data().data()), p.value.size() * sizeof(double));
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "DLAB") throw ConfigError("not a DLAB checkpoint (bad magic)");
    std::size_t pos = 4;
    const auto version = take<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint version " + std::to_string(version));
    const auto len = take<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw ConfigError("checkpoint header truncated");
    const auto header = nlohmann::json::parse(bytes.substr(pos, len));
    pos += len;

    Checkpoint ckpt;
    ckpt.meta = header.at("meta");
    for (const auto& b : header.at("blocks")) {
        Shape shape = b.at("shape").get<Shape>();
        const std::size_t n = shape_size(shape);
        if (pos + n * sizeof(double) > bytes.size()) throw ConfigError("checkpoint block truncated");
        std::vector<double> data(n);
        std::memcpy(data.data(), bytes.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        ckpt.params.add(b.at("name").get<std::string>(), parse_param_group(b.at("group").get<std::string>()),
                        Tensor(std::move(shape), std::move(data)));
    }
    if (pos != bytes.size()) throw ConfigError("trailing bytes after checkpoint blocks");
    return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write-then-rename so an interrupted run never leaves a partial artifact.
    auto tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

}  // namespace dlab
