#include "driftlab/harness/store.hpp"

#include <cstdlib>
#include <fstream>

#include "driftlab/gradcore/checkpoint.hpp"
#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/params.hpp"

namespace dlab {

std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

std::string config_hash(const nlohmann::json& j) { return sha256_hex(canonical_json(j)); }

ArtifactStore::ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {
    if (root_.empty()) throw ConfigError("artifact store root must not be empty");
}

ArtifactStore ArtifactStore::from_env() {
    const char* home = std::getenv("DLAB_HOME");
    return ArtifactStore(home && *home ? std::filesystem::path(home) : std::filesystem::path("dlab_home"));
}

std::filesystem::path ArtifactStore::stage_dir(std::string_view stage, const nlohmann::json& cfg) const {
    return root_ / std::string(stage) / config_hash(cfg).substr(0, 16);
}

bool ArtifactStore::complete(std::string_view stage, const nlohmann::json& cfg) const {
    return std::filesystem::exists(stage_dir(stage, cfg) / "COMPLETE");
}

std::filesystem::path ArtifactStore::begin(std::string_view stage, const nlohmann::json& cfg) const {
    const auto dir = stage_dir(stage, cfg);
    std::filesystem::create_directories(dir);
    std::filesystem::remove(dir / "COMPLETE");
    write_file(dir / "config.json", canonical_json(cfg) + "\n");
    return dir;
}

void ArtifactStore::mark_complete(std::string_view stage, const nlohmann::json& cfg) const {
    write_file(stage_dir(stage, cfg) / "COMPLETE", config_hash(cfg) + "\n");
}

void ArtifactStore::record_timing(std::string_view stage, const nlohmann::json& cfg, double seconds) const {
    std::filesystem::create_directories(root_);
    std::ofstream out(root_ / "timing.jsonl", std::ios::app);
    out << nlohmann::json{{"stage", stage}, {"key", config_hash(cfg).substr(0, 16)}, {"seconds", seconds}}.dump()
        << "\n";
}

}  // namespace dlab
