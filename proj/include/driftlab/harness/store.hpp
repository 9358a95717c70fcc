#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace dlab {

/// Canonical form: object keys sorted, no whitespace, shortest round-trip
/// doubles. Equal configs always produce equal bytes.
std::string canonical_json(const nlohmann::json& j);
/// Hex SHA-256 of the canonical form.
std::string config_hash(const nlohmann::json& j);

/// Content-addressed artifact directory tree:
///
///   <root>/<stage>/<first 16 hex of config hash>/
///       config.json   canonical config that produced the artifacts
///       COMPLETE      written last; absent means the stage must rerun
class ArtifactStore {
public:
    explicit ArtifactStore(std::filesystem::path root);
    /// $DLAB_HOME, falling back to ./dlab_home.
    static ArtifactStore from_env();

    const std::filesystem::path& root() const noexcept { return root_; }

    std::filesystem::path stage_dir(std::string_view stage, const nlohmann::json& cfg) const;
    bool complete(std::string_view stage, const nlohmann::json& cfg) const;
    /// Creates the directory and writes config.json; files are then added by
    /// the caller before mark_complete.
    std::filesystem::path begin(std::string_view stage, const nlohmann::json& cfg) const;
    void mark_complete(std::string_view stage, const nlohmann::json& cfg) const;

    /// Appends one line to <root>/timing.jsonl. Kept apart from reports so
    /// that reports stay byte-deterministic.
    void record_timing(std::string_view stage, const nlohmann::json& cfg, double seconds) const;

private:
    std::filesystem::path root_;
};

}  // namespace dlab
