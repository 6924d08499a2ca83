#ifndef CLARET_MANIFEST_HPP
#define CLARET_MANIFEST_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace claret {

// Reproducibility record written next to every produced output file.
struct RunManifest {
    std::string command;
    std::string resolved_config_json;  // canonical JSON of the effective config
    std::vector<std::pair<std::string, std::string>> input_hashes;  // path -> fnv64 hex
    std::string tool_version;
    uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;

    // 64-bit content hash of the resolved config; identical inputs+config
    // yield identical hashes.
    std::string config_hash() const;
    void add_input(const std::string& path);
    void write(const std::string& path) const;

    static std::string hash_file_hex(const std::string& path);
    static std::string now_utc_iso8601();
};

}  // namespace claret

#endif
