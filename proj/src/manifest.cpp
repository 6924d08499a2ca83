#include "claret/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "claret/common.hpp"
#include "claret/version.hpp"

namespace claret {

namespace {

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace

std::string RunManifest::config_hash() const {
    return hex64(fnv1a(resolved_config_json));
}

std::string RunManifest::hash_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot hash input file: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return hex64(h);
}

std::string RunManifest::now_utc_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void RunManifest::add_input(const std::string& path) {
    input_hashes.emplace_back(path, hash_file_hex(path));
}

void RunManifest::write(const std::string& path) const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = nlohmann::json::parse(resolved_config_json.empty() ? "{}"
                                                                     : resolved_config_json);
    j["config_hash"] = config_hash();
    j["inputs"] = nlohmann::json::object();
    for (const auto& [p, h] : input_hashes) j["inputs"][p] = h;
    j["tool_version"] = kToolVersion;
    j["seed"] = seed;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("manifest write failed: " + path);
}

}  // namespace claret
