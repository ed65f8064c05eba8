#pragma once
// Provenance records for command-line runs. Every command writes a manifest
// listing the tool version, resolved config hash, the seeds it used, digests
// of every input it read, and digests of every file it produced. The manifest
// digest covers all of that except the timestamp, so re-running a command
// with the same inputs and seeds must reproduce the identical digest.

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drivebench/rng.hpp"
#include "json.hpp"

namespace drivebench {

inline constexpr const char* kToolName = "drivebench";
inline constexpr const char* kToolVersion = "0.1.0";

struct FileDigest {
    std::string path;     // inputs: as given; outputs: relative to the run dir
    uint64_t digest = 0;  // FNV-1a over the raw file bytes
};

struct RunManifest {
    std::string tool = kToolName;
    std::string version = kToolVersion;
    std::string command;
    uint64_t config_hash = 0;
    std::vector<std::pair<std::string, uint64_t>> seeds;  // named seeds, in insertion order
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    std::string created_at;  // ISO 8601 UTC; excluded from the digest
};

inline uint64_t digest_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    uint64_t h = kFnvOffset;
    char buf[1 << 16];
    while (is.read(buf, sizeof buf), is.gcount() > 0)
        h = fnv1a(buf, static_cast<size_t>(is.gcount()), h);
    return h;
}

inline std::string now_iso8601() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& [name, value] : m.seeds)
        seeds.push_back({{"name", name}, {"value", value}});
    const auto files = [](const std::vector<FileDigest>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (const FileDigest& f : v)
            arr.push_back({{"path", f.path}, {"digest", hex64(f.digest)}});
        return arr;
    };
    return {{"tool", m.tool},           {"version", m.version},
            {"command", m.command},     {"config_hash", hex64(m.config_hash)},
            {"seeds", std::move(seeds)}, {"inputs", files(m.inputs)},
            {"outputs", files(m.outputs)}, {"created_at", m.created_at}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    m.tool = j.at("tool").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    for (const auto& s : j.at("seeds"))
        m.seeds.push_back({s.at("name").get<std::string>(), s.at("value").get<uint64_t>()});
    const auto files = [](const nlohmann::json& arr) {
        std::vector<FileDigest> v;
        for (const auto& f : arr)
            v.push_back({f.at("path").get<std::string>(),
                         std::stoull(f.at("digest").get<std::string>(), nullptr, 16)});
        return v;
    };
    m.inputs = files(j.at("inputs"));
    m.outputs = files(j.at("outputs"));
    m.created_at = j.value("created_at", "");
    return m;
}

// Digest over every reproducible field; the timestamp is excluded so two
// identical runs made at different times still compare equal.
inline uint64_t manifest_digest(const RunManifest& m) {
    nlohmann::json j = manifest_to_json(m);
    j.erase("created_at");
    return fnv1a(j.dump());
}

// Records one produced file: digest it on disk, remember it by relative path.
inline void add_output(RunManifest& m, const std::filesystem::path& run_dir,
                       const std::filesystem::path& relative) {
    m.outputs.push_back({relative.generic_string(), digest_file(run_dir / relative)});
}

inline void add_input(RunManifest& m, const std::filesystem::path& path) {
    m.inputs.push_back({path.generic_string(), digest_file(path)});
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& run_dir) {
    nlohmann::json j = manifest_to_json(m);
    j["manifest_digest"] = hex64(manifest_digest(m));
    std::ofstream os(run_dir / "run.json");
    if (!os) throw std::runtime_error("cannot write manifest in " + run_dir.string());
    os << j.dump(2) << "\n";
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read manifest " + path.string());
    return manifest_from_json(nlohmann::json::parse(is));
}

}  // namespace drivebench
