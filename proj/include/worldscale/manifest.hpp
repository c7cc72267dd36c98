#pragma once

// Run manifests: one immutable JSON record per stage invocation naming its
// configuration and the digests of every input and output file.

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace worldscale {

struct RunManifest {
  std::string stage;
  nlohmann::json config = nlohmann::json::object();  // no credentials, ever
  std::map<std::string, std::string> inputs;         // path -> sha256
  std::map<std::string, std::string> outputs;        // path -> sha256
  std::string started_at;
  std::string finished_at;

  /// sha256 over stage, config and input digests: identical invocations
  /// share a run id.
  std::string run_id() const;
  nlohmann::json to_json() const;
};

std::string utc_now();

/// Digest of a file, or of every regular file below a directory (keys are
/// "<dir>/<relative path>").
void add_digests(std::map<std::string, std::string>& into, const std::filesystem::path& path);

/// Default location: <out>/manifests/<stage>-<run id prefix>.json.
std::filesystem::path default_manifest_path(const std::filesystem::path& out_dir, const RunManifest& m);

/// Writes the manifest and appends one line per output to
/// <out>/artifacts.jsonl linking the artifact to the run id. An existing
/// manifest file is never overwritten: the same run id leaves it in place,
/// a different one throws DataError.
std::filesystem::path write_manifest(const RunManifest& m, const std::filesystem::path& out_dir,
                                     const std::filesystem::path& explicit_path = {});

}  // namespace worldscale
