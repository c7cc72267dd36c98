#include "worldscale/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <algorithm>
#include <sstream>

#include <fmt/core.h>

#include "worldscale/digest.hpp"
#include "worldscale/errors.hpp"

namespace worldscale {

namespace fs = std::filesystem;

std::string RunManifest::run_id() const {
  nlohmann::json j = {{"stage", stage}, {"config", config}, {"inputs", inputs}};
  return sha256_hex(j.dump());
}

nlohmann::json RunManifest::to_json() const {
  return {{"run_id", run_id()}, {"stage", stage},         {"config", config},
          {"inputs", inputs},   {"outputs", outputs},     {"started_at", started_at},
          {"finished_at", finished_at}};
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void add_digests(std::map<std::string, std::string>& into, const fs::path& path) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) into[(path / fs::relative(f, path)).generic_string()] = sha256_file(f);
  } else if (fs::exists(path)) {
    into[path.generic_string()] = sha256_file(path);
  } else {
    throw DataError(fmt::format("{}: no such file or directory", path.string()));
  }
}

fs::path default_manifest_path(const fs::path& out_dir, const RunManifest& m) {
  return out_dir / "manifests" / fmt::format("{}-{}.json", m.stage, m.run_id().substr(0, 12));
}

fs::path write_manifest(const RunManifest& m, const fs::path& out_dir, const fs::path& explicit_path) {
  const fs::path path = explicit_path.empty() ? default_manifest_path(out_dir, m) : explicit_path;
  const auto id = m.run_id();
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    nlohmann::json existing;
    try {
      existing = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error&) {
      throw DataError(fmt::format("{}: existing manifest is unreadable; refusing to overwrite", path.string()));
    }
    if (existing.value("run_id", "") != id) {
      throw DataError(fmt::format("{}: manifest of a different run exists; manifests are never overwritten",
                                  path.string()));
    }
    return path;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write manifest {}", path.string()));
    out << m.to_json().dump(2) << '\n';
  }
  fs::create_directories(out_dir);
  std::ofstream refs(out_dir / "artifacts.jsonl", std::ios::binary | std::ios::app);
  for (const auto& [artifact, digest] : m.outputs) {
    refs << nlohmann::json{{"artifact", artifact}, {"sha256", digest}, {"run_id", id}, {"manifest", path.generic_string()}}
                .dump()
         << '\n';
  }
  return path;
}

}  // namespace worldscale
