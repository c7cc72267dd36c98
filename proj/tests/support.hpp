#pragma once

// Shared helpers for the unit tests and the acceptance runner: temporary
// directories, fixture lookup, seeded generators and small file utilities.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "worldscale/corpus.hpp"
#include "worldscale/prompts.hpp"

namespace wstest {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(WS_FIXTURE_DIR) / name; }

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    const auto base = fs::temp_directory_path();
    for (int attempt = 0; attempt < 100; ++attempt) {
      auto p = base / ("worldscale-test-" + std::to_string(rd()) + std::to_string(rd()));
      if (fs::create_directory(p)) {
        path_ = p;
        return;
      }
    }
    throw std::runtime_error("cannot create a temporary directory");
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

struct Gen {
  explicit Gen(std::uint64_t seed) : rng(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  std::vector<double> vec(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
  std::mt19937_64 rng;
};

/// The PISA pacelength example: one item, a focal sample frame with a 19%
/// rate and the world as target.
inline worldscale::ItemPool pisa_pool() {
  using namespace worldscale;
  Item item;
  item.item_id = "M124Q01";
  item.source_dataset = SourceDataset::PISA;
  item.domain = "math";
  item.stem =
      "The picture shows the footprints of a man walking. The pacelength P is the distance between the rear of "
      "two consecutive footprints. For men, the formula n/P = 140 gives an approximate relationship between n "
      "and P, where: n = number of steps per minute, and P = pacelength in metres. Bernard knows his pacelength "
      "is 0.80 metres. The formula applies to Bernard's walking.\nTask: Calculate Bernard's walking speed in "
      "metres per minute and in kilometres per hour. Show your working out.";
  item.key = "112 metres per minute; 6.72 km/h";
  item.scoring_rule = "full credit for both speeds";
  item.demands.set(Dimension::QLq, 3);
  item.demands.set(Dimension::CEc, 2);

  SubgroupFrame sample;
  sample.frame_id = "pisa";
  sample.kind = FrameKind::REFERENCE;
  sample.label = "PISA sample";
  sample.description =
      "Students aged 15 years 3 months to 16 years 2 months, attending at least Grade 7 or equivalent. About "
      "400,000-450,000 students were assessed, representing ~20 million 15-year-olds globally (stratified "
      "sampling).";
  SubgroupFrame world = default_world_frame();

  ObservedRate rate = make_rate(item.item_id, sample.frame_id, 19.0, 100);
  PoolInfo info{"PISA", "We have PISA results from 57 countries (30 OECD + 27 partner countries)."};
  return ItemPool(info, {item}, {sample, world}, {rate});
}

inline std::vector<nlohmann::json> load_parser_corpus() {
  std::ifstream in(fixture("parser_corpus.json"));
  auto j = nlohmann::json::parse(in);
  return std::vector<nlohmann::json>(j.begin(), j.end());
}

}  // namespace wstest
