#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "observatory/structurer.hpp"
#include "observatory/trace_store.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(FIXTURE_DIR) / name; }

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

inline observatory::TraceStore store_from(const std::vector<std::string>& lines,
                                          const observatory::EntityCatalog& catalog = {}) {
  observatory::TraceStore store;
  observatory::Quarantine q;
  observatory::ingest_lines(store, lines, catalog, q);
  return store;
}

inline observatory::TraceStore fixture_store(const std::string& name) {
  return store_from(read_lines(fixture(name)), observatory::load_catalog(fixture("catalog.json")));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("observatory-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline observatory::Instant at(const char* text) { return *observatory::parse_instant(text); }

}  // namespace testing
