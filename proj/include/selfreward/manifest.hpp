#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "selfreward/core.hpp"

namespace selfreward {

struct FileRecord {
  std::string name;  // relative to the run directory
  std::string digest;
  std::int64_t records = 0;
};

/// One model in the chain: which checkpoint, where it came from, and what it cost.
struct IterationEntry {
  int iteration = 0;
  std::string checkpoint_id;
  std::string parent_id;  // empty for M0
  std::string status = "ok";
  std::string failed_stage;
  std::string error;
  Json counts = Json::object();
  std::vector<FileRecord> files;
  Json metrics = Json::object();
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::vector<IterationEntry> entries;
  Json extra = Json::object();

  void add_entry(IterationEntry entry) {
    if (!entries.empty() && entry.iteration <= entries.back().iteration)
      fail(ErrorCode::invalid_record, "manifest iterations must be strictly increasing");
    entries.push_back(std::move(entry));
  }

  IterationEntry* find(int iteration) {
    for (auto& e : entries)
      if (e.iteration == iteration) return &e;
    return nullptr;
  }
};

/// records is -1 for binary files (checkpoints), the line count for JSONL.
inline FileRecord describe_file(const std::filesystem::path& dir, const std::string& name,
                                bool jsonl = true) {
  const auto path = dir / name;
  const std::int64_t n = jsonl ? static_cast<std::int64_t>(count_lines(path)) : -1;
  return {name, file_digest(path), n};
}

inline Json to_json(const RunManifest& m) {
  Json j;
  j["run_id"] = m.run_id;
  j["config_hash"] = m.config_hash;
  Json es = Json::array();
  for (const auto& e : m.entries) {
    Json je;
    je["iteration"] = e.iteration;
    je["checkpoint_id"] = e.checkpoint_id;
    je["parent_id"] = e.parent_id.empty() ? Json(nullptr) : Json(e.parent_id);
    je["status"] = e.status;
    if (!e.failed_stage.empty()) {
      je["failed_stage"] = e.failed_stage;
      je["error"] = e.error;
    }
    je["counts"] = e.counts;
    Json fs = Json::array();
    for (const auto& f : e.files) {
      Json jf;
      jf["name"] = f.name;
      jf["digest"] = f.digest;
      jf["records"] = f.records;
      fs.push_back(std::move(jf));
    }
    je["files"] = std::move(fs);
    je["metrics"] = e.metrics;
    es.push_back(std::move(je));
  }
  j["iterations"] = std::move(es);
  j["extra"] = m.extra;
  return j;
}

inline RunManifest manifest_from_json(const Json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& je : j.at("iterations")) {
      IterationEntry e;
      e.iteration = je.at("iteration").get<int>();
      e.checkpoint_id = je.at("checkpoint_id").get<std::string>();
      if (!je.at("parent_id").is_null()) e.parent_id = je.at("parent_id").get<std::string>();
      e.status = je.at("status").get<std::string>();
      if (je.contains("failed_stage")) {
        e.failed_stage = je.at("failed_stage").get<std::string>();
        e.error = je.at("error").get<std::string>();
      }
      e.counts = je.at("counts");
      for (const auto& jf : je.at("files"))
        e.files.push_back({jf.at("name").get<std::string>(), jf.at("digest").get<std::string>(),
                           jf.at("records").get<std::int64_t>()});
      e.metrics = je.at("metrics");
      m.add_entry(std::move(e));
    }
    if (j.contains("extra")) m.extra = j.at("extra");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_record, std::string("bad manifest: ") + e.what());
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
  write_file(path, canonical_dump(to_json(m), 2) + "\n");
}

inline RunManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(parse_json(read_file(path)));
}

/// Re-scans every referenced file; returns the names whose digest or record count drifted.
inline std::vector<std::string> verify_manifest_files(const RunManifest& m,
                                                      const std::filesystem::path& dir) {
  std::vector<std::string> bad;
  for (const auto& e : m.entries)
    for (const auto& f : e.files) {
      const auto now = describe_file(dir, f.name, f.records >= 0);
      if (now.digest != f.digest || now.records != f.records) bad.push_back(f.name);
    }
  return bad;
}

}  // namespace selfreward
