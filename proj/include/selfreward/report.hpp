#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "selfreward/manifest.hpp"

namespace selfreward {

namespace detail {

inline std::string pct_cell(const Json& metrics, const char* key) {
  if (!metrics.is_object() || !metrics.contains(key) || metrics.at(key).is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * metrics.at(key).get<double>());
  return buf;
}

inline std::string corr_cell(const Json& metrics, const char* key) {
  if (!metrics.is_object() || !metrics.contains(key) || metrics.at(key).is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", metrics.at(key).get<double>());
  return buf;
}

inline std::string arena_cell(const Json& metrics, const char* key) {
  if (!metrics.is_object() || !metrics.contains(key)) return "-";
  const auto& a = metrics.at(key);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f (%ld/%ld/%ld)", a.at("win_rate_a").get<double>(),
                a.at("wins_a").get<long>(), a.at("wins_b").get<long>(), a.at("ties").get<long>());
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline void emit_row(std::ostringstream& out, const std::vector<std::string>& cells,
                     const std::vector<std::size_t>& widths) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << pad(cells[i], widths[i]) << (i + 1 < cells.size() ? "  " : "");
  out << "\n";
}

}  // namespace detail

/// Run ids under `root` that have a manifest, sorted.
inline std::vector<std::string> list_runs(const std::filesystem::path& root) {
  std::vector<std::string> ids;
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) return ids;
  for (const auto& d : std::filesystem::directory_iterator(root))
    if (d.is_directory() && std::filesystem::exists(d.path() / "manifest.json"))
      ids.push_back(d.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Text summary of a run: one row per model (SFT baseline, M1..MT) with the arena
/// win rates against the baseline and the previous model, then the reward-model table.
inline std::string render_report(const RunManifest& m) {
  std::ostringstream out;
  out << "run " << m.run_id << "  config " << m.config_hash << "\n\n";

  const std::vector<std::size_t> w1{10, 8, 28, 28, 10};
  out << "Instruction following (oracle judge, win rate (W/L/T))\n";
  detail::emit_row(out, {"model", "status", "vs SFT baseline", "vs previous", "pairs"}, w1);
  detail::emit_row(out, {"SFT", "ok", "-", "-", "-"}, w1);
  for (const auto& e : m.entries) {
    if (e.iteration == 0) continue;
    std::string status = e.status;
    if (e.status != "ok") status = "FAILED";
    std::string pairs = "-";
    if (e.counts.contains("pairs")) pairs = std::to_string(e.counts.at("pairs").at("aift_pairs").get<long>());
    else if (e.counts.contains("positives")) pairs = std::to_string(e.counts.at("positives").get<long>()) + "+";
    detail::emit_row(out,
                     {"M" + std::to_string(e.iteration), status, detail::arena_cell(e.metrics, "arena_vs_baseline"),
                      detail::arena_cell(e.metrics, "arena_vs_prev"), pairs},
                     w1);
  }

  out << "\nReward modeling (held-out EFT groups)\n";
  const std::vector<std::size_t> w2{10, 10, 10, 10, 10, 10};
  detail::emit_row(out, {"model", "pairwise", "5-best", "exact", "spearman", "kendall"}, w2);
  auto rm_row = [&](const std::string& name, const Json& rm) {
    detail::emit_row(out,
                     {name, detail::pct_cell(rm, "pairwise_acc"), detail::pct_cell(rm, "five_best_pct"),
                      detail::pct_cell(rm, "exact_match_pct"), detail::corr_cell(rm, "spearman"),
                      detail::corr_cell(rm, "kendall_tau")},
                     w2);
  };
  if (m.extra.contains("sft_baseline")) rm_row("SFT", m.extra.at("sft_baseline").value("rm", Json::object()));
  for (const auto& e : m.entries) {
    if (e.iteration == 0) continue;
    rm_row("M" + std::to_string(e.iteration), e.metrics.value("rm", Json::object()));
  }

  bool saturation_header = false;
  for (const auto& e : m.entries) {
    if (!e.counts.contains("candidates")) continue;
    if (!saturation_header) {
      out << "\nSelf-judging\n";
      saturation_header = true;
    }
    const auto& c = e.counts.at("candidates");
    char buf[160];
    double discard = 0.0;
    if (e.counts.contains("pairs")) discard = e.counts.at("pairs").value("pair_discard_rate", 0.0);
    std::snprintf(buf, sizeof buf, "AIFT(M%d): mean score %.3f, pair discard rate %.3f, parse failures %ld\n",
                  e.iteration - 1, c.value("mean_score", 0.0), discard, c.value("judge_parse_failures", 0L));
    out << buf;
  }

  for (const auto& e : m.entries)
    if (e.status != "ok")
      out << "\nM" << e.iteration << " failed at stage '" << e.failed_stage << "': " << e.error << "\n";
  out << "\nmodel ties count as disagreement; correlations are means over groups\n";
  return out.str();
}

inline std::string report(const std::filesystem::path& root, const std::string& run_id) {
  const auto path = root / run_id / "manifest.json";
  if (list_runs(root).empty()) fail(ErrorCode::not_found, "no runs under " + root.string());
  if (!std::filesystem::exists(path)) fail(ErrorCode::not_found, "unknown run id " + run_id);
  return render_report(load_manifest(path));
}

}  // namespace selfreward
