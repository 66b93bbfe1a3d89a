#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfreward/errors.hpp"
#include "selfreward/rng.hpp"

namespace selfreward {

using Json = nlohmann::ordered_json;

namespace detail {

inline void dump_number(std::string& out, double v) {
  if (!std::isfinite(v)) fail(ErrorCode::numerical_error, "non-finite value cannot be serialized");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
  const std::string_view s(buf);
  // keep floats recognizable as floats on re-read
  if (s.find_first_of(".eEn") == std::string_view::npos) out += ".0";
}

inline void dump_value(std::string& out, const Json& j, int indent, int depth) {
  auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case Json::value_t::null: out += "null"; break;
    case Json::value_t::boolean: out += j.get<bool>() ? "true" : "false"; break;
    case Json::value_t::number_integer: out += std::to_string(j.get<std::int64_t>()); break;
    case Json::value_t::number_unsigned: out += std::to_string(j.get<std::uint64_t>()); break;
    case Json::value_t::number_float: dump_number(out, j.get<double>()); break;
    case Json::value_t::string: out += j.dump(); break;
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        break;
      }
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        dump_value(out, v, indent, depth + 1);
      }
      newline(depth);
      out += ']';
      break;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        break;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += Json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump_value(out, it.value(), indent, depth + 1);
      }
      newline(depth);
      out += '}';
      break;
    }
    default: fail(ErrorCode::invalid_record, "unsupported json value");
  }
}

}  // namespace detail

/// Serializes with insertion-ordered keys and 17 significant digits for every float, so the
/// same value always produces the same bytes. indent < 0 gives a single line.
inline std::string canonical_dump(const Json& j, int indent = -1) {
  std::string out;
  detail::dump_value(out, j, indent, 0);
  return out;
}

inline Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_record, std::string("bad json: ") + e.what());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::not_found, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

inline std::string digest_bytes(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

/// FNV-1a digest of a file's bytes; "absent" for a missing file.
inline std::string file_digest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return "absent";
  return digest_bytes(read_file(path));
}

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::not_found, "cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_json(line));
  }
  return rows;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::string body;
  for (const auto& r : rows) {
    body += canonical_dump(r);
    body += '\n';
  }
  write_file(path, body);
}

}  // namespace selfreward
