// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "gaitsep/detail/bytes.hpp"

namespace gaitsep {
namespace {

/// Splits one CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\xEF\xBB\xBF");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

double parse_number(const std::string& text, const std::filesystem::path& path, std::size_t line) {
  const std::string t = trim(text);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw DataError(path.string() + ":" + std::to_string(line) + ": not a number: '" + t + "'");
  return v;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                         const std::filesystem::path& path) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == name) return i;
  throw DataError(path.string() + ": missing column '" + name + "'");
}

std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

std::filesystem::path sensor_csv_path(const std::filesystem::path& dir, const std::string& subject, Sensor sensor) {
  return dir / (subject + "_" + std::string(to_string(sensor)) + ".csv");
}

std::filesystem::path annotation_csv_path(const std::filesystem::path& dir, const std::string& subject) {
  return dir / (subject + "_annotations.csv");
}

Recording read_sensor_csv(const std::filesystem::path& path, const std::string& subject_id, Sensor sensor,
                          const CsvColumns& columns) {
  auto in = open_text(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_csv(line);
  const std::size_t it = column_index(header, columns.time, path);
  const std::array<std::size_t, 3> ia{column_index(header, columns.ax, path), column_index(header, columns.ay, path),
                                      column_index(header, columns.az, path)};
  const std::size_t width = std::max({it, ia[0], ia[1], ia[2]}) + 1;

  Recording rec;
  rec.subject_id = subject_id;
  rec.sensor = sensor;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() < width) throw DataError(path.string() + ":" + std::to_string(lineno) + ": too few fields");
    rec.timestamps_ms.push_back(parse_number(f[it], path, lineno));
    rec.samples.push_back({parse_number(f[ia[0]], path, lineno), parse_number(f[ia[1]], path, lineno),
                           parse_number(f[ia[2]], path, lineno)});
  }
  rec.validate();
  return rec;
}

std::vector<Annotation> read_annotation_csv(const std::filesystem::path& path) {
  auto in = open_text(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_csv(line);
  const std::size_t is = column_index(header, "start_ms", path);
  const std::size_t ie = column_index(header, "stop_ms", path);
  const std::size_t ia = column_index(header, "activity", path);
  const std::size_t width = std::max({is, ie, ia}) + 1;
  std::vector<Annotation> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() < width) throw DataError(path.string() + ":" + std::to_string(lineno) + ": too few fields");
    out.push_back({parse_number(f[is], path, lineno), parse_number(f[ie], path, lineno), trim(f[ia])});
  }
  return out;
}

std::vector<std::uint8_t> encode_window_cache(std::span<const Window> windows) {
  detail::ByteWriter w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("GWIN"), 4));
  w.u16(kWindowCacheVersion);
  w.u32(static_cast<std::uint32_t>(windows.size()));
  for (const auto& win : windows) {
    w.str(win.subject_id);
    w.u8(static_cast<std::uint8_t>(win.sensor));
    w.u8(static_cast<std::uint8_t>(win.label));
    for (double v : win.data) w.f32(static_cast<float>(v));
  }
  return w.take();
}

std::vector<Window> decode_window_cache(std::span<const std::uint8_t> bytes) {
  try {
    detail::ByteReader r(bytes);
    const auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), "GWIN")) throw DataError("not a GWIN window cache (bad magic)");
    const auto version = r.u16();
    if (version != kWindowCacheVersion)
      throw DataError("unsupported GWIN version " + std::to_string(version) + " (expected " +
                      std::to_string(kWindowCacheVersion) + ")");
    const std::uint32_t count = r.u32();
    std::vector<Window> out;
    out.reserve(std::min<std::size_t>(count, bytes.size() / (kWindowValues * 4)));
    for (std::uint32_t i = 0; i < count; ++i) {
      Window win;
      win.subject_id = r.str();
      const auto sensor = r.u8();
      const auto label = r.u8();
      if (sensor > 4) throw DataError("window " + std::to_string(i) + ": invalid sensor code " + std::to_string(sensor));
      if (label > 1) throw DataError("window " + std::to_string(i) + ": invalid label code " + std::to_string(label));
      win.sensor = static_cast<Sensor>(sensor);
      win.label = static_cast<Label>(label);
      win.offset = i;
      for (auto& v : win.data) v = static_cast<double>(r.f32());
      zero_center(win.data);
      out.push_back(std::move(win));
    }
    if (r.remaining() != 0) throw DataError("trailing bytes after " + std::to_string(count) + " windows");
    return out;
  } catch (const detail::TruncatedInput& e) {
    throw DataError(std::string("truncated window cache: ") + e.what());
  }
}

void write_window_cache(const std::filesystem::path& path, std::span<const Window> windows) {
  write_file_atomic(path, encode_window_cache(windows));
}

std::vector<Window> read_window_cache(const std::filesystem::path& path) {
  return decode_window_cache(read_file_bytes(path));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace gaitsep
