// SPDX-License-Identifier: Apache-2.0
//
// File formats of the data pipeline.
//
// Sensor CSV (one per subject x sensor, `<subject>_<sensor>.csv`):
//     t_ms,ax_g,ay_g,az_g
// Annotation CSV (one per subject, `<subject>_annotations.csv`):
//     start_ms,stop_ms,activity
// Window cache (`GWIN`), little-endian:
//     "GWIN" | version u16 (=1) | count u32
//     per window: subject (u16 length + UTF-8) | sensor u8 | label u8 | 180 x f32 row-major (60, 3)
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gaitsep/data.hpp"

namespace gaitsep {

inline constexpr std::uint16_t kWindowCacheVersion = 1;

/// Header names mapped onto the sensor CSV fields; lets original exports
/// with different column names be ingested without rewriting them.
struct CsvColumns {
  std::string time = "t_ms";
  std::string ax = "ax_g";
  std::string ay = "ay_g";
  std::string az = "az_g";
};

Recording read_sensor_csv(const std::filesystem::path& path, const std::string& subject_id, Sensor sensor,
                          const CsvColumns& columns = {});
std::vector<Annotation> read_annotation_csv(const std::filesystem::path& path);

std::filesystem::path sensor_csv_path(const std::filesystem::path& dir, const std::string& subject, Sensor sensor);
std::filesystem::path annotation_csv_path(const std::filesystem::path& dir, const std::string& subject);

std::vector<std::uint8_t> encode_window_cache(std::span<const Window> windows);
/// Windows are re-centred after the float32 round trip so the zero-mean
/// invariant holds in double precision. Throws DataError on malformed input.
std::vector<Window> decode_window_cache(std::span<const std::uint8_t> bytes);

void write_window_cache(const std::filesystem::path& path, std::span<const Window> windows);
std::vector<Window> read_window_cache(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace gaitsep
