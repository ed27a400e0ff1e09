#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedstab/stability.hpp"

namespace fedstab::io {

// Writes `content` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, std::string_view content);

std::string read_text(const std::filesystem::path& path);

// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_hash(std::string_view content);

// Shortest round-trip decimal for finite values, "nan"/"inf" otherwise.
std::string format_double(double v);

struct LongRow {
  std::string sweep;
  std::string n;         // empty when not applicable
  std::string topology;  // "cfl" for FedAvg cells
  std::size_t m = 0;
  std::size_t S = 0;
  std::size_t K = 0;
  std::string metric;
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  double boot_lo = 0.0;
  double boot_hi = 0.0;
};

// Row for a single deterministic value (all statistics equal it).
LongRow scalar_row(LongRow factors, std::string metric, double value);
LongRow curve_row(LongRow factors, const stability::CurvePoint& point);

std::string long_csv(const std::vector<LongRow>& rows);

std::string bound_json(const stability::BoundReport& report);

}  // namespace fedstab::io
