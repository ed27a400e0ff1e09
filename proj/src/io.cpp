#include "fedstab/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>
#include "json.hpp"

#include "fedstab/errors.hpp"

namespace fedstab::io {

void write_text(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string git_blob_hash(std::string_view content) {
  std::string blob = fmt::format("blob {}", content.size());
  blob.push_back('\0');
  blob.append(content);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &length, EVP_sha1(), nullptr) != 1) {
    throw NumericalError("SHA-1 digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

LongRow scalar_row(LongRow factors, std::string metric, double value) {
  factors.metric = std::move(metric);
  factors.count = 1;
  factors.mean = factors.median = factors.q05 = factors.q95 = value;
  factors.boot_lo = factors.boot_hi = value;
  return factors;
}

LongRow curve_row(LongRow factors, const stability::CurvePoint& p) {
  factors.metric = p.metric;
  factors.count = p.count;
  factors.mean = p.mean;
  factors.median = p.median;
  factors.q05 = p.q05;
  factors.q95 = p.q95;
  factors.boot_lo = p.boot_lo;
  factors.boot_hi = p.boot_hi;
  return factors;
}

std::string long_csv(const std::vector<LongRow>& rows) {
  std::string out = "sweep,n,topology,m,S,K,metric,count,mean,median,q05,q95,boot_lo,boot_hi\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.sweep, r.n, r.topology,
                       r.m, r.S, r.K, r.metric, r.count, format_double(r.mean),
                       format_double(r.median), format_double(r.q05), format_double(r.q95),
                       format_double(r.boot_lo), format_double(r.boot_hi));
  }
  return out;
}

std::string bound_json(const stability::BoundReport& r) {
  nlohmann::ordered_json j = {
      {"theorem", r.theorem},
      {"epsilon", r.epsilon},
      {"tau0", r.tau0},
      {"tau0_raw", r.tau0_raw},
      {"tau0_clamped", r.clamped},
      {"muL", r.muL},
      {"inputs",
       {{"L", r.constants.L},
        {"L_shard", r.constants.L_shard},
        {"sigma_l", r.constants.sigma_l},
        {"G", r.constants.G},
        {"U", r.constants.U},
        {"mu", r.constants.mu},
        {"probes_used", r.constants.probes_used},
        {"m", r.m},
        {"n", r.n},
        {"kappa_lambda", r.kappa},
        {"S", r.S},
        {"T", r.T},
        {"K", r.K}}},
  };
  j["empirical_gap"] = r.empirical_gap ? nlohmann::ordered_json(*r.empirical_gap) : nullptr;
  return j.dump(2) + "\n";
}

}  // namespace fedstab::io
