#include "sqnt/reports.hpp"

#include <charconv>
#include <cstdio>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "sqnt/checkpoint.hpp"

#ifndef SQNT_VERSION_STRING
#define SQNT_VERSION_STRING "unknown"
#endif

namespace sqnt {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string divergence_csv(const DivergenceReport& report) {
  std::string out = "layer,mse\n";
  int layer = 1;
  for (const auto& l : report.layers) out += std::to_string(layer++) + "," + format_real(l.mse) + "\n";
  return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

MseSeries parse_divergence_csv(const std::string& text, const std::string& run) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_fields(line) != std::vector<std::string>{"layer", "mse"}) {
    throw ReportError(run + ": expected header 'layer,mse'");
  }
  MseSeries s;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_fields(line);
    if (f.size() != 2) throw ReportError(run + ": row " + std::to_string(row) + " needs 2 fields");
    try {
      std::size_t used = 0;
      s.layers.push_back(std::stoi(f[0], &used));
      if (used != f[0].size()) throw std::invalid_argument("trailing text");
      s.mse.push_back(std::stod(f[1], &used));
      if (used != f[1].size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw ReportError(run + ": row " + std::to_string(row) + " is not numeric");
    }
  }
  return s;
}

std::string comparison_csv(const MseSeries& nonsym, const std::string& nonsym_run,
                           const MseSeries& sym, const std::string& sym_run) {
  if (nonsym.layers != sym.layers) {
    throw ReportError("layer mismatch: " + nonsym_run + " has " + std::to_string(nonsym.layers.size()) +
                      " layers, " + sym_run + " has " + std::to_string(sym.layers.size()));
  }
  std::string out = "layer,nonsym,sym\n";
  for (std::size_t i = 0; i < sym.layers.size(); ++i) {
    out += std::to_string(sym.layers[i]) + "," + format_real(nonsym.mse[i]) + "," + format_real(sym.mse[i]) + "\n";
  }
  return out;
}

std::string step_bound_csv(const std::vector<StepBoundRow>& rows) {
  std::string out = "layer,kind,symmetric,h,norm_sq,bound,ok\n";
  for (const auto& r : rows) {
    if (!r.applicable) continue;
    out += std::to_string(r.index) + "," + std::string(to_string(r.kind)) + "," + (r.symmetric ? "1" : "0") +
           "," + format_real(r.h) + "," + format_real(r.norm_sq) + "," + format_real(r.bound) + "," +
           (r.ok ? "1" : "0") + "\n";
  }
  return out;
}

std::string growth_csv(const std::vector<double>& norms) {
  std::string out = "layer,norm\n";
  for (std::size_t i = 0; i < norms.size(); ++i) out += std::to_string(i) + "," + format_real(norms[i]) + "\n";
  return out;
}

std::string library_version() { return SQNT_VERSION_STRING; }

std::string manifest_json(const Manifest& m) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(m.config_hash));
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config_hash"] = hash;
  j["seed"] = m.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  if (!m.extra.empty()) j["extra"] = m.extra;
  j["versions"] = {{"sqnt", library_version()},
                   {"compiler", __VERSION__},
                   {"cxx_standard", static_cast<long>(__cplusplus)},
                   {"container_format", kContainerVersion}};
  return j.dump(2) + "\n";
}

void write_manifest(const std::string& path, const Manifest& m) { write_file_atomic(path, manifest_json(m)); }

}  // namespace sqnt
