#pragma once

// CSV and JSON emitters for experiment outputs. Every CSV has one header row
// and plain comma separation.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqnt/stability.hpp"

namespace sqnt {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest text that reads back to the same double.
std::string format_real(double v);

/// Per-layer MSE of one network: `layer,mse`, layers numbered from 1 in trunk order.
std::string divergence_csv(const DivergenceReport& report);

struct MseSeries {
  std::vector<int> layers;
  std::vector<double> mse;
};

/// Parses `layer,mse` text; errors mention `run`.
MseSeries parse_divergence_csv(const std::string& text, const std::string& run);

/// `layer,nonsym,sym`. Throws ReportError naming both runs when the layer
/// lists differ.
std::string comparison_csv(const MseSeries& nonsym, const std::string& nonsym_run,
                           const MseSeries& sym, const std::string& sym_run);

/// `layer,kind,symmetric,h,norm_sq,bound,ok`
std::string step_bound_csv(const std::vector<StepBoundRow>& rows);
/// `layer,norm`, layer 0 being the injected perturbation.
std::string growth_csv(const std::vector<double>& norms);

struct Manifest {
  std::string command;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::map<std::string, std::string> extra;
};

std::string library_version();
/// JSON object with the fields above plus library/compiler versions.
std::string manifest_json(const Manifest& m);
void write_manifest(const std::string& path, const Manifest& m);

}  // namespace sqnt
