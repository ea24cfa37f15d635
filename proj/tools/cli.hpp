#ifndef STADV_TOOLS_CLI_HPP
#define STADV_TOOLS_CLI_HPP

#include "stadv/defenses.hpp"
#include "stadv/results.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace stadv::cli {

// Entry point shared by the executable and the tests. Returns the process
// exit code: 0 when every requested artifact was written, 1 on a runtime
// failure, CLI11's code on an argument error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Per-purpose random stream derived from the single --seed.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose);

struct MethodSummary {
  std::string method;
  std::string model;
  std::string defense;
  int attempted = 0;
  int succeeded = 0;
  MeanStd flow_tv;  // successes carrying a flow
  MeanStd flow_l2;
  double success_rate() const { return attempted ? double(succeeded) / attempted : 0.0; }
};

// Groups outcome records by (method, model, defense); other records are
// ignored. Used for printed tables and for re-aggregating results files.
std::vector<MethodSummary> summarize_records(const std::vector<Json>& records);

// "lo:hi:count" -> count log-spaced values from hi down to lo.
std::vector<double> parse_tau_grid(const std::string& spec);

}  // namespace stadv::cli

#endif  // STADV_TOOLS_CLI_HPP
