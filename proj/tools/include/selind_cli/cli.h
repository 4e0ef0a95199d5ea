#ifndef SELIND_CLI_CLI_H_
#define SELIND_CLI_CLI_H_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace selind::cli {

// Exit codes. Each configuration failure class has its own code.
enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kNonContiguous = 3,
  kSequenceTooShort = 4,
  kInvalidConfig = 5,
  kIoError = 6,
  kUnsupportedLagSet = 7,
};

inline constexpr const char* kOutDirEnv = "SELIND_OUT_DIR";

struct RunConfig {
  std::string subcommand;
  int alphabet_size = 5;
  int length = 128;
  int num_sequences = 256;
  std::vector<int> lags{1, 2, 3};
  std::string variant = "contiguous";
  double lambda = 500.0;
  double beta = 100.0;
  std::string beta_scaling = "calibrated";
  int heads = 0;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = 0;
  // claim
  int matrices = 20;
  int num_lags = 5;
  int max_lag = 10;
  bool exact = false;
  // eval
  bool beta_sweep = false;
  // attmaps
  int true_lag = 0;
  // lemmas
  int pairs = 1000;
  int samples = 20000;

  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& config);
void from_json(const nlohmann::json& j, RunConfig& config);

// Config fields that affect results; excludes the output directory and the
// thread count so manifests stay identical across machines.
nlohmann::json provenance(const RunConfig& config);

// Parses arguments (without the program name). Returns kOk and fills `config`
// on success; otherwise prints help or a diagnostic and returns the exit code
// to use. `handled` is set when help was printed.
int parse_args(const std::vector<std::string>& args, RunConfig& config,
               std::ostream& out, std::ostream& err, bool& handled);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace selind::cli

#endif  // SELIND_CLI_CLI_H_
