#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

// Subcommand bodies, kept out of main() so they can be driven in-process.
// All of them throw the library error types; the binary turns those into
// stderr text and a non-zero exit.

namespace emi {

struct SynthArgs {
  std::string out_dir;
  int n_train = 48, n_val = 16, n_test = 16;
  double signal = 1.0;
  uint64_t seed = 7;
};
int cmd_synth(const SynthArgs& args, std::ostream& os);

struct TrainArgs {
  std::string manifest;
  std::string config_path;                // optional
  std::vector<std::string> overrides;     // section.key=value
  std::string modality = "visual";
  uint64_t seed = 7;
  std::string out_dir = ".";
  std::string resume;                     // optional state checkpoint
};
int cmd_train(const TrainArgs& args, std::ostream& os);

struct PredictArgs {
  std::string manifest;
  std::string checkpoint;
  std::string split = "test";
  std::string out_path;
};
int cmd_predict(const PredictArgs& args, std::ostream& os);

struct EvalArgs {
  std::string manifest;
  std::string predictions;
  std::string split = "test";
  std::string out_path;  // optional CSV report
};
int cmd_eval(const EvalArgs& args, std::ostream& os);

struct FuseArgs {
  std::string visual;
  std::string audio;
  std::string out_path;
  double w_visual = 1.0, w_audio = 1.0;
};
int cmd_fuse(const FuseArgs& args, std::ostream& os);

}  // namespace emi
