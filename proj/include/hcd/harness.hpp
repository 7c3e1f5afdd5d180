#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hcd/dataset.hpp"
#include "hcd/gradcheck.hpp"
#include "hcd/hcd.hpp"
#include "hcd/nn.hpp"
#include "hcd/teacher.hpp"

namespace hcd {

enum class Method { kCe, kKd, kHcd };
Method parse_method(const std::string& s);
std::string method_str(Method m);

struct ExperimentConfig {
  Method method = Method::kCe;
  HcdConfig hcd;
  SgdConfig sgd;
  std::vector<int64_t> student_channels = {16, 32, 64, 64};
  std::string dataset_path;
  std::string test_dataset_path;
  std::string teacher_path;  // required for kd and hcd
  uint64_t seed = 0;
  std::string out_dir;
  // Wall-clock seconds in metrics.csv are opt-in: with timing off the sec
  // column is 0 and every output byte is a function of the seeds alone.
  bool timing = false;

  void validate() const;
};

// Overlays a JSON document (object with optional keys: method, dataset,
// test_dataset, teacher, seed, out, timing, student.channels, hcd.*, sgd.*)
// onto cfg. Unknown keys are config errors.
void apply_config_json(ExperimentConfig& cfg, const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

// One metrics.csv line: epoch,ce,sub_ce,kl,sub_kl,orth,total,train_acc,
// test_acc,sec,seed
struct MetricsRow {
  int64_t epoch = 0;
  double ce = 0, sub_ce = 0, kl = 0, sub_kl = 0, orth = 0, total = 0;
  double train_acc = 0, test_acc = 0, sec = 0;
  uint64_t seed = 0;
};
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::string metrics_path;
  std::string checkpoint_path;
};

// Full training run: seeded shuffling, per-batch graph + backward + SGD,
// per-epoch evaluation, metrics.csv and final checkpoint under out_dir.
TrainResult train(const ExperimentConfig& cfg);

// Top-1 accuracy in percent, argmax with lowest-index tie-break,
// inference-mode batch norm.
double evaluate_net(const StudentNet& net, const Dataset& ds, int64_t eval_batch = 256);
double evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& ds,
                           const std::vector<int64_t>& channels = {16, 32, 64, 64});

struct AblateSpec {
  std::string axis;                 // n | losses | stages | fusion
  std::vector<std::string> values;  // per-axis value strings
  std::vector<uint64_t> seeds = {0};
};
// Top-level separator is ';' for the stages axis (cells contain commas)
// and ',' otherwise.
std::vector<std::string> split_values(const std::string& axis, const std::string& packed);

struct AblateRow {
  std::string axis, value;
  uint64_t seed = 0;
  double final_test_acc = 0, s_per_epoch = 0;
};
// One train() per (value, seed) cell, each in its own subdirectory of
// out_dir, plus an aggregate out_dir/ablate.csv. Cells may run on parallel
// threads; HCD_THREADS caps the worker count.
std::vector<AblateRow> ablate(const ExperimentConfig& base, const AblateSpec& spec,
                              const std::string& out_dir);

// Runs fn(0..cells-1) on up to HCD_THREADS workers (default: hardware
// concurrency), shrinking the OpenMP team per worker to avoid
// oversubscription. Exceptions propagate to the caller.
void run_cells_parallel(int64_t cells, const std::function<void(int64_t)>& fn);

// Full-objective gradient sweep on a synthetic batch (K=10, n=4, l=4,
// m=8, d=32): every parameter tensor is sampled so that at least
// target_coords coordinates are centrally differenced in total.
struct GradSuiteOptions {
  int64_t batch = 4;
  int64_t target_coords = 620;
  uint64_t seed = 0;
  double h = 1e-5;
  double tol = 1e-4;
};
GradCheckReport run_grad_suite(const GradSuiteOptions& opt);

}  // namespace hcd
