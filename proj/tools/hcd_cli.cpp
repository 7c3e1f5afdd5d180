// Command-line front end: gen-data, gen-teacher, train, eval, ablate,
// gradcheck. Exit codes: 0 success, 1 validation/usage error, 2 runtime
// error (I/O, corrupt files, numeric failures).

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hcd/dataset.hpp"
#include "hcd/error.hpp"
#include "hcd/harness.hpp"
#include "hcd/teacher.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code_for(const hcd::Error& e) {
  switch (e.kind()) {
    case hcd::ErrorKind::kConfig:
    case hcd::ErrorKind::kCli:
    case hcd::ErrorKind::kShape:
      return 1;
    default:
      return 2;
  }
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    try {
      out.push_back(std::stoull(cell));
    } catch (const std::exception&) {
      hcd::fail(hcd::ErrorKind::kConfig, "bad seed: '" + cell + "'");
    }
  }
  if (out.empty()) hcd::fail(hcd::ErrorKind::kConfig, "empty seed list");
  return out;
}

std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    try {
      out.push_back(std::stoll(cell));
    } catch (const std::exception&) {
      hcd::fail(hcd::ErrorKind::kConfig, "not an integer: '" + cell + "'");
    }
  }
  return out;
}

struct TrainFlags {
  std::string method, config, dataset, test_dataset, teacher, out;
  std::string stages, fusion, channels;
  uint64_t seed = 0;
  int64_t epochs = -1, batch = -1, n = -1, m = -1, d = -1;
  double lr = -1, tau = -1, lambda = -1, beta = -1, omega = -1, alpha = -1;
  bool timing = false;
};

// Shared by train and ablate: JSON config first, then flag overrides.
hcd::ExperimentConfig build_config(const TrainFlags& f, const CLI::App* cmd) {
  hcd::ExperimentConfig cfg;
  if (!f.config.empty()) cfg = hcd::load_config_file(f.config);
  auto given = [&](const std::string& flag) { return cmd->count(flag) > 0; };
  if (given("--method")) cfg.method = hcd::parse_method(f.method);
  if (given("--dataset")) cfg.dataset_path = f.dataset;
  if (given("--test-dataset")) cfg.test_dataset_path = f.test_dataset;
  if (given("--teacher")) cfg.teacher_path = f.teacher;
  if (given("--epochs")) cfg.sgd.epochs = f.epochs;
  if (given("--batch")) cfg.sgd.batch_size = f.batch;
  if (given("--lr")) cfg.sgd.lr = f.lr;
  if (given("--n")) cfg.hcd.n = f.n;
  if (given("--m")) cfg.hcd.m = f.m;
  if (given("--d")) cfg.hcd.d = f.d;
  if (given("--tau")) cfg.hcd.tau = f.tau;
  if (given("--lambda")) cfg.hcd.lambda = f.lambda;
  if (given("--beta")) cfg.hcd.beta = f.beta;
  if (given("--omega")) cfg.hcd.omega = f.omega;
  if (given("--alpha")) cfg.hcd.alpha = f.alpha;
  if (given("--stages")) cfg.hcd.stages = parse_int_list(f.stages);
  if (given("--fusion")) cfg.hcd.fusion = hcd::parse_fusion(f.fusion);
  if (given("--channels")) cfg.student_channels = parse_int_list(f.channels);
  if (given("--timing")) cfg.timing = f.timing;
  cfg.seed = f.seed;
  cfg.out_dir = f.out;
  return cfg;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool require_run_args) {
  cmd->add_option("--method", f.method, "ce|kd|hcd");
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--dataset", f.dataset, "training HCDX file");
  cmd->add_option("--test-dataset", f.test_dataset, "test HCDX file");
  cmd->add_option("--teacher", f.teacher, "teacher HCDT file");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch", f.batch);
  cmd->add_option("--lr", f.lr);
  cmd->add_option("--n", f.n, "sub-logit count");
  cmd->add_option("--m", f.m, "pooled student feature width");
  cmd->add_option("--d", f.d, "teacher feature width");
  cmd->add_option("--tau", f.tau);
  cmd->add_option("--lambda", f.lambda);
  cmd->add_option("--beta", f.beta);
  cmd->add_option("--omega", f.omega);
  cmd->add_option("--alpha", f.alpha);
  cmd->add_option("--stages", f.stages, "comma-separated stage list, e.g. 1,2,3,4");
  cmd->add_option("--fusion", f.fusion, "add|none|ratio:a:b|weighted:a:b");
  cmd->add_option("--channels", f.channels, "student stage widths");
  cmd->add_flag("--timing", f.timing, "record wall-clock sec in metrics.csv");
  auto* seed = cmd->add_option("--seed", f.seed);
  auto* out = cmd->add_option("--out", f.out, "output directory");
  if (require_run_args) {
    seed->required();
    out->required();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hcd: heterogeneous complementary distillation lab"};
  app.require_subcommand(1);

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic dataset pair");
  std::string gd_kind = "bars", gd_out;
  int64_t gd_n = 2500, gd_test_n = 500, gd_k = 10, gd_c = 1, gd_h = 16, gd_w = 16;
  double gd_noise = 2.5;
  uint64_t gd_seed = 0;
  gen_data->add_option("--kind", gd_kind, "blobs|bars");
  gen_data->add_option("--n", gd_n, "training samples");
  gen_data->add_option("--test-n", gd_test_n, "test samples");
  gen_data->add_option("--k", gd_k);
  gen_data->add_option("--c", gd_c);
  gen_data->add_option("--height", gd_h);
  gen_data->add_option("--width", gd_w);
  gen_data->add_option("--noise", gd_noise);
  gen_data->add_option("--seed", gd_seed);
  gen_data->add_option("--out", gd_out, "output directory")->required();

  // gen-teacher
  auto* gen_teacher = app.add_subcommand("gen-teacher", "synthesize a frozen teacher dump");
  std::string gt_dataset, gt_out;
  double gt_quality = 0.95, gt_margin = 6.0;
  int64_t gt_d = 32;
  uint64_t gt_seed = 0;
  gen_teacher->add_option("--dataset", gt_dataset, "HCDX file to align with")->required();
  gen_teacher->add_option("--quality", gt_quality, "argmax accuracy knob in [0,1]");
  gen_teacher->add_option("--d", gt_d, "feature width");
  gen_teacher->add_option("--margin", gt_margin);
  gen_teacher->add_option("--seed", gt_seed);
  gen_teacher->add_option("--out", gt_out, "output HCDT file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a student");
  TrainFlags tf;
  add_train_flags(train_cmd, tf, /*require_run_args=*/true);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_checkpoint, ev_dataset, ev_channels = "16,32,64,64";
  eval_cmd->add_option("--checkpoint", ev_checkpoint)->required();
  eval_cmd->add_option("--dataset", ev_dataset)->required();
  eval_cmd->add_option("--channels", ev_channels, "student stage widths");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep one axis over seeds");
  TrainFlags af;
  std::string ab_axis, ab_values, ab_seeds = "0";
  ablate_cmd->add_option("--axis", ab_axis, "n|losses|stages|fusion")->required();
  ablate_cmd->add_option("--values", ab_values,
                         "','-separated (';' between stage sets)")->required();
  ablate_cmd->add_option("--seeds", ab_seeds, "comma-separated seed list");
  add_train_flags(ablate_cmd, af, /*require_run_args=*/true);

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "full-objective gradient sweep");
  int64_t gc_batch = 4, gc_coords = 620;
  uint64_t gc_seed = 0;
  double gc_h = 1e-5, gc_tol = 1e-4;
  gc_cmd->add_option("--batch", gc_batch);
  gc_cmd->add_option("--coords", gc_coords, "target coordinate count");
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--step", gc_h, "central-difference step");
  gc_cmd->add_option("--tol", gc_tol, "relative error bound");

  try {
    app.parse(argc, argv);

    if (*gen_data) {
      hcd::DataKind kind = hcd::parse_data_kind(gd_kind);
      fs::create_directories(gd_out);
      hcd::Dataset train =
          hcd::gen_dataset(kind, gd_n, gd_k, gd_c, gd_h, gd_w, gd_noise, gd_seed, 0);
      hcd::Dataset test =
          hcd::gen_dataset(kind, gd_test_n, gd_k, gd_c, gd_h, gd_w, gd_noise, gd_seed, 1);
      const std::string train_path = (fs::path(gd_out) / "train.hcdx").string();
      const std::string test_path = (fs::path(gd_out) / "test.hcdx").string();
      hcd::write_dataset(train_path, train);
      hcd::write_dataset(test_path, test);
      std::printf("wrote %s (%lld samples) and %s (%lld samples)\n", train_path.c_str(),
                  (long long)gd_n, test_path.c_str(), (long long)gd_test_n);
    } else if (*gen_teacher) {
      hcd::Dataset ds = hcd::read_dataset(gt_dataset);
      hcd::TeacherDump dump = hcd::synth_teacher(ds, gt_quality, gt_d, gt_margin, gt_seed);
      if (auto parent = fs::path(gt_out).parent_path(); !parent.empty())
        fs::create_directories(parent);
      hcd::write_teacher_dump(gt_out, dump);
      int64_t hits = 0;
      for (int64_t i = 0; i < dump.n; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < dump.k; ++j)
          if (dump.logits[size_t(i * dump.k + j)] > dump.logits[size_t(i * dump.k + best)])
            best = j;
        if (best == int64_t(ds.labels[size_t(i)])) ++hits;
      }
      std::printf("wrote %s (N=%lld d=%lld K=%lld, argmax accuracy %.2f%%)\n",
                  gt_out.c_str(), (long long)dump.n, (long long)dump.d,
                  (long long)dump.k, 100.0 * double(hits) / double(dump.n));
    } else if (*train_cmd) {
      hcd::ExperimentConfig cfg = build_config(tf, train_cmd);
      hcd::TrainResult r = hcd::train(cfg);
      const auto& last = r.rows.back();
      std::printf("%s: %lld epochs, final train %.2f%%, test %.2f%% -> %s\n",
                  hcd::method_str(cfg.method).c_str(), (long long)r.rows.size(),
                  last.train_acc, last.test_acc, r.metrics_path.c_str());
    } else if (*eval_cmd) {
      hcd::Dataset ds = hcd::read_dataset(ev_dataset);
      const double acc =
          hcd::evaluate_checkpoint(ev_checkpoint, ds, parse_int_list(ev_channels));
      std::printf("accuracy: %.4f%%\n", acc);
    } else if (*ablate_cmd) {
      hcd::ExperimentConfig base = build_config(af, ablate_cmd);
      hcd::AblateSpec spec;
      spec.axis = ab_axis;
      spec.values = hcd::split_values(ab_axis, ab_values);
      spec.seeds = parse_seed_list(ab_seeds);
      auto rows = hcd::ablate(base, spec, af.out);
      std::printf("ablate %s: %zu cells -> %s/ablate.csv\n", ab_axis.c_str(), rows.size(),
                  af.out.c_str());
      for (const auto& r : rows)
        std::printf("  %s=%s seed=%llu final_test_acc=%.2f s/epoch=%.3f\n",
                    r.axis.c_str(), r.value.c_str(), (unsigned long long)r.seed,
                    r.final_test_acc, r.s_per_epoch);
    } else if (*gc_cmd) {
      hcd::GradSuiteOptions opt;
      opt.batch = gc_batch;
      opt.target_coords = gc_coords;
      opt.seed = gc_seed;
      opt.h = gc_h;
      opt.tol = gc_tol;
      hcd::GradCheckReport rep = hcd::run_grad_suite(opt);
      std::printf("gradcheck: %lld coordinates, %lld kink-skipped, max rel err %.3e\n",
                  (long long)rep.checked, (long long)rep.skipped_kinks, rep.max_rel_err);
      if (!rep.passed(gc_tol)) {
        std::printf("FAIL: tolerance %.1e exceeded (input %zu coord %lld: ad=%.6e fd=%.6e)\n",
                    gc_tol, rep.worst.input, (long long)rep.worst.coord,
                    rep.worst.autodiff, rep.worst.finite_diff);
        return 2;
      }
      std::printf("PASS (tolerance %.1e)\n", gc_tol);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const hcd::Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", hcd::error_kind_name(e.kind()), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
