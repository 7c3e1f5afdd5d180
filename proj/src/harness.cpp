#include "hcd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "hcd/error.hpp"
#include "hcd/io.hpp"
#include "hcd/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hcd {

namespace fs = std::filesystem;
using nlohmann::json;

Method parse_method(const std::string& s) {
  if (s == "ce") return Method::kCe;
  if (s == "kd") return Method::kKd;
  if (s == "hcd") return Method::kHcd;
  fail(ErrorKind::kConfig, "unknown method: " + s + " (expected ce|kd|hcd)");
}

std::string method_str(Method m) {
  switch (m) {
    case Method::kCe: return "ce";
    case Method::kKd: return "kd";
    case Method::kHcd: return "hcd";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  sgd.validate();
  if (dataset_path.empty()) fail(ErrorKind::kConfig, "dataset path is required");
  if (test_dataset_path.empty()) fail(ErrorKind::kConfig, "test dataset path is required");
  if (method != Method::kCe && teacher_path.empty())
    fail(ErrorKind::kConfig, method_str(method) + " training requires a teacher dump");
  if (student_channels.empty())
    fail(ErrorKind::kConfig, "student needs at least one stage");
}

// ---- JSON config -----------------------------------------------------------

namespace {

template <typename T>
T get_number(const json& j, const std::string& key) {
  if (!j.is_number())
    fail(ErrorKind::kConfig, "config key '" + key + "' must be a number");
  return j.get<T>();
}

std::vector<int64_t> get_int_list(const json& j, const std::string& key) {
  if (!j.is_array()) fail(ErrorKind::kConfig, "config key '" + key + "' must be an array");
  std::vector<int64_t> out;
  for (const auto& v : j) out.push_back(get_number<int64_t>(v, key));
  return out;
}

void apply_hcd_json(HcdConfig& h, const json& j) {
  for (const auto& [key, val] : j.items()) {
    if (key == "n") h.n = get_number<int64_t>(val, key);
    else if (key == "tau") h.tau = get_number<double>(val, key);
    else if (key == "theta") h.theta = get_number<double>(val, key);
    else if (key == "eps_mask") h.eps_mask = get_number<double>(val, key);
    else if (key == "lambda") h.lambda = get_number<double>(val, key);
    else if (key == "beta") h.beta = get_number<double>(val, key);
    else if (key == "omega") h.omega = get_number<double>(val, key);
    else if (key == "alpha") h.alpha = get_number<double>(val, key);
    else if (key == "stages") h.stages = get_int_list(val, key);
    else if (key == "m") h.m = get_number<int64_t>(val, key);
    else if (key == "d") h.d = get_number<int64_t>(val, key);
    else if (key == "fusion") h.fusion = parse_fusion(val.get<std::string>());
    else if (key == "tau_squared_kl") h.tau_squared_kl = val.get<bool>();
    else if (key == "sub_kd_detach_student") h.sub_kd_detach_student = val.get<bool>();
    else fail(ErrorKind::kConfig, "unknown config key hcd." + key);
  }
}

void apply_sgd_json(SgdConfig& s, const json& j) {
  for (const auto& [key, val] : j.items()) {
    if (key == "lr") s.lr = get_number<double>(val, key);
    else if (key == "momentum") s.momentum = get_number<double>(val, key);
    else if (key == "weight_decay") s.weight_decay = get_number<double>(val, key);
    else if (key == "epochs") s.epochs = get_number<int64_t>(val, key);
    else if (key == "batch_size") s.batch_size = get_number<int64_t>(val, key);
    else if (key == "lr_decay_epoch") s.lr_decay_epoch = get_number<int64_t>(val, key);
    else if (key == "lr_decay_factor") s.lr_decay_factor = get_number<double>(val, key);
    else fail(ErrorKind::kConfig, "unknown config key sgd." + key);
  }
}

}  // namespace

void apply_config_json(ExperimentConfig& cfg, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    fail(ErrorKind::kConfig, std::string("config JSON parse error: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::kConfig, "config JSON must be an object");
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "method") cfg.method = parse_method(val.get<std::string>());
      else if (key == "dataset") cfg.dataset_path = val.get<std::string>();
      else if (key == "test_dataset") cfg.test_dataset_path = val.get<std::string>();
      else if (key == "teacher") cfg.teacher_path = val.get<std::string>();
      else if (key == "seed") cfg.seed = get_number<uint64_t>(val, key);
      else if (key == "out") cfg.out_dir = val.get<std::string>();
      else if (key == "timing") cfg.timing = val.get<bool>();
      else if (key == "student") {
        for (const auto& [k2, v2] : val.items()) {
          if (k2 == "channels") cfg.student_channels = get_int_list(v2, k2);
          else fail(ErrorKind::kConfig, "unknown config key student." + k2);
        }
      } else if (key == "hcd") apply_hcd_json(cfg.hcd, val);
      else if (key == "sgd") apply_sgd_json(cfg.sgd, val);
      else fail(ErrorKind::kConfig, "unknown config key " + key);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::kConfig, std::string("invalid config value: ") + e.what());
  }
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg;
  apply_config_json(cfg, ss.str());
  return cfg;
}

// ---- metrics CSV -------------------------------------------------------------

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open for write: " + path);
  out << "epoch,ce,sub_ce,kl,sub_kl,orth,total,train_acc,test_acc,sec,seed\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.4f,%.4f,%.3f,%llu\n",
                  static_cast<long long>(r.epoch), r.ce, r.sub_ce, r.kl, r.sub_kl,
                  r.orth, r.total, r.train_acc, r.test_acc, r.sec,
                  static_cast<unsigned long long>(r.seed));
    out << buf;
  }
  if (!out) fail(ErrorKind::kIo, "write failed: " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open for read: " + path);
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorKind::kFormat, "empty metrics file: " + path);
  if (line != "epoch,ce,sub_ce,kl,sub_kl,orth,total,train_acc,test_acc,sec,seed")
    fail(ErrorKind::kFormat, "unexpected metrics header in " + path + ": " + line);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) parts.push_back(cell);
    if (parts.size() != 11)
      fail(ErrorKind::kFormat, "malformed metrics row in " + path + ": " + line);
    MetricsRow r;
    r.epoch = std::stoll(parts[0]);
    r.ce = std::stod(parts[1]);
    r.sub_ce = std::stod(parts[2]);
    r.kl = std::stod(parts[3]);
    r.sub_kl = std::stod(parts[4]);
    r.orth = std::stod(parts[5]);
    r.total = std::stod(parts[6]);
    r.train_acc = std::stod(parts[7]);
    r.test_acc = std::stod(parts[8]);
    r.sec = std::stod(parts[9]);
    r.seed = std::stoull(parts[10]);
    rows.push_back(r);
  }
  return rows;
}

// ---- evaluation ----------------------------------------------------------------

namespace {

Tensor gather_images(const Dataset& ds, const std::vector<int64_t>& idx) {
  const int64_t plane = ds.c * ds.h * ds.w;
  Tensor x({int64_t(idx.size()), ds.c, ds.h, ds.w});
  for (size_t b = 0; b < idx.size(); ++b) {
    const float* src = ds.images.data() + idx[b] * plane;
    double* dst = x.data() + int64_t(b) * plane;
    for (int64_t p = 0; p < plane; ++p) dst[p] = double(src[p]);
  }
  return x;
}

int64_t argmax_row(const double* row, int64_t k) {
  int64_t best = 0;
  for (int64_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;  // strict: lowest index wins ties
  return best;
}

}  // namespace

double evaluate_net(const StudentNet& net, const Dataset& ds, int64_t eval_batch) {
  int64_t correct = 0;
  for (int64_t start = 0; start < ds.n; start += eval_batch) {
    const int64_t stop = std::min(ds.n, start + eval_batch);
    std::vector<int64_t> idx;
    for (int64_t i = start; i < stop; ++i) idx.push_back(i);
    Tensor x = gather_images(ds, idx);
    StudentOutput so = net.forward(x, /*training=*/false);
    const int64_t k = so.logits.shape()[1];
    for (int64_t b = 0; b < stop - start; ++b)
      if (argmax_row(so.logits.data() + b * k, k) == int64_t(ds.labels[size_t(start + b)]))
        ++correct;
  }
  return 100.0 * double(correct) / double(ds.n);
}

double evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& ds,
                           const std::vector<int64_t>& channels) {
  ParamStore store;
  StudentNet net(store, ds.c, ds.h, ds.w, ds.k, channels);
  load_checkpoint(checkpoint_path, store);
  return evaluate_net(net, ds);
}

// ---- training --------------------------------------------------------------------

namespace {

void check_breakdown_finite(const LossBreakdown& bd, int64_t epoch, int64_t batch) {
  const std::pair<const char*, double> terms[] = {
      {"ce", bd.ce},     {"sub_ce", bd.sub_ce}, {"kl", bd.kl},
      {"sub_kl", bd.sub_kl}, {"orth", bd.orth}, {"total", bd.total}};
  for (const auto& [name, value] : terms)
    if (!std::isfinite(value))
      fail(ErrorKind::kNumeric, std::string("non-finite loss term '") + name +
                                    "' at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch));
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset train_ds = read_dataset(cfg.dataset_path);
  Dataset test_ds = read_dataset(cfg.test_dataset_path);
  if (test_ds.k != train_ds.k || test_ds.c != train_ds.c || test_ds.h != train_ds.h ||
      test_ds.w != train_ds.w)
    fail(ErrorKind::kConfig, "train/test dataset geometry mismatch");

  TeacherDump teacher;
  const bool uses_teacher = cfg.method != Method::kCe;
  if (uses_teacher) {
    teacher = read_teacher_dump(cfg.teacher_path);
    if (teacher.n != train_ds.n)
      fail(ErrorKind::kConfig, "teacher dump has " + std::to_string(teacher.n) +
                                   " samples but the dataset has " +
                                   std::to_string(train_ds.n) + " (index alignment)");
    if (teacher.k != train_ds.k)
      fail(ErrorKind::kConfig, "teacher dump K=" + std::to_string(teacher.k) +
                                   " vs dataset K=" + std::to_string(train_ds.k));
    if (cfg.method == Method::kHcd && teacher.d != cfg.hcd.d)
      fail(ErrorKind::kConfig, "teacher dump d=" + std::to_string(teacher.d) +
                                   " vs configured d=" + std::to_string(cfg.hcd.d));
  }

  ParamStore store;
  StudentNet net(store, train_ds.c, train_ds.h, train_ds.w, train_ds.k,
                 cfg.student_channels);
  std::vector<CfmHead> heads;
  if (cfg.method == Method::kHcd) {
    cfg.hcd.validate(net.num_stages());
    for (int64_t stage : cfg.hcd.stages)
      heads.emplace_back(store, "cfm.stage" + std::to_string(stage),
                         net.stage_channels(stage - 1), cfg.hcd.m, cfg.hcd.d,
                         cfg.hcd.n, train_ds.k);
  }
  init_params(store, Rng::mix(cfg.seed, 0xA111));
  Sgd opt(store, cfg.sgd);
  Rng shuffle_rng = Rng(cfg.seed).fork(0x5E5);

  fs::create_directories(cfg.out_dir);
  const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  const std::string checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.hcdp").string();

  std::vector<int64_t> order(size_t(train_ds.n));
  for (size_t i = 0; i < order.size(); ++i) order[i] = int64_t(i);

  TrainResult result;
  for (int64_t epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        cfg.sgd.lr * (epoch >= cfg.sgd.lr_decay_epoch ? cfg.sgd.lr_decay_factor : 1.0);
    shuffle_rng.shuffle(order);

    LossBreakdown sums;
    int64_t batches = 0, correct = 0;
    for (int64_t start = 0; start < train_ds.n; start += cfg.sgd.batch_size) {
      const int64_t stop = std::min(train_ds.n, start + cfg.sgd.batch_size);
      const int64_t bsz = stop - start;
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      Tensor x = gather_images(train_ds, idx);
      std::vector<int64_t> labels(static_cast<size_t>(bsz), 0);
      for (int64_t b = 0; b < bsz; ++b)
        labels[size_t(b)] = int64_t(train_ds.labels[size_t(idx[size_t(b)])]);

      Tensor t_feats, t_logits;
      if (uses_teacher) {
        t_feats = Tensor({bsz, teacher.d});
        t_logits = Tensor({bsz, teacher.k});
        for (int64_t b = 0; b < bsz; ++b) {
          for (int64_t j = 0; j < teacher.d; ++j)
            t_feats.data()[b * teacher.d + j] =
                double(teacher.features[size_t(idx[size_t(b)] * teacher.d + j)]);
          for (int64_t j = 0; j < teacher.k; ++j)
            t_logits.data()[b * teacher.k + j] =
                double(teacher.logits[size_t(idx[size_t(b)] * teacher.k + j)]);
        }
      }

      Graph g;
      Recording rec(g);
      StudentOutput so = net.forward(x, /*training=*/true);
      LossBreakdown bd;
      Tensor loss;
      switch (cfg.method) {
        case Method::kCe: {
          loss = cross_entropy(so.logits, labels);
          bd.ce = loss.item();
          bd.total = bd.ce;
          break;
        }
        case Method::kKd: {
          Tensor ce = cross_entropy(so.logits, labels);
          Tensor kl = kl_divergence(t_logits, so.logits, cfg.hcd.tau);
          if (cfg.hcd.tau_squared_kl) kl = scale(kl, cfg.hcd.tau * cfg.hcd.tau);
          loss = add(scale(ce, cfg.hcd.alpha), scale(kl, 1.0 - cfg.hcd.alpha));
          bd.ce = ce.item();
          bd.kl = kl.item();
          bd.total = loss.item();
          break;
        }
        case Method::kHcd: {
          std::vector<Tensor> feats;
          for (int64_t stage : cfg.hcd.stages)
            feats.push_back(so.stage_feats[size_t(stage - 1)]);
          loss = hcd_total_loss(so.logits, feats, heads, t_feats, t_logits, labels,
                                cfg.hcd, /*training=*/true, /*update_running=*/true, &bd);
          break;
        }
      }
      check_breakdown_finite(bd, epoch, batches);
      g.backward(loss);
      opt.step(lr);

      sums.ce += bd.ce;
      sums.sub_ce += bd.sub_ce;
      sums.kl += bd.kl;
      sums.sub_kl += bd.sub_kl;
      sums.orth += bd.orth;
      sums.total += bd.total;
      const int64_t k = so.logits.shape()[1];
      for (int64_t b = 0; b < bsz; ++b)
        if (argmax_row(so.logits.data() + b * k, k) == labels[size_t(b)]) ++correct;
      ++batches;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.ce = sums.ce / double(batches);
    row.sub_ce = sums.sub_ce / double(batches);
    row.kl = sums.kl / double(batches);
    row.sub_kl = sums.sub_kl / double(batches);
    row.orth = sums.orth / double(batches);
    row.total = sums.total / double(batches);
    row.train_acc = 100.0 * double(correct) / double(train_ds.n);
    row.test_acc = evaluate_net(net, test_ds);
    row.seed = cfg.seed;
    if (cfg.timing) {
      const auto t1 = std::chrono::steady_clock::now();
      row.sec = std::chrono::duration<double>(t1 - t0).count();
    }
    result.rows.push_back(row);
  }

  write_metrics_csv(metrics_path, result.rows);
  save_checkpoint(checkpoint_path, store);
  result.metrics_path = metrics_path;
  result.checkpoint_path = checkpoint_path;
  return result;
}

// ---- ablation ---------------------------------------------------------------------

std::vector<std::string> split_values(const std::string& axis, const std::string& packed) {
  const char sep = axis == "stages" ? ';' : ',';
  std::vector<std::string> out;
  std::stringstream ss(packed);
  std::string cell;
  while (std::getline(ss, cell, sep))
    if (!cell.empty()) out.push_back(cell);
  if (out.empty()) fail(ErrorKind::kConfig, "no ablation values given");
  return out;
}

namespace {

int64_t parse_int(const std::string& s) {
  try {
    size_t used = 0;
    const int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, "not an integer: '" + s + "'");
  }
}

std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ','))
    if (!cell.empty()) out.push_back(parse_int(cell));
  return out;
}

ExperimentConfig derive_cell(const ExperimentConfig& base, const std::string& axis,
                             const std::string& value) {
  ExperimentConfig cfg = base;
  cfg.method = Method::kHcd;
  if (axis == "n") {
    cfg.hcd.n = parse_int(value);
  } else if (axis == "losses") {
    if (value == "kd") {
      cfg.hcd.beta = 0.0;
      cfg.hcd.omega = 0.0;
    } else if (value == "kd+subkl") {
      cfg.hcd.omega = 0.0;
    } else if (value == "kd+subkl+orth") {
      // full objective
    } else {
      fail(ErrorKind::kConfig,
           "unknown losses cell: " + value + " (expected kd|kd+subkl|kd+subkl+orth)");
    }
  } else if (axis == "stages") {
    cfg.hcd.stages = parse_int_list(value);
  } else if (axis == "fusion") {
    cfg.hcd.fusion = parse_fusion(value);
  } else {
    fail(ErrorKind::kConfig, "unknown ablation axis: " + axis +
                                 " (expected n|losses|stages|fusion)");
  }
  return cfg;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '+' ||
            c == '-')
               ? c
               : '-';
  return out;
}

// CSV cell rendering: no commas allowed, so stage lists use '+'.
std::string csv_value(const std::string& value) {
  std::string out = value;
  std::replace(out.begin(), out.end(), ',', '+');
  return out;
}

}  // namespace

void run_cells_parallel(int64_t cells, const std::function<void(int64_t)>& fn) {
  int64_t workers = int64_t(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (const char* env = std::getenv("HCD_THREADS")) {
    try {
      workers = std::min<int64_t>(workers, std::max<int64_t>(1, std::stoll(env)));
    } catch (const std::exception&) {
      fail(ErrorKind::kConfig, std::string("HCD_THREADS is not an integer: ") + env);
    }
  }
  workers = std::min(workers, cells);
  if (workers <= 1) {
    for (int64_t i = 0; i < cells; ++i) fn(i);
    return;
  }

#ifdef _OPENMP
  const int64_t omp_per_worker =
      std::max<int64_t>(1, int64_t(std::thread::hardware_concurrency()) / workers);
#endif
  std::atomic<int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int64_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
#ifdef _OPENMP
      omp_set_num_threads(int(omp_per_worker));
#endif
      while (true) {
        const int64_t i = next.fetch_add(1);
        if (i >= cells || failed.load()) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mu);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          break;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<AblateRow> ablate(const ExperimentConfig& base, const AblateSpec& spec,
                              const std::string& out_dir) {
  if (spec.values.empty()) fail(ErrorKind::kConfig, "ablate needs at least one value");
  if (spec.seeds.empty()) fail(ErrorKind::kConfig, "ablate needs at least one seed");
  fs::create_directories(out_dir);

  struct Cell {
    std::string value;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& v : spec.values)
    for (uint64_t s : spec.seeds) cells.push_back({v, s});

  std::vector<AblateRow> rows(cells.size());
  run_cells_parallel(int64_t(cells.size()), [&](int64_t i) {
    const Cell& cell = cells[size_t(i)];
    ExperimentConfig cfg = derive_cell(base, spec.axis, cell.value);
    cfg.seed = cell.seed;
    cfg.timing = true;  // the aggregate reports s/epoch
    cfg.out_dir = (fs::path(out_dir) / (spec.axis + "_" + sanitize(cell.value) + "_s" +
                                        std::to_string(cell.seed)))
                      .string();
    TrainResult r = train(cfg);
    double sec = 0.0;
    for (const auto& row : r.rows) sec += row.sec;
    rows[size_t(i)] = AblateRow{spec.axis, csv_value(cell.value), cell.seed,
                                r.rows.back().test_acc, sec / double(r.rows.size())};
  });

  std::ofstream out(fs::path(out_dir) / "ablate.csv", std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write ablate.csv under " + out_dir);
  out << "axis,value,seed,final_test_acc,s_per_epoch\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.4f,%.3f\n", r.axis.c_str(),
                  r.value.c_str(), static_cast<unsigned long long>(r.seed),
                  r.final_test_acc, r.s_per_epoch);
    out << buf;
  }
  return rows;
}

// ---- gradient suite -----------------------------------------------------------------

GradCheckReport run_grad_suite(const GradSuiteOptions& opt) {
  constexpr int64_t kClasses = 10, kHeight = 16, kWidth = 16;
  Rng rng(opt.seed);
  Rng x_rng = rng.fork(0x1);
  Rng t_rng = rng.fork(0x2);

  Tensor x({opt.batch, 1, kHeight, kWidth});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = x_rng.normal();
  std::vector<int64_t> labels(size_t(opt.batch));
  for (auto& y : labels) y = int64_t(x_rng.next_below(kClasses));

  HcdConfig hcfg;  // paper defaults; desk widths for the sweep
  hcfg.m = 8;
  hcfg.d = 32;

  Tensor t_feats({opt.batch, hcfg.d});
  for (int64_t i = 0; i < t_feats.size(); ++i) t_feats.data()[i] = t_rng.normal();
  Tensor t_logits({opt.batch, kClasses});
  for (int64_t b = 0; b < opt.batch; ++b)
    for (int64_t j = 0; j < kClasses; ++j)
      t_logits.data()[b * kClasses + j] =
          (j == labels[size_t(b)] ? 6.0 : 0.0) + 0.5 * t_rng.normal();

  ParamStore store;
  StudentNet net(store, 1, kHeight, kWidth, kClasses, {16, 32, 64, 64});
  std::vector<CfmHead> heads;
  for (int64_t stage : hcfg.stages)
    heads.emplace_back(store, "cfm.stage" + std::to_string(stage),
                       net.stage_channels(stage - 1), hcfg.m, hcfg.d, hcfg.n, kClasses);
  init_params(store, Rng::mix(opt.seed, 0xF00D));

  auto f = [&]() -> Tensor {
    StudentOutput so = net.forward(x, /*training=*/true, /*update_running=*/false);
    std::vector<Tensor> feats;
    for (int64_t stage : hcfg.stages) feats.push_back(so.stage_feats[size_t(stage - 1)]);
    return hcd_total_loss(so.logits, feats, heads, t_feats, t_logits, labels, hcfg,
                          /*training=*/true, /*update_running=*/false, nullptr);
  };

  std::vector<Tensor> inputs;
  for (auto& e : store.params()) inputs.push_back(e.tensor);

  GradCheckOptions gopt;
  gopt.h = opt.h;
  gopt.tol = opt.tol;
  gopt.sample_seed = Rng::mix(opt.seed, 0xC0);
  gopt.max_coords_per_input =
      (opt.target_coords + int64_t(inputs.size()) - 1) / int64_t(inputs.size());
  return grad_check(f, inputs, gopt);
}

}  // namespace hcd
