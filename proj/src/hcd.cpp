#include "hcd/hcd.hpp"

#include <algorithm>
#include <cmath>

namespace hcd {

// ---- fusion --------------------------------------------------------------

FusionSpec parse_fusion(const std::string& s) {
  FusionSpec f;
  auto split = [&](const std::string& body) {
    const size_t c = body.find(':');
    if (c == std::string::npos)
      fail(ErrorKind::kConfig, "fusion spec needs two weights, got " + s);
    try {
      return std::pair<double, double>{std::stod(body.substr(0, c)),
                                       std::stod(body.substr(c + 1))};
    } catch (const std::exception&) {
      fail(ErrorKind::kConfig, "bad fusion weights in " + s);
    }
  };
  if (s == "add") {
    f.mode = FusionMode::kAdd;
  } else if (s == "none") {
    f.mode = FusionMode::kNone;
  } else if (s.rfind("ratio:", 0) == 0) {
    f.mode = FusionMode::kRatio;
    std::tie(f.lambda1, f.lambda2) = split(s.substr(6));
  } else if (s.rfind("weighted:", 0) == 0) {
    f.mode = FusionMode::kWeighted;
    std::tie(f.lambda3, f.lambda4) = split(s.substr(9));
  } else {
    fail(ErrorKind::kConfig,
         "unknown fusion mode: " + s + " (expected add|none|ratio:a:b|weighted:a:b)");
  }
  return f;
}

std::string fusion_str(const FusionSpec& f) {
  switch (f.mode) {
    case FusionMode::kAdd: return "add";
    case FusionMode::kNone: return "none";
    case FusionMode::kRatio:
      return "ratio:" + std::to_string(f.lambda1) + ":" + std::to_string(f.lambda2);
    case FusionMode::kWeighted:
      return "weighted:" + std::to_string(f.lambda3) + ":" + std::to_string(f.lambda4);
  }
  return "?";
}

void HcdConfig::validate(int64_t total_stages) const {
  if (n < 1) fail(ErrorKind::kConfig, "n must be >= 1, got " + std::to_string(n));
  if (!(tau > 0.0)) fail(ErrorKind::kConfig, "tau must be > 0");
  if (theta < 0.0 || theta > 1.0)
    fail(ErrorKind::kConfig, "theta must be in [0, 1], got " + std::to_string(theta));
  if (!(eps_mask > 0.0)) fail(ErrorKind::kConfig, "eps_mask must be > 0");
  if (alpha < 0.0 || alpha > 1.0)
    fail(ErrorKind::kConfig, "alpha must be in [0, 1], got " + std::to_string(alpha));
  if (m < 1 || d < 1) fail(ErrorKind::kConfig, "feature widths m and d must be >= 1");
  if (stages.empty()) fail(ErrorKind::kConfig, "stage set must not be empty");
  for (size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] < 1 || stages[i] > total_stages)
      fail(ErrorKind::kConfig, "stage " + std::to_string(stages[i]) +
                                   " outside 1.." + std::to_string(total_stages));
    if (i > 0 && stages[i] <= stages[i - 1])
      fail(ErrorKind::kConfig, "stages must be strictly increasing");
  }
  if (fusion.mode == FusionMode::kRatio &&
      std::abs(fusion.lambda1 + fusion.lambda2 - 1.0) > 1e-12)
    fail(ErrorKind::kConfig, "ratio fusion requires lambda1 + lambda2 == 1, got " +
                                 std::to_string(fusion.lambda1) + " + " +
                                 std::to_string(fusion.lambda2));
  if (fusion.mode == FusionMode::kWeighted && fusion.lambda3 != fusion.lambda4)
    fail(ErrorKind::kConfig, "weighted fusion requires lambda3 == lambda4, got " +
                                 std::to_string(fusion.lambda3) + " vs " +
                                 std::to_string(fusion.lambda4));
}

// ---- CFM -------------------------------------------------------------------

CfmHead::CfmHead(ParamStore& store, const std::string& prefix, int64_t in_channels,
                 int64_t m, int64_t d, int64_t n, int64_t k)
    : m_(m), d_(d), n_(n), k_(k) {
  blocks_.emplace_back(store, prefix + ".block1", in_channels, m);
  blocks_.emplace_back(store, prefix + ".block2", m, m);
  fcs_.emplace_back(store, prefix + ".fc1", d + m, d);
  fcs_.emplace_back(store, prefix + ".fc2", d, n * k);
}

Tensor CfmHead::forward(const Tensor& stage_feat, const Tensor& teacher_feat,
                        bool training, bool update_running) const {
  if (teacher_feat.requires_grad())
    fail(ErrorKind::kState, "teacher features must be detached before the mapper");
  if (teacher_feat.rank() != 2 || teacher_feat.shape()[1] != d_)
    fail(ErrorKind::kShape, "teacher feature width " + shape_str(teacher_feat.shape()) +
                                " does not match configured d=" + std::to_string(d_));
  Tensor h = blocks_[0].forward(stage_feat, training, update_running);
  h = blocks_[1].forward(h, training, update_running);
  Tensor pooled = adaptive_avg_pool(h);  // [B, m]
  if (pooled.shape()[0] != teacher_feat.shape()[0])
    fail(ErrorKind::kShape, "student/teacher batch mismatch: " +
                                shape_str(pooled.shape()) + " vs " +
                                shape_str(teacher_feat.shape()));
  Tensor cat = concat_features(pooled, teacher_feat);  // [B, m+d]
  return fcs_[1].forward(relu(fcs_[0].forward(cat)));  // [B, n*K]
}

// ---- elementary losses -------------------------------------------------------

Tensor kl_divergence(const Tensor& target_logits, const Tensor& pred_logits, double tau) {
  if (target_logits.shape() != pred_logits.shape())
    fail(ErrorKind::kShape, "kl_divergence shape mismatch: " +
                                shape_str(target_logits.shape()) + " vs " +
                                shape_str(pred_logits.shape()));
  Tensor p = softmax_t(target_logits, tau);
  Tensor lp = log_softmax_t(target_logits, tau);
  Tensor lq = log_softmax_t(pred_logits, tau);
  Tensor per_row = reduce(mul(p, sub(lp, lq)), Reduce::kSum, {1});  // [B]
  return reduce_all(per_row, Reduce::kMean);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() != 2 || int64_t(labels.size()) != logits.shape()[0])
    fail(ErrorKind::kShape, "cross_entropy: need one label per row of " +
                                shape_str(logits.shape()));
  const int64_t batch = logits.shape()[0], k = logits.shape()[1];
  Tensor onehot({batch, k});
  for (int64_t b = 0; b < batch; ++b) {
    if (labels[size_t(b)] < 0 || labels[size_t(b)] >= k)
      fail(ErrorKind::kShape, "label " + std::to_string(labels[size_t(b)]) +
                                  " out of range for K=" + std::to_string(k));
    onehot.data()[b * k + labels[size_t(b)]] = 1.0;
  }
  Tensor lp = log_softmax_t(logits, 1.0);
  Tensor picked = reduce(mul(lp, onehot), Reduce::kSum, {1});  // [B]
  return scale(reduce_all(picked, Reduce::kMean), -1.0);
}

// ---- SDD ----------------------------------------------------------------------

std::vector<Tensor> decompose(const Tensor& z, int64_t n, int64_t k) {
  if (z.rank() != 2)
    fail(ErrorKind::kShape, "decompose expects [B, n*K], got " + shape_str(z.shape()));
  if (z.shape()[1] != n * k)
    fail(ErrorKind::kShape, "decompose: width " + std::to_string(z.shape()[1]) +
                                " is not n*K = " + std::to_string(n) + "*" + std::to_string(k));
  std::vector<Tensor> subs;
  subs.reserve(size_t(n));
  for (int64_t j = 0; j < n; ++j) subs.push_back(slice_cols(z, j * k, (j + 1) * k));
  return subs;
}

Tensor fuse_teacher(const Tensor& sub_logits, const Tensor& teacher_logits,
                    const FusionSpec& fusion) {
  if (teacher_logits.requires_grad())
    fail(ErrorKind::kState, "teacher logits must be detached before fusion");
  if (sub_logits.shape() != teacher_logits.shape())
    fail(ErrorKind::kShape, "fuse_teacher shape mismatch: " +
                                shape_str(sub_logits.shape()) + " vs " +
                                shape_str(teacher_logits.shape()));
  switch (fusion.mode) {
    case FusionMode::kAdd:
      return add(sub_logits, teacher_logits);
    case FusionMode::kRatio:
      if (std::abs(fusion.lambda1 + fusion.lambda2 - 1.0) > 1e-12)
        fail(ErrorKind::kConfig, "ratio fusion requires lambda1 + lambda2 == 1");
      return add(scale(sub_logits, fusion.lambda1), scale(teacher_logits, fusion.lambda2));
    case FusionMode::kWeighted:
      if (fusion.lambda3 != fusion.lambda4)
        fail(ErrorKind::kConfig, "weighted fusion requires lambda3 == lambda4");
      return add(scale(sub_logits, fusion.lambda3), scale(teacher_logits, fusion.lambda4));
    case FusionMode::kNone:
      return sub_logits;
  }
  fail(ErrorKind::kConfig, "unreachable fusion mode");
}

namespace {
int64_t total_sub_count(const std::vector<std::vector<Tensor>>& subs_per_stage) {
  int64_t total = 0;
  for (const auto& stage : subs_per_stage) total += int64_t(stage.size());
  if (total == 0) fail(ErrorKind::kShape, "no sub-logits supplied");
  return total;
}
}  // namespace

Tensor sub_kd_loss(const std::vector<std::vector<Tensor>>& subs_per_stage,
                   const Tensor& student_logits, double tau, bool tau_squared,
                   bool detach_student) {
  const int64_t total = total_sub_count(subs_per_stage);
  Tensor student = detach_student ? student_logits.detach() : student_logits;
  Tensor acc;
  for (const auto& stage : subs_per_stage)
    for (const auto& sub : stage) {
      Tensor term = kl_divergence(sub, student, tau);
      acc = acc.defined() ? add(acc, term) : term;
    }
  Tensor mean = scale(acc, 1.0 / double(total));
  return tau_squared ? scale(mean, tau * tau) : mean;
}

Tensor sub_ce_loss(const std::vector<std::vector<Tensor>>& subs_per_stage,
                   const std::vector<int64_t>& labels) {
  const int64_t total = total_sub_count(subs_per_stage);
  Tensor acc;
  for (const auto& stage : subs_per_stage)
    for (const auto& sub : stage) {
      Tensor term = cross_entropy(sub, labels);
      acc = acc.defined() ? add(acc, term) : term;
    }
  return scale(acc, 1.0 / double(total));
}

Tensor mask_ground_truth(const Tensor& sub_logits, const std::vector<int64_t>& labels,
                         double eps_mask) {
  if (sub_logits.rank() != 2 || int64_t(labels.size()) != sub_logits.shape()[0])
    fail(ErrorKind::kShape, "mask_ground_truth: need one label per row of " +
                                shape_str(sub_logits.shape()));
  const int64_t batch = sub_logits.shape()[0], k = sub_logits.shape()[1];
  Tensor keep({batch, k}, 1.0);     // 1 - m
  Tensor eps_at({batch, k}, 0.0);   // eps * m
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t y = labels[size_t(b)];
    if (y < 0 || y >= k)
      fail(ErrorKind::kShape, "label " + std::to_string(y) + " out of range for K=" +
                                  std::to_string(k));
    keep.data()[b * k + y] = 0.0;
    eps_at.data()[b * k + y] = eps_mask;
  }
  // z*(1-m) - eps*m: the masked position becomes exactly -eps_mask and,
  // being multiplied by zero, stops carrying gradient.
  return sub(mul(sub_logits, keep), eps_at);
}

Tensor orth_loss(const std::vector<std::vector<Tensor>>& masked_subs_per_stage,
                 double theta) {
  const int64_t stages = int64_t(masked_subs_per_stage.size());
  if (stages == 0) fail(ErrorKind::kShape, "orth_loss: no stages supplied");
  const int64_t n = int64_t(masked_subs_per_stage[0].size());
  for (const auto& stage : masked_subs_per_stage)
    if (int64_t(stage.size()) != n)
      fail(ErrorKind::kShape, "orth_loss: ragged sub-logit lists");
  if (n <= 1) return Tensor::scalar(0.0);

  Tensor acc;
  for (const auto& stage : masked_subs_per_stage) {
    std::vector<Tensor> norms;
    norms.reserve(size_t(n));
    for (const auto& sub : stage) {
      Tensor sq = reduce(mul(sub, sub), Reduce::kSum, {1});  // [B]
      for (int64_t b = 0; b < sq.size(); ++b)
        if (sq.data()[b] <= 0.0)
          fail(ErrorKind::kNumeric, "orth_loss: zero-norm sub-logit in row " +
                                        std::to_string(b));
      norms.push_back(sqrt_elem(sq));
    }
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = 0; q < n; ++q) {
        if (p == q) continue;
        Tensor dot = reduce(mul(stage[size_t(p)], stage[size_t(q)]), Reduce::kSum, {1});
        Tensor cosine = div(dot, mul(norms[size_t(p)], norms[size_t(q)]));
        Tensor over = max_with_scalar(cosine, theta);
        Tensor term = reduce_all(mul(over, over), Reduce::kMean);  // batch mean
        acc = acc.defined() ? add(acc, term) : term;
      }
  }
  return scale(acc, 1.0 / double(stages * n * (n - 1)));
}

Tensor vanilla_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                       const std::vector<int64_t>& labels, double alpha, double tau,
                       bool tau_squared) {
  if (alpha < 0.0 || alpha > 1.0)
    fail(ErrorKind::kConfig, "alpha must be in [0, 1]");
  Tensor ce = cross_entropy(student_logits, labels);
  Tensor kl = kl_divergence(teacher_logits, student_logits, tau);
  if (tau_squared) kl = scale(kl, tau * tau);
  return add(scale(ce, alpha), scale(kl, 1.0 - alpha));
}

// ---- total objective --------------------------------------------------------

Tensor hcd_total_loss(const Tensor& student_logits,
                      const std::vector<Tensor>& stage_feats,
                      const std::vector<CfmHead>& heads,
                      const Tensor& teacher_feats, const Tensor& teacher_logits,
                      const std::vector<int64_t>& labels, const HcdConfig& cfg,
                      bool training, bool update_running,
                      LossBreakdown* breakdown) {
  cfg.validate(cfg.stages.back());  // full stage-range check happens upstream
  if (stage_feats.size() != heads.size() || stage_feats.size() != cfg.stages.size())
    fail(ErrorKind::kConfig, "stage features, heads and cfg.stages must align");
  if (teacher_feats.requires_grad() || teacher_logits.requires_grad())
    fail(ErrorKind::kState, "teacher tensors must be detached");
  if (student_logits.rank() != 2)
    fail(ErrorKind::kShape, "student logits must be [B, K], got " +
                                shape_str(student_logits.shape()));

  const int64_t k = student_logits.shape()[1];

  // (1) task CE and plain distillation KL on the student logits
  Tensor ce = cross_entropy(student_logits, labels);
  Tensor kl_term;
  if (cfg.lambda != 0.0) {
    kl_term = kl_divergence(teacher_logits, student_logits, cfg.tau);
    if (cfg.tau_squared_kl) kl_term = scale(kl_term, cfg.tau * cfg.tau);
  }

  // (2) shared logits per stage, decomposed and fused with the teacher
  std::vector<std::vector<Tensor>> fused(stage_feats.size());
  for (size_t s = 0; s < stage_feats.size(); ++s) {
    Tensor z = heads[s].forward(stage_feats[s], teacher_feats, training, update_running);
    std::vector<Tensor> subs = decompose(z, cfg.n, k);
    fused[s].reserve(subs.size());
    for (const auto& sub : subs)
      fused[s].push_back(fuse_teacher(sub, teacher_logits, cfg.fusion));
  }

  // (3) sub-logit transfer
  Tensor sub_ce = sub_ce_loss(fused, labels);
  Tensor sub_kl;
  if (cfg.beta != 0.0)
    sub_kl = sub_kd_loss(fused, student_logits, cfg.tau, cfg.tau_squared_kl,
                         cfg.sub_kd_detach_student);

  // (4) diversity constraint on ground-truth-masked copies
  Tensor orth;
  if (cfg.omega != 0.0 && cfg.n > 1) {
    std::vector<std::vector<Tensor>> masked(fused.size());
    for (size_t s = 0; s < fused.size(); ++s)
      for (const auto& sub : fused[s])
        masked[s].push_back(mask_ground_truth(sub, labels, cfg.eps_mask));
    orth = orth_loss(masked, cfg.theta);
  }

  Tensor total = add(ce, sub_ce);
  if (kl_term.defined()) total = add(total, scale(kl_term, cfg.lambda));
  if (sub_kl.defined()) total = add(total, scale(sub_kl, cfg.beta));
  if (orth.defined()) total = add(total, scale(orth, cfg.omega));

  if (breakdown) {
    breakdown->ce = ce.item();
    breakdown->sub_ce = sub_ce.item();
    breakdown->kl = kl_term.defined() ? kl_term.item() : 0.0;
    breakdown->sub_kl = sub_kl.defined() ? sub_kl.item() : 0.0;
    breakdown->orth = orth.defined() ? orth.item() : 0.0;
    breakdown->total = total.item();
  }
  return total;
}

}  // namespace hcd
