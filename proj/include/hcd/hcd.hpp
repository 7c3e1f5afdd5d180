#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcd/nn.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

enum class FusionMode { kAdd, kRatio, kWeighted, kNone };

struct FusionSpec {
  FusionMode mode = FusionMode::kAdd;
  double lambda1 = 0.5, lambda2 = 0.5;  // ratio: lambda1 + lambda2 == 1
  double lambda3 = 1.0, lambda4 = 1.0;  // weighted: lambda3 == lambda4
};
FusionSpec parse_fusion(const std::string& s);
std::string fusion_str(const FusionSpec& f);

// Every scalar of the method. Defaults are the CIFAR/ResNet18 recipe.
struct HcdConfig {
  int64_t n = 4;          // sub-logits per stage
  double tau = 4.0;       // distillation temperature
  double theta = 0.5;     // orthogonality threshold
  double eps_mask = 1e-6; // value written at the masked label position
  double lambda = 1.0;    // weight of KL(teacher || student)
  double beta = 8.0;      // weight of the sub-logit KL term
  double omega = 10.0;    // weight of the orthogonality term
  double alpha = 0.5;     // CE/KL balance of the vanilla-KD baseline
  std::vector<int64_t> stages = {1, 2, 3, 4};  // 1-based student stages
  int64_t m = 16;         // pooled student feature width inside the mapper
  int64_t d = 32;         // teacher feature width
  FusionSpec fusion;
  bool tau_squared_kl = true;          // multiply KL terms by tau^2
  bool sub_kd_detach_student = false;  // stop-gradient on the student side of sub-KL

  void validate(int64_t total_stages) const;
};

// Maps one student stage into the shared logits space: two conv blocks,
// global pool to width m, concat with the teacher feature, then
// FC1((d+m)->d) -> ReLU -> FC2(d -> n*K).
class CfmHead {
 public:
  CfmHead(ParamStore& store, const std::string& prefix, int64_t in_channels,
          int64_t m, int64_t d, int64_t n, int64_t k);

  // Gradients flow into the stage feature and the head parameters, never
  // into teacher_feat (which must arrive detached).
  Tensor forward(const Tensor& stage_feat, const Tensor& teacher_feat,
                 bool training, bool update_running = true) const;

  int64_t output_width() const { return n_ * k_; }

 private:
  std::vector<ConvBlock> blocks_;
  std::vector<AffineMap> fcs_;
  int64_t m_, d_, n_, k_;
};

// ---- losses (all return graph scalars, batch-averaged) ----

// mean_b KL(softmax(target/tau) || softmax(pred/tau))
Tensor kl_divergence(const Tensor& target_logits, const Tensor& pred_logits, double tau);
// mean_b -log softmax(logits)[label]
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

// Splits [B, n*K] into n column blocks of width K; lossless.
std::vector<Tensor> decompose(const Tensor& z, int64_t n, int64_t k);

Tensor fuse_teacher(const Tensor& sub_logits, const Tensor& teacher_logits,
                    const FusionSpec& fusion);

// KL from each fused sub-logit onto the student, averaged over stages,
// sub-logits and batch, times tau^2 when tau_squared is set.
Tensor sub_kd_loss(const std::vector<std::vector<Tensor>>& subs_per_stage,
                   const Tensor& student_logits, double tau, bool tau_squared,
                   bool detach_student);

// Cross-entropy of every sub-logit at tau=1, same averaging.
Tensor sub_ce_loss(const std::vector<std::vector<Tensor>>& subs_per_stage,
                   const std::vector<int64_t>& labels);

// Copy with the label position forced to exactly -eps_mask; gradients do
// not pass through the masked position.
Tensor mask_ground_truth(const Tensor& sub_logits, const std::vector<int64_t>& labels,
                         double eps_mask);

// Thresholded mean squared off-diagonal cosine between L2-normalized
// sub-logits: mean over stages, ordered pairs p != q, and batch of
// max(0, <z_p, z_q> - theta)^2. Zero when n == 1.
Tensor orth_loss(const std::vector<std::vector<Tensor>>& masked_subs_per_stage,
                 double theta);

// alpha * CE + (1 - alpha) * [tau^2] * KL(teacher || student)
Tensor vanilla_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                       const std::vector<int64_t>& labels, double alpha, double tau,
                       bool tau_squared);

struct LossBreakdown {
  double ce = 0.0;
  double sub_ce = 0.0;
  double kl = 0.0;      // tau^2-scaled KL(teacher || student)
  double sub_kl = 0.0;  // tau^2-scaled sub-logit KL mean
  double orth = 0.0;
  double total = 0.0;
};

// Full objective: CE + sub_CE + lambda*KL + beta*sub_KL + omega*orth.
// stage_feats must be aligned with cfg.stages (and heads). Terms with a
// zero weight are skipped and reported as 0 in the breakdown.
Tensor hcd_total_loss(const Tensor& student_logits,
                      const std::vector<Tensor>& stage_feats,
                      const std::vector<CfmHead>& heads,
                      const Tensor& teacher_feats, const Tensor& teacher_logits,
                      const std::vector<int64_t>& labels, const HcdConfig& cfg,
                      bool training, bool update_running,
                      LossBreakdown* breakdown);

}  // namespace hcd
