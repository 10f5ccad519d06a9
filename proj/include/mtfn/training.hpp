#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtfn/dataset.hpp"
#include "mtfn/fusion.hpp"
#include "mtfn/similarity.hpp"

namespace mtfn {

enum class BranchKind { image_text, text_text };

std::string_view to_string(BranchKind b);

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  double lr0 = 1e-4;
  double decay_factor = 2.0;
  std::size_t decay_every = 10;
  double margin = 0.2;
  std::uint64_t seed = 0;
  // Compute train-set R@1 after every epoch (costs one full score matrix).
  bool log_recall = true;
  std::size_t workers = 1;

  void validate() const;
};

// lr0 / decay_factor^floor(epoch / decay_every)
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

struct PositivePair {
  std::size_t image;  // row of the batch similarity matrix
  std::size_t text;   // column of the batch similarity matrix
};

struct HardNegatives {
  std::size_t image;  // hardest image for the pair's text
  std::size_t text;   // hardest text for the pair's image
};

// text_owner[j] is the batch row of the image that owns text column j (or
// any value >= sim.n_query() when that image is not in the batch). Texts
// owned by the pair's image are never negatives. Ties pick the smaller index.
HardNegatives mine_hardest(const SimilarityMatrix& sim, PositivePair pair,
                           std::span<const std::size_t> text_owner);

struct LossResult {
  double loss = 0.0;
  Mat dsim;  // d loss / d sim, same shape as sim
};

// Mean over pairs of the two hardest-negative hinges. An empty text_owner is
// derived from the pairs themselves.
LossResult batch_loss_it(const SimilarityMatrix& sim, std::span<const PositivePair> pairs,
                         double margin, std::span<const std::size_t> text_owner = {});

struct TextPair {
  std::size_t anchor;
  std::size_t positive;
};

// All ordered (p, q) with p != q in the same group.
std::vector<TextPair> same_group_pairs(std::span<const std::size_t> groups);

// Mean over every same-group ordered pair of the single hinge against the
// anchor's hardest text from another group.
LossResult batch_loss_tt(const SimilarityMatrix& sim_tt, std::span<const std::size_t> groups,
                         double margin);
LossResult batch_loss_tt(const SimilarityMatrix& sim_tt, std::span<const std::size_t> groups,
                         std::span<const TextPair> pairs, double margin);

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

  FusionBranchParams m;
  FusionBranchParams v;
  std::uint64_t t = 0;

  static AdamState zeros_for(const FusionBranchParams& params);
};

// One bias-corrected Adam update on flat buffers; `t` is the 1-based step.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t t, double lr);

// Rejects NaN/Inf gradients before touching any state.
void adam_step(FusionBranchParams& params, const FusionBranchParams& grads, AdamState& state,
               double lr);

struct EpochLog {
  BranchKind branch = BranchKind::image_text;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  // image-text branch: train R@1 in both directions; text-text branch:
  // fraction of texts whose nearest other text shares their image (both
  // fields). Negative when recall logging is off.
  double i2t_r1 = -1.0;
  double t2i_r1 = -1.0;
};

using EpochSink = std::function<void(const EpochLog&)>;

// Trains one branch of `params` in place and returns the per-epoch log.
std::vector<EpochLog> train_branch(MtfnParams& params, const PairedDataset& data,
                                   const TrainConfig& cfg, BranchKind branch, SeededRng& rng,
                                   const EpochSink& sink = {});

struct TrainResult {
  MtfnParams params;
  std::vector<EpochLog> log;
};

// Image-text branch first, then the text-text branch warm-started from it.
TrainResult train(const PairedDataset& data, const ModelDims& dims, const TrainConfig& cfg,
                  SeededRng& rng, const EpochSink& sink = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
};

using BackwardFn =
    std::function<FusionBranchParams(const FusionBranchParams&, const ForwardCache&, double)>;

// Central differences of the pair score against `backward` (backward_pair by
// default). Relative error |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const FusionBranchParams& branch, std::span<const double> x_raw,
                           std::span<const double> y_raw, double h = 1e-5,
                           const BackwardFn& backward = {});

}  // namespace mtfn
