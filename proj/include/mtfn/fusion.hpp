#pragma once

// Rank-constrained bilinear tensor fusion. One FusionBranchParams scores a
// pair (x, y) as
//
//   x~ = W_in_a x,  y~ = W_in_b y
//   f  = sum_r (F_a[r] x~) .* (F_b[r] y~)
//   s  = sigmoid(w_out . f [+ b])
//
// The image-text branch has images on side A and texts on side B; the
// text-text branch has texts on both sides.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtfn/similarity.hpp"
#include "mtfn/tensor.hpp"

namespace mtfn {

enum class Side { a, b };

struct ModelDims {
  std::size_t d_raw_img = 0;
  std::size_t d_raw_txt = 0;
  std::size_t d_v = 16;
  std::size_t d_t = 16;
  std::size_t d_f = 16;
  std::size_t d_f_tt = 16;  // fused dim of the text-text branch
  std::size_t rank = 4;
  bool output_bias = false;

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct FusionBranchParams {
  Mat w_in_a;                  // (d_a x d_raw_a)
  Mat w_in_b;                  // (d_b x d_raw_b)
  std::vector<Mat> factors_a;  // rank x (d_fused x d_a)
  std::vector<Mat> factors_b;  // rank x (d_fused x d_b)
  Mat w_out;                   // (1 x d_fused)
  Mat out_bias;                // (1 x 1) when enabled, empty otherwise

  std::size_t rank() const noexcept { return factors_a.size(); }
  std::size_t fused_dim() const noexcept { return w_out.cols(); }
  std::size_t raw_dim(Side s) const noexcept { return in(s).cols(); }
  std::size_t proj_dim(Side s) const noexcept { return in(s).rows(); }
  bool has_bias() const noexcept { return !out_bias.empty(); }

  const Mat& in(Side s) const noexcept { return s == Side::a ? w_in_a : w_in_b; }
  const std::vector<Mat>& factors(Side s) const noexcept {
    return s == Side::a ? factors_a : factors_b;
  }

  // Throws on inconsistent shapes.
  void validate() const;

  // Visits every tensor in a fixed order with a stable name
  // ("w_in_a", "w_in_b", "factor_a.<r>", "factor_b.<r>", "w_out", "out_bias").
  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    visit(*this, fn);
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    visit(*this, fn);
  }

  friend bool operator==(const FusionBranchParams&, const FusionBranchParams&) = default;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    fn(std::string("w_in_a"), self.w_in_a);
    fn(std::string("w_in_b"), self.w_in_b);
    for (std::size_t r = 0; r < self.factors_a.size(); ++r)
      fn("factor_a." + std::to_string(r), self.factors_a[r]);
    for (std::size_t r = 0; r < self.factors_b.size(); ++r)
      fn("factor_b." + std::to_string(r), self.factors_b[r]);
    fn(std::string("w_out"), self.w_out);
    if (!self.out_bias.empty()) fn(std::string("out_bias"), self.out_bias);
  }
};

// Same shapes as `p`, all zeros. Gradients use this layout.
FusionBranchParams zeros_like(const FusionBranchParams& p);
// FNV-1a over every parameter byte; identifies the weights a cache came from.
std::uint64_t fingerprint(const FusionBranchParams& p);

struct MtfnParams {
  ModelDims dims;
  std::uint64_t seed = 0;
  FusionBranchParams it_branch;  // image (A) x text (B)
  FusionBranchParams tt_branch;  // text (A) x text (B)

  friend bool operator==(const MtfnParams&, const MtfnParams&) = default;
};

// Weights uniform on +-1/sqrt(fan_in); bias starts at zero.
MtfnParams init_params(const ModelDims& dims, SeededRng& rng);

// Warm-starts the text-text branch from the image-text text pathway. When
// d_f_tt != d_f the leading min(d_f, d_f_tt) factor rows are copied, the rest
// and w_out are drawn fresh from `rng`.
MtfnParams init_tt_from_it(const MtfnParams& params, SeededRng& rng);

// Per-item encoding of one side: the projection and its R factor images.
struct SideCode {
  Vec proj;
  std::vector<Vec> per_rank;
};

SideCode encode_side(const FusionBranchParams& branch, Side side, std::span<const double> raw);
std::vector<SideCode> encode_rows(const FusionBranchParams& branch, Side side, const Mat& rows,
                                  std::size_t workers = 1);
// Pre-sigmoid output; writes the fusion vector into `fused` when non-null.
double fuse_logit(const FusionBranchParams& branch, const SideCode& x, const SideCode& y,
                  Vec* fused = nullptr);

struct ForwardCache {
  Vec x_raw;
  Vec y_raw;
  SideCode x;
  SideCode y;
  Vec fused;
  double logit = 0.0;
  double score = 0.5;
  std::uint64_t params_fingerprint = 0;
};

struct PairForward {
  double score;
  ForwardCache cache;
};

PairForward forward_pair(const FusionBranchParams& branch, std::span<const double> x_raw,
                         std::span<const double> y_raw);

// Gradient of the pair score w.r.t. every weight, times `upstream_dscore`.
// Rejects caches produced with different weights.
FusionBranchParams backward_pair(const FusionBranchParams& branch, const ForwardCache& cache,
                                 double upstream_dscore);

// Entry (i, j) is the forward_pair score of (xs[i], ys[j]), bit for bit.
SimilarityMatrix score_matrix(const FusionBranchParams& branch, const Mat& xs, const Mat& ys,
                              std::size_t workers = 1);
SimilarityMatrix score_codes(const FusionBranchParams& branch, const std::vector<SideCode>& xs,
                             const std::vector<SideCode>& ys, std::size_t workers = 1);

// Accumulates into `grads` the gradient of sum_ij dscore(i,j) * S(i,j) for the
// grid whose scores are `scores`. Zero dscore entries are skipped. Reduction
// order is fixed (row-major over the grid, then rows of xs/ys).
void accumulate_grid_gradients(const FusionBranchParams& branch, const Mat& xs, const Mat& ys,
                               const std::vector<SideCode>& x_codes,
                               const std::vector<SideCode>& y_codes,
                               const SimilarityMatrix& scores, const Mat& dscore,
                               FusionBranchParams& grads);

}  // namespace mtfn
