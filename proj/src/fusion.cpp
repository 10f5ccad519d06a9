#include "mtfn/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mtfn/error.hpp"
#include "mtfn/parallel.hpp"

namespace mtfn {

namespace {

std::string dim_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

void check_shape(const Mat& m, std::size_t rows, std::size_t cols, const std::string& name) {
  require(m.rows() == rows && m.cols() == cols, ErrorKind::shape,
          name + ": expected " + dim_str(rows, cols) + ", got " + m.shape_str());
}

FusionBranchParams init_branch(std::size_t raw_a, std::size_t raw_b, std::size_t d_a,
                               std::size_t d_b, std::size_t d_fused, std::size_t rank,
                               bool bias, SeededRng& rng) {
  auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  FusionBranchParams p;
  p.w_in_a = rand_uniform(rng, d_a, raw_a, fan(raw_a));
  p.w_in_b = rand_uniform(rng, d_b, raw_b, fan(raw_b));
  for (std::size_t r = 0; r < rank; ++r) p.factors_a.push_back(rand_uniform(rng, d_fused, d_a, fan(d_a)));
  for (std::size_t r = 0; r < rank; ++r) p.factors_b.push_back(rand_uniform(rng, d_fused, d_b, fan(d_b)));
  p.w_out = rand_uniform(rng, 1, d_fused, fan(d_fused));
  if (bias) p.out_bias = Mat(1, 1);
  return p;
}

}  // namespace

void ModelDims::validate() const {
  const std::pair<const char*, std::size_t> fields[] = {
      {"d_raw_img", d_raw_img}, {"d_raw_txt", d_raw_txt}, {"d_v", d_v},   {"d_t", d_t},
      {"d_f", d_f},             {"d_f_tt", d_f_tt},       {"rank", rank},
  };
  for (const auto& [name, value] : fields)
    require(value > 0, ErrorKind::invalid_argument,
            std::string("model dims: ") + name + " must be positive");
}

void FusionBranchParams::validate() const {
  require(rank() > 0, ErrorKind::invalid_argument, "branch: rank must be positive");
  require(factors_b.size() == factors_a.size(), ErrorKind::shape,
          "branch: factor banks have different ranks (" + std::to_string(factors_a.size()) +
              " vs " + std::to_string(factors_b.size()) + ")");
  require(!w_in_a.empty() && !w_in_b.empty() && !w_out.empty(), ErrorKind::shape,
          "branch: empty weight matrix");
  check_shape(w_out, 1, w_out.cols(), "w_out");
  const std::size_t df = fused_dim();
  for (std::size_t r = 0; r < rank(); ++r) {
    check_shape(factors_a[r], df, w_in_a.rows(), "factor_a." + std::to_string(r));
    check_shape(factors_b[r], df, w_in_b.rows(), "factor_b." + std::to_string(r));
  }
  if (!out_bias.empty()) check_shape(out_bias, 1, 1, "out_bias");
}

FusionBranchParams zeros_like(const FusionBranchParams& p) {
  FusionBranchParams z = p;
  z.for_each_tensor([](const std::string&, Mat& m) { std::fill(m.data().begin(), m.data().end(), 0.0); });
  return z;
}

std::uint64_t fingerprint(const FusionBranchParams& p) {
  std::uint64_t h = 1469598103934665603ULL;
  p.for_each_tensor([&](const std::string&, const Mat& m) {
    for (double x : m.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &x, sizeof bits);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
    h ^= m.rows() * 31 + m.cols();
    h *= 1099511628211ULL;
  });
  return h;
}

MtfnParams init_params(const ModelDims& dims, SeededRng& rng) {
  dims.validate();
  MtfnParams p;
  p.dims = dims;
  p.seed = rng.seed();
  p.it_branch = init_branch(dims.d_raw_img, dims.d_raw_txt, dims.d_v, dims.d_t, dims.d_f,
                            dims.rank, dims.output_bias, rng);
  p.tt_branch = init_branch(dims.d_raw_txt, dims.d_raw_txt, dims.d_t, dims.d_t, dims.d_f_tt,
                            dims.rank, dims.output_bias, rng);
  return p;
}

MtfnParams init_tt_from_it(const MtfnParams& params, SeededRng& rng) {
  const auto& it = params.it_branch;
  const auto& tt = params.tt_branch;
  it.validate();
  tt.validate();
  require(tt.raw_dim(Side::a) == it.raw_dim(Side::b) && tt.raw_dim(Side::b) == it.raw_dim(Side::b),
          ErrorKind::shape,
          "init_tt_from_it: text raw dims differ (it " + std::to_string(it.raw_dim(Side::b)) +
              ", tt " + std::to_string(tt.raw_dim(Side::a)) + "/" +
              std::to_string(tt.raw_dim(Side::b)) + ")");
  require(tt.proj_dim(Side::a) == it.proj_dim(Side::b) && tt.proj_dim(Side::b) == it.proj_dim(Side::b),
          ErrorKind::shape, "init_tt_from_it: text projection dims differ");
  require(tt.rank() == it.rank(), ErrorKind::shape, "init_tt_from_it: ranks differ");

  MtfnParams out = params;
  auto& dst = out.tt_branch;
  dst.w_in_a = it.w_in_b;
  dst.w_in_b = it.w_in_b;

  const std::size_t d_it = it.fused_dim();
  const std::size_t d_tt = tt.fused_dim();
  if (d_tt == d_it) {
    dst.factors_a = it.factors_b;
    dst.factors_b = it.factors_b;
    dst.w_out = it.w_out;
    if (dst.has_bias() && it.has_bias()) dst.out_bias = it.out_bias;
    return out;
  }

  const std::size_t d_t = it.proj_dim(Side::b);
  const double factor_scale = 1.0 / std::sqrt(static_cast<double>(d_t));
  const std::size_t shared = std::min(d_it, d_tt);
  for (std::size_t r = 0; r < it.rank(); ++r) {
    Mat fresh = rand_uniform(rng, d_tt, d_t, factor_scale);
    for (std::size_t row = 0; row < shared; ++row) {
      auto src = it.factors_b[r].row(row);
      std::copy(src.begin(), src.end(), fresh.row(row).begin());
    }
    dst.factors_a[r] = fresh;
    dst.factors_b[r] = fresh;
  }
  dst.w_out = rand_uniform(rng, 1, d_tt, 1.0 / std::sqrt(static_cast<double>(d_tt)));
  if (dst.has_bias()) dst.out_bias = Mat(1, 1);
  return out;
}

SideCode encode_side(const FusionBranchParams& branch, Side side, std::span<const double> raw) {
  require(raw.size() == branch.raw_dim(side), ErrorKind::shape,
          std::string("encode: side ") + (side == Side::a ? "A" : "B") + " expects dim " +
              std::to_string(branch.raw_dim(side)) + ", got " + std::to_string(raw.size()));
  SideCode code;
  code.proj = matvec(branch.in(side), raw);
  code.per_rank.reserve(branch.rank());
  for (const Mat& factor : branch.factors(side)) code.per_rank.push_back(matvec(factor, code.proj));
  return code;
}

std::vector<SideCode> encode_rows(const FusionBranchParams& branch, Side side, const Mat& rows,
                                  std::size_t workers) {
  std::vector<SideCode> codes(rows.rows());
  parallel_for(rows.rows(), workers,
               [&](std::size_t i) { codes[i] = encode_side(branch, side, rows.row(i)); });
  return codes;
}

double fuse_logit(const FusionBranchParams& branch, const SideCode& x, const SideCode& y,
                  Vec* fused) {
  const std::size_t df = branch.fused_dim();
  const auto w = branch.w_out.row(0);
  double logit = 0.0;
  for (std::size_t k = 0; k < df; ++k) {
    double fk = 0.0;
    for (std::size_t r = 0; r < x.per_rank.size(); ++r) fk += x.per_rank[r][k] * y.per_rank[r][k];
    if (fused) (*fused)[k] = fk;
    logit += w[k] * fk;
  }
  if (branch.has_bias()) logit += branch.out_bias(0, 0);
  return logit;
}

PairForward forward_pair(const FusionBranchParams& branch, std::span<const double> x_raw,
                         std::span<const double> y_raw) {
  branch.validate();
  PairForward out{};
  auto& c = out.cache;
  c.x_raw.assign(x_raw.begin(), x_raw.end());
  c.y_raw.assign(y_raw.begin(), y_raw.end());
  c.x = encode_side(branch, Side::a, x_raw);
  c.y = encode_side(branch, Side::b, y_raw);
  c.fused.assign(branch.fused_dim(), 0.0);
  c.logit = fuse_logit(branch, c.x, c.y, &c.fused);
  require(std::isfinite(c.logit), ErrorKind::numeric, "forward_pair: non-finite logit");
  c.score = sigmoid(c.logit);
  c.params_fingerprint = fingerprint(branch);
  out.score = c.score;
  return out;
}

namespace {

// Pushes the per-rank gradients of one side back into its factor bank and
// input projection.
void backprop_side(const FusionBranchParams& branch, Side side, std::span<const double> raw,
                   const SideCode& code, const std::vector<Vec>& d_per_rank,
                   FusionBranchParams& grads) {
  auto& g_factors = side == Side::a ? grads.factors_a : grads.factors_b;
  auto& g_in = side == Side::a ? grads.w_in_a : grads.w_in_b;
  const auto& factors = branch.factors(side);
  Vec d_proj(code.proj.size(), 0.0);
  for (std::size_t r = 0; r < factors.size(); ++r) {
    add_outer(g_factors[r], d_per_rank[r], code.proj);
    axpy(d_proj, matvec_t(factors[r], d_per_rank[r]));
  }
  add_outer(g_in, d_proj, raw);
}

// Gradients of a single pair w.r.t. the per-rank codes, w_out and bias.
void backprop_head(const FusionBranchParams& branch, const SideCode& x, const SideCode& y,
                   double g, std::vector<Vec>& dx, std::vector<Vec>& dy,
                   FusionBranchParams& grads) {
  const std::size_t df = branch.fused_dim();
  const auto w = branch.w_out.row(0);
  auto gw = grads.w_out.row(0);
  for (std::size_t k = 0; k < df; ++k) {
    double fk = 0.0;
    for (std::size_t r = 0; r < x.per_rank.size(); ++r) fk += x.per_rank[r][k] * y.per_rank[r][k];
    gw[k] += g * fk;
    const double dfk = g * w[k];
    for (std::size_t r = 0; r < x.per_rank.size(); ++r) {
      dx[r][k] += dfk * y.per_rank[r][k];
      dy[r][k] += dfk * x.per_rank[r][k];
    }
  }
  if (branch.has_bias()) grads.out_bias(0, 0) += g;
}

std::vector<Vec> zero_codes(std::size_t rank, std::size_t df) {
  return std::vector<Vec>(rank, Vec(df, 0.0));
}

}  // namespace

FusionBranchParams backward_pair(const FusionBranchParams& branch, const ForwardCache& cache,
                                 double upstream_dscore) {
  branch.validate();
  require(cache.params_fingerprint == fingerprint(branch), ErrorKind::invalid_argument,
          "backward_pair: cache was produced with different weights");
  require(cache.x_raw.size() == branch.raw_dim(Side::a) &&
              cache.y_raw.size() == branch.raw_dim(Side::b) &&
              cache.x.per_rank.size() == branch.rank() && cache.y.per_rank.size() == branch.rank(),
          ErrorKind::shape, "backward_pair: cache shapes do not match the branch");

  FusionBranchParams grads = zeros_like(branch);
  const double g = upstream_dscore * cache.score * (1.0 - cache.score);
  if (g == 0.0) return grads;

  auto dx = zero_codes(branch.rank(), branch.fused_dim());
  auto dy = zero_codes(branch.rank(), branch.fused_dim());
  backprop_head(branch, cache.x, cache.y, g, dx, dy, grads);
  backprop_side(branch, Side::a, cache.x_raw, cache.x, dx, grads);
  backprop_side(branch, Side::b, cache.y_raw, cache.y, dy, grads);
  return grads;
}

SimilarityMatrix score_codes(const FusionBranchParams& branch, const std::vector<SideCode>& xs,
                             const std::vector<SideCode>& ys, std::size_t workers) {
  require(!xs.empty() && !ys.empty(), ErrorKind::invalid_argument, "score_matrix: empty input");
  Mat scores(xs.size(), ys.size());
  parallel_for(xs.size(), workers, [&](std::size_t i) {
    auto row = scores.row(i);
    for (std::size_t j = 0; j < ys.size(); ++j) row[j] = sigmoid(fuse_logit(branch, xs[i], ys[j]));
  });
  return SimilarityMatrix(std::move(scores));
}

SimilarityMatrix score_matrix(const FusionBranchParams& branch, const Mat& xs, const Mat& ys,
                              std::size_t workers) {
  branch.validate();
  require(xs.rows() > 0 && ys.rows() > 0, ErrorKind::invalid_argument,
          "score_matrix: empty input " + xs.shape_str() + " / " + ys.shape_str());
  require(xs.cols() == branch.raw_dim(Side::a) && ys.cols() == branch.raw_dim(Side::b),
          ErrorKind::shape,
          "score_matrix: feature dims " + std::to_string(xs.cols()) + "/" +
              std::to_string(ys.cols()) + " do not match branch " +
              std::to_string(branch.raw_dim(Side::a)) + "/" +
              std::to_string(branch.raw_dim(Side::b)));
  const auto x_codes = encode_rows(branch, Side::a, xs, workers);
  const auto y_codes = encode_rows(branch, Side::b, ys, workers);
  return score_codes(branch, x_codes, y_codes, workers);
}

void accumulate_grid_gradients(const FusionBranchParams& branch, const Mat& xs, const Mat& ys,
                               const std::vector<SideCode>& x_codes,
                               const std::vector<SideCode>& y_codes,
                               const SimilarityMatrix& scores, const Mat& dscore,
                               FusionBranchParams& grads) {
  require(dscore.rows() == x_codes.size() && dscore.cols() == y_codes.size() &&
              scores.n_query() == x_codes.size() && scores.n_gallery() == y_codes.size() &&
              xs.rows() == x_codes.size() && ys.rows() == y_codes.size(),
          ErrorKind::shape, "accumulate_grid_gradients: grid shapes disagree");
  const std::size_t rank = branch.rank();
  const std::size_t df = branch.fused_dim();
  std::vector<std::vector<Vec>> dx(x_codes.size());
  std::vector<std::vector<Vec>> dy(y_codes.size());

  for (std::size_t i = 0; i < x_codes.size(); ++i) {
    for (std::size_t j = 0; j < y_codes.size(); ++j) {
      const double d = dscore(i, j);
      if (d == 0.0) continue;
      const double s = scores(i, j);
      const double g = d * s * (1.0 - s);
      if (g == 0.0) continue;
      if (dx[i].empty()) dx[i] = zero_codes(rank, df);
      if (dy[j].empty()) dy[j] = zero_codes(rank, df);
      backprop_head(branch, x_codes[i], y_codes[j], g, dx[i], dy[j], grads);
    }
  }
  for (std::size_t i = 0; i < x_codes.size(); ++i)
    if (!dx[i].empty()) backprop_side(branch, Side::a, xs.row(i), x_codes[i], dx[i], grads);
  for (std::size_t j = 0; j < y_codes.size(); ++j)
    if (!dy[j].empty()) backprop_side(branch, Side::b, ys.row(j), y_codes[j], dy[j], grads);
}

}  // namespace mtfn
