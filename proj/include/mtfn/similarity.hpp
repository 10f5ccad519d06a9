#pragma once

#include <cstddef>
#include <vector>

#include "mtfn/tensor.hpp"

namespace mtfn {

// Dense query x gallery score matrix. Rows are queries in the I2T direction
// (images) and the gallery for T2I; S_TT matrices are square over texts.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  // Rejects non-finite entries.
  explicit SimilarityMatrix(Mat scores);

  std::size_t n_query() const noexcept { return scores_.rows(); }
  std::size_t n_gallery() const noexcept { return scores_.cols(); }
  const Mat& scores() const noexcept { return scores_; }
  double operator()(std::size_t q, std::size_t g) const { return scores_(q, g); }

  friend bool operator==(const SimilarityMatrix&, const SimilarityMatrix&) = default;

 private:
  Mat scores_;
};

// Ordered gallery indices for one query (full permutation or a top-K prefix).
using RankList = std::vector<std::size_t>;

}  // namespace mtfn
