#include "mtfn/similarity.hpp"

#include "mtfn/error.hpp"

namespace mtfn {

SimilarityMatrix::SimilarityMatrix(Mat scores) : scores_(std::move(scores)) {
  require(scores_.all_finite(), ErrorKind::numeric, "similarity matrix has non-finite entries");
}

}  // namespace mtfn
