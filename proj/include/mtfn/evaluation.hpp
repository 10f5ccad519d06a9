#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtfn/reranking.hpp"
#include "mtfn/similarity.hpp"

namespace mtfn {

struct GroundTruth {
  std::vector<std::vector<std::size_t>> image_to_texts;
  std::vector<std::size_t> text_to_image;

  static GroundTruth from_group_map(std::vector<std::size_t> text_to_image, std::size_t n_images);

  std::size_t n_images() const noexcept { return image_to_texts.size(); }
  std::size_t n_texts() const noexcept { return text_to_image.size(); }
  // Throws unless the two maps agree and every caption has one image.
  void validate() const;
  // Ground truth restricted to images [first, last) and their captions, with
  // captions renumbered in ascending original order.
  GroundTruth slice(std::size_t first_image, std::size_t last_image) const;
};

enum class Direction { i2t, t2i };

// Fraction of queries with a relevant item in the first L entries. An image
// query is satisfied by any of its captions, a caption query only by its image.
double recall_at(std::span<const RankList> lists, const GroundTruth& gt, Direction dir,
                 std::size_t L);

// Recalls are fractions in [0, 1].
struct RetrievalMetrics {
  double i2t_r1 = 0, i2t_r5 = 0, i2t_r10 = 0;
  double t2i_r1 = 0, t2i_r5 = 0, t2i_r10 = 0;
  double mr = 0;

  friend bool operator==(const RetrievalMetrics&, const RetrievalMetrics&) = default;
};

double mean_recall(const RetrievalMetrics& m);

// Fills every recall plus mr from rank lists in both directions.
RetrievalMetrics evaluate(std::span<const RankList> i2t, std::span<const RankList> t2i,
                          const GroundTruth& gt);
RetrievalMetrics evaluate(const SimilarityMatrix& s_it, const GroundTruth& gt,
                          std::size_t workers = 1);

RetrievalMetrics fold_average(std::span<const RetrievalMetrics> per_fold);

// Entrywise mean of M same-shape matrices.
SimilarityMatrix ensemble_average(std::span<const SimilarityMatrix> mats);

// Image ranges [f*n/k, (f+1)*n/k) for k folds.
std::vector<std::pair<std::size_t, std::size_t>> fold_ranges(std::size_t n_images,
                                                             std::size_t n_folds);

// The block of `s_it` for images [first, last) against their own captions
// (in ascending caption order); `s_tt` is cut to the same captions.
SimilarityMatrix slice_it(const SimilarityMatrix& s_it, const GroundTruth& gt,
                          std::size_t first_image, std::size_t last_image);
SimilarityMatrix slice_tt(const SimilarityMatrix& s_tt, const GroundTruth& gt,
                          std::size_t first_image, std::size_t last_image);

// "key=value" lines, recalls as fractions.
std::string to_record(const RetrievalMetrics& m);
// Human-readable table, recalls as percentages.
std::string to_table(const RetrievalMetrics& m);

}  // namespace mtfn
