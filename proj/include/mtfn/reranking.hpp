#pragma once

// Cross-modal k-reciprocal re-ranking.
//
// I2T: the top-K texts of a query image are reordered by the 1-based position
// the query image takes when each candidate text is used as a T2I query over
// all images.
//
// T2I: the top-K images of a query text are reordered by the first position k
// in each candidate image's I2T ranking whose text T_k has the query text in
// its neighbourhood G(T_k, K'). G(T, K') is T itself plus its K'-1 most
// similar other texts under S_TT.
//
// Every ordering in this module is total: descending score, then ascending
// index. Refined candidates sort by ascending position, then by the initial
// order. Positions beyond the top-K window keep their initial order.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mtfn/similarity.hpp"

namespace mtfn {

struct RerankConfig {
  std::size_t k = 15;
  std::size_t k_prime = 5;
  // Position given to an image whose walk never hits the query's
  // neighbourhood. Defaults to n_texts + 1.
  std::optional<std::size_t> fallback_position;
  std::size_t workers = 1;
};

// Indices by descending score, ties by ascending index.
RankList rank_row(std::span<const double> scores);
RankList rank_column(const SimilarityMatrix& sim, std::size_t col);

RankList rerank_i2t(const SimilarityMatrix& s_it, std::size_t query_image, std::size_t k);

RankList rerank_t2i(const SimilarityMatrix& s_it, const SimilarityMatrix& s_tt,
                    std::size_t query_text, std::size_t k, std::size_t k_prime,
                    std::optional<std::size_t> fallback_position = std::nullopt);

// G(T, K'): T first, then its K'-1 nearest other texts in rank order.
RankList text_neighbourhood(const SimilarityMatrix& s_tt, std::size_t text, std::size_t k_prime);

// Text-text affinity for the variant without a learned S_TT: Spearman
// correlation between the image rankings induced by two texts' columns of
// S_IT. Depends only on score order.
SimilarityMatrix text_affinity_from_it(const SimilarityMatrix& s_it, std::size_t workers = 1);

struct RerankResult {
  std::vector<RankList> i2t;  // one per image
  std::vector<RankList> t2i;  // one per text
};

// Refines every query in both directions. Without s_tt the T2I pass uses
// text_affinity_from_it(s_it). Output equals the single-query functions.
RerankResult rerank_all(const SimilarityMatrix& s_it, const SimilarityMatrix* s_tt,
                        const RerankConfig& cfg);

// Initial (un-refined) rank lists of every query in both directions.
RerankResult initial_rankings(const SimilarityMatrix& s_it, std::size_t workers = 1);

}  // namespace mtfn
