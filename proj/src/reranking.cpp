#include "mtfn/reranking.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "mtfn/error.hpp"
#include "mtfn/parallel.hpp"

namespace mtfn {

namespace {

// Strict total order on gallery entries of one query.
struct ByScore {
  std::span<const double> scores;
  bool operator()(std::size_t a, std::size_t b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

std::vector<double> column_of(const SimilarityMatrix& sim, std::size_t col) {
  std::vector<double> c(sim.n_query());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = sim(i, col);
  return c;
}

// 1-based position of `target` in the ranking induced by `scores`, without
// sorting.
std::size_t position_of(std::span<const double> scores, std::size_t target) {
  ByScore before{scores};
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != target && before(i, target)) ++ahead;
  return ahead + 1;
}

// Reorders the first k entries of `initial` by ascending position; stable so
// ties fall back to the initial order (descending score, ascending index).
RankList apply_positions(RankList initial, std::size_t k, const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return positions[a] < positions[b]; });
  RankList out = initial;
  for (std::size_t slot = 0; slot < k; ++slot) out[slot] = initial[order[slot]];
  return out;
}

void check_k(std::size_t k, std::size_t n, const char* what) {
  require(k >= 1 && k <= n, ErrorKind::invalid_argument,
          std::string(what) + ": K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
}

void check_tt(const SimilarityMatrix& s_it, const SimilarityMatrix& s_tt) {
  require(s_tt.n_query() == s_it.n_gallery() && s_tt.n_gallery() == s_it.n_gallery(),
          ErrorKind::shape,
          "S_TT must be " + std::to_string(s_it.n_gallery()) + "x" +
              std::to_string(s_it.n_gallery()) + ", got " + s_tt.scores().shape_str());
}

void check_k_prime(std::size_t k_prime, std::size_t n_texts) {
  require(k_prime >= 1 && k_prime <= n_texts, ErrorKind::invalid_argument,
          "K'=" + std::to_string(k_prime) + " outside [1, " + std::to_string(n_texts) + "]");
}

std::size_t resolve_fallback(std::optional<std::size_t> fallback, std::size_t n_texts) {
  return fallback.value_or(n_texts + 1);
}

}  // namespace

RankList rank_row(std::span<const double> scores) {
  require(!scores.empty(), ErrorKind::invalid_argument, "rank_row: empty row");
  RankList order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), ByScore{scores});
  return order;
}

RankList rank_column(const SimilarityMatrix& sim, std::size_t col) {
  require(col < sim.n_gallery(), ErrorKind::invalid_argument,
          "rank_column: column " + std::to_string(col) + " out of range");
  return rank_row(column_of(sim, col));
}

RankList rerank_i2t(const SimilarityMatrix& s_it, std::size_t query_image, std::size_t k) {
  require(query_image < s_it.n_query(), ErrorKind::invalid_argument,
          "rerank_i2t: query image " + std::to_string(query_image) + " out of range");
  check_k(k, s_it.n_gallery(), "rerank_i2t");
  RankList initial = rank_row(s_it.scores().row(query_image));
  std::vector<std::size_t> positions(k);
  for (std::size_t j = 0; j < k; ++j)
    positions[j] = position_of(column_of(s_it, initial[j]), query_image);
  return apply_positions(std::move(initial), k, positions);
}

RankList text_neighbourhood(const SimilarityMatrix& s_tt, std::size_t text, std::size_t k_prime) {
  require(s_tt.n_query() == s_tt.n_gallery(), ErrorKind::shape, "S_TT must be square");
  require(text < s_tt.n_query(), ErrorKind::invalid_argument,
          "text_neighbourhood: text " + std::to_string(text) + " out of range");
  check_k_prime(k_prime, s_tt.n_query());
  RankList ranked = rank_row(s_tt.scores().row(text));
  RankList g{text};
  for (std::size_t t : ranked) {
    if (g.size() == k_prime) break;
    if (t != text) g.push_back(t);
  }
  return g;
}

RankList rerank_t2i(const SimilarityMatrix& s_it, const SimilarityMatrix& s_tt,
                    std::size_t query_text, std::size_t k, std::size_t k_prime,
                    std::optional<std::size_t> fallback_position) {
  check_tt(s_it, s_tt);
  const std::size_t n_texts = s_it.n_gallery();
  require(query_text < n_texts, ErrorKind::invalid_argument,
          "rerank_t2i: query text " + std::to_string(query_text) + " out of range");
  check_k(k, s_it.n_query(), "rerank_t2i");
  check_k_prime(k_prime, n_texts);
  const std::size_t fallback = resolve_fallback(fallback_position, n_texts);

  // hits[t]: query_text is in G(t, K').
  std::vector<char> hits(n_texts, 0);
  for (std::size_t t = 0; t < n_texts; ++t) {
    if (t == query_text) {
      hits[t] = 1;
      continue;
    }
    if (k_prime < 2) continue;
    ByScore before{s_tt.scores().row(t)};
    std::size_t ahead = 0;  // other texts (not t) ranked ahead of query_text
    for (std::size_t o = 0; o < n_texts; ++o)
      if (o != t && o != query_text && before(o, query_text)) ++ahead;
    hits[t] = ahead < k_prime - 1 ? 1 : 0;
  }

  RankList initial = rank_row(column_of(s_it, query_text));
  std::vector<std::size_t> positions(k, fallback);
  for (std::size_t j = 0; j < k; ++j) {
    const RankList walk = rank_row(s_it.scores().row(initial[j]));
    for (std::size_t pos = 0; pos < walk.size(); ++pos) {
      if (hits[walk[pos]]) {
        positions[j] = pos + 1;
        break;
      }
    }
  }
  return apply_positions(std::move(initial), k, positions);
}

SimilarityMatrix text_affinity_from_it(const SimilarityMatrix& s_it, std::size_t workers) {
  const std::size_t n_images = s_it.n_query();
  const std::size_t n_texts = s_it.n_gallery();
  // rank_of[t][i]: 1-based position of image i in text t's T2I ranking.
  std::vector<std::vector<double>> rank_of(n_texts, std::vector<double>(n_images));
  parallel_for(n_texts, workers, [&](std::size_t t) {
    const RankList order = rank_column(s_it, t);
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      rank_of[t][order[pos]] = static_cast<double>(pos + 1);
  });
  const double n = static_cast<double>(n_images);
  const double denom = n * (n * n - 1.0);
  Mat affinity(n_texts, n_texts, 1.0);
  parallel_for(n_texts, workers, [&](std::size_t a) {
    for (std::size_t b = 0; b < n_texts; ++b) {
      if (n_images < 2) continue;
      double d2 = 0.0;
      for (std::size_t i = 0; i < n_images; ++i) {
        const double d = rank_of[a][i] - rank_of[b][i];
        d2 += d * d;
      }
      affinity(a, b) = 1.0 - 6.0 * d2 / denom;
    }
  });
  return SimilarityMatrix(std::move(affinity));
}

RerankResult initial_rankings(const SimilarityMatrix& s_it, std::size_t workers) {
  RerankResult out;
  out.i2t.resize(s_it.n_query());
  out.t2i.resize(s_it.n_gallery());
  parallel_for(s_it.n_query(), workers,
               [&](std::size_t i) { out.i2t[i] = rank_row(s_it.scores().row(i)); });
  parallel_for(s_it.n_gallery(), workers,
               [&](std::size_t t) { out.t2i[t] = rank_column(s_it, t); });
  return out;
}

RerankResult rerank_all(const SimilarityMatrix& s_it, const SimilarityMatrix* s_tt,
                        const RerankConfig& cfg) {
  const std::size_t n_images = s_it.n_query();
  const std::size_t n_texts = s_it.n_gallery();
  require(n_images > 0 && n_texts > 0, ErrorKind::invalid_argument, "rerank: empty S_IT");
  // One K for both directions; it must fit the smaller gallery.
  check_k(cfg.k, std::min(n_images, n_texts), "rerank");
  check_k_prime(cfg.k_prime, n_texts);
  SimilarityMatrix derived;
  if (s_tt == nullptr) {
    derived = text_affinity_from_it(s_it, cfg.workers);
    s_tt = &derived;
  }
  check_tt(s_it, *s_tt);
  const std::size_t fallback = resolve_fallback(cfg.fallback_position, n_texts);

  RerankResult base = initial_rankings(s_it, cfg.workers);

  // image_pos(i, t): 1-based position of image i in text t's T2I ranking.
  // text_pos(i, t):  1-based position of text t in image i's I2T ranking.
  std::vector<std::size_t> image_pos(n_images * n_texts);
  std::vector<std::size_t> text_pos(n_images * n_texts);
  for (std::size_t t = 0; t < n_texts; ++t)
    for (std::size_t pos = 0; pos < n_images; ++pos) image_pos[base.t2i[t][pos] * n_texts + t] = pos + 1;
  for (std::size_t i = 0; i < n_images; ++i)
    for (std::size_t pos = 0; pos < n_texts; ++pos) text_pos[i * n_texts + base.i2t[i][pos]] = pos + 1;

  // reverse[q]: texts whose neighbourhood contains q.
  std::vector<RankList> neighbourhoods(n_texts);
  parallel_for(n_texts, cfg.workers,
               [&](std::size_t t) { neighbourhoods[t] = text_neighbourhood(*s_tt, t, cfg.k_prime); });
  std::vector<std::vector<std::size_t>> reverse(n_texts);
  for (std::size_t t = 0; t < n_texts; ++t)
    for (std::size_t member : neighbourhoods[t]) reverse[member].push_back(t);

  RerankResult out;
  out.i2t.resize(n_images);
  out.t2i.resize(n_texts);
  parallel_for(n_images, cfg.workers, [&](std::size_t i) {
    std::vector<std::size_t> positions(cfg.k);
    for (std::size_t j = 0; j < cfg.k; ++j) positions[j] = image_pos[i * n_texts + base.i2t[i][j]];
    out.i2t[i] = apply_positions(base.i2t[i], cfg.k, positions);
  });
  parallel_for(n_texts, cfg.workers, [&](std::size_t q) {
    std::vector<std::size_t> positions(cfg.k, fallback);
    for (std::size_t j = 0; j < cfg.k; ++j) {
      const std::size_t image = base.t2i[q][j];
      std::size_t best = std::numeric_limits<std::size_t>::max();
      for (std::size_t t : reverse[q]) best = std::min(best, text_pos[image * n_texts + t]);
      if (best != std::numeric_limits<std::size_t>::max()) positions[j] = best;
    }
    out.t2i[q] = apply_positions(base.t2i[q], cfg.k, positions);
  });
  return out;
}

}  // namespace mtfn
