#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mtfn/error.hpp"
#include "mtfn/evaluation.hpp"
#include "published_results.hpp"

using namespace mtfn;

namespace {

// One caption per image, identity ground truth.
GroundTruth one_to_one(std::size_t n) {
  std::vector<std::size_t> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = i;
  return GroundTruth::from_group_map(g, n);
}

// A list for query q whose ground truth (item q) sits at the 1-based rank r.
RankList list_with_rank(std::size_t q, std::size_t r, std::size_t n) {
  RankList l;
  for (std::size_t i = 0; i < n; ++i)
    if (i != q) l.push_back(i);
  l.insert(l.begin() + static_cast<std::ptrdiff_t>(r - 1), q);
  return l;
}

RetrievalMetrics from_percent(const std::array<double, 6>& r) {
  RetrievalMetrics m{r[0] / 100, r[1] / 100, r[2] / 100, r[3] / 100, r[4] / 100, r[5] / 100, 0};
  m.mr = mean_recall(m);
  return m;
}

}  // namespace

TEST_CASE("recall_at direct counts") {
  // Three caption queries over a gallery of 25 images; only the first three
  // images have captions.
  const std::size_t n = 25;
  const GroundTruth gt = GroundTruth::from_group_map({0, 1, 2}, n);
  const std::vector<RankList> lists{list_with_rank(0, 1, n), list_with_rank(1, 4, n),
                                    list_with_rank(2, 20, n)};
  CHECK(recall_at(lists, gt, Direction::t2i, 1) == doctest::Approx(1.0 / 3));
  CHECK(recall_at(lists, gt, Direction::t2i, 5) == doctest::Approx(2.0 / 3));
  CHECK(recall_at(lists, gt, Direction::t2i, 10) == doctest::Approx(2.0 / 3));
  CHECK(recall_at(lists, gt, Direction::t2i, 20) == doctest::Approx(1.0));
}

TEST_CASE("perfect and worst retrieval") {
  const std::size_t n = 12;
  const GroundTruth gt = one_to_one(n);
  std::vector<RankList> best, worst;
  for (std::size_t q = 0; q < n; ++q) {
    best.push_back(list_with_rank(q, 1, n));
    worst.push_back(list_with_rank(q, n, n));
  }
  for (std::size_t L : {1, 5, 10, 12}) {
    CHECK(recall_at(best, gt, Direction::i2t, L) == 1.0);
    CHECK(recall_at(best, gt, Direction::t2i, L) == 1.0);
  }
  for (std::size_t L : {1, 5, 10}) CHECK(recall_at(worst, gt, Direction::i2t, L) == 0.0);
  CHECK_THROWS_AS(recall_at(best, gt, Direction::i2t, 13), Error);
  CHECK_THROWS_AS(recall_at(best, gt, Direction::i2t, 0), Error);
}

TEST_CASE("image query is satisfied by any of its captions") {
  // Image 0 owns texts 0 and 1; image 1 owns text 2.
  const GroundTruth gt = GroundTruth::from_group_map({0, 0, 1}, 2);
  const std::vector<RankList> i2t{{2, 1, 0}, {0, 1, 2}};
  CHECK(recall_at(i2t, gt, Direction::i2t, 1) == 0.0);
  CHECK(recall_at(i2t, gt, Direction::i2t, 2) == 0.5);
  const std::vector<RankList> t2i{{0, 1}, {1, 0}, {1, 0}};
  CHECK(recall_at(t2i, gt, Direction::t2i, 1) == doctest::Approx(2.0 / 3));
}

TEST_CASE("recall is monotone in L and rank based") {
  SeededRng rng(3);
  std::vector<std::size_t> owners;
  for (std::size_t t = 0; t < 24; ++t) owners.push_back(t / 2);
  const GroundTruth gt = GroundTruth::from_group_map(owners, 12);
  for (int trial = 0; trial < 20; ++trial) {
    Mat s = rand_uniform(rng, 12, 24, 1.0);
    const RetrievalMetrics m = evaluate(SimilarityMatrix(s), gt);
    CHECK(m.i2t_r1 <= m.i2t_r5);
    CHECK(m.i2t_r5 <= m.i2t_r10);
    CHECK(m.t2i_r1 <= m.t2i_r5);
    const auto lists = initial_rankings(SimilarityMatrix(s));
    double prev = 0.0;
    for (std::size_t L = 1; L <= 12; ++L) {
      const double r = recall_at(lists.t2i, gt, Direction::t2i, L);
      CHECK(r >= prev);
      prev = r;
    }
    Mat mapped = s;
    for (double& x : mapped.data()) x = std::atan(5 * x) + 2;
    CHECK(evaluate(SimilarityMatrix(mapped), gt) == m);
  }
}

TEST_CASE("mean recall of published rows") {
  CHECK(mean_recall(RetrievalMetrics{}) == 0.0);
  const RetrievalMetrics flickr = from_percent({65.3, 88.3, 93.3, 52.0, 80.1, 86.1});
  CHECK(flickr.mr == doctest::Approx(0.775).epsilon(1e-4));
  const RetrievalMetrics coco = from_percent({74.3, 94.9, 97.9, 60.1, 89.1, 95.0});
  CHECK(coco.mr == doctest::Approx(0.8522).epsilon(1e-4));
  for (const auto& row : oracle::kPublishedRows) {
    INFO(row.method, " ", row.dataset);
    CHECK(std::abs(100 * from_percent(row.recalls).mr - row.mr) <= oracle::kPrintedTolerance);
  }
}

TEST_CASE("fold_average") {
  RetrievalMetrics a{}, b{};
  a.i2t_r1 = 0.4;
  b.i2t_r1 = 0.6;
  a.mr = mean_recall(a);
  b.mr = mean_recall(b);
  const std::vector<RetrievalMetrics> two{a, b};
  CHECK(fold_average(two).i2t_r1 == doctest::Approx(0.5));
  const std::vector<RetrievalMetrics> same{a, a, a};
  CHECK(fold_average(same).i2t_r1 == doctest::Approx(a.i2t_r1));
  CHECK_THROWS_AS(fold_average(std::vector<RetrievalMetrics>{}), Error);

  SeededRng rng(8);
  std::vector<RetrievalMetrics> folds;
  double sums[6] = {0, 0, 0, 0, 0, 0};
  for (int f = 0; f < 5; ++f) {
    RetrievalMetrics m;
    double* fields[6] = {&m.i2t_r1, &m.i2t_r5, &m.i2t_r10, &m.t2i_r1, &m.t2i_r5, &m.t2i_r10};
    for (int k = 0; k < 6; ++k) {
      *fields[k] = rng.uniform01();
      sums[k] += *fields[k];
    }
    m.mr = mean_recall(m);
    folds.push_back(m);
  }
  const RetrievalMetrics avg = fold_average(folds);
  CHECK(avg.i2t_r1 == doctest::Approx(sums[0] / 5));
  CHECK(avg.t2i_r10 == doctest::Approx(sums[5] / 5));
  CHECK(avg.mr == doctest::Approx((sums[0] + sums[1] + sums[2] + sums[3] + sums[4] + sums[5]) / 30));
}

TEST_CASE("fold ranges and slicing") {
  CHECK(fold_ranges(10, 5) == std::vector<std::pair<std::size_t, std::size_t>>{
                                  {0, 2}, {2, 4}, {4, 6}, {6, 8}, {8, 10}});
  CHECK_THROWS_AS(fold_ranges(3, 5), Error);
  const GroundTruth gt = GroundTruth::from_group_map({0, 0, 1, 1, 2, 2}, 3);
  Mat s(3, 6);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 6; ++t) s(i, t) = 10.0 * i + t;
  const SimilarityMatrix sl = slice_it(SimilarityMatrix(s), gt, 1, 3);
  CHECK(sl.scores() == Mat::from_rows({{12, 13, 14, 15}, {22, 23, 24, 25}}));
  const GroundTruth sub = gt.slice(1, 3);
  CHECK(sub.text_to_image == std::vector<std::size_t>{0, 0, 1, 1});
}

TEST_CASE("ensemble_average") {
  SeededRng rng(4);
  std::vector<std::size_t> owners;
  for (std::size_t t = 0; t < 33; ++t) owners.push_back(t / 3);
  const GroundTruth gt = GroundTruth::from_group_map(owners, 11);
  const SimilarityMatrix one(rand_uniform(rng, 11, 33, 1.0));
  for (std::size_t m : {1, 2, 3, 5, 7}) {
    const std::vector<SimilarityMatrix> copies(m, one);
    const SimilarityMatrix avg = ensemble_average(copies);
    CHECK(avg == one);
    CHECK(evaluate(avg, gt) == evaluate(one, gt));
  }
  const SimilarityMatrix other(rand_uniform(rng, 11, 33, 1.0));
  const SimilarityMatrix mid = ensemble_average(std::vector<SimilarityMatrix>{one, other});
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t j = 0; j < 33; ++j)
      CHECK(mid(i, j) == doctest::Approx((one(i, j) + other(i, j)) / 2).epsilon(1e-15));

  CHECK_THROWS_AS(
      ensemble_average(std::vector<SimilarityMatrix>{one, SimilarityMatrix(Mat(2, 2, 0.5))}),
      Error);
}

TEST_CASE("ensemble of members ranking the match at 1 and 3 ranks it first") {
  // Image 0 owns text 0, image 1 owns texts 1 and 2.
  const GroundTruth gt = GroundTruth::from_group_map({0, 1, 1}, 2);
  const SimilarityMatrix a(Mat::from_rows({{0.9, 0.1, 0.2}, {0.1, 0.8, 0.7}}));
  const SimilarityMatrix b(Mat::from_rows({{0.3, 0.5, 0.4}, {0.2, 0.6, 0.9}}));
  const auto la = initial_rankings(a), lb = initial_rankings(b);
  CHECK(la.i2t[0].front() == 0);  // GT at rank 1
  CHECK(lb.i2t[0].back() == 0);   // GT at rank 3
  const SimilarityMatrix e = ensemble_average(std::vector<SimilarityMatrix>{a, b});
  CHECK(initial_rankings(e).i2t[0].front() == 0);
  CHECK(recall_at(initial_rankings(e).i2t, gt, Direction::i2t, 1) == 1.0);
  CHECK(recall_at(lb.i2t, gt, Direction::i2t, 1) == 0.5);
}

TEST_CASE("report formats") {
  const RetrievalMetrics m = from_percent({65.3, 88.3, 93.3, 52.0, 80.1, 86.1});
  const std::string table = to_table(m);
  CHECK(table.find(" 65.3  88.3  93.3") != std::string::npos);
  CHECK(table.find(" 77.5") != std::string::npos);
  CHECK(to_record(m).find("mr=0.77") != std::string::npos);
}
