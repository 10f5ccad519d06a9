#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "mtfn/error.hpp"
#include "mtfn/synthetic.hpp"
#include "mtfn/training.hpp"

using namespace mtfn;

namespace {

SimilarityMatrix sim(std::initializer_list<std::initializer_list<double>> rows) {
  return SimilarityMatrix(Mat::from_rows(rows));
}

std::vector<PositivePair> diagonal(std::size_t n) {
  std::vector<PositivePair> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back({i, i});
  return p;
}

TrainConfig fast_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.lr0 = 1e-3;
  cfg.decay_every = 50;
  cfg.seed = seed;
  return cfg;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("mine_hardest") {
  const std::vector<std::size_t> owner2{0, 1};
  const HardNegatives h = mine_hardest(sim({{0.9, 0.2}, {0.1, 0.8}}), {0, 0}, owner2);
  CHECK(h.image == 1);
  CHECK(h.text == 1);

  const std::vector<std::size_t> owner3{0, 1, 2};
  const auto s3 = sim({{0.9, 0.4, 0.7}, {0.1, 0.5, 0.2}, {0.3, 0.2, 0.6}});
  CHECK(mine_hardest(s3, {0, 0}, owner3).text == 2);
  CHECK(mine_hardest(s3, {0, 0}, owner3).image == 2);

  const auto tie = sim({{0.9, 0.4, 0.4}, {0.1, 0.5, 0.2}, {0.1, 0.2, 0.6}});
  CHECK(mine_hardest(tie, {0, 0}, owner3).text == 1);
  CHECK(mine_hardest(tie, {0, 0}, owner3).image == 1);

  // Texts sharing the query image's group are never negatives.
  const std::vector<std::size_t> grouped{0, 0, 1};
  const auto s = sim({{0.5, 0.95, 0.3}, {0.9, 0.1, 0.8}});
  CHECK(mine_hardest(s, {0, 0}, grouped).text == 2);

  CHECK_THROWS_AS(mine_hardest(s3, {0, 1}, owner3), Error);
}

TEST_CASE("batch_loss_it examples") {
  const auto pairs = diagonal(3);
  SUBCASE("satisfied margin") {
    const auto r = batch_loss_it(
        sim({{0.9, 0.5, 0.5}, {0.5, 0.9, 0.5}, {0.5, 0.5, 0.9}}), pairs, 0.2);
    CHECK(r.loss == 0.0);
    CHECK(r.dsim == Mat(3, 3));
  }
  SUBCASE("hand evaluated") {
    const auto r = batch_loss_it(sim({{0.6, 0.55}, {0.55, 0.6}}), diagonal(2), 0.2);
    CHECK(r.loss == doctest::Approx(0.3).epsilon(1e-12));
  }
  SUBCASE("zero gap gives twice the margin") {
    const auto r = batch_loss_it(sim({{0.4, 0.4, 0.4}, {0.4, 0.4, 0.4}, {0.4, 0.4, 0.4}}),
                                 pairs, 0.2);
    CHECK(r.loss == doctest::Approx(0.4).epsilon(1e-12));
  }
  SUBCASE("margin must be positive") {
    CHECK_THROWS_AS(batch_loss_it(sim({{0.6, 0.5}, {0.5, 0.6}}), diagonal(2), 0.0), Error);
  }
}

TEST_CASE("batch_loss_tt examples") {
  const std::vector<std::size_t> groups{0, 0, 1};
  SUBCASE("saturated positive") {
    const auto r = batch_loss_tt(sim({{1, 1, 0.8}, {1, 1, 0.7}, {0.8, 0.7, 1}}), groups, 0.2);
    CHECK(r.loss == 0.0);
  }
  SUBCASE("hand evaluated single hinge") {
    const std::vector<TextPair> one{{0, 1}};
    const auto r = batch_loss_tt(sim({{1, 0.5, 0.6}, {0.5, 1, 0.1}, {0.6, 0.1, 1}}), groups, one,
                                 0.2);
    CHECK(r.loss == doctest::Approx(0.3).epsilon(1e-12));
    // Only the anchor row moves: no symmetric term.
    CHECK(r.dsim(0, 1) == -1.0);
    CHECK(r.dsim(0, 2) == 1.0);
    CHECK(r.dsim(1, 0) == 0.0);
    CHECK(r.dsim(2, 0) == 0.0);
  }
  SUBCASE("no same-group pair") {
    const std::vector<std::size_t> lonely{0, 1, 2};
    CHECK_THROWS_AS(batch_loss_tt(sim({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), lonely, 0.2), Error);
  }
  CHECK(same_group_pairs(groups).size() == 2);
}

TEST_CASE("loss subgradients match finite differences away from kinks") {
  SeededRng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(5);
    Mat m(n, n);
    for (double& x : m.data()) x = rng.uniform01();
    const auto pairs = diagonal(n);
    const double margin = 0.1 + 0.3 * rng.uniform01();
    const LossResult r = batch_loss_it(SimilarityMatrix(m), pairs, margin);
    CHECK(r.loss >= 0.0);
    const double h = 1e-7;
    for (std::size_t k = 0; k < m.size(); ++k) {
      Mat up = m, down = m;
      up.data()[k] += h;
      down.data()[k] -= h;
      const double lu = batch_loss_it(SimilarityMatrix(up), pairs, margin).loss;
      const double ld = batch_loss_it(SimilarityMatrix(down), pairs, margin).loss;
      CHECK(r.dsim.data()[k] == doctest::Approx((lu - ld) / (2 * h)).epsilon(1e-5));
    }

    std::vector<std::size_t> groups(n);
    for (std::size_t i = 0; i < n; ++i) groups[i] = i / 2;
    if (n % 2) groups[n - 1] = groups[n - 2];
    if (groups.front() == groups.back()) continue;
    const LossResult t = batch_loss_tt(SimilarityMatrix(m), groups, margin);
    CHECK(t.loss >= 0.0);
    for (std::size_t k = 0; k < m.size(); ++k) {
      Mat up = m, down = m;
      up.data()[k] += h;
      down.data()[k] -= h;
      const double lu = batch_loss_tt(SimilarityMatrix(up), groups, margin).loss;
      const double ld = batch_loss_tt(SimilarityMatrix(down), groups, margin).loss;
      CHECK(t.dsim.data()[k] == doctest::Approx((lu - ld) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("first step of a scalar") {
    std::vector<double> p{1.0}, g{1.0}, m{0.0}, v{0.0};
    adam_update(p, g, m, v, 1, 1e-3);
    CHECK(p[0] - 1.0 == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("zero gradients are a fixed point") {
    SeededRng rng(1);
    ModelDims dims;
    dims.d_raw_img = dims.d_raw_txt = 3;
    dims.d_v = dims.d_t = dims.d_f = dims.d_f_tt = 2;
    dims.rank = 2;
    MtfnParams p = init_params(dims, rng);
    const FusionBranchParams before = p.it_branch;
    AdamState st = AdamState::zeros_for(p.it_branch);
    adam_step(p.it_branch, zeros_like(p.it_branch), st, 1e-3);
    CHECK(p.it_branch == before);
    CHECK(st.t == 1);
  }
  SUBCASE("non-finite gradients abort") {
    FusionBranchParams b;
    b.w_in_a = Mat(1, 1);
    b.w_in_b = Mat(1, 1);
    b.factors_a = {Mat(1, 1)};
    b.factors_b = {Mat(1, 1)};
    b.w_out = Mat(1, 1);
    FusionBranchParams g = zeros_like(b);
    g.w_out(0, 0) = std::nan("");
    AdamState st = AdamState::zeros_for(b);
    try {
      adam_step(b, g, st, 1e-3);
      FAIL("expected numeric error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::numeric);
    }
  }
}

TEST_CASE("learning rate schedule and config validation") {
  TrainConfig cfg;
  CHECK(learning_rate(cfg, 0) == doctest::Approx(1e-4));
  CHECK(learning_rate(cfg, 9) == doctest::Approx(1e-4));
  CHECK(learning_rate(cfg, 10) == doctest::Approx(5e-5));
  CHECK(learning_rate(cfg, 20) == doctest::Approx(2.5e-5));
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("training separates a separable dataset") {
  SeededRng data_rng(1);
  const PairedDataset data = gen_synthetic(SyntheticSpec{}, data_rng);
  ModelDims dims;
  TrainConfig cfg = fast_config(1);
  cfg.epochs = 200;
  SeededRng rng(cfg.seed);
  const TrainResult r = train(data, dims, cfg, rng);
  const EpochLog* last_it = nullptr;
  for (const auto& e : r.log)
    if (e.branch == BranchKind::image_text) last_it = &e;
  REQUIRE(last_it != nullptr);
  CHECK(last_it->i2t_r1 >= 0.95);
  CHECK(last_it->t2i_r1 >= 0.95);
  CHECK(r.log.size() == 400);
}

TEST_CASE("loss decreases across seeds") {
  SyntheticSpec spec;
  spec.n_images = 16;
  spec.n_clusters = 16;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SeededRng data_rng(seed);
    const PairedDataset data = gen_synthetic(spec, data_rng);
    TrainConfig cfg = fast_config(seed);
    cfg.epochs = 40;
    cfg.log_recall = false;
    SeededRng rng(seed);
    ModelDims dims;
    dims.d_raw_img = dims.d_raw_txt = 32;
    MtfnParams p = init_params(dims, rng);
    const auto log = train_branch(p, data, cfg, BranchKind::image_text, rng);
    std::vector<double> first, last;
    for (std::size_t e = 0; e < 10; ++e) first.push_back(log[e].loss);
    for (std::size_t e = log.size() - 10; e < log.size(); ++e) last.push_back(log[e].loss);
    CHECK(median(last) < median(first));
    CHECK(log.back().i2t_r1 == -1.0);
  }
}

TEST_CASE("training is deterministic") {
  SyntheticSpec spec;
  spec.n_images = 12;
  spec.n_clusters = 6;
  SeededRng d1(3);
  const PairedDataset data = gen_synthetic(spec, d1);
  TrainConfig cfg = fast_config(3);
  cfg.epochs = 5;
  SeededRng a(3), b(3);
  const TrainResult ra = train(data, ModelDims{}, cfg, a);
  const TrainResult rb = train(data, ModelDims{}, cfg, b);
  CHECK(ra.params == rb.params);
  for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i].loss == rb.log[i].loss);

  cfg.workers = 4;
  SeededRng c(3);
  CHECK(train(data, ModelDims{}, cfg, c).params == ra.params);
}

TEST_CASE("grad_check") {
  SeededRng rng(8);
  ModelDims dims;
  dims.d_raw_img = dims.d_raw_txt = 4;
  dims.d_v = dims.d_t = dims.d_f = dims.d_f_tt = 4;
  dims.rank = 2;
  const MtfnParams p = init_params(dims, rng);
  Vec x(4), y(4);
  for (double& v : x) v = rng.uniform(-1, 1);
  for (double& v : y) v = rng.uniform(-1, 1);

  CHECK(grad_check(p.it_branch, x, y).max_rel_error < 1e-4);

  FusionBranchParams flat = p.it_branch;
  for (Mat& f : flat.factors_a) f = Mat(f.rows(), f.cols());
  for (Mat& f : flat.factors_b) f = Mat(f.rows(), f.cols());
  const auto fw = forward_pair(flat, x, y);
  CHECK(backward_pair(flat, fw.cache, 1.0).w_out == Mat(1, 4));
  CHECK(grad_check(flat, x, y).max_rel_error < 1e-4);

  const BackwardFn flipped = [](const FusionBranchParams& b, const ForwardCache& c, double up) {
    FusionBranchParams g = backward_pair(b, c, up);
    for (double& w : g.factors_a[0].data()) w = -w;
    return g;
  };
  const GradCheckReport bad = grad_check(p.it_branch, x, y, 1e-5, flipped);
  CHECK(bad.max_rel_error > 1e-2);
  CHECK(bad.worst_tensor == "factor_a.0");
}
