#include "mtfn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mtfn/error.hpp"
#include "mtfn/evaluation.hpp"
#include "mtfn/reranking.hpp"

namespace mtfn {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// Ties pick the smaller index; returns kNone when nothing is eligible.
template <class Eligible, class Score>
std::size_t argmax_where(std::size_t n, Eligible eligible, Score score) {
  std::size_t best = kNone;
  double best_score = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!eligible(k)) continue;
    const double s = score(k);
    if (best == kNone || s > best_score) {
      best = k;
      best_score = s;
    }
  }
  return best;
}

Mat gather_rows(const Mat& src, std::span<const std::size_t> ids) {
  std::vector<double> data;
  data.reserve(ids.size() * src.cols());
  for (std::size_t id : ids) {
    auto row = src.row(id);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat(ids.size(), src.cols(), std::move(data));
}

// Shuffled images split into batches; a trailing singleton joins the
// previous batch so every batch has a negative.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> images,
                                                   std::size_t batch_size, SeededRng& rng) {
  rng.shuffle(images);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t lo = 0; lo < images.size(); lo += batch_size) {
    const std::size_t hi = std::min(images.size(), lo + batch_size);
    batches.emplace_back(images.begin() + static_cast<std::ptrdiff_t>(lo),
                         images.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

double train_batch_it(FusionBranchParams& branch, AdamState& adam, const PairedDataset& data,
                      const std::vector<std::vector<std::size_t>>& groups,
                      const std::vector<std::size_t>& batch, double lr, const TrainConfig& cfg,
                      SeededRng& rng) {
  std::vector<std::size_t> texts;
  texts.reserve(batch.size());
  for (std::size_t img : batch) texts.push_back(groups[img][rng.index(groups[img].size())]);
  const Mat xs = gather_rows(data.images, batch);
  const Mat ys = gather_rows(data.texts, texts);
  const auto x_codes = encode_rows(branch, Side::a, xs, cfg.workers);
  const auto y_codes = encode_rows(branch, Side::b, ys, cfg.workers);
  const SimilarityMatrix sim = score_codes(branch, x_codes, y_codes, cfg.workers);

  std::vector<PositivePair> pairs;
  for (std::size_t p = 0; p < batch.size(); ++p) pairs.push_back({p, p});
  LossResult loss = batch_loss_it(sim, pairs, cfg.margin);

  FusionBranchParams grads = zeros_like(branch);
  accumulate_grid_gradients(branch, xs, ys, x_codes, y_codes, sim, loss.dsim, grads);
  adam_step(branch, grads, adam, lr);
  return loss.loss;
}

double train_batch_tt(FusionBranchParams& branch, AdamState& adam, const PairedDataset& data,
                      const std::vector<std::vector<std::size_t>>& groups,
                      const std::vector<std::size_t>& batch, double lr, const TrainConfig& cfg,
                      SeededRng& rng) {
  std::vector<std::size_t> texts;
  std::vector<std::size_t> text_group;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& caps = groups[batch[b]];
    const std::size_t first = rng.index(caps.size());
    std::size_t second = rng.index(caps.size() - 1);
    if (second >= first) ++second;
    texts.push_back(caps[first]);
    texts.push_back(caps[second]);
    text_group.push_back(b);
    text_group.push_back(b);
  }
  const Mat ts = gather_rows(data.texts, texts);
  const auto a_codes = encode_rows(branch, Side::a, ts, cfg.workers);
  const auto b_codes = encode_rows(branch, Side::b, ts, cfg.workers);
  const SimilarityMatrix sim = score_codes(branch, a_codes, b_codes, cfg.workers);
  LossResult loss = batch_loss_tt(sim, text_group, cfg.margin);

  FusionBranchParams grads = zeros_like(branch);
  accumulate_grid_gradients(branch, ts, ts, a_codes, b_codes, sim, loss.dsim, grads);
  adam_step(branch, grads, adam, lr);
  return loss.loss;
}

// Fraction of texts whose most similar other text has the same image.
double text_neighbour_r1(const SimilarityMatrix& s_tt, const std::vector<std::size_t>& owner) {
  const std::size_t n = s_tt.n_query();
  if (n < 2) return 0.0;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t best = argmax_where(
        n, [&](std::size_t o) { return o != t; }, [&](std::size_t o) { return s_tt(t, o); });
    if (owner[best] == owner[t]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

std::string_view to_string(BranchKind b) {
  return b == BranchKind::image_text ? "image-text" : "text-text";
}

void TrainConfig::validate() const {
  require(batch_size >= 2, ErrorKind::invalid_argument,
          "train: batch_size must be >= 2, got " + std::to_string(batch_size));
  require(epochs >= 1, ErrorKind::invalid_argument, "train: epochs must be >= 1");
  require(lr0 > 0.0 && std::isfinite(lr0), ErrorKind::invalid_argument, "train: lr must be > 0");
  require(margin > 0.0 && std::isfinite(margin), ErrorKind::invalid_argument,
          "train: margin must be > 0");
  require(decay_factor > 0.0 && std::isfinite(decay_factor), ErrorKind::invalid_argument,
          "train: decay factor must be > 0");
  require(decay_every >= 1, ErrorKind::invalid_argument, "train: decay_every must be >= 1");
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 / std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

HardNegatives mine_hardest(const SimilarityMatrix& sim, PositivePair pair,
                           std::span<const std::size_t> text_owner) {
  require(pair.image < sim.n_query() && pair.text < sim.n_gallery(), ErrorKind::invalid_argument,
          "mine_hardest: pair (" + std::to_string(pair.image) + ", " + std::to_string(pair.text) +
              ") outside " + sim.scores().shape_str());
  require(text_owner.size() == sim.n_gallery(), ErrorKind::shape,
          "mine_hardest: text_owner has " + std::to_string(text_owner.size()) + " entries for " +
              std::to_string(sim.n_gallery()) + " texts");
  require(text_owner[pair.text] == pair.image, ErrorKind::invalid_argument,
          "mine_hardest: text " + std::to_string(pair.text) + " is not owned by image " +
              std::to_string(pair.image));
  HardNegatives h{};
  h.text = argmax_where(
      sim.n_gallery(), [&](std::size_t j) { return text_owner[j] != pair.image; },
      [&](std::size_t j) { return sim(pair.image, j); });
  h.image = argmax_where(
      sim.n_query(), [&](std::size_t i) { return i != pair.image; },
      [&](std::size_t i) { return sim(i, pair.text); });
  require(h.text != kNone && h.image != kNone, ErrorKind::invalid_argument,
          "mine_hardest: no eligible negative for pair (" + std::to_string(pair.image) + ", " +
              std::to_string(pair.text) + ")");
  return h;
}

LossResult batch_loss_it(const SimilarityMatrix& sim, std::span<const PositivePair> pairs,
                         double margin, std::span<const std::size_t> text_owner) {
  require(margin > 0.0, ErrorKind::invalid_argument, "batch_loss_it: margin must be > 0");
  require(!pairs.empty(), ErrorKind::invalid_argument, "batch_loss_it: no pairs");
  std::vector<std::size_t> derived;
  if (text_owner.empty()) {
    derived.assign(sim.n_gallery(), kNone);
    for (const auto& p : pairs) {
      require(p.text < sim.n_gallery(), ErrorKind::shape,
              "batch_loss_it: text " + std::to_string(p.text) + " outside " +
                  sim.scores().shape_str());
      derived[p.text] = p.image;
    }
    text_owner = derived;
  }
  LossResult out;
  out.dsim = Mat(sim.n_query(), sim.n_gallery());
  const double w = 1.0 / static_cast<double>(pairs.size());
  double total = 0.0;
  for (const auto& p : pairs) {
    const HardNegatives h = mine_hardest(sim, p, text_owner);
    const double pos = sim(p.image, p.text);
    const double slack_text = margin - pos + sim(p.image, h.text);
    const double slack_image = margin - pos + sim(h.image, p.text);
    if (slack_text > 0.0) {
      total += slack_text;
      out.dsim(p.image, p.text) -= w;
      out.dsim(p.image, h.text) += w;
    }
    if (slack_image > 0.0) {
      total += slack_image;
      out.dsim(p.image, p.text) -= w;
      out.dsim(h.image, p.text) += w;
    }
  }
  out.loss = total * w;
  return out;
}

std::vector<TextPair> same_group_pairs(std::span<const std::size_t> groups) {
  std::vector<TextPair> pairs;
  for (std::size_t p = 0; p < groups.size(); ++p)
    for (std::size_t q = 0; q < groups.size(); ++q)
      if (p != q && groups[p] == groups[q]) pairs.push_back({p, q});
  return pairs;
}

LossResult batch_loss_tt(const SimilarityMatrix& sim_tt, std::span<const std::size_t> groups,
                         double margin) {
  const auto pairs = same_group_pairs(groups);
  return batch_loss_tt(sim_tt, groups, pairs, margin);
}

LossResult batch_loss_tt(const SimilarityMatrix& sim_tt, std::span<const std::size_t> groups,
                         std::span<const TextPair> pairs, double margin) {
  const std::size_t n = sim_tt.n_query();
  require(sim_tt.n_gallery() == n, ErrorKind::shape,
          "batch_loss_tt: S_TT must be square, got " + sim_tt.scores().shape_str());
  require(groups.size() == n, ErrorKind::shape,
          "batch_loss_tt: " + std::to_string(groups.size()) + " group labels for " +
              std::to_string(n) + " texts");
  require(margin > 0.0, ErrorKind::invalid_argument, "batch_loss_tt: margin must be > 0");
  require(!pairs.empty(), ErrorKind::invalid_argument,
          "batch_loss_tt: batch has no same-group text pair");
  LossResult out;
  out.dsim = Mat(n, n);
  const double w = 1.0 / static_cast<double>(pairs.size());
  double total = 0.0;
  for (const auto& [p, q] : pairs) {
    require(p < n && q < n && p != q && groups[p] == groups[q], ErrorKind::invalid_argument,
            "batch_loss_tt: (" + std::to_string(p) + ", " + std::to_string(q) +
                ") is not a same-group pair");
    const std::size_t h = argmax_where(
        n, [&](std::size_t k) { return groups[k] != groups[p]; },
        [&](std::size_t k) { return sim_tt(p, k); });
    require(h != kNone, ErrorKind::invalid_argument,
            "batch_loss_tt: text " + std::to_string(p) + " has no negative in the batch");
    const double slack = margin - sim_tt(p, q) + sim_tt(p, h);
    if (slack > 0.0) {
      total += slack;
      out.dsim(p, q) -= w;
      out.dsim(p, h) += w;
    }
  }
  out.loss = total * w;
  return out;
}

AdamState AdamState::zeros_for(const FusionBranchParams& params) {
  return AdamState{zeros_like(params), zeros_like(params), 0};
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t t, double lr) {
  const double bc1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k];
    m[k] = AdamState::beta1 * m[k] + (1.0 - AdamState::beta1) * g;
    v[k] = AdamState::beta2 * v[k] + (1.0 - AdamState::beta2) * g * g;
    const double m_hat = m[k] / bc1;
    const double v_hat = v[k] / bc2;
    param[k] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::eps);
  }
}

void adam_step(FusionBranchParams& params, const FusionBranchParams& grads, AdamState& state,
               double lr) {
  require(lr > 0.0, ErrorKind::invalid_argument, "adam_step: lr must be > 0");
  std::vector<std::pair<std::string, const Mat*>> g;
  grads.for_each_tensor([&](const std::string& name, const Mat& m) { g.emplace_back(name, &m); });
  std::size_t idx = 0;
  params.for_each_tensor([&](const std::string& name, const Mat& p) {
    require(idx < g.size() && g[idx].first == name && g[idx].second->same_shape(p),
            ErrorKind::shape, "adam_step: gradient layout differs at " + name);
    require(g[idx].second->all_finite(), ErrorKind::numeric,
            "adam_step: non-finite gradient in " + name + "; training diverged");
    ++idx;
  });
  require(idx == g.size(), ErrorKind::shape, "adam_step: gradient has extra tensors");

  ++state.t;
  std::vector<Mat*> ms;
  std::vector<Mat*> vs;
  state.m.for_each_tensor([&](const std::string&, Mat& m) { ms.push_back(&m); });
  state.v.for_each_tensor([&](const std::string&, Mat& v) { vs.push_back(&v); });
  idx = 0;
  params.for_each_tensor([&](const std::string&, Mat& p) {
    adam_update(p.data(), g[idx].second->data(), ms[idx]->data(), vs[idx]->data(), state.t, lr);
    ++idx;
  });
}

std::vector<EpochLog> train_branch(MtfnParams& params, const PairedDataset& data,
                                   const TrainConfig& cfg, BranchKind branch_kind,
                                   SeededRng& rng, const EpochSink& sink) {
  cfg.validate();
  data.validate();
  const bool it = branch_kind == BranchKind::image_text;
  FusionBranchParams& branch = it ? params.it_branch : params.tt_branch;
  branch.validate();
  if (it) {
    require(data.images.cols() == branch.raw_dim(Side::a) &&
                data.texts.cols() == branch.raw_dim(Side::b),
            ErrorKind::shape,
            "train: dataset dims " + std::to_string(data.images.cols()) + "/" +
                std::to_string(data.texts.cols()) + " do not match model " +
                std::to_string(branch.raw_dim(Side::a)) + "/" +
                std::to_string(branch.raw_dim(Side::b)));
  } else {
    require(data.texts.cols() == branch.raw_dim(Side::a), ErrorKind::shape,
            "train: text dim " + std::to_string(data.texts.cols()) +
                " does not match text-text branch " + std::to_string(branch.raw_dim(Side::a)));
  }

  const auto groups = data.caption_groups();
  std::vector<std::size_t> eligible;
  const std::size_t min_captions = it ? 1 : 2;
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (groups[i].size() >= min_captions) eligible.push_back(i);
  require(eligible.size() >= 2, ErrorKind::invalid_argument,
          std::string("train: ") + std::string(to_string(branch_kind)) + " needs >= 2 images with >= " +
              std::to_string(min_captions) + " captions, found " + std::to_string(eligible.size()));

  AdamState adam = AdamState::zeros_for(branch);
  std::vector<EpochLog> log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    const auto batches = make_batches(eligible, cfg.batch_size, rng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      const double loss = it ? train_batch_it(branch, adam, data, groups, batch, lr, cfg, rng)
                             : train_batch_tt(branch, adam, data, groups, batch, lr, cfg, rng);
      require(std::isfinite(loss), ErrorKind::numeric,
              "train: loss is not finite at epoch " + std::to_string(epoch));
      loss_sum += loss;
    }
    EpochLog entry;
    entry.branch = branch_kind;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.loss = loss_sum / static_cast<double>(batches.size());
    if (cfg.log_recall) {
      if (it) {
        const auto sim = score_matrix(branch, data.images, data.texts, cfg.workers);
        const auto gt = GroundTruth::from_group_map(data.text_to_image, data.n_images());
        const auto lists = initial_rankings(sim, cfg.workers);
        entry.i2t_r1 = recall_at(lists.i2t, gt, Direction::i2t, 1);
        entry.t2i_r1 = recall_at(lists.t2i, gt, Direction::t2i, 1);
      } else {
        const auto sim = score_matrix(branch, data.texts, data.texts, cfg.workers);
        entry.i2t_r1 = entry.t2i_r1 = text_neighbour_r1(sim, data.text_to_image);
      }
    }
    if (sink) sink(entry);
    log.push_back(entry);
  }
  return log;
}

TrainResult train(const PairedDataset& data, const ModelDims& dims_in, const TrainConfig& cfg,
                  SeededRng& rng, const EpochSink& sink) {
  cfg.validate();
  data.validate();
  ModelDims dims = dims_in;
  if (dims.d_raw_img == 0) dims.d_raw_img = data.images.cols();
  if (dims.d_raw_txt == 0) dims.d_raw_txt = data.texts.cols();
  TrainResult result;
  result.params = init_params(dims, rng);
  result.log = train_branch(result.params, data, cfg, BranchKind::image_text, rng, sink);
  result.params = init_tt_from_it(result.params, rng);
  auto tt_log = train_branch(result.params, data, cfg, BranchKind::text_text, rng, sink);
  result.log.insert(result.log.end(), tt_log.begin(), tt_log.end());
  return result;
}

GradCheckReport grad_check(const FusionBranchParams& branch, std::span<const double> x_raw,
                           std::span<const double> y_raw, double h, const BackwardFn& backward) {
  const auto fwd = forward_pair(branch, x_raw, y_raw);
  const FusionBranchParams analytic =
      backward ? backward(branch, fwd.cache, 1.0) : backward_pair(branch, fwd.cache, 1.0);
  std::vector<const Mat*> grads;
  analytic.for_each_tensor([&](const std::string&, const Mat& m) { grads.push_back(&m); });

  GradCheckReport report;
  FusionBranchParams probe = branch;
  std::size_t tensor = 0;
  probe.for_each_tensor([&](const std::string& name, Mat& w) {
    auto data = w.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + h;
      const double up = forward_pair(probe, x_raw, y_raw).score;
      data[k] = saved - h;
      const double down = forward_pair(probe, x_raw, y_raw).score;
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grads[tensor]->data()[k];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (err > report.max_rel_error) report = {err, name, k};
    }
    ++tensor;
  });
  return report;
}

}  // namespace mtfn
