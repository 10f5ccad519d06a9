#include "mtfn/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mtfn/error.hpp"

namespace mtfn {

namespace {

std::vector<std::size_t> captions_in_range(const GroundTruth& gt, std::size_t first,
                                           std::size_t last) {
  require(first < last && last <= gt.n_images(), ErrorKind::invalid_argument,
          "image range [" + std::to_string(first) + ", " + std::to_string(last) +
              ") invalid for " + std::to_string(gt.n_images()) + " images");
  std::vector<std::size_t> texts;
  for (std::size_t t = 0; t < gt.n_texts(); ++t)
    if (gt.text_to_image[t] >= first && gt.text_to_image[t] < last) texts.push_back(t);
  return texts;
}

}  // namespace

GroundTruth GroundTruth::from_group_map(std::vector<std::size_t> text_to_image,
                                        std::size_t n_images) {
  GroundTruth gt;
  gt.image_to_texts.resize(n_images);
  for (std::size_t t = 0; t < text_to_image.size(); ++t) {
    require(text_to_image[t] < n_images, ErrorKind::invalid_argument,
            "ground truth: text " + std::to_string(t) + " maps to image " +
                std::to_string(text_to_image[t]) + " of " + std::to_string(n_images));
    gt.image_to_texts[text_to_image[t]].push_back(t);
  }
  gt.text_to_image = std::move(text_to_image);
  return gt;
}

void GroundTruth::validate() const {
  std::vector<std::size_t> seen(n_texts(), 0);
  for (std::size_t i = 0; i < n_images(); ++i) {
    for (std::size_t t : image_to_texts[i]) {
      require(t < n_texts() && text_to_image[t] == i, ErrorKind::invalid_argument,
              "ground truth: image " + std::to_string(i) + " lists caption " + std::to_string(t) +
                  " which maps elsewhere");
      ++seen[t];
    }
  }
  for (std::size_t t = 0; t < n_texts(); ++t)
    require(seen[t] == 1, ErrorKind::invalid_argument,
            "ground truth: caption " + std::to_string(t) + " belongs to " +
                std::to_string(seen[t]) + " images");
}

GroundTruth GroundTruth::slice(std::size_t first_image, std::size_t last_image) const {
  const auto texts = captions_in_range(*this, first_image, last_image);
  std::vector<std::size_t> map;
  map.reserve(texts.size());
  for (std::size_t t : texts) map.push_back(text_to_image[t] - first_image);
  return from_group_map(std::move(map), last_image - first_image);
}

double recall_at(std::span<const RankList> lists, const GroundTruth& gt, Direction dir,
                 std::size_t L) {
  const bool i2t = dir == Direction::i2t;
  const std::size_t n_queries = i2t ? gt.n_images() : gt.n_texts();
  const std::size_t gallery = i2t ? gt.n_texts() : gt.n_images();
  require(L >= 1, ErrorKind::invalid_argument, "recall_at: L must be >= 1");
  require(L <= gallery, ErrorKind::invalid_argument,
          "recall_at: L=" + std::to_string(L) + " exceeds gallery size " + std::to_string(gallery));
  require(lists.size() == n_queries && n_queries > 0, ErrorKind::shape,
          "recall_at: " + std::to_string(lists.size()) + " rank lists for " +
              std::to_string(n_queries) + " queries");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < n_queries; ++q) {
    const RankList& list = lists[q];
    const std::size_t depth = std::min(L, list.size());
    bool hit = false;
    for (std::size_t pos = 0; pos < depth && !hit; ++pos) {
      const std::size_t g = list[pos];
      require(g < gallery, ErrorKind::invalid_argument,
              "recall_at: gallery index " + std::to_string(g) + " out of range");
      hit = i2t ? gt.text_to_image[g] == q : gt.text_to_image[q] == g;
    }
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_queries);
}

double mean_recall(const RetrievalMetrics& m) {
  return (m.i2t_r1 + m.i2t_r5 + m.i2t_r10 + m.t2i_r1 + m.t2i_r5 + m.t2i_r10) / 6.0;
}

RetrievalMetrics evaluate(std::span<const RankList> i2t, std::span<const RankList> t2i,
                          const GroundTruth& gt) {
  RetrievalMetrics m;
  m.i2t_r1 = recall_at(i2t, gt, Direction::i2t, 1);
  m.i2t_r5 = recall_at(i2t, gt, Direction::i2t, 5);
  m.i2t_r10 = recall_at(i2t, gt, Direction::i2t, 10);
  m.t2i_r1 = recall_at(t2i, gt, Direction::t2i, 1);
  m.t2i_r5 = recall_at(t2i, gt, Direction::t2i, 5);
  m.t2i_r10 = recall_at(t2i, gt, Direction::t2i, 10);
  m.mr = mean_recall(m);
  return m;
}

RetrievalMetrics evaluate(const SimilarityMatrix& s_it, const GroundTruth& gt,
                          std::size_t workers) {
  require(s_it.n_query() == gt.n_images() && s_it.n_gallery() == gt.n_texts(), ErrorKind::shape,
          "evaluate: S_IT is " + s_it.scores().shape_str() + " but ground truth has " +
              std::to_string(gt.n_images()) + " images and " + std::to_string(gt.n_texts()) +
              " texts");
  const auto lists = initial_rankings(s_it, workers);
  return evaluate(lists.i2t, lists.t2i, gt);
}

RetrievalMetrics fold_average(std::span<const RetrievalMetrics> per_fold) {
  require(!per_fold.empty(), ErrorKind::invalid_argument, "fold_average: no folds");
  RetrievalMetrics avg;
  for (const auto& m : per_fold) {
    avg.i2t_r1 += m.i2t_r1;
    avg.i2t_r5 += m.i2t_r5;
    avg.i2t_r10 += m.i2t_r10;
    avg.t2i_r1 += m.t2i_r1;
    avg.t2i_r5 += m.t2i_r5;
    avg.t2i_r10 += m.t2i_r10;
  }
  const double n = static_cast<double>(per_fold.size());
  avg.i2t_r1 /= n;
  avg.i2t_r5 /= n;
  avg.i2t_r10 /= n;
  avg.t2i_r1 /= n;
  avg.t2i_r5 /= n;
  avg.t2i_r10 /= n;
  avg.mr = mean_recall(avg);
  return avg;
}

SimilarityMatrix ensemble_average(std::span<const SimilarityMatrix> mats) {
  require(!mats.empty(), ErrorKind::invalid_argument, "ensemble_average: no matrices");
  const Mat& first = mats.front().scores();
  // Running mean: identical inputs reproduce the input bit for bit.
  Mat mean = first;
  for (std::size_t m = 1; m < mats.size(); ++m) {
    require(mats[m].scores().same_shape(first), ErrorKind::shape,
            "ensemble_average: matrix " + std::to_string(m) + " is " +
                mats[m].scores().shape_str() + ", expected " + first.shape_str());
    const auto src = mats[m].scores().data();
    auto dst = mean.data();
    const double k = static_cast<double>(m + 1);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (src[i] - dst[i]) / k;
  }
  return SimilarityMatrix(std::move(mean));
}

std::vector<std::pair<std::size_t, std::size_t>> fold_ranges(std::size_t n_images,
                                                             std::size_t n_folds) {
  require(n_folds >= 1 && n_folds <= n_images, ErrorKind::invalid_argument,
          "folds: cannot split " + std::to_string(n_images) + " images into " +
              std::to_string(n_folds) + " folds");
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t f = 0; f < n_folds; ++f)
    ranges.emplace_back(f * n_images / n_folds, (f + 1) * n_images / n_folds);
  return ranges;
}

SimilarityMatrix slice_it(const SimilarityMatrix& s_it, const GroundTruth& gt,
                          std::size_t first_image, std::size_t last_image) {
  require(s_it.n_query() == gt.n_images() && s_it.n_gallery() == gt.n_texts(), ErrorKind::shape,
          "slice_it: S_IT shape does not match ground truth");
  const auto texts = captions_in_range(gt, first_image, last_image);
  Mat out(last_image - first_image, texts.size());
  for (std::size_t i = first_image; i < last_image; ++i)
    for (std::size_t c = 0; c < texts.size(); ++c) out(i - first_image, c) = s_it(i, texts[c]);
  return SimilarityMatrix(std::move(out));
}

SimilarityMatrix slice_tt(const SimilarityMatrix& s_tt, const GroundTruth& gt,
                          std::size_t first_image, std::size_t last_image) {
  require(s_tt.n_query() == gt.n_texts() && s_tt.n_gallery() == gt.n_texts(), ErrorKind::shape,
          "slice_tt: S_TT shape does not match ground truth");
  const auto texts = captions_in_range(gt, first_image, last_image);
  Mat out(texts.size(), texts.size());
  for (std::size_t a = 0; a < texts.size(); ++a)
    for (std::size_t b = 0; b < texts.size(); ++b) out(a, b) = s_tt(texts[a], texts[b]);
  return SimilarityMatrix(std::move(out));
}

std::string to_record(const RetrievalMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << "i2t_r1=" << m.i2t_r1 << "\n"
     << "i2t_r5=" << m.i2t_r5 << "\n"
     << "i2t_r10=" << m.i2t_r10 << "\n"
     << "t2i_r1=" << m.t2i_r1 << "\n"
     << "t2i_r5=" << m.t2i_r5 << "\n"
     << "t2i_r10=" << m.t2i_r10 << "\n"
     << "mr=" << m.mr << "\n";
  return os.str();
}

std::string to_table(const RetrievalMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "        |  R@1   R@5   R@10\n"
                "  I2T   | %5.1f %5.1f %5.1f\n"
                "  T2I   | %5.1f %5.1f %5.1f\n"
                "  mR    | %5.1f\n",
                100 * m.i2t_r1, 100 * m.i2t_r5, 100 * m.i2t_r10, 100 * m.t2i_r1, 100 * m.t2i_r5,
                100 * m.t2i_r10, 100 * m.mr);
  return buf;
}

}  // namespace mtfn
