#pragma once

#include <cstddef>
#include <vector>

#include "mtfn/tensor.hpp"

namespace mtfn {

// Image features, text features and the owner image of every text.
struct PairedDataset {
  Mat images;                              // (n_images x d_img)
  Mat texts;                               // (n_texts x d_txt)
  std::vector<std::size_t> text_to_image;  // length n_texts

  std::size_t n_images() const noexcept { return images.rows(); }
  std::size_t n_texts() const noexcept { return texts.rows(); }

  // Caption indices of every image, ascending.
  std::vector<std::vector<std::size_t>> caption_groups() const;

  // Group map length and index range; non-empty feature matrices.
  void validate() const;

  // Keeps the given images (in order) and their captions, renumbering both.
  PairedDataset subset(const std::vector<std::size_t>& image_ids) const;

  friend bool operator==(const PairedDataset&, const PairedDataset&) = default;
};

}  // namespace mtfn
