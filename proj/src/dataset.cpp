#include "mtfn/dataset.hpp"

#include <string>

#include "mtfn/error.hpp"

namespace mtfn {

std::vector<std::vector<std::size_t>> PairedDataset::caption_groups() const {
  std::vector<std::vector<std::size_t>> groups(n_images());
  for (std::size_t t = 0; t < text_to_image.size(); ++t) groups.at(text_to_image[t]).push_back(t);
  return groups;
}

void PairedDataset::validate() const {
  require(n_images() > 0 && images.cols() > 0, ErrorKind::invalid_argument,
          "dataset: image feature matrix is empty");
  require(n_texts() > 0 && texts.cols() > 0, ErrorKind::invalid_argument,
          "dataset: text feature matrix is empty");
  require(text_to_image.size() == n_texts(), ErrorKind::shape,
          "dataset: group map has " + std::to_string(text_to_image.size()) + " entries for " +
              std::to_string(n_texts()) + " texts");
  for (std::size_t t = 0; t < text_to_image.size(); ++t)
    require(text_to_image[t] < n_images(), ErrorKind::invalid_argument,
            "dataset: text " + std::to_string(t) + " maps to image " +
                std::to_string(text_to_image[t]) + " but there are only " +
                std::to_string(n_images()) + " images");
}

PairedDataset PairedDataset::subset(const std::vector<std::size_t>& image_ids) const {
  validate();
  const auto groups = caption_groups();
  PairedDataset out;
  std::vector<double> img_data;
  std::vector<double> txt_data;
  for (std::size_t new_id = 0; new_id < image_ids.size(); ++new_id) {
    const std::size_t old = image_ids[new_id];
    require(old < n_images(), ErrorKind::invalid_argument,
            "dataset subset: image " + std::to_string(old) + " out of range");
    auto row = images.row(old);
    img_data.insert(img_data.end(), row.begin(), row.end());
    for (std::size_t t : groups[old]) {
      auto trow = texts.row(t);
      txt_data.insert(txt_data.end(), trow.begin(), trow.end());
      out.text_to_image.push_back(new_id);
    }
  }
  out.images = Mat(image_ids.size(), images.cols(), std::move(img_data));
  out.texts = Mat(out.text_to_image.size(), texts.cols(), std::move(txt_data));
  return out;
}

}  // namespace mtfn
