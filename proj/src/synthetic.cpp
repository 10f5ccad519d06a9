#include "mtfn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtfn/error.hpp"

namespace mtfn {

namespace {

Mat normal_mat(SeededRng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Mat m(rows, cols);
  for (double& x : m.data()) x = stddev * rng.normal();
  return m;
}

void emit(const Mat& proj, std::span<const double> latent, double sigma, SeededRng& rng,
          std::vector<double>& out) {
  Vec v = matvec(proj, latent);
  for (double& x : v) x += sigma * rng.normal();
  out.insert(out.end(), v.begin(), v.end());
}

}  // namespace

void SyntheticSpec::validate() const {
  require(n_images > 0 && captions_per_image > 0 && d_img > 0 && d_txt > 0 && n_clusters > 0,
          ErrorKind::invalid_argument, "synthetic: counts and dimensions must be positive");
  require(n_clusters <= n_images, ErrorKind::invalid_argument,
          "synthetic: n_clusters (" + std::to_string(n_clusters) + ") exceeds n_images (" +
              std::to_string(n_images) + ")");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorKind::invalid_argument,
          "synthetic: noise_sigma must be >= 0");
}

PairedDataset gen_synthetic(const SyntheticSpec& spec, SeededRng& rng) {
  spec.validate();
  const std::size_t latent_dim = std::min(spec.d_img, spec.d_txt);
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  const Mat centers = normal_mat(rng, spec.n_clusters, latent_dim, 1.0);
  const Mat p_img = normal_mat(rng, spec.d_img, latent_dim, proj_std);
  const Mat p_txt = normal_mat(rng, spec.d_txt, latent_dim, proj_std);

  std::vector<double> img_data;
  std::vector<double> txt_data;
  PairedDataset data;
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    const auto z = centers.row(i % spec.n_clusters);
    emit(p_img, z, spec.noise_sigma, rng, img_data);
    for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
      emit(p_txt, z, spec.noise_sigma, rng, txt_data);
      data.text_to_image.push_back(i);
    }
  }
  data.images = Mat(spec.n_images, spec.d_img, std::move(img_data));
  data.texts = Mat(spec.n_images * spec.captions_per_image, spec.d_txt, std::move(txt_data));
  return data;
}

}  // namespace mtfn
