#pragma once

#include <cstddef>
#include <cstdint>

#include "mtfn/dataset.hpp"
#include "mtfn/tensor.hpp"

namespace mtfn {

// Latent-cluster generator for desk-scale experiments.
//
// Latent centers z_k ~ N(0, I_L), L = min(d_img, d_txt), one per cluster;
// image i uses center i mod n_clusters. Two fixed random maps P_img
// (d_img x L) and P_txt (d_txt x L), entries N(0, 1/L), embed the center:
//   image i     = P_img z + noise_sigma * N(0, I)
//   caption c_i = P_txt z + noise_sigma * N(0, I)
// Captions of image i are texts [i*c, (i+1)*c). The noise draws do not
// depend on noise_sigma, so two specs differing only in noise_sigma share
// every other value.
struct SyntheticSpec {
  std::size_t n_images = 32;
  std::size_t captions_per_image = 5;
  std::size_t d_img = 32;
  std::size_t d_txt = 32;
  std::size_t n_clusters = 32;
  double noise_sigma = 0.05;

  void validate() const;
};

PairedDataset gen_synthetic(const SyntheticSpec& spec, SeededRng& rng);

}  // namespace mtfn
