#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "mtfn/error.hpp"
#include "mtfn/io.hpp"
#include "mtfn/synthetic.hpp"

using namespace mtfn;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mtfn_io_" + std::to_string(std::random_device{}()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_raw(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::invalid_argument;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matrix files round-trip bitwise") {
  TempDir dir;
  SeededRng rng(13);
  Mat m = rand_uniform(rng, 7, 13, 1e3);
  m(0, 0) = -0.0;
  m(1, 1) = std::numeric_limits<double>::denorm_min();
  m(2, 2) = std::numeric_limits<double>::max();
  write_mat(dir.path / "m.cmf", m);
  CHECK(bitwise_equal(read_mat(dir.path / "m.cmf"), m));
  CHECK(fs::file_size(dir.path / "m.cmf") == 16 + 7 * 13 * 8);

  const std::string bytes = read_file(dir.path / "m.cmf");
  CHECK(bytes.substr(0, 4) == "CMF1");
  CHECK(static_cast<unsigned char>(bytes[8]) == 7);
  CHECK(static_cast<unsigned char>(bytes[12]) == 13);

  // No temp file left behind.
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++entries;
  CHECK(entries == 1);
}

TEST_CASE("matrix file errors") {
  TempDir dir;
  SeededRng rng(1);
  const Mat m = rand_uniform(rng, 3, 4, 1.0);
  write_mat(dir.path / "ok.cmf", m);
  const std::string good = read_file(dir.path / "ok.cmf");

  CHECK(kind_of([&] { write_mat(dir.path / "z.cmf", Mat(0, 5)); }) == ErrorKind::invalid_argument);

  write_raw(dir.path / "short.cmf", good.substr(0, good.size() - 1));
  CHECK(kind_of([&] { read_mat(dir.path / "short.cmf"); }) == ErrorKind::format);
  CHECK(message_of([&] { read_mat(dir.path / "short.cmf"); }).find("byte offset") !=
        std::string::npos);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  write_raw(dir.path / "magic.cmf", bad_magic);
  CHECK(kind_of([&] { read_mat(dir.path / "magic.cmf"); }) == ErrorKind::format);

  std::string bad_version = good;
  bad_version[4] = 9;
  write_raw(dir.path / "version.cmf", bad_version);
  CHECK(kind_of([&] { read_mat(dir.path / "version.cmf"); }) == ErrorKind::format);

  write_raw(dir.path / "long.cmf", good + "x");
  CHECK(kind_of([&] { read_mat(dir.path / "long.cmf"); }) == ErrorKind::format);

  CHECK(kind_of([&] { read_mat(dir.path / "missing.cmf"); }) == ErrorKind::io);
  CHECK(kind_of([&] { write_mat(dir.path / "no" / "such" / "dir.cmf", m); }) == ErrorKind::io);
}

TEST_CASE("similarity files reject non-finite scores") {
  TempDir dir;
  Mat m = Mat::from_rows({{0.1, 0.2}, {0.3, 0.4}});
  write_similarity(dir.path / "s.cmf", SimilarityMatrix(m));
  CHECK(read_similarity(dir.path / "s.cmf").scores() == m);
  m(1, 0) = std::nan("");
  write_mat(dir.path / "nan.cmf", m);
  CHECK_THROWS_AS(read_similarity(dir.path / "nan.cmf"), Error);
}

TEST_CASE("group maps and rank lists") {
  TempDir dir;
  const std::vector<std::size_t> groups{0, 0, 1, 2, 2, 2};
  write_group_map(dir.path / "g.txt", groups);
  CHECK(read_group_map(dir.path / "g.txt") == groups);
  CHECK(read_file(dir.path / "g.txt") == "0\n0\n1\n2\n2\n2\n");

  write_raw(dir.path / "bad.txt", "0\nfoo\n");
  const std::string msg = message_of([&] { read_group_map(dir.path / "bad.txt"); });
  CHECK(msg.find(":2") != std::string::npos);

  const std::vector<RankList> lists{{1, 0, 2}, {2, 1, 0}};
  write_rank_lists(dir.path / "r.txt", lists);
  CHECK(read_file(dir.path / "r.txt") == "1 0 2\n2 1 0\n");
  CHECK(read_rank_lists(dir.path / "r.txt") == lists);
}

TEST_CASE("dataset manifests") {
  TempDir dir;
  SeededRng rng(2);
  SyntheticSpec spec;
  spec.n_images = 4;
  spec.n_clusters = 4;
  spec.captions_per_image = 2;
  spec.d_img = spec.d_txt = 3;
  const PairedDataset data = gen_synthetic(spec, rng);
  write_mat(dir.path / "i.cmf", data.images);
  write_mat(dir.path / "t.cmf", data.texts);
  write_group_map(dir.path / "g.txt", data.text_to_image);
  write_raw(dir.path / "splits.txt", "train\ntest\ntrain\nval\n");
  write_raw(dir.path / "m.json",
            R"({"images": "i.cmf", "texts": "t.cmf", "groups": "g.txt", "splits": "splits.txt"})");

  const DatasetManifest m = read_manifest(dir.path / "m.json");
  CHECK(m.images == dir.path / "i.cmf");
  CHECK(load_dataset(m) == data);
  const PairedDataset train = load_dataset(m, std::string("train"));
  CHECK(train.n_images() == 2);
  CHECK(train.n_texts() == 4);
  CHECK(train.text_to_image == std::vector<std::size_t>{0, 0, 1, 1});
  CHECK(train.images.row(1)[0] == data.images.row(2)[0]);
  CHECK_THROWS_AS(load_dataset(m, std::string("holdout")), Error);

  write_raw(dir.path / "missing.json", R"({"images": "i.cmf", "groups": "g.txt"})");
  const std::string msg = message_of([&] { read_manifest(dir.path / "missing.json"); });
  CHECK(msg.find("'texts'") != std::string::npos);

  write_raw(dir.path / "extra.json",
            R"({"images": "i.cmf", "texts": "t.cmf", "groups": "g.txt", "colour": "red"})");
  CHECK(message_of([&] { read_manifest(dir.path / "extra.json"); }).find("'colour'") !=
        std::string::npos);

  write_raw(dir.path / "broken.json", "{not json");
  CHECK(kind_of([&] { read_manifest(dir.path / "broken.json"); }) == ErrorKind::format);

  write_manifest(dir.path / "again.json", m);
  const DatasetManifest back = read_manifest(dir.path / "again.json");
  CHECK(back.texts == m.texts);
  CHECK(back.splits == m.splits);
}

TEST_CASE("checkpoints round-trip") {
  TempDir dir;
  SeededRng rng(4);
  ModelDims dims;
  dims.d_raw_img = 5;
  dims.d_raw_txt = 6;
  dims.d_v = 3;
  dims.d_t = 4;
  dims.d_f = 4;
  dims.d_f_tt = 2;
  dims.rank = 3;
  dims.output_bias = true;
  MtfnParams p = init_params(dims, rng);
  p = init_tt_from_it(p, rng);
  p.seed = 77;
  write_checkpoint(dir.path / "c.ckpt", p);
  const MtfnParams back = read_checkpoint(dir.path / "c.ckpt");
  CHECK(back == p);
  CHECK(read_file(dir.path / "c.ckpt").substr(0, 4) == "CMK1");

  write_checkpoint(dir.path / "c2.ckpt", back);
  CHECK(read_file(dir.path / "c2.ckpt") == read_file(dir.path / "c.ckpt"));

  std::string bytes = read_file(dir.path / "c.ckpt");
  write_raw(dir.path / "trunc.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK(kind_of([&] { read_checkpoint(dir.path / "trunc.ckpt"); }) == ErrorKind::format);
  bytes[14] = '#';
  write_raw(dir.path / "garbled.ckpt", bytes);
  CHECK(kind_of([&] { read_checkpoint(dir.path / "garbled.ckpt"); }) == ErrorKind::format);
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  SeededRng a(5), b(5), c(6);
  const PairedDataset da = gen_synthetic(spec, a);
  CHECK(da == gen_synthetic(spec, b));
  CHECK(!(da == gen_synthetic(spec, c)));
  CHECK(da.n_images() == 32);
  CHECK(da.n_texts() == 160);
  CHECK(da.text_to_image[7] == 1);

  // Every caption's nearest other caption (Euclidean) shares its image.
  const Mat& t = da.texts;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < t.rows(); ++j) {
      if (j == i) continue;
      double d = 0;
      for (std::size_t k = 0; k < t.cols(); ++k) d += (t(i, k) - t(j, k)) * (t(i, k) - t(j, k));
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    CHECK(da.text_to_image[arg] == da.text_to_image[i]);
  }

  // The noise level is recoverable: with the same seed the noiseless draw
  // shares every other random number, so the difference is pure noise.
  SyntheticSpec quiet = spec;
  quiet.noise_sigma = 0.0;
  SeededRng q(5);
  const PairedDataset clean = gen_synthetic(quiet, q);
  double ss = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < da.texts.size(); ++k, ++n) {
    const double d = da.texts.data()[k] - clean.texts.data()[k];
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  CHECK(std::abs(sd - spec.noise_sigma) < 0.1 * spec.noise_sigma);

  SyntheticSpec bad = spec;
  bad.n_clusters = 40;
  CHECK_THROWS_AS(gen_synthetic(bad, a), Error);
}
