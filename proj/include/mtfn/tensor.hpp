#pragma once

// Dense row-major float64 matrices and the handful of kernels the fusion
// model needs. Vectors are plain std::vector<double>; matrices that hold a
// single vector use shape (1 x n).

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mtfn {

using Vec = std::vector<double>;

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Mat::from_rows({{1, 2}, {3, 4}})
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat identity(std::size_t n);
  static Mat row_vector(std::span<const double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool same_shape(const Mat& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;
  std::string shape_str() const;

  // Bitwise value equality (shape and every entry).
  friend bool operator==(const Mat& a, const Mat& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat matmul(const Mat& a, const Mat& b);
Mat elem_mul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat scale(const Mat& a, double s);

// y = A x
Vec matvec(const Mat& a, std::span<const double> x);
// y = A^T x
Vec matvec_t(const Mat& a, std::span<const double> x);
// A += s * u v^T
void add_outer(Mat& a, std::span<const double> u, std::span<const double> v, double s = 1.0);
// y += s * x
void axpy(std::span<double> y, std::span<const double> x, double s = 1.0);
double dot(std::span<const double> a, std::span<const double> b);

// Logistic function. Upper values are clamped to the largest double below 1
// so that outputs stay inside the open interval for any finite input.
double sigmoid(double x);
Mat sigmoid(const Mat& x);

// Deterministic pseudo-random source: std::mt19937_64 (whose output sequence
// is fixed by the standard) plus hand-written transforms, so the stream is
// identical across standard libraries and platforms.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform01();
  // Uniform on [lo, hi].
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (second variate cached).
  double normal();
  // Uniform integer on [0, n) without modulo bias.
  std::size_t index(std::size_t n);
  // Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }
  // Derives an independent child stream; used to hand sub-tasks their own rng.
  SeededRng fork();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Entries i.i.d. uniform on [-scale, +scale].
Mat rand_uniform(SeededRng& rng, std::size_t rows, std::size_t cols, double scale);

}  // namespace mtfn
