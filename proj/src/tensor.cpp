#include "mtfn/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "mtfn/error.hpp"

namespace mtfn {

namespace {

void check_finite(const Mat& m, const char* op) {
  if (!m.all_finite()) fail(ErrorKind::numeric, std::string(op) + ": non-finite result");
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, ErrorKind::shape,
          "Mat: data length " + std::to_string(data_.size()) + " != " +
              std::to_string(rows) + "x" + std::to_string(cols));
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorKind::shape, "Mat::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat(r, c, std::move(data));
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::row_vector(std::span<const double> v) {
  return Mat(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

bool Mat::all_finite() const noexcept {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Mat::shape_str() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Mat matmul(const Mat& a, const Mat& b) {
  require(a.cols() == b.rows(), ErrorKind::shape,
          "matmul: " + a.shape_str() + " x " + b.shape_str() + ": inner dimensions differ");
  Mat c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
    }
  }
  check_finite(c, "matmul");
  return c;
}

Mat elem_mul(const Mat& a, const Mat& b) {
  require(a.same_shape(b), ErrorKind::shape,
          "elem_mul: " + a.shape_str() + " vs " + b.shape_str());
  Mat c(a.rows(), a.cols());
  auto ad = a.data();
  auto bd = b.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] = ad[i] * bd[i];
  check_finite(c, "elem_mul");
  return c;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Mat add(const Mat& a, const Mat& b) {
  require(a.same_shape(b), ErrorKind::shape, "add: " + a.shape_str() + " vs " + b.shape_str());
  Mat c = a;
  axpy(c.data(), b.data());
  check_finite(c, "add");
  return c;
}

Mat scale(const Mat& a, double s) {
  Mat c = a;
  for (double& x : c.data()) x *= s;
  check_finite(c, "scale");
  return c;
}

Vec matvec(const Mat& a, std::span<const double> x) {
  require(a.cols() == x.size(), ErrorKind::shape,
          "matvec: " + a.shape_str() + " x vector of length " + std::to_string(x.size()));
  Vec y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

Vec matvec_t(const Mat& a, std::span<const double> x) {
  require(a.rows() == x.size(), ErrorKind::shape,
          "matvec_t: " + a.shape_str() + "^T x vector of length " + std::to_string(x.size()));
  Vec y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) axpy(y, a.row(i), x[i]);
  return y;
}

void add_outer(Mat& a, std::span<const double> u, std::span<const double> v, double s) {
  require(a.rows() == u.size() && a.cols() == v.size(), ErrorKind::shape,
          "add_outer: target " + a.shape_str() + " vs " + std::to_string(u.size()) + "x" +
              std::to_string(v.size()));
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = s * u[i];
    if (ui == 0.0) continue;
    axpy(a.row(i), v, ui);
  }
}

void axpy(std::span<double> y, std::span<const double> x, double s) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sigmoid(double x) {
  constexpr double kBelowOne = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  const double e = std::exp(-std::abs(x));
  const double y = x >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  return y < kBelowOne ? y : kBelowOne;
}

Mat sigmoid(const Mat& x) {
  Mat y = x;
  for (double& v : y.data()) v = sigmoid(v);
  return y;
}

double SeededRng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
  // (next >> 11) / (2^53 - 1) reaches both endpoints.
  const double u = static_cast<double>(engine_() >> 11) / 9007199254740991.0;
  return lo + (hi - lo) * u;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform01();
  } while (u1 <= 0.0);
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

std::size_t SeededRng::index(std::size_t n) {
  require(n > 0, ErrorKind::invalid_argument, "SeededRng::index: empty range");
  const std::uint64_t bound = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r = 0;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

SeededRng SeededRng::fork() { return SeededRng(engine_()); }

Mat rand_uniform(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  require(scale > 0.0 && std::isfinite(scale), ErrorKind::invalid_argument,
          "rand_uniform: scale must be positive, got " + std::to_string(scale));
  Mat m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(-scale, scale);
  return m;
}

}  // namespace mtfn
