#include "siggate/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace siggate {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Matrix& Matrix::operator+=(const Matrix& o) {
  require_same_shape(*this, o, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  require_same_shape(*this, o, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid_squared: return "sigmoid_squared";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid_squared" || s == "sigmoid2") return Activation::sigmoid_squared;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + a.shape_string() + " * " +
                         b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: row counts differ " + a.shape_string() + "^T * " +
                         b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.data().data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: column counts differ " + a.shape_string() + " * " +
                         b.shape_string() + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

Matrix add_row_broadcast(Matrix m, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw DimensionError("add_row_broadcast: " + row.shape_string() + " cannot broadcast over " +
                         m.shape_string());
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row(0, j);
  }
  return m;
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(i, j);
  return out;
}

Matrix column_means(const Matrix& m) {
  Matrix out = column_sums(m);
  if (m.rows() > 0) out *= 1.0 / static_cast<double>(m.rows());
  return out;
}

Matrix hconcat(std::span<const Matrix> blocks) {
  if (blocks.empty()) return {};
  const std::size_t rows = blocks.front().rows();
  std::size_t cols = 0;
  for (const auto& b : blocks) {
    if (b.rows() != rows) {
      throw DimensionError("hconcat: row count " + std::to_string(b.rows()) + " differs from " +
                           std::to_string(rows));
    }
    cols += b.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(b.row(i).begin(), b.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += b.cols();
  }
  return out;
}

Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) {
    throw DimensionError("column_block: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + m.shape_string());
  }
  Matrix out(m.rows(), count);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix row_softmax(const Matrix& logits, const Mask* mask) {
  if (mask != nullptr && (mask->rows != logits.rows() || mask->cols != logits.cols())) {
    throw DimensionError("row_softmax: mask (" + std::to_string(mask->rows) + "x" +
                         std::to_string(mask->cols) + ") does not match logits " +
                         logits.shape_string());
  }
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = neg_inf;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      if (mask != nullptr && !(*mask)(i, j)) continue;
      const double z = logits(i, j);
      if (std::isnan(z) || z == std::numeric_limits<double>::infinity()) {
        throw NumericError("row_softmax: non-finite logit at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      mx = std::max(mx, z);
    }
    if (mx == neg_inf) {
      throw NumericError("row_softmax: row " + std::to_string(i) + " is fully masked");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      if (mask != nullptr && !(*mask)(i, j)) continue;
      const double e = std::exp(logits(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < logits.cols(); ++j) out(i, j) *= inv;
  }
  return out;
}

Matrix row_softmax_backward(const Matrix& attn, const Matrix& grad_attn) {
  require_same_shape(attn, grad_attn, "row_softmax_backward");
  Matrix out(attn.rows(), attn.cols());
  for (std::size_t i = 0; i < attn.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < attn.cols(); ++j) dot += attn(i, j) * grad_attn(i, j);
    for (std::size_t j = 0; j < attn.cols(); ++j) out(i, j) = attn(i, j) * (grad_attn(i, j) - dot);
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double apply_activation(Activation op, double x) {
  switch (op) {
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::sigmoid_squared: {
      const double s = sigmoid(x);
      return s * s;
    }
    case Activation::identity: return x;
  }
  return x;
}

double activation_derivative(Activation op, double x) {
  switch (op) {
    case Activation::sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid_squared: {
      const double s = sigmoid(x);
      return 2.0 * s * s * (1.0 - s);
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

Matrix elementwise(Activation op, const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = apply_activation(op, m.data()[i]);
  return out;
}

double frobenius_norm_sq(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return s;
}

double max_abs(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s = std::max(s, std::abs(v));
  return s;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

namespace {

// Power iteration on the Gram matrix G = BᵀB where B has `dim` columns.
// `apply` computes G·v.
template <class Apply>
double dominant_gram_eigenvalue(std::size_t dim, Apply apply) {
  constexpr int max_iterations = 10000;
  constexpr double tolerance = 1e-12;

  auto normalize = [](std::vector<double>& v) {
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) return false;
    for (double& x : v) x /= nrm;
    return true;
  };

  // All-ones start; fall back to basis vectors if it lies in the null space.
  for (std::size_t attempt = 0; attempt <= dim; ++attempt) {
    std::vector<double> v(dim, attempt == 0 ? 1.0 : 0.0);
    if (attempt > 0) v[attempt - 1] = 1.0;
    normalize(v);
    double lambda = 0.0;
    bool degenerate = false;
    for (int it = 0; it < max_iterations; ++it) {
      std::vector<double> w = apply(v);
      double rq = 0.0;
      for (std::size_t i = 0; i < dim; ++i) rq += v[i] * w[i];
      if (!normalize(w)) {
        degenerate = true;
        break;
      }
      v = std::move(w);
      const bool converged = it > 0 && std::abs(rq - lambda) <= tolerance * std::abs(rq);
      lambda = rq;
      if (converged) break;
    }
    if (!degenerate && lambda > 0.0) return lambda;
  }
  return 0.0;
}

}  // namespace

double top_singular_value(const Matrix& m) {
  if (m.empty() || max_abs(m) == 0.0) {
    throw NumericError("top_singular_value: zero matrix " + m.shape_string());
  }
  const bool use_cols = m.cols() <= m.rows();
  const std::size_t dim = use_cols ? m.cols() : m.rows();
  double lambda = 0.0;
  if (use_cols) {
    // v ↦ Mᵀ(Mv)
    lambda = dominant_gram_eigenvalue(dim, [&](const std::vector<double>& v) {
      std::vector<double> mv(m.rows(), 0.0);
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * v[j];
        mv[i] = s;
      }
      std::vector<double> out(m.cols(), 0.0);
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j) * mv[i];
      return out;
    });
  } else {
    // v ↦ M(Mᵀv)
    lambda = dominant_gram_eigenvalue(dim, [&](const std::vector<double>& v) {
      std::vector<double> mtv(m.cols(), 0.0);
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) mtv[j] += m(i, j) * v[i];
      std::vector<double> out(m.rows(), 0.0);
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * mtv[j];
        out[i] = s;
      }
      return out;
    });
  }
  return std::sqrt(lambda);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t SeededRng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  return u * f;
}

std::uint64_t SeededRng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("SeededRng::below: bound must be positive");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

std::uint64_t SeededRng::derive_seed(std::uint64_t parent, std::uint64_t stream) {
  std::uint64_t x = parent ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  splitmix64(x);
  return splitmix64(x);
}

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double std_dev) {
  if (!(std_dev > 0.0)) throw std::invalid_argument("gaussian_matrix: std must be positive");
  Matrix m(rows, cols);
  for (double& v : m.data()) v = std_dev * rng.normal();
  return m;
}

}  // namespace siggate
