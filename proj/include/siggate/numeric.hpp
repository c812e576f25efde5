#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace siggate {

/// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numeric precondition violated (zero matrix, empty softmax row, ...).
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Row-major dense matrix of doubles. Vectors are 1×n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::string shape_string() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// Boolean n×m mask; true means "keep".
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<char> keep;

  Mask() = default;
  Mask(std::size_t r, std::size_t c, bool value = true) : rows(r), cols(c), keep(r * c, value ? 1 : 0) {}
  bool operator()(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { keep[r * cols + c] = v ? 1 : 0; }
  friend bool operator==(const Mask&, const Mask&) = default;
};

enum class Activation { sigmoid, tanh, relu, sigmoid_squared, identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Adds a 1×cols row vector to every row.
Matrix add_row_broadcast(Matrix m, const Matrix& row);
/// 1×cols vector of column sums.
Matrix column_sums(const Matrix& m);
/// 1×cols vector of column means.
Matrix column_means(const Matrix& m);

/// Concatenates along columns; all blocks must share the row count.
Matrix hconcat(std::span<const Matrix> blocks);
/// Columns [begin, begin + count).
Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count);

/// Softmax over each row after subtracting the row max. Masked entries are
/// treated as -inf and come out as exactly 0.
Matrix row_softmax(const Matrix& logits, const Mask* mask = nullptr);
/// Given A = row_softmax(S) and dL/dA, returns dL/dS.
Matrix row_softmax_backward(const Matrix& attn, const Matrix& grad_attn);

double sigmoid(double x);
double apply_activation(Activation op, double x);
/// Derivative of the activation evaluated at the pre-activation x.
double activation_derivative(Activation op, double x);
Matrix elementwise(Activation op, const Matrix& m);

double frobenius_norm_sq(const Matrix& m);
double max_abs(const Matrix& m);
bool all_finite(const Matrix& m);

/// Largest singular value via power iteration on MᵀM (or MMᵀ, whichever is
/// smaller). Start vector is the normalized all-ones vector; stops when the
/// relative Rayleigh-quotient change drops below 1e-12 or after 10000 steps.
double top_singular_value(const Matrix& m);

/// xoshiro256** seeded through splitmix64. Normals use the polar form of
/// Box-Muller, which needs only log and sqrt.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  /// Independent stream for a numbered sub-task (seed, head, sweep cell...).
  static std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  std::optional<double> spare_;
};

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double std_dev);

}  // namespace siggate
