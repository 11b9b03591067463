#pragma once

// Sparse storage, triplet assembly and the saddle-point direct solve.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "nudgeflow/errors.hpp"

namespace nudgeflow {

/// Compressed sparse row matrix (row offsets, strictly increasing column
/// indices per row after makeCompressed()).
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
using Vector = Eigen::VectorXd;

/// Collects (i, j, v) contributions; duplicates are summed in insertion order.
class TripletBuilder {
 public:
  TripletBuilder(Eigen::Index rows, Eigen::Index cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw DimensionError("TripletBuilder: negative shape");
  }

  void reserve(std::size_t n) { entries_.reserve(n); }

  void add(Eigen::Index i, Eigen::Index j, double v) {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_)
      throw DimensionError("triplet (" + std::to_string(i) + "," + std::to_string(j) + ") outside " +
                           std::to_string(rows_) + "x" + std::to_string(cols_));
    if (!std::isfinite(v)) throw InvalidArgument("non-finite triplet value");
    entries_.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
  }

  /// Appends another builder's entries after this one's.
  void append(const TripletBuilder& other) {
    if (other.rows_ != rows_ || other.cols_ != cols_) throw DimensionError("TripletBuilder::append: shape mismatch");
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  std::size_t size() const { return entries_.size(); }

  SparseMatrix build() const {
    SparseMatrix m(rows_, cols_);
    m.setFromTriplets(entries_.begin(), entries_.end());
    m.makeCompressed();
    return m;
  }

 private:
  Eigen::Index rows_, cols_;
  std::vector<Eigen::Triplet<double, int>> entries_;
};

inline Vector spmv(const SparseMatrix& a, const Vector& x) {
  if (a.cols() != x.size())
    throw DimensionError("spmv: matrix has " + std::to_string(a.cols()) + " columns, vector has " +
                         std::to_string(x.size()) + " entries");
  return a * x;
}

/// a + s*b.
inline SparseMatrix add_scaled(const SparseMatrix& a, double s, const SparseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add_scaled: shape mismatch");
  SparseMatrix out = a + s * b;
  out.makeCompressed();
  return out;
}

inline SparseMatrix identity(Eigen::Index n) {
  SparseMatrix m(n, n);
  m.setIdentity();
  return m;
}

/// Low-rank correction A + U*V kept factored; solved through an auxiliary
/// block (z = V u) so the fill of U*V never materializes.
struct LowRankTerm {
  SparseMatrix U;  ///< n_u x r
  SparseMatrix V;  ///< r x n_u
};

/// [A  B^T][u]   [f_u]
/// [B  0  ][p] = [f_p], optionally with m^T p = 0 enforced by a multiplier.
struct SaddleSystem {
  SparseMatrix A;
  SparseMatrix B;  ///< n_p x n_u
  Vector f_u;
  Vector f_p;
  std::optional<Vector> mean_row;  ///< weights m with m^T p = 0
  std::optional<LowRankTerm> low_rank;
};

struct SaddleSolution {
  Vector u;
  Vector p;
  double residual = 0.0;  ///< final residual infinity-norm
  int refinements = 0;
};

namespace detail {

inline long parse_pivot(const std::string& msg) {
  auto at = msg.rfind("AT");
  std::size_t pos = at == std::string::npos ? 0 : at;
  while (pos < msg.size() && !std::isdigit(static_cast<unsigned char>(msg[pos]))) ++pos;
  if (pos >= msg.size()) return -1;
  return std::stol(msg.substr(pos));
}

}  // namespace detail

/// Direct sparse LU of the augmented saddle matrix. The column pattern
/// analysis is cached and reused while the sparsity pattern is unchanged, so
/// one solver instance per time loop avoids repeated ordering work.
class SaddleSolver {
 public:
  explicit SaddleSolver(double tolerance = 1e-10, int max_refinements = 3)
      : tol_(tolerance), max_refine_(max_refinements) {
    if (!(tolerance > 0.0)) throw InvalidArgument("solver tolerance must be positive");
  }

  double tolerance() const { return tol_; }

  SaddleSolution solve(const SaddleSystem& sys) {
    const Eigen::Index nu = sys.A.rows(), np = sys.B.rows();
    if (sys.A.cols() != nu) throw DimensionError("saddle: A is not square");
    if (sys.B.cols() != nu) throw DimensionError("saddle: B column count differs from A");
    if (sys.f_u.size() != nu || sys.f_p.size() != np) throw DimensionError("saddle: right-hand side size mismatch");
    if (sys.mean_row && sys.mean_row->size() != np) throw DimensionError("saddle: mean row size mismatch");
    Eigen::Index r = 0;
    if (sys.low_rank) {
      r = sys.low_rank->U.cols();
      if (sys.low_rank->U.rows() != nu || sys.low_rank->V.rows() != r || sys.low_rank->V.cols() != nu)
        throw DimensionError("saddle: low-rank term shape mismatch");
    }
    const Eigen::Index nl = sys.mean_row ? 1 : 0;
    const Eigen::Index n = nu + r + np + nl;
    const Eigen::Index oz = nu, op = nu + r, ol = nu + r + np;

    // column-major assembly for the LU
    std::vector<Eigen::Triplet<double, int>> t;
    t.reserve(sys.A.nonZeros() + 2 * sys.B.nonZeros() + (sys.low_rank ? sys.low_rank->U.nonZeros() + sys.low_rank->V.nonZeros() + r : 0) +
              2 * np);
    auto put = [&t](const SparseMatrix& m, Eigen::Index r0, Eigen::Index c0, bool transpose) {
      for (int k = 0; k < m.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
          if (transpose)
            t.emplace_back(static_cast<int>(r0 + it.col()), static_cast<int>(c0 + it.row()), it.value());
          else
            t.emplace_back(static_cast<int>(r0 + it.row()), static_cast<int>(c0 + it.col()), it.value());
        }
    };
    put(sys.A, 0, 0, false);
    put(sys.B, 0, op, true);
    put(sys.B, op, 0, false);
    if (sys.low_rank) {
      put(sys.low_rank->U, 0, oz, false);
      put(sys.low_rank->V, oz, 0, false);
      for (Eigen::Index i = 0; i < r; ++i) t.emplace_back(static_cast<int>(oz + i), static_cast<int>(oz + i), -1.0);
    }
    if (sys.mean_row)
      for (Eigen::Index i = 0; i < np; ++i) {
        t.emplace_back(static_cast<int>(op + i), static_cast<int>(ol), (*sys.mean_row)[i]);
        t.emplace_back(static_cast<int>(ol), static_cast<int>(op + i), (*sys.mean_row)[i]);
      }
    Eigen::SparseMatrix<double, Eigen::ColMajor, int> k(n, n);
    k.setFromTriplets(t.begin(), t.end());
    k.makeCompressed();
    for (Eigen::Index i = 0; i < k.nonZeros(); ++i)
      if (!std::isfinite(k.valuePtr()[i])) throw SolverError("saddle matrix has non-finite entries");

    Vector rhs = Vector::Zero(n);
    rhs.head(nu) = sys.f_u;
    rhs.segment(op, np) = sys.f_p;
    if (!rhs.allFinite()) throw SolverError("saddle right-hand side has non-finite entries");

    if (!same_pattern(k)) {
      lu_.analyzePattern(k);
      pattern_outer_.assign(k.outerIndexPtr(), k.outerIndexPtr() + k.outerSize() + 1);
      pattern_inner_.assign(k.innerIndexPtr(), k.innerIndexPtr() + k.nonZeros());
    }
    lu_.factorize(k);
    if (lu_.info() != Eigen::Success) {
      std::string msg = lu_.lastErrorMessage();
      pattern_outer_.clear();
      throw SolverError("sparse LU factorization failed: " + msg, detail::parse_pivot(msg));
    }

    Vector x = lu_.solve(rhs);
    const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    std::vector<double> history;
    Vector res = rhs - k * x;
    history.push_back(res.lpNorm<Eigen::Infinity>());
    int refinements = 0;
    while (!(history.back() <= tol_ * scale) && refinements < max_refine_) {
      x += lu_.solve(res);
      res = rhs - k * x;
      history.push_back(res.lpNorm<Eigen::Infinity>());
      ++refinements;
    }
    if (!(history.back() <= tol_ * scale))
      throw SolverError("saddle residual " + std::to_string(history.back()) + " above tolerance", -1, history);

    SaddleSolution out;
    out.u = x.head(nu);
    out.p = x.segment(op, np);
    out.residual = history.back();
    out.refinements = refinements;
    return out;
  }

 private:
  bool same_pattern(const Eigen::SparseMatrix<double, Eigen::ColMajor, int>& k) const {
    if (pattern_outer_.size() != static_cast<std::size_t>(k.outerSize() + 1) ||
        pattern_inner_.size() != static_cast<std::size_t>(k.nonZeros()))
      return false;
    return std::equal(pattern_outer_.begin(), pattern_outer_.end(), k.outerIndexPtr()) &&
           std::equal(pattern_inner_.begin(), pattern_inner_.end(), k.innerIndexPtr());
  }

  double tol_;
  int max_refine_;
  Eigen::SparseLU<Eigen::SparseMatrix<double, Eigen::ColMajor, int>, Eigen::COLAMDOrdering<int>> lu_;
  std::vector<int> pattern_outer_, pattern_inner_;
};

inline SaddleSolution solve_saddle(const SaddleSystem& sys, double tolerance = 1e-10) {
  SaddleSolver solver(tolerance);
  return solver.solve(sys);
}

}  // namespace nudgeflow
