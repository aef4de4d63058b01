#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/SVD>

#include "common.hpp"
#include "hashcodes.hpp"

namespace cgah {

/// Real relaxations X (users) and Y (items), stored entity-by-bit: each column
/// sums to zero and X^T X = n I.
struct DelegatePair {
    RowMatrix users;
    RowMatrix items;
};

struct DelegateDiagnostics {
    double max_abs_bit_sum = 0.0;     // || X 1 ||_inf
    double orthogonality_error = 0.0;  // || X X^T - n I ||_F (bit-by-entity orientation)
};

inline DelegateDiagnostics delegate_diagnostics(const RowMatrix& x) {
    const auto n = static_cast<double>(x.rows());
    DelegateDiagnostics d;
    d.max_abs_bit_sum = x.colwise().sum().cwiseAbs().maxCoeff();
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() -= n;
    d.orthogonality_error = gram.norm();
    return d;
}

namespace detail {

// Gram-Schmidt completion: appends unit columns orthogonal to every column of
// `basis` until it has `target` columns. Candidates are the standard basis
// vectors, tried in order.
inline Eigen::MatrixXd complete_basis(Eigen::MatrixXd basis, Eigen::Index target) {
    const auto dim = basis.rows();
    for (Eigen::Index c = 0; basis.cols() < target && c < dim; ++c) {
        Eigen::VectorXd v = Eigen::VectorXd::Unit(dim, c);
        for (int pass = 0; pass < 2; ++pass) v -= basis * (basis.transpose() * v);
        double norm = v.norm();
        if (norm < 1e-8) continue;
        basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
        basis.col(basis.cols() - 1) = v / norm;
    }
    if (basis.cols() < target) throw ConsistencyError("could not complete an orthonormal basis");
    return basis;
}

}  // namespace detail

/// argmax_X tr(B^T X) subject to X 1 = 0 and X X^T = n I (bit-by-entity orientation).
/// Takes the thin SVD of the column-centred code matrix and, when it is rank
/// deficient, completes both singular bases by Gram-Schmidt (the right basis
/// also orthogonal to the all-ones vector). Returns X entity-by-bit.
inline RowMatrix update_delegate(const RowMatrix& codes) {
    const auto n = codes.rows();
    const auto r = codes.cols();
    if (n <= r) {
        throw ValidationError("delegate update needs more entities (" + std::to_string(n) + ") than bits (" +
                              std::to_string(r) + ")");
    }
    Eigen::MatrixXd centred = codes;
    centred.rowwise() -= codes.colwise().mean();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw Error("SVD of the centred code matrix did not converge");
    const auto& sigma = svd.singularValues();
    double tol = std::max<double>(static_cast<double>(n), static_cast<double>(r)) *
                 std::numeric_limits<double>::epsilon() * std::max(sigma(0), 1.0) * 16.0;
    Eigen::Index rank = 0;
    while (rank < r && sigma(rank) > tol) ++rank;

    // Entity-side basis V and bit-side basis U.
    Eigen::MatrixXd entity_basis = svd.matrixU().leftCols(rank);
    Eigen::MatrixXd bit_basis = svd.matrixV();
    if (rank < r) {
        Eigen::MatrixXd with_ones(n, rank + 1);
        with_ones << entity_basis, Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
        Eigen::MatrixXd completed = detail::complete_basis(with_ones, r + 1);
        entity_basis.resize(n, r);
        entity_basis << completed.leftCols(rank), completed.rightCols(r - rank);
        bit_basis = detail::complete_basis(svd.matrixV().leftCols(rank), r);
    }
    return std::sqrt(static_cast<double>(n)) * entity_basis * bit_basis.transpose();
}

inline RowMatrix update_delegate(const BinaryCodeSet& codes) {
    return update_delegate(codes.to_matrix());
}

/// tr(B^T X) for entity-by-bit B and X.
inline double delegate_trace(const RowMatrix& codes, const RowMatrix& x) {
    return codes.cwiseProduct(x).sum();
}

}  // namespace cgah
