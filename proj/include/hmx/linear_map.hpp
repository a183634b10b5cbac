#ifndef HMX_LINEAR_MAP_HPP
#define HMX_LINEAR_MAP_HPP

#include <Eigen/Dense>

#include <atomic>
#include <concepts>
#include <cstdint>

#include "errors.hpp"

namespace hmx {

using Index = Eigen::Index;

/// Anything that can be applied, with its transpose, to blocks of vectors.
template <typename M>
concept LinearMap = requires(const M& m, const Eigen::MatrixXd& x) {
    { m.rows() } -> std::convertible_to<Index>;
    { m.cols() } -> std::convertible_to<Index>;
    { m.apply(x) } -> std::convertible_to<Eigen::MatrixXd>;
    { m.apply_transpose(x) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Maps that can produce a single row or column cheaper than a full apply.
template <typename M>
concept EntryAccessMap = LinearMap<M> && requires(const M& m, Index i) {
    { m.row(i) } -> std::convertible_to<Eigen::VectorXd>;
    { m.column(i) } -> std::convertible_to<Eigen::VectorXd>;
};

/// e_i^T A
template <LinearMap M>
Eigen::VectorXd row_of(const M& map, Index i)
{
    if constexpr (EntryAccessMap<M>) {
        return map.row(i);
    } else {
        Eigen::VectorXd e = Eigen::VectorXd::Unit(map.rows(), i);
        return map.apply_transpose(e);
    }
}

/// A e_j
template <LinearMap M>
Eigen::VectorXd column_of(const M& map, Index j)
{
    if constexpr (EntryAccessMap<M>) {
        return map.column(j);
    } else {
        Eigen::VectorXd e = Eigen::VectorXd::Unit(map.cols(), j);
        return map.apply(e);
    }
}

/// Non-owning view of an explicit matrix.
class DenseMap {
public:
    explicit DenseMap(const Eigen::MatrixXd& a) : a_(&a) {}

    Index rows() const { return a_->rows(); }
    Index cols() const { return a_->cols(); }
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const
    {
        if (x.rows() != cols())
            throw dimension_error("DenseMap::apply: dimension mismatch");
        return (*a_) * x;
    }
    Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd& x) const
    {
        if (x.rows() != rows())
            throw dimension_error("DenseMap::apply_transpose: dimension mismatch");
        return a_->transpose() * x;
    }

private:
    const Eigen::MatrixXd* a_;
};

/// Counts vectors pushed through a wrapped map. Row and column requests are
/// tallied separately and forwarded as entry access when the inner map has it.
template <LinearMap M>
class CountingMap {
public:
    explicit CountingMap(const M& inner) : inner_(&inner) {}

    Index rows() const { return inner_->rows(); }
    Index cols() const { return inner_->cols(); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const
    {
        applies_.fetch_add(static_cast<std::uint64_t>(x.cols()), std::memory_order_relaxed);
        return inner_->apply(x);
    }
    Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd& x) const
    {
        transposes_.fetch_add(static_cast<std::uint64_t>(x.cols()), std::memory_order_relaxed);
        return inner_->apply_transpose(x);
    }
    Eigen::VectorXd row(Index i) const
    {
        rows_.fetch_add(1, std::memory_order_relaxed);
        if constexpr (EntryAccessMap<M>)
            return inner_->row(i);
        else
            return inner_->apply_transpose(Eigen::VectorXd::Unit(rows(), i));
    }
    Eigen::VectorXd column(Index j) const
    {
        columns_.fetch_add(1, std::memory_order_relaxed);
        if constexpr (EntryAccessMap<M>)
            return inner_->column(j);
        else
            return inner_->apply(Eigen::VectorXd::Unit(cols(), j));
    }

    std::uint64_t applies() const { return applies_.load(); }
    std::uint64_t transposes() const { return transposes_.load(); }
    std::uint64_t row_requests() const { return rows_.load(); }
    std::uint64_t column_requests() const { return columns_.load(); }
    std::uint64_t total() const { return applies() + transposes() + row_requests() + column_requests(); }

private:
    const M* inner_;
    mutable std::atomic<std::uint64_t> applies_{0};
    mutable std::atomic<std::uint64_t> transposes_{0};
    mutable std::atomic<std::uint64_t> rows_{0};
    mutable std::atomic<std::uint64_t> columns_{0};
};

} // namespace hmx

#endif // HMX_LINEAR_MAP_HPP
