#ifndef GTN_TENSOR_HPP
#define GTN_TENSOR_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "gtn/errors.hpp"

namespace gtn {

using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense n-dimensional real array, row-major. The atom of every contraction.
// A rank-0 tensor (empty shape) holds exactly one scalar.
class DenseTensor {
  public:
    DenseTensor() : data_(1, 0.0) {}

    explicit DenseTensor(std::vector<long> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    DenseTensor(std::vector<long> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<long>(data_.size()) != checked_size(shape_))
            throw DimensionError("DenseTensor: data length " +
                                 std::to_string(data_.size()) +
                                 " does not match shape product " +
                                 std::to_string(checked_size(shape_)));
    }

    static DenseTensor scalar(double v) {
        DenseTensor t;
        t.data_[0] = v;
        return t;
    }

    const std::vector<long> &shape() const { return shape_; }
    long rank() const { return static_cast<long>(shape_.size()); }
    long size() const { return static_cast<long>(data_.size()); }
    long extent(long axis) const { return shape_[axis]; }

    double *data() { return data_.data(); }
    const double *data() const { return data_.data(); }
    double &operator[](long i) { return data_[i]; }
    double operator[](long i) const { return data_[i]; }

    // Row-major flat offset of a multi-index.
    long offset(const std::vector<long> &idx) const {
        long off = 0;
        for (size_t a = 0; a < shape_.size(); ++a)
            off = off * shape_[a] + idx[a];
        return off;
    }
    double &at(const std::vector<long> &idx) { return data_[offset(idx)]; }
    double at(const std::vector<long> &idx) const { return data_[offset(idx)]; }
    double &at(std::initializer_list<long> idx) {
        return data_[offset(std::vector<long>(idx))];
    }

    bool same_shape(const DenseTensor &o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    // View of a rank-2 tensor as an Eigen matrix.
    Eigen::Map<const RowMatrixXd> matrix() const {
        if (rank() != 2)
            throw DimensionError("matrix(): tensor rank is " +
                                 std::to_string(rank()) + ", want 2");
        return Eigen::Map<const RowMatrixXd>(data_.data(), shape_[0], shape_[1]);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i)
            os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

  private:
    static long checked_size(const std::vector<long> &shape) {
        long n = 1;
        for (long e : shape) {
            if (e <= 0)
                throw DimensionError("DenseTensor: nonpositive extent " +
                                     std::to_string(e));
            n *= e;
        }
        return n;
    }

    std::vector<long> shape_;
    std::vector<double> data_;
};

// One contracted index pair: axis_a of the first tensor against axis_b of the
// second. Paired extents must be equal.
struct AxisPair {
    int axis_a;
    int axis_b;
};

namespace detail {

// Permute `t` so that axes appear in `order`, returned as a flat row-major
// buffer reshaped to rows x cols where the first `nrow_axes` axes of `order`
// form the row index.
inline void permute_to(const DenseTensor &t, const std::vector<int> &order,
                       std::vector<double> &out) {
    const auto &shape = t.shape();
    const int r = static_cast<int>(shape.size());
    out.resize(static_cast<size_t>(t.size()));
    if (r == 0) {
        out[0] = t[0];
        return;
    }
    // strides of the source in its own layout
    std::vector<long> src_stride(r, 1);
    for (int a = r - 2; a >= 0; --a)
        src_stride[a] = src_stride[a + 1] * shape[a + 1];
    // iterate destination in row-major order of the permuted axes
    std::vector<long> ext(r), stride(r);
    for (int a = 0; a < r; ++a) {
        ext[a] = shape[order[a]];
        stride[a] = src_stride[order[a]];
    }
    std::vector<long> idx(r, 0);
    long src = 0;
    const double *in = t.data();
    for (long dst = 0;; ++dst) {
        out[dst] = in[src];
        int a = r - 1;
        for (; a >= 0; --a) {
            src += stride[a];
            if (++idx[a] < ext[a])
                break;
            src -= stride[a] * ext[a];
            idx[a] = 0;
        }
        if (a < 0)
            break;
    }
}

} // namespace detail

// Contract two tensors over the given axis pairs. The result carries the
// uncontracted axes of `a` (in order) followed by those of `b`. An empty pair
// list is an outer product. Implemented as permute-reshape-matmul.
inline DenseTensor contract(const DenseTensor &a, const DenseTensor &b,
                            const std::vector<AxisPair> &pairs) {
    std::vector<char> used_a(a.rank(), 0), used_b(b.rank(), 0);
    for (const auto &p : pairs) {
        if (p.axis_a < 0 || p.axis_a >= a.rank() || p.axis_b < 0 ||
            p.axis_b >= b.rank())
            throw DimensionError("contract: axis pair (" +
                                 std::to_string(p.axis_a) + "," +
                                 std::to_string(p.axis_b) + ") out of range for " +
                                 a.shape_str() + " x " + b.shape_str());
        if (used_a[p.axis_a] || used_b[p.axis_b])
            throw DimensionError("contract: axis repeated in pair (" +
                                 std::to_string(p.axis_a) + "," +
                                 std::to_string(p.axis_b) + ")");
        if (a.extent(p.axis_a) != b.extent(p.axis_b))
            throw DimensionError(
                "contract: extent mismatch on pair (" + std::to_string(p.axis_a) +
                "," + std::to_string(p.axis_b) + "): " +
                std::to_string(a.extent(p.axis_a)) + " vs " +
                std::to_string(b.extent(p.axis_b)));
        used_a[p.axis_a] = used_b[p.axis_b] = 1;
    }

    // contracted axes ordered by the pair list so both sides line up
    std::vector<int> free_a, free_b, con_a, con_b;
    for (int i = 0; i < a.rank(); ++i)
        if (!used_a[i])
            free_a.push_back(i);
    for (int i = 0; i < b.rank(); ++i)
        if (!used_b[i])
            free_b.push_back(i);
    for (const auto &p : pairs) {
        con_a.push_back(p.axis_a);
        con_b.push_back(p.axis_b);
    }

    long m = 1, k = 1, n = 1;
    std::vector<long> out_shape;
    for (int ax : free_a) {
        m *= a.extent(ax);
        out_shape.push_back(a.extent(ax));
    }
    for (int ax : con_a)
        k *= a.extent(ax);
    for (int ax : free_b) {
        n *= b.extent(ax);
        out_shape.push_back(b.extent(ax));
    }

    std::vector<int> order_a = free_a, order_b = con_b;
    order_a.insert(order_a.end(), con_a.begin(), con_a.end());
    order_b.insert(order_b.end(), free_b.begin(), free_b.end());

    std::vector<double> buf_a, buf_b;
    detail::permute_to(a, order_a, buf_a);
    detail::permute_to(b, order_b, buf_b);

    DenseTensor out(out_shape);
    Eigen::Map<const RowMatrixXd> ma(buf_a.data(), m, k);
    Eigen::Map<const RowMatrixXd> mb(buf_b.data(), k, n);
    Eigen::Map<RowMatrixXd> mo(out.data(), m, n);
    mo.noalias() = ma * mb;
    return out;
}

// Scalar value of a matrix chain. closed: Tr(M_1 ... M_n) of square-chained
// matrices. open: first and last elements are vectors, v^T (M_2 ... ) w.
inline double trace_product(const std::vector<DenseTensor> &mats, bool closed) {
    if (mats.empty())
        throw DimensionError("trace_product: empty chain");
    auto dims = [](const DenseTensor &t, bool vec_ok,
                   bool vec_is_row) -> std::pair<long, long> {
        if (t.rank() == 2)
            return {t.extent(0), t.extent(1)};
        if (t.rank() == 1 && vec_ok)
            return vec_is_row ? std::make_pair(1L, t.extent(0))
                              : std::make_pair(t.extent(0), 1L);
        throw DimensionError("trace_product: element has shape " +
                             t.shape_str());
    };

    const size_t n = mats.size();
    auto first = dims(mats[0], !closed, true);
    RowMatrixXd acc =
        Eigen::Map<const RowMatrixXd>(mats[0].data(), first.first, first.second);
    for (size_t i = 1; i < n; ++i) {
        auto d = dims(mats[i], !closed && i == n - 1, false);
        if (acc.cols() != d.first)
            throw DimensionError("trace_product: inner dimension mismatch at "
                                 "element " +
                                 std::to_string(i) + ": " +
                                 std::to_string(acc.cols()) + " vs " +
                                 std::to_string(d.first));
        Eigen::Map<const RowMatrixXd> mi(mats[i].data(), d.first, d.second);
        acc = (acc * mi).eval();
    }
    if (closed) {
        if (acc.rows() != acc.cols())
            throw DimensionError("trace_product: closed chain is not square");
        return acc.trace();
    }
    if (acc.rows() != 1 || acc.cols() != 1)
        throw DimensionError("trace_product: open chain does not reduce to a "
                             "scalar, got " +
                             std::to_string(acc.rows()) + "x" +
                             std::to_string(acc.cols()));
    return acc(0, 0);
}

// Copy tensor (delta): `order` axes of extent `dim`, entry 1 where all indices
// agree, 0 elsewhere. order 1 gives the all-ones vector.
inline DenseTensor copy_tensor(int order, long dim) {
    if (order < 1)
        throw DimensionError("copy_tensor: order must be >= 1");
    if (dim < 1)
        throw DimensionError("copy_tensor: dim must be >= 1");
    DenseTensor t(std::vector<long>(order, dim));
    // entry (i,i,...,i) sits at flat offset i * (1 + dim + ... + dim^{order-1})
    long step = 0, pw = 1;
    for (int a = 0; a < order; ++a) {
        step += pw;
        pw *= dim;
    }
    for (long i = 0; i < dim; ++i)
        t[i * step] = 1.0;
    return t;
}

} // namespace gtn

#endif // GTN_TENSOR_HPP
