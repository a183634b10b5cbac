#ifndef HMX_HMATRIX_IO_HPP
#define HMX_HMATRIX_IO_HPP

// Binary cache format for assembled H-matrices. Layout in docs/binary-format.md.

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "hmatrix.hpp"

namespace hmx {

static_assert(std::endian::native == std::endian::little, "hmx binary format assumes a little-endian host");

inline constexpr char hmx_magic[4] = {'H', 'M', 'X', 'B'};
inline constexpr std::uint32_t hmx_format_version = 1;

namespace detail {

enum : std::uint8_t { payload_lowrank = 0, payload_dense = 1 };
enum : std::uint8_t { flag_degraded = 1 };

struct LeafRecord {
    std::int32_t block = 0;
    std::uint8_t kind = 0;
    std::uint8_t flags = 0;
    std::uint16_t reserved = 0;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::uint64_t rank = 0;
    std::uint64_t offset = 0; // bytes from the start of the payload section
};

template <typename T>
void put(std::ostream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const char* what)
{
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw format_error(std::string("hmx binary: truncated while reading ") + what);
    return v;
}

inline void put_row_major(std::ostream& os, const Eigen::MatrixXd& m)
{
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = m;
    os.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(double)));
}

inline Eigen::MatrixXd get_row_major(std::istream& is, Index rows, Index cols)
{
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r(rows, cols);
    if (!is.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(double))))
        throw format_error("hmx binary: truncated payload");
    return r;
}

} // namespace detail

/// Writes every leaf payload of `h`. Inner blocks carry no data.
inline void save_hmatrix(const HMatrix& h, std::ostream& os)
{
    const BlockClusterTree& t = h.tree();
    std::vector<detail::LeafRecord> table;
    std::uint64_t offset = 0;
    for (int b : t.leaves()) {
        detail::LeafRecord rec;
        rec.block = b;
        rec.flags = h.degraded(b) ? detail::flag_degraded : 0;
        rec.offset = offset;
        if (const LowRank* lr = h.lowrank(b)) {
            rec.kind = detail::payload_lowrank;
            rec.rows = static_cast<std::uint64_t>(lr->rows());
            rec.cols = static_cast<std::uint64_t>(lr->cols());
            rec.rank = static_cast<std::uint64_t>(lr->rank());
            offset += (rec.rows + rec.cols) * rec.rank * sizeof(double);
        } else if (const Eigen::MatrixXd* d = h.dense(b)) {
            rec.kind = detail::payload_dense;
            rec.rows = static_cast<std::uint64_t>(d->rows());
            rec.cols = static_cast<std::uint64_t>(d->cols());
            offset += rec.rows * rec.cols * sizeof(double);
        } else {
            throw precondition_error("save_hmatrix: leaf block " + std::to_string(b) + " has no payload");
        }
        table.push_back(rec);
    }

    os.write(hmx_magic, sizeof hmx_magic);
    detail::put(os, hmx_format_version);
    detail::put(os, static_cast<std::uint64_t>(h.size()));
    detail::put(os, t.structure_hash());
    detail::put(os, static_cast<std::uint64_t>(table.size()));
    for (const detail::LeafRecord& rec : table) {
        detail::put(os, rec.block);
        detail::put(os, rec.kind);
        detail::put(os, rec.flags);
        detail::put(os, rec.reserved);
        detail::put(os, rec.rows);
        detail::put(os, rec.cols);
        detail::put(os, rec.rank);
        detail::put(os, rec.offset);
    }
    for (const detail::LeafRecord& rec : table) {
        if (const LowRank* lr = h.lowrank(rec.block)) {
            detail::put_row_major(os, lr->left());
            detail::put_row_major(os, lr->right());
        } else {
            detail::put_row_major(os, *h.dense(rec.block));
        }
    }
    if (!os)
        throw format_error("save_hmatrix: write failed");
}

/// Reads an H-matrix written by save_hmatrix onto `tree`, which must have
/// the structure the file was written from.
inline HMatrix load_hmatrix(std::istream& is, std::shared_ptr<const BlockClusterTree> tree)
{
    char magic[4];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, hmx_magic, sizeof magic) != 0)
        throw format_error("hmx binary: bad magic");
    const auto version = detail::get<std::uint32_t>(is, "version");
    if (version != hmx_format_version)
        throw format_error("hmx binary: unsupported version " + std::to_string(version));
    const auto n = detail::get<std::uint64_t>(is, "N");
    const auto hash = detail::get<std::uint64_t>(is, "tree hash");
    const auto count = detail::get<std::uint64_t>(is, "leaf count");
    if (n != static_cast<std::uint64_t>(tree->size()))
        throw dimension_error("load_hmatrix: file holds N=" + std::to_string(n) + ", tree has " +
                              std::to_string(tree->size()));
    if (hash != tree->structure_hash())
        throw precondition_error("load_hmatrix: block-cluster tree hash does not match the file");
    if (count != tree->leaves().size())
        throw format_error("hmx binary: leaf count does not match the tree");

    std::vector<detail::LeafRecord> table(static_cast<std::size_t>(count));
    for (detail::LeafRecord& rec : table) {
        rec.block = detail::get<std::int32_t>(is, "block id");
        rec.kind = detail::get<std::uint8_t>(is, "kind");
        rec.flags = detail::get<std::uint8_t>(is, "flags");
        rec.reserved = detail::get<std::uint16_t>(is, "reserved");
        rec.rows = detail::get<std::uint64_t>(is, "rows");
        rec.cols = detail::get<std::uint64_t>(is, "cols");
        rec.rank = detail::get<std::uint64_t>(is, "rank");
        rec.offset = detail::get<std::uint64_t>(is, "offset");
        if (rec.block < 0 || rec.block >= tree->block_count() || !(*tree)[rec.block].is_leaf())
            throw format_error("hmx binary: record names block " + std::to_string(rec.block) +
                               ", which is not a leaf");
    }

    HMatrix h(std::move(tree));
    std::uint64_t offset = 0;
    for (const detail::LeafRecord& rec : table) {
        if (rec.offset != offset)
            throw format_error("hmx binary: payload offsets are not contiguous");
        const auto rows = static_cast<Index>(rec.rows);
        const auto cols = static_cast<Index>(rec.cols);
        if (rec.kind == detail::payload_lowrank) {
            const auto rank = static_cast<Index>(rec.rank);
            Eigen::MatrixXd left = detail::get_row_major(is, rows, rank);
            Eigen::MatrixXd right = detail::get_row_major(is, cols, rank);
            h.set(rec.block, LowRank(std::move(left), std::move(right)));
            offset += (rec.rows + rec.cols) * rec.rank * sizeof(double);
        } else if (rec.kind == detail::payload_dense) {
            h.set(rec.block, detail::get_row_major(is, rows, cols));
            offset += rec.rows * rec.cols * sizeof(double);
        } else {
            throw format_error("hmx binary: unknown payload kind " + std::to_string(rec.kind));
        }
        if (rec.flags & detail::flag_degraded)
            h.mark_degraded(rec.block);
    }
    if (!h.complete())
        throw format_error("hmx binary: payload kinds do not match the block tree");
    return h;
}

inline void save_hmatrix(const HMatrix& h, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw format_error("save_hmatrix: cannot open " + path);
    save_hmatrix(h, os);
}

inline HMatrix load_hmatrix(const std::string& path, std::shared_ptr<const BlockClusterTree> tree)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw format_error("load_hmatrix: cannot open " + path);
    return load_hmatrix(is, std::move(tree));
}

} // namespace hmx

#endif // HMX_HMATRIX_IO_HPP
