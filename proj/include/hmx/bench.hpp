#ifndef HMX_BENCH_HPP
#define HMX_BENCH_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "clustering.hpp"
#include "compressors.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "hmatrix.hpp"
#include "lowrank.hpp"
#include "multiply.hpp"

namespace hmx {

enum class KernelPair {
    Exponential, // H = k1, K = k2
    SingleLayer, // H = K = V
};

inline std::string_view to_string(KernelPair k)
{
    return k == KernelPair::Exponential ? "exponential" : "single-layer";
}

/// Everything one benchmark sweep depends on. Round-trips through the
/// key=value text form of to_config_text() / parse_config().
struct BenchConfig {
    KernelPair kernel = KernelPair::Exponential;
    int level_min = 0;
    int level_max = 3;
    Index n_min = default_n_min;
    double eta = default_eta;
    Index rank = 16;
    double eps = 0.0; // > 0 selects EpsRank(eps) instead of FixedRank(rank)
    MultiplyConfig::Mode mode = MultiplyConfig::Mode::New;
    CompressorKind compressor = CompressorKind::ACA;
    MultiplyConfig::Converter converter = MultiplyConfig::Converter::HierApprox;
    int subspace_iterations = 1;
    int oversample = 2;
    double assembly_eps = 1e-12; // ACA tolerance used to assemble the factors
    int estimator_iterations = 10;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out = "-"; // "-" is standard output

    TruncationPolicy policy() const
    {
        return eps > 0.0 ? TruncationPolicy::eps_rank(eps) : TruncationPolicy::fixed_rank(rank);
    }

    MultiplyConfig multiply_config() const
    {
        MultiplyConfig cfg;
        cfg.mode = mode;
        cfg.compressor.kind = compressor;
        cfg.compressor.subspace_iterations = subspace_iterations;
        cfg.compressor.oversample = oversample;
        cfg.compressor.seed = seed;
        cfg.policy = policy();
        cfg.converter = converter;
        cfg.threads = threads;
        return cfg;
    }

    /// Assigns one field from its text form; throws format_error naming the field.
    void set(std::string_view key, std::string_view value);

    /// Throws precondition_error or capacity_error for inconsistent settings.
    void validate() const
    {
        if (level_min < 0 || level_min > level_max)
            throw precondition_error("config: need 0 <= level_min <= level_max");
        if (level_max > max_mesh_level)
            throw capacity_error("config: level_max " + std::to_string(level_max) + " exceeds " +
                                 std::to_string(max_mesh_level));
        if (n_min < 1)
            throw precondition_error("config: n_min must be >= 1");
        if (!(eta > 0.0))
            throw precondition_error("config: eta must be positive");
        if (rank < 1)
            throw precondition_error("config: rank must be >= 1");
        if (eps < 0.0 || !(assembly_eps > 0.0))
            throw precondition_error("config: tolerances must be positive");
        if (threads < 1)
            throw precondition_error("config: threads must be >= 1");
        if (oversample < 1 || subspace_iterations < 0 || estimator_iterations < 0)
            throw precondition_error("config: iteration counts out of range");
    }

    std::string to_config_text() const;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value)
{
    T out{};
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end)
        throw format_error("field '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as a number");
    return out;
}

inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline void BenchConfig::set(std::string_view key, std::string_view value)
{
    key = detail::trim(key);
    value = detail::trim(value);
    const std::string k(key);
    auto bad = [&](std::string_view allowed) {
        return format_error("field '" + k + "': '" + std::string(value) + "' is not one of " + std::string(allowed));
    };
    if (k == "kernel") {
        if (value == "exponential" || value == "exp")
            kernel = KernelPair::Exponential;
        else if (value == "single-layer" || value == "V")
            kernel = KernelPair::SingleLayer;
        else
            throw bad("exponential, single-layer");
    } else if (k == "levels") {
        const auto dots = value.find("..");
        if (dots == std::string_view::npos)
            throw format_error("field 'levels': expected the form a..b");
        level_min = detail::parse_number<int>(key, value.substr(0, dots));
        level_max = detail::parse_number<int>(key, value.substr(dots + 2));
    } else if (k == "level_min" || k == "level-min") {
        level_min = detail::parse_number<int>(key, value);
    } else if (k == "level_max" || k == "level-max") {
        level_max = detail::parse_number<int>(key, value);
    } else if (k == "n_min" || k == "nmin") {
        n_min = detail::parse_number<Index>(key, value);
    } else if (k == "eta") {
        eta = detail::parse_number<double>(key, value);
    } else if (k == "rank") {
        rank = detail::parse_number<Index>(key, value);
        eps = 0.0;
    } else if (k == "eps") {
        eps = detail::parse_number<double>(key, value);
    } else if (k == "mode") {
        if (value == "new")
            mode = MultiplyConfig::Mode::New;
        else if (value == "traditional")
            mode = MultiplyConfig::Mode::Traditional;
        else
            throw bad("new, traditional");
    } else if (k == "compressor") {
        if (value == "aca")
            compressor = CompressorKind::ACA;
        else if (value == "bilanczos")
            compressor = CompressorKind::BiLanczos;
        else if (value == "randomized")
            compressor = CompressorKind::Randomized;
        else if (value == "svd")
            compressor = CompressorKind::DenseSVD;
        else
            throw bad("aca, bilanczos, randomized, svd");
    } else if (k == "converter") {
        using C = MultiplyConfig::Converter;
        if (value == "hierapprox")
            converter = C::HierApprox;
        else if (value == "aca")
            converter = C::ACA;
        else if (value == "bilanczos")
            converter = C::BiLanczos;
        else if (value == "randomized")
            converter = C::Randomized;
        else if (value == "svd")
            converter = C::DenseSVD;
        else
            throw bad("hierapprox, aca, bilanczos, randomized, svd");
    } else if (k == "subspace_iterations") {
        subspace_iterations = detail::parse_number<int>(key, value);
    } else if (k == "oversample") {
        oversample = detail::parse_number<int>(key, value);
    } else if (k == "assembly_eps") {
        assembly_eps = detail::parse_number<double>(key, value);
    } else if (k == "estimator_iterations") {
        estimator_iterations = detail::parse_number<int>(key, value);
    } else if (k == "seed") {
        seed = detail::parse_number<std::uint64_t>(key, value);
    } else if (k == "threads") {
        threads = detail::parse_number<unsigned>(key, value);
    } else if (k == "out") {
        out = std::string(value);
    } else {
        throw format_error("unknown field '" + k + "'");
    }
}

inline std::string BenchConfig::to_config_text() const
{
    std::ostringstream os;
    os << "kernel=" << to_string(kernel) << '\n'
       << "level_min=" << level_min << '\n'
       << "level_max=" << level_max << '\n'
       << "n_min=" << n_min << '\n'
       << "eta=" << detail::format_double(eta) << '\n'
       << "rank=" << rank << '\n'
       << "eps=" << detail::format_double(eps) << '\n'
       << "mode=" << to_string(mode) << '\n'
       << "compressor=" << to_string(compressor) << '\n'
       << "converter=" << to_string(converter) << '\n'
       << "subspace_iterations=" << subspace_iterations << '\n'
       << "oversample=" << oversample << '\n'
       << "assembly_eps=" << detail::format_double(assembly_eps) << '\n'
       << "estimator_iterations=" << estimator_iterations << '\n'
       << "seed=" << seed << '\n'
       << "threads=" << threads << '\n'
       << "out=" << out << '\n';
    return os.str();
}

/// Reads key=value lines; '#' starts a comment. Errors carry source:line.
inline BenchConfig parse_config(std::istream& is, const std::string& source = "<config>",
                                BenchConfig base = {})
{
    std::string line;
    int number = 0;
    while (std::getline(is, line)) {
        ++number;
        std::string_view view(line);
        if (const auto hash = view.find('#'); hash != std::string_view::npos)
            view = view.substr(0, hash);
        view = detail::trim(view);
        if (view.empty())
            continue;
        const auto eq = view.find('=');
        const std::string where = source + ":" + std::to_string(number) + ": ";
        if (eq == std::string_view::npos)
            throw format_error(where + "expected key=value, got '" + std::string(view) + "'");
        try {
            base.set(view.substr(0, eq), view.substr(eq + 1));
        } catch (const format_error& e) {
            throw format_error(where + e.what());
        }
    }
    return base;
}

inline BenchConfig load_config(const std::string& path, BenchConfig base = {})
{
    std::ifstream is(path);
    if (!is)
        throw format_error("cannot open config file " + path);
    return parse_config(is, path, std::move(base));
}

/// Mesh, trees and both assembled factors for one level.
struct BenchProblem {
    PanelSet panels;
    std::shared_ptr<const BlockClusterTree> tree;
    std::shared_ptr<const HMatrix> h;
    std::shared_ptr<const HMatrix> k;
};

inline BenchProblem build_problem(const BenchConfig& cfg, int level)
{
    BenchProblem p;
    p.panels = build_sphere_mesh(level);
    auto ct = std::make_shared<const ClusterTree>(build_cluster_tree(p.panels, cfg.n_min));
    p.tree = build_block_cluster_tree(ct, cfg.eta);
    const TruncationPolicy assembly = TruncationPolicy::eps_rank(cfg.assembly_eps);
    if (cfg.kernel == KernelPair::Exponential) {
        p.h = std::make_shared<const HMatrix>(
            assemble_hmatrix(KernelKind::Exponential, p.panels, p.tree, assembly, cfg.threads));
        p.k = std::make_shared<const HMatrix>(
            assemble_hmatrix(KernelKind::ScaledExponential, p.panels, p.tree, assembly, cfg.threads));
    } else {
        p.h = std::make_shared<const HMatrix>(
            assemble_hmatrix(KernelKind::SingleLayer, p.panels, p.tree, assembly, cfg.threads));
        p.k = p.h;
    }
    return p;
}

struct BenchRow {
    Index n = 0;
    std::string mode;
    std::string compressor;
    std::string policy;
    double wall_s = 0.0;
    double wall_s_per_dof = 0.0;
    double est_error = 0.0; // estimated ||L - HK||_F / ||L||_F
    Index max_far_rank = 0;
    std::uint64_t matvec_count = 0;
    std::size_t degraded_blocks = 0;
    unsigned threads = 1;
};

inline constexpr std::string_view csv_header =
    "N,mode,compressor,policy,wall_s,wall_s_per_dof,est_error,max_far_rank,matvec_count,degraded_blocks,threads";

inline std::string to_csv(const BenchRow& r)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6e,%.6e,%.6e", r.wall_s, r.wall_s_per_dof, r.est_error);
    std::ostringstream os;
    os << r.n << ',' << r.mode << ',' << r.compressor << ',' << r.policy << ',' << buf << ',' << r.max_far_rank
       << ',' << r.matvec_count << ',' << r.degraded_blocks << ',' << r.threads;
    return os.str();
}

/// Multiplies one assembled problem and measures it. Only the multiplication
/// is timed.
inline BenchRow bench_level(const BenchConfig& cfg, const BenchProblem& p)
{
    const MultiplyConfig mc = cfg.multiply_config();
    MultiplyReport report;
    const auto start = std::chrono::steady_clock::now();
    const HMatrix l = hmult(*p.h, *p.k, mc, &report);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    BenchRow row;
    row.n = p.panels.size();
    row.mode = std::string(to_string(cfg.mode));
    row.compressor = cfg.mode == MultiplyConfig::Mode::New ? std::string(to_string(cfg.compressor))
                                                           : std::string(to_string(cfg.converter));
    row.policy = mc.policy.describe();
    row.wall_s = wall;
    row.wall_s_per_dof = wall / static_cast<double>(row.n);
    const double norm = frobenius_norm(l);
    const double est = estimate_product_error(*p.h, *p.k, l, cfg.estimator_iterations, 0, cfg.seed);
    row.est_error = norm > 0.0 ? est / norm : est;
    row.max_far_rank = max_far_rank(l);
    row.matvec_count = report.matvecs();
    row.degraded_blocks = report.degraded_count();
    row.threads = cfg.threads;
    return row;
}

/// One CSV row per level in [level_min, level_max]. Notes about the
/// seconds-per-DOF trend go to `log` when given.
inline std::vector<BenchRow> run_benchmark(const BenchConfig& cfg, std::ostream& csv, std::ostream* log = nullptr)
{
    cfg.validate();
    csv << csv_header << '\n';
    std::vector<BenchRow> rows;
    for (int level = cfg.level_min; level <= cfg.level_max; ++level) {
        const BenchProblem p = build_problem(cfg, level);
        rows.push_back(bench_level(cfg, p));
        csv << to_csv(rows.back()) << '\n' << std::flush;
    }

    // soft check: wall_s_per_dof / log2(N)^2 should stay within a generous
    // factor of its smallest value; only reported, from N = 1536 on
    if (log && cfg.mode == MultiplyConfig::Mode::New && rows.size() > 1) {
        constexpr double generous = 100.0;
        auto scaled = [](const BenchRow& r) {
            const double l2 = std::log2(static_cast<double>(r.n));
            return r.wall_s_per_dof / (l2 * l2);
        };
        double least = scaled(rows.front());
        for (const BenchRow& r : rows)
            least = std::min(least, scaled(r));
        for (const BenchRow& r : rows) {
            if (r.n >= 1536 && least > 0.0 && scaled(r) > generous * least)
                *log << "note: N=" << r.n << " seconds-per-DOF is " << scaled(r) / least
                     << "x the smallest log^2(N)-scaled value\n";
        }
    }
    return rows;
}

struct VerifyOptions {
    std::optional<int> corrupt_block; // test hook: perturb this block of the product; -1 picks the largest leaf
};

struct VerifyCheck {
    int level = 0;
    Index n = 0;
    std::string name;
    bool pass = false;
    double value = 0.0;
    double limit = 0.0;
};

inline constexpr int max_verify_level = 4; // N = 1536

namespace detail {

// Largest far leaf by Frobenius norm; the largest leaf of any kind when
// there is no far field.
inline int largest_leaf(const HMatrix& l)
{
    int best = -1;
    bool best_far = false;
    double best_norm = -1.0;
    for (int b : l.tree().leaves()) {
        const bool far = l.tree()[b].kind == BlockKind::FarLeaf;
        const double norm = to_dense(l, b).norm();
        if ((far && !best_far) || (far == best_far && norm > best_norm)) {
            best = b;
            best_far = far;
            best_norm = norm;
        }
    }
    return best;
}

inline void corrupt(HMatrix& l, int b)
{
    if (b < 0 || b >= l.tree().block_count() || !l.tree()[b].is_leaf())
        throw precondition_error("verify: corrupt block " + std::to_string(b) + " is not a leaf");
    Eigen::MatrixXd d = to_dense(l, b);
    const double scale = std::max(d.norm(), 1e-300);
    d(0, 0) += 1e-2 * scale;
    d *= 1.01;
    if (l.tree()[b].kind == BlockKind::FarLeaf) {
        Eigen::MatrixXd right = Eigen::MatrixXd::Identity(d.cols(), d.cols());
        l.set(b, LowRank(std::move(d), std::move(right)));
    } else {
        l.set(b, std::move(d));
    }
}

// Frobenius norm of the singular values beyond the first k.
inline double tail_norm(const Eigen::VectorXd& s, Index k)
{
    return k >= s.size() ? 0.0 : s.tail(s.size() - k).norm();
}

} // namespace detail

/// Dense-oracle checks of one multiplication per level. Fixed rank: per far
/// leaf, error <= factor * Eckart-Young optimum + 1e-12 * ||P_b||_F with
/// factor 1 for the SVD compressor and 2 otherwise. Eps rank: per far leaf,
/// error <= 100 * eps * ||P_b||_F.
inline std::vector<VerifyCheck> verify_checks(const BenchConfig& cfg, const VerifyOptions& opts = {})
{
    cfg.validate();
    if (cfg.level_max > max_verify_level)
        throw capacity_error("verify: levels above " + std::to_string(max_verify_level) +
                             " (N > 1536) are not supported");
    const TruncationPolicy policy = cfg.policy();
    const bool best = cfg.mode == MultiplyConfig::Mode::New && cfg.compressor == CompressorKind::DenseSVD;
    std::vector<VerifyCheck> out;
    for (int level = cfg.level_min; level <= cfg.level_max; ++level) {
        const BenchProblem p = build_problem(cfg, level);
        MultiplyReport report;
        HMatrix l = hmult(*p.h, *p.k, cfg.multiply_config(), &report);
        if (opts.corrupt_block)
            detail::corrupt(l, *opts.corrupt_block < 0 ? detail::largest_leaf(l) : *opts.corrupt_block);

        const Eigen::MatrixXd prod = to_dense(*p.h) * to_dense(*p.k);
        const Eigen::MatrixXd ld = to_dense(l);
        const double pnorm = prod.norm();
        const BlockClusterTree& t = *p.tree;
        auto add = [&](std::string name, double value, double limit) {
            out.push_back({level, p.panels.size(), std::move(name), value <= limit, value, limit});
        };

        double opt2 = 0.0;
        double worst = 0.0; // largest err_b / allowed_b over far leaves
        for (int b : t.leaves()) {
            if (t[b].kind != BlockKind::FarLeaf)
                continue;
            const Cluster& r = t.rows(b);
            const Cluster& c = t.cols(b);
            const auto exact = prod.block(r.begin, c.begin, r.size(), c.size());
            const double err = (ld.block(r.begin, c.begin, r.size(), c.size()) - exact).norm();
            double allowed = 0.0;
            if (policy.is_fixed()) {
                const Eigen::VectorXd s = Eigen::MatrixXd(exact).jacobiSvd().singularValues();
                const double opt = detail::tail_norm(s, policy.max_rank);
                opt2 += opt * opt;
                allowed = (best ? 1.0 : 2.0) * opt + 1e-12 * exact.norm();
            } else {
                allowed = 100.0 * policy.eps * exact.norm();
            }
            if (allowed > 0.0)
                worst = std::max(worst, err / allowed);
            else if (err > 0.0)
                worst = std::numeric_limits<double>::infinity();
        }

        const double rel = pnorm > 0.0 ? (ld - prod).norm() / pnorm : (ld - prod).norm();
        const double rel_limit = policy.is_fixed() ? 2.0 * std::sqrt(opt2) / std::max(pnorm, 1e-300) + 1e-12
                                                   : 100.0 * policy.eps;
        add("product_error", rel, rel_limit);
        add("optimality_gap", worst, 1.0);
        add("degraded_blocks", static_cast<double>(report.degraded_count()), 0.0);
        add("complete", l.complete() ? 0.0 : 1.0, 0.0);
        if (policy.is_fixed())
            add("rank_cap", static_cast<double>(max_far_rank(l)), static_cast<double>(policy.max_rank));
    }
    return out;
}

/// Prints a CSV pass/fail table and returns true if every check passed.
inline bool verify(const BenchConfig& cfg, std::ostream& os, const VerifyOptions& opts = {})
{
    const std::vector<VerifyCheck> checks = verify_checks(cfg, opts);
    os << "level,N,check,status,value,limit\n";
    bool ok = true;
    for (const VerifyCheck& c : checks) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3e,%.3e", c.value, c.limit);
        os << c.level << ',' << c.n << ',' << c.name << ',' << (c.pass ? "PASS" : "FAIL") << ',' << buf << '\n';
        ok = ok && c.pass;
    }
    os << (ok ? "verify: all checks passed\n" : "verify: FAILED\n");
    return ok;
}

} // namespace hmx

#endif // HMX_BENCH_HPP
