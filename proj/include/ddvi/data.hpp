#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ddvi/linalg.hpp"
#include "ddvi/priors.hpp"
#include "ddvi/rng.hpp"
#include "ddvi/tensor.hpp"

namespace ddvi {

enum class DataKind { binary_image, continuous };

struct Dataset {
    Tensor items;             // n x D
    std::vector<int> labels;  // empty when absent
    DataKind kind = DataKind::binary_image;
    std::string name;

    std::size_t size() const { return items.is_matrix() ? items.rows() : 0; }
    std::size_t dim() const { return items.is_matrix() ? items.cols() : 0; }
    bool has_labels() const { return !labels.empty(); }
};

class parse_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// IDX containers (big-endian): magic 0x00000803 for images, 0x00000801 for
// labels. Pixels are scaled to [0,1] by /255.
// ---------------------------------------------------------------------------

namespace idx {

inline std::uint32_t read_u32_be(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw parse_error(std::string("idx: truncated ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace idx

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path = "") {
    std::ifstream is(images_path, std::ios::binary);
    if (!is) throw parse_error("idx: cannot open " + images_path);
    const std::uint32_t magic = idx::read_u32_be(is, "magic");
    if (magic != 0x00000803u)
        throw parse_error("idx: bad magic in " + images_path + " (expected 0x00000803)");
    const std::uint32_t n = idx::read_u32_be(is, "count");
    const std::uint32_t rows = idx::read_u32_be(is, "rows");
    const std::uint32_t cols = idx::read_u32_be(is, "cols");
    const std::size_t dim = static_cast<std::size_t>(rows) * cols;

    Dataset ds;
    ds.kind = DataKind::binary_image;
    ds.name = images_path;
    ds.items = Tensor({n, dim});
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim)))
            throw parse_error("idx: truncated pixel payload in " + images_path);
        for (std::size_t j = 0; j < dim; ++j)
            ds.items(i, j) = static_cast<double>(buf[j]) / 255.0;
    }

    if (!labels_path.empty()) {
        std::ifstream ls(labels_path, std::ios::binary);
        if (!ls) throw parse_error("idx: cannot open " + labels_path);
        const std::uint32_t lmagic = idx::read_u32_be(ls, "magic");
        if (lmagic != 0x00000801u)
            throw parse_error("idx: bad magic in " + labels_path + " (expected 0x00000801)");
        const std::uint32_t ln = idx::read_u32_be(ls, "count");
        if (ln != n)
            throw parse_error("idx: image/label count mismatch (" + std::to_string(n) + " vs " +
                              std::to_string(ln) + ")");
        ds.labels.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            unsigned char b;
            if (!ls.read(reinterpret_cast<char*>(&b), 1))
                throw parse_error("idx: truncated label payload in " + labels_path);
            ds.labels[i] = static_cast<int>(b);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Delimited numeric matrices.
// ---------------------------------------------------------------------------

inline double cfg_cell_to_double(const std::string& cell, std::size_t lineno) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(cell, &pos);
    } catch (const std::exception&) {
        throw parse_error("csv: non-numeric cell '" + cell + "' in row " + std::to_string(lineno));
    }
    while (pos < cell.size() && (cell[pos] == ' ' || cell[pos] == '\t')) ++pos;
    if (pos != cell.size())
        throw parse_error("csv: non-numeric cell '" + cell + "' in row " + std::to_string(lineno));
    return v;
}

inline Dataset load_matrix_csv(const std::string& path, char delim = ',',
                               bool labels_last_column = false) {
    std::ifstream is(path);
    if (!is) throw parse_error("csv: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, delim)) {
            try {
                row.push_back(cfg_cell_to_double(cell, lineno));
            } catch (const parse_error&) {
                throw;
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw parse_error("csv: ragged row " + std::to_string(lineno) + " in " + path);
        rows.push_back(std::move(row));
    }

    Dataset ds;
    ds.kind = DataKind::continuous;
    ds.name = path;
    const std::size_t n = rows.size();
    const std::size_t total = n == 0 ? 0 : rows.front().size();
    detail::check(!labels_last_column || total >= 2, "csv: label column requires >= 2 columns");
    const std::size_t dim = labels_last_column ? total - 1 : total;
    ds.items = Tensor({n, dim});
    if (labels_last_column) ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) ds.items(i, j) = rows[i][j];
        if (labels_last_column) ds.labels[i] = static_cast<int>(rows[i][dim]);
    }
    return ds;
}

inline void save_matrix_csv(const std::string& path, const Tensor& items,
                            const std::vector<int>* labels = nullptr, char delim = ',') {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("csv: cannot write " + path);
    os.precision(17);
    for (std::size_t i = 0; i < items.rows(); ++i) {
        for (std::size_t j = 0; j < items.cols(); ++j) {
            if (j) os << delim;
            os << items(i, j);
        }
        if (labels) os << delim << (*labels)[i];
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// PCA. Mean-centered projection onto the top-k eigenvectors of the sample
// covariance (divisor n-1). Small problems use a full Jacobi
// eigendecomposition; larger ones use subspace iteration with a 1e-9
// residual tolerance.
// ---------------------------------------------------------------------------

struct PcaResult {
    Tensor projected;                // n x k
    Tensor basis;                    // D x k, orthonormal columns
    std::vector<double> variances;   // k, non-increasing
    std::vector<double> mean;        // D
};

namespace pca_detail {

// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues and
// fills V with eigenvectors in columns.
inline void jacobi_eigen(Tensor a, std::vector<double>& eigvals, Tensor& v) {
    const std::size_t n = a.rows();
    v = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::fabs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(n);
    for (std::size_t i = 0; i < n; ++i) eigvals[i] = a(i, i);
}

inline void gram_schmidt(Tensor& q) {
    const std::size_t d = q.rows(), k = q.cols();
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t p = 0; p < j; ++p) {
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += q(i, j) * q(i, p);
            for (std::size_t i = 0; i < d; ++i) q(i, j) -= dot * q(i, p);
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm += q(i, j) * q(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-300) norm = 1.0;
        for (std::size_t i = 0; i < d; ++i) q(i, j) /= norm;
    }
}

}  // namespace pca_detail

inline PcaResult pca_project(const Tensor& x, std::size_t k, double post_scale_divisor = 0.0) {
    const std::size_t n = x.rows(), dim = x.cols();
    detail::check(k >= 1 && k <= std::min(n, dim), "pca_project: k out of range");
    detail::check(n >= 2, "pca_project: need at least 2 rows");

    PcaResult res;
    res.mean.assign(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) res.mean[j] += x(i, j);
    for (double& m : res.mean) m /= static_cast<double>(n);

    Tensor centered({n, dim});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) centered(i, j) = x(i, j) - res.mean[j];

    Tensor cov({dim, dim});
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = centered.row_span(i);
        for (std::size_t a = 0; a < dim; ++a) {
            const double ra = row[a];
            if (ra == 0.0) continue;
            for (std::size_t b = a; b < dim; ++b) cov(a, b) += ra * row[b];
        }
    }
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = a; b < dim; ++b) {
            cov(a, b) /= static_cast<double>(n - 1);
            cov(b, a) = cov(a, b);
        }

    res.basis = Tensor({dim, k});
    res.variances.assign(k, 0.0);

    if (dim <= 128) {
        std::vector<double> eig;
        Tensor v;
        pca_detail::jacobi_eigen(cov, eig, v);
        std::vector<std::size_t> order(dim);
        for (std::size_t i = 0; i < dim; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return eig[a] > eig[b]; });
        for (std::size_t j = 0; j < k; ++j) {
            res.variances[j] = std::max(0.0, eig[order[j]]);
            for (std::size_t i = 0; i < dim; ++i) res.basis(i, j) = v(i, order[j]);
        }
    } else {
        // subspace iteration with a deterministic start
        Rng rng(0x9ca7);
        Tensor q({dim, k});
        rng.fill_normal(q);
        pca_detail::gram_schmidt(q);
        Tensor prev = q;
        for (int iter = 0; iter < 1000; ++iter) {
            Tensor next = la::matmul(cov, q);
            pca_detail::gram_schmidt(next);
            double resid = 0.0;
            for (std::size_t i = 0; i < next.numel(); ++i) {
                // columns may flip sign between iterations
                const double d1 = std::fabs(next.data[i]) - std::fabs(q.data[i]);
                resid = std::max(resid, std::fabs(d1));
            }
            q = std::move(next);
            if (resid < 1e-9 && iter > 3) break;
        }
        // Rayleigh-Ritz refinement inside the converged subspace
        Tensor small({k, k});
        Tensor cq = la::matmul(cov, q);
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
                double s = 0.0;
                for (std::size_t i = 0; i < dim; ++i) s += q(i, a) * cq(i, b);
                small(a, b) = s;
            }
        std::vector<double> eig;
        Tensor v;
        pca_detail::jacobi_eigen(small, eig, v);
        std::vector<std::size_t> order(k);
        for (std::size_t i = 0; i < k; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return eig[a] > eig[b]; });
        for (std::size_t j = 0; j < k; ++j) {
            res.variances[j] = std::max(0.0, eig[order[j]]);
            for (std::size_t i = 0; i < dim; ++i) {
                double s = 0.0;
                for (std::size_t a = 0; a < k; ++a) s += q(i, a) * v(a, order[j]);
                res.basis(i, j) = s;
            }
        }
    }

    res.projected = la::matmul(centered, res.basis);
    if (post_scale_divisor > 0.0)
        for (double& vv : res.projected.data) vv /= post_scale_divisor;
    return res;
}

// Genotype-style preprocessing: top-k principal components, then divide the
// projected features by 30.
inline PcaResult pca_genotype_preset(const Tensor& x) {
    const std::size_t k = std::min({static_cast<std::size_t>(1000), x.rows() - 1, x.cols()});
    return pca_project(x, k, 30.0);
}

// ---------------------------------------------------------------------------
// Synthetic datasets: prior samples pushed through a fixed random two-layer
// lift, sigmoid-squashed for the binary-image kind. Labels are the prior
// partition ids.
// ---------------------------------------------------------------------------

struct SyntheticMap {
    Tensor w1, b1;  // 2 -> hidden (tanh)
    Tensor w2, b2;  // hidden -> D
    bool sigmoid_out = true;

    SyntheticMap() = default;

    SyntheticMap(std::size_t in_dim, std::size_t out_dim, std::uint64_t map_seed,
                 bool sigmoid = true)
        : sigmoid_out(sigmoid) {
        const std::size_t hidden = 16;
        Rng rng(map_seed);
        w1 = Tensor({in_dim, hidden});
        rng.fill_uniform(w1, -1.5, 1.5);
        b1 = Tensor({1, hidden});
        rng.fill_uniform(b1, -0.5, 0.5);
        w2 = Tensor({hidden, out_dim});
        rng.fill_uniform(w2, -0.8, 0.8);
        b2 = Tensor({1, out_dim});
        rng.fill_uniform(b2, -0.3, 0.3);
    }

    Tensor apply(const Tensor& z) const {
        Tensor h = la::matmul(z, w1);
        la::add_row_inplace(h, b1);
        for (double& v : h.data) v = std::tanh(v);
        Tensor out = la::matmul(h, w2);
        la::add_row_inplace(out, b2);
        if (sigmoid_out) la::sigmoid_inplace(out);
        return out;
    }
};

inline Dataset make_synthetic(const PriorSpec& prior, const SyntheticMap& map, std::size_t n,
                              std::uint64_t sample_seed) {
    Rng rng(sample_seed);
    const PriorSample s = sample_prior(prior, n, rng);
    Dataset ds;
    ds.items = n == 0 ? Tensor({0, map.b2.cols()}) : map.apply(s.points);
    ds.labels = s.labels;
    ds.kind = map.sigmoid_out ? DataKind::binary_image : DataKind::continuous;
    ds.name = "synthetic-" + to_string(prior.kind);
    return ds;
}

inline Dataset dataset_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.kind = ds.kind;
    out.name = ds.name;
    out.items = Tensor({idx.size(), ds.dim()});
    if (ds.has_labels()) out.labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < ds.dim(); ++j) out.items(i, j) = ds.items(idx[i], j);
        if (ds.has_labels()) out.labels[i] = ds.labels[idx[i]];
    }
    return out;
}

}  // namespace ddvi
