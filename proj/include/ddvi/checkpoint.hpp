#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ddvi/nets.hpp"
#include "ddvi/tensor.hpp"

namespace ddvi {

// Checkpoint layout: a text header with one "name dim0 dim1 ..." line per
// tensor, a blank line, then all values as little-endian 64-bit floats in
// header order.

namespace detail {

inline void write_f64_le(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

inline bool read_f64_le(std::istream& is, double& out) {
    char buf[8];
    if (!is.read(buf, 8)) return false;
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    out = std::bit_cast<double>(bits);
    return true;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    for (const auto& p : params) {
        os << p.name;
        for (auto d : p.tensor->shape) os << ' ' << d;
        os << '\n';
    }
    os << '\n';
    for (const auto& p : params)
        for (double v : p.tensor->data) detail::write_f64_le(os, v);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct CheckpointEntry {
    std::string name;
    std::vector<std::size_t> shape;
};

inline std::vector<CheckpointEntry> read_checkpoint_header(std::istream& is) {
    std::vector<CheckpointEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) return entries;
        std::istringstream ls(line);
        CheckpointEntry e;
        ls >> e.name;
        std::size_t d;
        while (ls >> d) e.shape.push_back(d);
        if (e.name.empty() || e.shape.empty())
            throw std::runtime_error("checkpoint: malformed header line '" + line + "'");
        entries.push_back(std::move(e));
    }
    throw std::runtime_error("checkpoint: header not terminated by blank line");
}

// Loads into an existing parameter set. Any difference in tensor names,
// order, or shapes is reported in full.
inline void load_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    const auto entries = read_checkpoint_header(is);

    std::string diffs;
    const std::size_t n = std::max(entries.size(), params.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::string want =
            i < params.size() ? params[i].name + " " + shape_str(params[i].tensor->shape) : "(absent)";
        const std::string got =
            i < entries.size() ? entries[i].name + " " + shape_str(entries[i].shape) : "(absent)";
        if (want != got) diffs += "  expected " + want + ", file has " + got + "\n";
    }
    if (!diffs.empty())
        throw std::runtime_error("load_checkpoint: architecture mismatch in " + path + ":\n" + diffs);

    for (const auto& p : params) {
        for (double& v : p.tensor->data) {
            if (!detail::read_f64_le(is, v))
                throw std::runtime_error("load_checkpoint: truncated payload in " + path);
        }
    }
}

}  // namespace ddvi
