#pragma once

#include "skyrlab/core.hpp"

#include <cstring>
#include <fstream>
#include <string>

namespace skyrlab {

// Flat binary state: little-endian uint64 dimension, then (re, im) doubles.
inline void write_state(const std::string& path, const StateVector& psi) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_state: cannot open " + path);
    const std::uint64_t dim = static_cast<std::uint64_t>(psi.size());
    unsigned char header[8];
    for (int b = 0; b < 8; ++b)
        header[b] = static_cast<unsigned char>((dim >> (8 * b)) & 0xFF);
    os.write(reinterpret_cast<const char*>(header), 8);
    for (Eigen::Index i = 0; i < psi.size(); ++i) {
        const double parts[2] = {psi(i).real(), psi(i).imag()};
        for (double d : parts) {
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            unsigned char buf[8];
            for (int b = 0; b < 8; ++b)
                buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
            os.write(reinterpret_cast<const char*>(buf), 8);
        }
    }
    if (!os) throw std::runtime_error("write_state: write failed for " + path);
}

inline StateVector read_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_state: cannot open " + path);
    auto read_u64 = [&is, &path]() {
        unsigned char buf[8];
        if (!is.read(reinterpret_cast<char*>(buf), 8)) throw std::runtime_error("read_state: truncated " + path);
        std::uint64_t v = 0;
        for (int b = 7; b >= 0; --b)
            v = (v << 8) | buf[b];
        return v;
    };
    const std::uint64_t dim = read_u64();
    if (dim == 0 || (dim & (dim - 1)) != 0) throw std::runtime_error("read_state: bad dimension in " + path);
    StateVector psi(static_cast<Eigen::Index>(dim));
    for (std::uint64_t i = 0; i < dim; ++i) {
        double parts[2];
        for (double& d : parts) {
            const std::uint64_t bits = read_u64();
            std::memcpy(&d, &bits, 8);
        }
        psi(static_cast<Eigen::Index>(i)) = {parts[0], parts[1]};
    }
    return psi;
}

}  // namespace skyrlab
