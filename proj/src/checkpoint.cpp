#include "sbchain/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace sbchain {

namespace {

constexpr char kMagic[8] = {'S', 'B', 'C', 'M', 'P', 'S', '0', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw DomainError("checkpoint truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Mps& psi) {
    os.write(kMagic, sizeof(kMagic));
    put<std::uint64_t>(os, psi.size());
    for (Index d : psi.phys_dims()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    for (Index b : psi.bond_dims()) put<std::uint64_t>(os, static_cast<std::uint64_t>(b));
    put<std::int64_t>(os, psi.ortho_center() ? static_cast<std::int64_t>(*psi.ortho_center()) : -1);
    for (const auto& A : psi.sites())
        for (Index l = 0; l < A.left_dim(); ++l)
            for (Index s = 0; s < A.phys_dim(); ++s)
                for (Index r = 0; r < A.right_dim(); ++r) {
                    put<double>(os, A[s](l, r).real());
                    put<double>(os, A[s](l, r).imag());
                }
    if (!os) throw Error("failed to write checkpoint");
}

Mps read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DomainError("not an MPS checkpoint (bad magic)");
    const auto n = get<std::uint64_t>(is);
    if (n == 0 || n > (1u << 20)) throw DomainError("checkpoint has an implausible site count");
    std::vector<Index> phys(n), bonds(n + 1);
    for (auto& d : phys) d = static_cast<Index>(get<std::uint64_t>(is));
    for (auto& b : bonds) b = static_cast<Index>(get<std::uint64_t>(is));
    for (Index d : phys)
        if (d < 1 || d > 4096) throw DomainError("checkpoint has an implausible physical dimension");
    for (Index b : bonds)
        if (b < 1 || b > 65536) throw DomainError("checkpoint has an implausible bond dimension");
    const auto center = get<std::int64_t>(is);
    if (center < -1 || center >= static_cast<std::int64_t>(n)) throw DomainError("checkpoint centre out of range");
    std::vector<SiteTensor<cplx>> sites;
    sites.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SiteTensor<cplx> A(bonds[i], phys[i], bonds[i + 1]);
        for (Index l = 0; l < bonds[i]; ++l)
            for (Index s = 0; s < phys[i]; ++s)
                for (Index r = 0; r < bonds[i + 1]; ++r) {
                    const double re = get<double>(is);
                    const double im = get<double>(is);
                    A[s](l, r) = cplx(re, im);
                }
        sites.push_back(std::move(A));
    }
    std::optional<std::size_t> c;
    if (center >= 0) c = static_cast<std::size_t>(center);
    return Mps(std::move(sites), c);
}

void save_checkpoint(const std::filesystem::path& path, const Mps& psi) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    write_checkpoint(os, psi);
}

Mps load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DomainError("cannot open checkpoint " + path.string());
    return read_checkpoint(is);
}

}  // namespace sbchain
