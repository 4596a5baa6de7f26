#pragma once

// Binary MPS checkpoint, all integers and floats little-endian:
//   char[8]   magic "SBCMPS01"
//   uint64    n (number of sites)
//   uint64[n] physical dimensions
//   uint64[n+1] bond dimensions
//   int64     orthogonality centre, -1 for none
//   per site: complex entries in row-major (left, phys, right) order, each as
//             two float64 (real, imaginary)

#include <filesystem>
#include <iosfwd>

#include "sbchain/mps.hpp"

namespace sbchain {

void write_checkpoint(std::ostream& os, const Mps& psi);
Mps read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Mps& psi);
Mps load_checkpoint(const std::filesystem::path& path);

}  // namespace sbchain
