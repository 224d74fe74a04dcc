#pragma once

#include <iosfwd>
#include <string>

#include "types.hpp"

namespace fmreg {

enum class PlyFormat { Ascii, BinaryLittleEndian };
enum class PlyScalar { Float32, Float64 };

struct PlyWriteOptions {
  PlyFormat format = PlyFormat::BinaryLittleEndian;
  PlyScalar scalar = PlyScalar::Float64;
};

/// Reads the `vertex` element: x, y, z (any numeric type), optional
/// `instance_id` (int32) as labels and nx, ny, nz as normals. Other scalar
/// properties are skipped. Throws Error(Parse) with a diagnostic on bad input.
PointCloud read_ply(std::istream& in);
PointCloud read_ply(const std::string& path);

void write_ply(std::ostream& out, const PointCloud& cloud, const PlyWriteOptions& options = {});
void write_ply(const std::string& path, const PointCloud& cloud, const PlyWriteOptions& options = {});

}  // namespace fmreg
