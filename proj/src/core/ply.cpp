#include "ply.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "error.hpp"

namespace fmreg {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

namespace {

enum class Type { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

struct Property {
  std::string name;
  Type type;
};

Type parse_type(const std::string& t, int line) {
  if (t == "char" || t == "int8") return Type::Int8;
  if (t == "uchar" || t == "uint8") return Type::UInt8;
  if (t == "short" || t == "int16") return Type::Int16;
  if (t == "ushort" || t == "uint16") return Type::UInt16;
  if (t == "int" || t == "int32") return Type::Int32;
  if (t == "uint" || t == "uint32") return Type::UInt32;
  if (t == "float" || t == "float32") return Type::Float32;
  if (t == "double" || t == "float64") return Type::Float64;
  fail(ErrorCode::Parse, "ply header line " + std::to_string(line) + ": unknown property type '" + t + "'");
}

std::size_t type_size(Type t) {
  switch (t) {
    case Type::Int8:
    case Type::UInt8: return 1;
    case Type::Int16:
    case Type::UInt16: return 2;
    case Type::Int32:
    case Type::UInt32:
    case Type::Float32: return 4;
    case Type::Float64: return 8;
  }
  return 0;
}

template <class T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double decode(Type t, const char* p) {
  switch (t) {
    case Type::Int8: return load<std::int8_t>(p);
    case Type::UInt8: return load<std::uint8_t>(p);
    case Type::Int16: return load<std::int16_t>(p);
    case Type::UInt16: return load<std::uint16_t>(p);
    case Type::Int32: return load<std::int32_t>(p);
    case Type::UInt32: return load<std::uint32_t>(p);
    case Type::Float32: return static_cast<double>(load<float>(p));
    case Type::Float64: return load<double>(p);
  }
  return 0.0;
}

struct Header {
  PlyFormat format = PlyFormat::Ascii;
  std::size_t vertex_count = 0;
  std::vector<Property> props;
};

Header read_header(std::istream& in) {
  Header h;
  std::string line;
  int line_no = 0;
  auto next = [&] {
    if (!std::getline(in, line)) fail(ErrorCode::Parse, "ply: unexpected end of header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next();
  if (line != "ply") fail(ErrorCode::Parse, "ply: missing 'ply' magic");
  bool have_format = false, in_vertex = false, seen_vertex = false;
  for (;;) {
    next();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt, version;
      ss >> fmt >> version;
      if (fmt == "ascii") h.format = PlyFormat::Ascii;
      else if (fmt == "binary_little_endian") h.format = PlyFormat::BinaryLittleEndian;
      else fail(ErrorCode::Parse, "ply header line " + std::to_string(line_no) + ": unsupported format '" + fmt + "'");
      have_format = true;
    } else if (kw == "element") {
      std::string name;
      long long count = -1;
      ss >> name >> count;
      if (count < 0) fail(ErrorCode::Parse, "ply header line " + std::to_string(line_no) + ": bad element count");
      if (name == "vertex") {
        if (seen_vertex) fail(ErrorCode::Parse, "ply: duplicate vertex element");
        h.vertex_count = static_cast<std::size_t>(count);
        in_vertex = seen_vertex = true;
      } else {
        if (!seen_vertex && count > 0)
          fail(ErrorCode::Parse, "ply: element '" + name + "' before vertex is not supported");
        in_vertex = false;
      }
    } else if (kw == "property") {
      std::string type, name;
      ss >> type;
      if (type == "list") {
        if (in_vertex) fail(ErrorCode::Parse, "ply header line " + std::to_string(line_no) + ": list properties on vertex are not supported");
        continue;
      }
      ss >> name;
      if (in_vertex) h.props.push_back({name, parse_type(type, line_no)});
    } else {
      fail(ErrorCode::Parse, "ply header line " + std::to_string(line_no) + ": unexpected keyword '" + kw + "'");
    }
  }
  if (!have_format) fail(ErrorCode::Parse, "ply: missing format line");
  if (!seen_vertex) fail(ErrorCode::Parse, "ply: no vertex element");
  return h;
}

int find_prop(const Header& h, const char* name) {
  for (std::size_t i = 0; i < h.props.size(); ++i)
    if (h.props[i].name == name) return static_cast<int>(i);
  return -1;
}

}  // namespace

PointCloud read_ply(std::istream& in) {
  const Header h = read_header(in);
  const int ix = find_prop(h, "x"), iy = find_prop(h, "y"), iz = find_prop(h, "z");
  if (ix < 0 || iy < 0 || iz < 0) fail(ErrorCode::Parse, "ply: vertex element lacks x/y/z");
  const int ilabel = find_prop(h, "instance_id");
  const int inx = find_prop(h, "nx"), iny = find_prop(h, "ny"), inz = find_prop(h, "nz");
  const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud cloud;
  cloud.points.resize(h.vertex_count);
  if (ilabel >= 0) cloud.labels.emplace(h.vertex_count, -1);
  if (has_normals) cloud.normals.emplace(h.vertex_count);

  std::vector<double> values(h.props.size());
  auto store = [&](std::size_t v) {
    cloud.points[v] = Vec3(values[ix], values[iy], values[iz]);
    if (ilabel >= 0) (*cloud.labels)[v] = static_cast<int>(values[ilabel]);
    if (has_normals) (*cloud.normals)[v] = Vec3(values[inx], values[iny], values[inz]);
  };

  if (h.format == PlyFormat::Ascii) {
    std::string line;
    for (std::size_t v = 0; v < h.vertex_count; ++v) {
      do {
        if (!std::getline(in, line)) fail(ErrorCode::Parse, "ply: truncated ascii body at vertex " + std::to_string(v));
      } while (line.find_first_not_of(" \t\r") == std::string::npos);
      std::istringstream ss(line);
      for (std::size_t p = 0; p < values.size(); ++p) {
        std::string tok;
        if (!(ss >> tok)) fail(ErrorCode::Parse, "ply: vertex " + std::to_string(v) + " has too few values");
        try {
          std::size_t used = 0;
          values[p] = std::stod(tok, &used);
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          fail(ErrorCode::Parse, "ply: vertex " + std::to_string(v) + ": bad number '" + tok + "'");
        }
      }
      store(v);
    }
  } else {
    std::size_t stride = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : h.props) {
      offsets.push_back(stride);
      stride += type_size(p.type);
    }
    std::vector<char> buf(stride);
    for (std::size_t v = 0; v < h.vertex_count; ++v) {
      if (!in.read(buf.data(), static_cast<std::streamsize>(stride)))
        fail(ErrorCode::Parse, "ply: truncated binary body at vertex " + std::to_string(v));
      for (std::size_t p = 0; p < values.size(); ++p) values[p] = decode(h.props[p].type, buf.data() + offsets[p]);
      store(v);
    }
  }
  for (std::size_t v = 0; v < cloud.size(); ++v) {
    if (!cloud.points[v].allFinite()) fail(ErrorCode::Parse, "ply: non-finite coordinate at vertex " + std::to_string(v));
  }
  return cloud;
}

PointCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  try {
    return read_ply(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void write_ply(std::ostream& out, const PointCloud& cloud, const PlyWriteOptions& options) {
  cloud.validate();
  const bool f32 = options.scalar == PlyScalar::Float32;
  const char* type = f32 ? "float" : "double";
  out << "ply\n"
      << "format " << (options.format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property " << type << " x\nproperty " << type << " y\nproperty " << type << " z\n";
  if (cloud.normals) out << "property " << type << " nx\nproperty " << type << " ny\nproperty " << type << " nz\n";
  if (cloud.labels) out << "property int instance_id\n";
  out << "end_header\n";

  if (options.format == PlyFormat::Ascii) {
    char buf[64];
    auto put = [&](double v) {
      // Shortest round-trip precision for the chosen width.
      if (f32) std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
      else std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf;
    };
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Vec3& p = cloud.points[i];
      put(p.x()); out << ' '; put(p.y()); out << ' '; put(p.z());
      if (cloud.normals) {
        const Vec3& n = (*cloud.normals)[i];
        out << ' '; put(n.x()); out << ' '; put(n.y()); out << ' '; put(n.z());
      }
      if (cloud.labels) out << ' ' << (*cloud.labels)[i];
      out << '\n';
    }
  } else {
    auto put = [&](double v) {
      if (f32) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
      } else {
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    };
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int a = 0; a < 3; ++a) put(cloud.points[i][a]);
      if (cloud.normals)
        for (int a = 0; a < 3; ++a) put((*cloud.normals)[i][a]);
      if (cloud.labels) {
        const std::int32_t l = (*cloud.labels)[i];
        out.write(reinterpret_cast<const char*>(&l), sizeof l);
      }
    }
  }
  if (!out) fail(ErrorCode::Io, "ply: write failed");
}

void write_ply(const std::string& path, const PointCloud& cloud, const PlyWriteOptions& options) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path + "'");
  write_ply(out, cloud, options);
}

}  // namespace fmreg
