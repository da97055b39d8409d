#include "psdf/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace psdf {

Vec3 TriMesh::triangle_normal(int t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  const Vec3 e1 = vertices[static_cast<std::size_t>(tri[1])] - vertices[static_cast<std::size_t>(tri[0])];
  const Vec3 e2 = vertices[static_cast<std::size_t>(tri[2])] - vertices[static_cast<std::size_t>(tri[0])];
  Vec3 n = e1.cross(e2);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3(0, 0, 1);
}

double TriMesh::triangle_area(int t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  const Vec3 e1 = vertices[static_cast<std::size_t>(tri[1])] - vertices[static_cast<std::size_t>(tri[0])];
  const Vec3 e2 = vertices[static_cast<std::size_t>(tri[2])] - vertices[static_cast<std::size_t>(tri[0])];
  return 0.5 * e1.cross(e2).norm();
}

double TriMesh::total_area() const {
  double area = 0.0;
  for (int t = 0; t < static_cast<int>(triangles.size()); ++t) area += triangle_area(t);
  return area;
}

void TriMesh::bounding_box(Vec3& lo, Vec3& hi) const {
  require(!vertices.empty(), Errc::contract_violation, "bounding_box of empty mesh");
  lo = hi = vertices[0];
  for (const Vec3& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
}

namespace {

void check_indices(const TriMesh& mesh, const std::string& origin) {
  const int n = static_cast<int>(mesh.vertices.size());
  for (const auto& tri : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      require(tri[static_cast<std::size_t>(k)] >= 0 && tri[static_cast<std::size_t>(k)] < n,
              Errc::parse_error, origin + ": face index out of range");
    }
  }
  for (const Vec3& v : mesh.vertices) {
    require(v.allFinite(), Errc::parse_error, origin + ": non-finite vertex coordinate");
  }
}

TriMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  TriMesh mesh;
  std::string line;
  std::vector<int> face;
  while (std::getline(in, line)) {
    if (line.size() >= 2 && line[0] == 'v' && (line[1] == ' ' || line[1] == '\t')) {
      std::istringstream ss(line.substr(2));
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      require(!ss.fail(), Errc::parse_error, "malformed vertex line in " + path.string());
      mesh.vertices.push_back(v);
    } else if (line.size() >= 2 && line[0] == 'f' && (line[1] == ' ' || line[1] == '\t')) {
      std::istringstream ss(line.substr(2));
      face.clear();
      std::string token;
      while (ss >> token) {
        // "f v", "f v/vt", "f v/vt/vn", "f v//vn"; only the vertex index matters.
        int idx = 0;
        auto slash = token.find('/');
        const char* begin = token.data();
        const char* end = token.data() + (slash == std::string::npos ? token.size() : slash);
        auto res = std::from_chars(begin, end, idx);
        require(res.ec == std::errc{} && res.ptr == end, Errc::parse_error,
                "malformed face token '" + token + "' in " + path.string());
        if (idx < 0) idx = static_cast<int>(mesh.vertices.size()) + idx + 1;  // relative index
        face.push_back(idx - 1);
      }
      require(face.size() >= 3, Errc::parse_error,
              "face with fewer than 3 vertices in " + path.string());
      for (std::size_t k = 1; k + 1 < face.size(); ++k) {
        mesh.triangles.push_back({face[0], face[k], face[k + 1]});
      }
    }
  }
  check_indices(mesh, path.string());
  return mesh;
}

struct PlyProperty {
  std::string name;
  int byte_size = 0;
  bool is_list = false;
  int count_size = 0;  // list count type size
};

int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  fail(Errc::parse_error, "unknown PLY type " + t);
}

double ply_read_scalar(std::istream& in, int size, bool floating) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), size);
  require(in.good(), Errc::parse_error, "truncated PLY payload");
  if (floating) {
    if (size == 4) {
      float f;
      std::memcpy(&f, buf, 4);
      return static_cast<double>(f);
    }
    double d;
    std::memcpy(&d, buf, 8);
    return d;
  }
  std::uint64_t u = 0;
  for (int i = size - 1; i >= 0; --i) u = (u << 8) | buf[i];
  return static_cast<double>(u);
}

TriMesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::file_not_found, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "ply", Errc::parse_error, path.string() + " is not a PLY file");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
    std::vector<bool> floating;
  };
  std::vector<Element> elements;
  bool little_endian = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "comment") continue;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      require(fmt == "binary_little_endian", Errc::parse_error,
              "only binary little-endian PLY is supported (" + path.string() + ")");
      little_endian = true;
    } else if (kw == "element") {
      Element e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (kw == "property") {
      require(!elements.empty(), Errc::parse_error, "property before element in " + path.string());
      std::string type;
      ss >> type;
      PlyProperty p;
      if (type == "list") {
        std::string count_type, value_type;
        ss >> count_type >> value_type >> p.name;
        p.is_list = true;
        p.count_size = ply_type_size(count_type);
        p.byte_size = ply_type_size(value_type);
        elements.back().floating.push_back(false);
      } else {
        ss >> p.name;
        p.byte_size = ply_type_size(type);
        elements.back().floating.push_back(type == "float" || type == "float32" ||
                                           type == "double" || type == "float64");
      }
      elements.back().props.push_back(p);
    } else if (kw == "end_header") {
      break;
    }
  }
  require(little_endian, Errc::parse_error, "missing PLY format line in " + path.string());

  TriMesh mesh;
  std::vector<int> face;
  for (const Element& e : elements) {
    if (e.name == "vertex") {
      int xi = -1, yi = -1, zi = -1;
      for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
        if (e.props[static_cast<std::size_t>(p)].name == "x") xi = p;
        if (e.props[static_cast<std::size_t>(p)].name == "y") yi = p;
        if (e.props[static_cast<std::size_t>(p)].name == "z") zi = p;
      }
      require(xi >= 0 && yi >= 0 && zi >= 0, Errc::parse_error,
              "PLY vertex element lacks x/y/z in " + path.string());
      mesh.vertices.reserve(e.count);
      for (std::size_t i = 0; i < e.count; ++i) {
        Vec3 v = Vec3::Zero();
        for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
          const auto& prop = e.props[static_cast<std::size_t>(p)];
          require(!prop.is_list, Errc::parse_error, "list property on PLY vertices");
          const double value = ply_read_scalar(in, prop.byte_size, e.floating[static_cast<std::size_t>(p)]);
          if (p == xi) v.x() = value;
          if (p == yi) v.y() = value;
          if (p == zi) v.z() = value;
        }
        mesh.vertices.push_back(v);
      }
    } else if (e.name == "face") {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& prop : e.props) {
          if (prop.is_list) {
            const auto count = static_cast<std::size_t>(ply_read_scalar(in, prop.count_size, false));
            face.clear();
            for (std::size_t k = 0; k < count; ++k) {
              face.push_back(static_cast<int>(ply_read_scalar(in, prop.byte_size, false)));
            }
            require(face.size() >= 3, Errc::parse_error,
                    "face with fewer than 3 vertices in " + path.string());
            for (std::size_t k = 1; k + 1 < face.size(); ++k) {
              mesh.triangles.push_back({face[0], face[k], face[k + 1]});
            }
          } else {
            ply_read_scalar(in, prop.byte_size, false);  // skip
          }
        }
      }
    } else {
      // Skip unknown fixed-size elements.
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& prop : e.props) {
          require(!prop.is_list, Errc::parse_error,
                  "cannot skip list element '" + e.name + "' in " + path.string());
          ply_read_scalar(in, prop.byte_size, false);
        }
      }
    }
  }
  check_indices(mesh, path.string());
  return mesh;
}

}  // namespace

TriMesh load_mesh(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), Errc::file_not_found, "no such file: " + path.string());
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return load_obj(path);
  if (ext == ".ply") return load_ply(path);
  fail(Errc::bad_argument, "unsupported mesh format: " + path.string());
}

void save_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), Errc::io_error, "cannot write " + path.string());
  out.precision(9);
  for (const Vec3& v : mesh.vertices) {
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  }
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

NormalizeResult normalize_unit_sphere(const TriMesh& mesh) {
  require(!mesh.vertices.empty(), Errc::contract_violation, "normalize of empty mesh");
  Vec3 lo, hi;
  mesh.bounding_box(lo, hi);
  const Vec3 offset = 0.5 * (lo + hi);
  double max_norm = 0.0;
  for (const Vec3& v : mesh.vertices) max_norm = std::max(max_norm, (v - offset).norm());
  require(max_norm > 0.0, Errc::contract_violation, "degenerate mesh: all vertices coincide");
  NormalizeResult result;
  result.offset = offset;
  result.scale = 1.0 / max_norm;
  result.mesh.triangles = mesh.triangles;
  result.mesh.vertices.reserve(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) result.mesh.vertices.push_back((v - offset) * result.scale);
  return result;
}

namespace {

std::map<std::pair<int, int>, int> edge_use_counts(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      int a = t[static_cast<std::size_t>(k)];
      int b = t[static_cast<std::size_t>((k + 1) % 3)];
      if (a > b) std::swap(a, b);
      ++counts[{a, b}];
    }
  }
  return counts;
}

}  // namespace

bool has_open_edges(const TriMesh& mesh) {
  for (const auto& [edge, count] : edge_use_counts(mesh)) {
    if (count == 1) return true;
  }
  return false;
}

bool is_edge_manifold(const TriMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  for (const auto& [edge, count] : edge_use_counts(mesh)) {
    if (count != 2) return false;
  }
  return true;
}

TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center) {
  require(subdivisions >= 0 && subdivisions <= 9, Errc::bad_argument,
          "icosphere subdivisions out of range (each level quadruples the triangle count)");
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh mesh;
  mesh.vertices = {
      {-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi},  {0, 1, phi},
      {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},  {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1},
  };
  for (Vec3& v : mesh.vertices) v.normalize();
  mesh.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
                    {5, 11, 4}, {11, 10, 2}, {10, 7, 6},  {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
                    {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
                    {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (mesh.vertices[static_cast<std::size_t>(a)] + mesh.vertices[static_cast<std::size_t>(b)]).normalized();
      mesh.vertices.push_back(m);
      const int idx = static_cast<int>(mesh.vertices.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(mesh.triangles.size() * 4);
    for (const auto& t : mesh.triangles) {
      const int ab = mid(t[0], t[1]);
      const int bc = mid(t[1], t[2]);
      const int ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.triangles = std::move(next);
  }
  for (Vec3& v : mesh.vertices) v = center + radius * v;
  return mesh;
}

TriMesh make_box_mesh(const Vec3& half_extents, const Vec3& center) {
  TriMesh mesh;
  for (int i = 0; i < 8; ++i) {
    Vec3 corner((i & 1) ? half_extents.x() : -half_extents.x(),
                (i & 2) ? half_extents.y() : -half_extents.y(),
                (i & 4) ? half_extents.z() : -half_extents.z());
    mesh.vertices.push_back(center + corner);
  }
  // Two triangles per face, outward orientation.
  mesh.triangles = {
      {0, 2, 3}, {0, 3, 1},  // z = -hz
      {4, 5, 7}, {4, 7, 6},  // z = +hz
      {0, 1, 5}, {0, 5, 4},  // y = -hy
      {2, 6, 7}, {2, 7, 3},  // y = +hy
      {0, 4, 6}, {0, 6, 2},  // x = -hx
      {1, 3, 7}, {1, 7, 5},  // x = +hx
  };
  return mesh;
}

TriMesh make_torus_mesh(double major_radius, double minor_radius, int major_segments,
                        int minor_segments, const Vec3& center) {
  TriMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(major_segments * minor_segments));
  for (int i = 0; i < major_segments; ++i) {
    const double u = 2.0 * M_PI * i / major_segments;
    for (int j = 0; j < minor_segments; ++j) {
      const double v = 2.0 * M_PI * j / minor_segments;
      const double ring = major_radius + minor_radius * std::cos(v);
      mesh.vertices.push_back(center + Vec3(ring * std::cos(u), ring * std::sin(u),
                                            minor_radius * std::sin(v)));
    }
  }
  auto vid = [&](int i, int j) {
    return ((i % major_segments) * minor_segments) + (j % minor_segments);
  };
  for (int i = 0; i < major_segments; ++i) {
    for (int j = 0; j < minor_segments; ++j) {
      const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
      mesh.triangles.push_back({a, b, c});
      mesh.triangles.push_back({a, c, d});
    }
  }
  return mesh;
}

}  // namespace psdf
