// SPDX-License-Identifier: Apache-2.0

#include "morphctl/morphology_io.h"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace morphctl {
namespace {

using nlohmann::json;

void RejectUnknown(const json& obj, const std::set<std::string>& allowed,
                   const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ParseError(path + "." + it.key() + ": unknown field");
    }
  }
}

const json& Field(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing field");
  return *it;
}

double Number(const json& obj, const char* key, const std::string& path) {
  const json& v = Field(obj, key, path);
  if (!v.is_number()) throw ParseError(path + "." + key + ": expected number");
  return v.get<double>();
}

int Integer(const json& obj, const char* key, const std::string& path) {
  const json& v = Field(obj, key, path);
  if (!v.is_number_integer()) throw ParseError(path + "." + key + ": expected integer");
  return v.get<int>();
}

template <std::size_t N>
std::array<double, N> NumberArray(const json& obj, const char* key, const std::string& path) {
  const json& v = Field(obj, key, path);
  const std::string p = path + "." + key;
  if (!v.is_array() || v.size() != N) {
    throw ParseError(p + ": expected array of " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number()) throw ParseError(p + "[" + std::to_string(i) + "]: expected number");
    out[i] = v[i].get<double>();
  }
  return out;
}

std::string Num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

template <std::size_t N>
std::string NumList(const std::array<double, N>& a) {
  std::string s = "[";
  for (std::size_t i = 0; i < N; ++i) {
    if (i) s += ", ";
    s += Num(a[i]);
  }
  return s + "]";
}

}  // namespace

MorphologyGraph ParseMorphology(std::string_view document, const SpaceConfig& space) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("$: malformed JSON: ") + e.what());
  }
  const std::string root_path = "$";
  if (!doc.is_object()) throw ParseError("$: expected object");
  RejectUnknown(doc, {"name", "nodes", "edges", "root"}, root_path);

  MorphologyGraph g;
  const json& name = Field(doc, "name", root_path);
  if (!name.is_string()) throw ParseError("$.name: expected string");
  g.name = name.get<std::string>();
  g.root = Integer(doc, "root", root_path);

  const json& nodes = Field(doc, "nodes", root_path);
  if (!nodes.is_array()) throw ParseError("$.nodes: expected array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string path = "$.nodes[" + std::to_string(i) + "]";
    const json& n = nodes[i];
    if (!n.is_object()) throw ParseError(path + ": expected object");
    RejectUnknown(n, {"kind", "radius", "length", "density", "attach_orientation", "attach_offset"},
                  path);
    ModuleNode m;
    const json& kind = Field(n, "kind", path);
    if (kind == "sphere") {
      m.kind = NodeKind::kSphere;
    } else if (kind == "cylinder") {
      m.kind = NodeKind::kCylinder;
    } else {
      throw ParseError(path + ".kind: expected \"sphere\" or \"cylinder\"");
    }
    m.radius = Number(n, "radius", path);
    m.length = Number(n, "length", path);
    m.density = Number(n, "density", path);
    m.attach_orientation = NumberArray<4>(n, "attach_orientation", path);
    m.attach_offset = NumberArray<3>(n, "attach_offset", path);
    g.nodes.push_back(m);
  }

  const json& edges = Field(doc, "edges", root_path);
  if (!edges.is_array()) throw ParseError("$.edges: expected array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string path = "$.edges[" + std::to_string(i) + "]";
    const json& e = edges[i];
    if (!e.is_object()) throw ParseError(path + ": expected object");
    RejectUnknown(e, {"parent", "child", "joints"}, path);
    Edge edge;
    edge.parent = Integer(e, "parent", path);
    edge.child = Integer(e, "child", path);
    const json& joints = Field(e, "joints", path);
    if (!joints.is_array()) throw ParseError(path + ".joints: expected array");
    for (std::size_t j = 0; j < joints.size(); ++j) {
      const std::string jp = path + ".joints[" + std::to_string(j) + "]";
      const json& jo = joints[j];
      if (!jo.is_object()) throw ParseError(jp + ": expected object");
      RejectUnknown(jo, {"axis", "range", "gear", "armature", "damping"}, jp);
      JointSpec js;
      js.axis = NumberArray<3>(jo, "axis", jp);
      const auto range = NumberArray<2>(jo, "range", jp);
      js.range_lo = range[0];
      js.range_hi = range[1];
      js.gear = Number(jo, "gear", jp);
      js.armature = Number(jo, "armature", jp);
      js.damping = Number(jo, "damping", jp);
      edge.joints.push_back(js);
    }
    g.edges.push_back(std::move(edge));
  }

  ValidationReport report = ValidateGraph(g, space);
  if (!report.ok()) {
    throw ValidationError("invalid morphology: " + report.ToString(), std::move(report));
  }
  return g;
}

std::string SerializeMorphology(const MorphologyGraph& graph, const SpaceConfig& space) {
  ValidationReport report = ValidateGraph(graph, space);
  if (!report.ok()) {
    throw ValidationError("cannot serialize invalid morphology: " + report.ToString(),
                          std::move(report));
  }
  const MorphologyGraph g = Canonicalize(graph);
  std::ostringstream os;
  os << "{\n  \"name\": " << json(g.name).dump() << ",\n  \"nodes\": [";
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const ModuleNode& m = g.nodes[i];
    os << (i ? ",\n" : "\n") << "    {\"kind\": \""
       << (m.kind == NodeKind::kSphere ? "sphere" : "cylinder") << "\", \"radius\": "
       << Num(m.radius) << ", \"length\": " << Num(m.length) << ", \"density\": "
       << Num(m.density) << ", \"attach_orientation\": " << NumList(m.attach_orientation)
       << ", \"attach_offset\": " << NumList(m.attach_offset) << "}";
  }
  os << (g.nodes.empty() ? "]" : "\n  ]") << ",\n  \"edges\": [";
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const Edge& e = g.edges[i];
    os << (i ? ",\n" : "\n") << "    {\"parent\": " << e.parent << ", \"child\": " << e.child
       << ", \"joints\": [";
    for (std::size_t j = 0; j < e.joints.size(); ++j) {
      const JointSpec& js = e.joints[j];
      os << (j ? ", " : "") << "{\"axis\": " << NumList(js.axis) << ", \"range\": ["
         << Num(js.range_lo) << ", " << Num(js.range_hi) << "], \"gear\": " << Num(js.gear)
         << ", \"armature\": " << Num(js.armature) << ", \"damping\": " << Num(js.damping)
         << "}";
    }
    os << "]}";
  }
  os << (g.edges.empty() ? "]" : "\n  ]") << ",\n  \"root\": " << g.root << "\n}\n";
  return os.str();
}

MorphologyGraph LoadMorphologyFile(const std::filesystem::path& path, const SpaceConfig& space) {
  std::ifstream in(path);
  if (!in) throw MorphologyError(path.string() + ": cannot open");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return ParseMorphology(buffer.str(), space);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what(), e.report());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void SaveMorphologyFile(const std::filesystem::path& path, const MorphologyGraph& g,
                        const SpaceConfig& space) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MorphologyError(path.string() + ": cannot open for writing");
  out << SerializeMorphology(g, space);
}

}  // namespace morphctl
