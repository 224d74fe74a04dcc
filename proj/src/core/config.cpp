#include "config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "error.hpp"

namespace fmreg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  fail(ErrorCode::InvalidArgument, "config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

double to_double(const std::string& key, const std::string& v) {
  const std::string s = unquote(v);
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(d)) bad_value(key, v, "a finite number");
  return d;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const std::string s = unquote(v);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) bad_value(key, v, "a non-negative integer");
  errno = 0;
  const auto n = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) bad_value(key, v, "a 64-bit integer");
  return n;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string s = unquote(v);
  if (s == "true") return true;
  if (s == "false") return false;
  bad_value(key, v, "true or false");
}

Vec3 to_vec3(const std::string& key, const std::string& v) {
  std::string s = trim(v);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']') bad_value(key, v, "[x, y, z]");
  s = s.substr(1, s.size() - 2);
  Vec3 out;
  std::istringstream in(s);
  std::string part;
  int n = 0;
  while (std::getline(in, part, ',')) {
    if (n == 3) bad_value(key, v, "[x, y, z]");
    out[n++] = to_double(key, trim(part));
  }
  if (n != 3) bad_value(key, v, "[x, y, z]");
  return out;
}

std::string fmt(double d) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, d);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string fmt(const Vec3& v) { return "[" + fmt(v.x()) + ", " + fmt(v.y()) + ", " + fmt(v.z()) + "]"; }
std::string quote(const std::string& s) { return "\"" + s + "\""; }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FM_DOUBLE(name, expr)                                                                 \
  Field { name, [](RunConfig& c, const std::string& v) { c.expr = to_double(name, v); },      \
          [](const RunConfig& c) { return fmt(c.expr); } }
#define FM_SIZE(name, expr)                                                                                \
  Field { name, [](RunConfig& c, const std::string& v) { c.expr = static_cast<std::size_t>(to_u64(name, v)); }, \
          [](const RunConfig& c) { return std::to_string(c.expr); } }
#define FM_BOOL(name, expr)                                                              \
  Field { name, [](RunConfig& c, const std::string& v) { c.expr = to_bool(name, v); },   \
          [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); } }
#define FM_STRING(name, expr)                                                          \
  Field { name, [](RunConfig& c, const std::string& v) { c.expr = unquote(trim(v)); }, \
          [](const RunConfig& c) { return quote(c.expr); } }
#define FM_VEC3(name, expr)                                                              \
  Field { name, [](RunConfig& c, const std::string& v) { c.expr = to_vec3(name, v); },   \
          [](const RunConfig& c) { return fmt(c.expr); } }

const std::vector<Field>& field_table() {
  static const std::vector<Field> table = {
      FM_STRING("profile", profile),
      Field{"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      Field{"threads", [](RunConfig& c, const std::string& v) { c.threads = static_cast<unsigned>(to_u64("threads", v)); },
            [](const RunConfig& c) { return std::to_string(c.threads); }},
      FM_STRING("scene.model", scene.model),
      FM_DOUBLE("scene.voxel", scene.voxel),
      FM_DOUBLE("scene.model_spacing", scene.model_spacing),
      FM_VEC3("scene.bounds_lo", scene.bounds.lo),
      FM_VEC3("scene.bounds_hi", scene.bounds.hi),
      Field{"scene.rotation", [](RunConfig& c, const std::string& v) { c.scene.bounds.rotation = parse_rotation_mode(unquote(trim(v))); },
            [](const RunConfig& c) { return quote(to_string(c.scene.bounds.rotation)); }},
      FM_SIZE("scene.instances_min", scene.instances_min),
      FM_SIZE("scene.instances_max", scene.instances_max),
      FM_DOUBLE("scene.separation_factor", scene.separation_factor),
      FM_DOUBLE("scene.clutter_fraction", scene.clutter_fraction),
      Field{"scene.surface", [](RunConfig& c, const std::string& v) { c.scene.surface = parse_clutter_surface(unquote(trim(v))); },
            [](const RunConfig& c) { return quote(to_string(c.scene.surface)); }},
      FM_DOUBLE("scene.noise_sigma", scene.noise_sigma),
      FM_DOUBLE("scene.occlusion_min", scene.occlusion_min),
      FM_DOUBLE("scene.occlusion_max", scene.occlusion_max),
      Field{"descriptor.kind", [](RunConfig& c, const std::string& v) { c.descriptor.kind = parse_provider_kind(unquote(trim(v))); },
            [](const RunConfig& c) { return quote(to_string(c.descriptor.kind)); }},
      FM_DOUBLE("descriptor.sigma_f", descriptor.sigma_f),
      FM_DOUBLE("descriptor.radius_factor", descriptor_radius_factor),
      FM_SIZE("descriptor.dim", descriptor.dim),
      FM_BOOL("focus.oracle", focus_oracle),
      FM_DOUBLE("focus.sampled_voxel_factor", sampled_voxel_factor),
      FM_DOUBLE("focus.eps_factor", focus.eps_factor),
      FM_SIZE("focus.min_pts", focus.min_pts),
      FM_DOUBLE("focus.mask_threshold", focus.mask_threshold),
      FM_DOUBLE("focus.proposal_scale", focus.proposal_scale),
      FM_SIZE("focus.max_points", focus.max_points),
      FM_SIZE("focus.geo_width", focus.geo_width),
      FM_SIZE("focus.geo_knn", focus.geo_knn),
      FM_BOOL("match.oracle", match_oracle),
      FM_DOUBLE("match.anchor_voxel_factor", anchor_voxel_factor),
      FM_SIZE("match.coarse_k", match.coarse_k),
      FM_SIZE("match.k", match.dense.k),
      FM_SIZE("match.iterations", match.dense.iterations),
      FM_DOUBLE("match.dustbin", match.dense.dustbin),
      FM_DOUBLE("match.score_scale", match.dense.score_scale),
      FM_DOUBLE("match.min_confidence", match.dense.min_confidence),
      FM_DOUBLE("match.mask_threshold", match.dense.mask_threshold),
      FM_DOUBLE("match.inlier_factor", inlier_factor),
      FM_SIZE("match.rounds", match.l2g.rounds),
      FM_DOUBLE("match.tighten_floor", match.l2g.tighten_floor),
      FM_SIZE("match.geo_width", match.geo_width),
      FM_SIZE("match.geo_knn", match.geo_knn),
      FM_DOUBLE("eval.rte_factor", thresholds.rte_factor),
      FM_DOUBLE("eval.rre_max", thresholds.rre_max),
      FM_DOUBLE("eval.center_tol_factor", thresholds.center_tol_factor),
      FM_DOUBLE("eval.pir_factor", thresholds.pir_factor),
      FM_STRING("io.scene", io.scene),
      FM_STRING("io.model", io.model),
      FM_STRING("io.manifest", io.manifest),
      FM_STRING("io.out", io.out),
      FM_STRING("io.descriptor_weights", io.descriptor_weights),
      FM_STRING("io.self_weights", io.self_weights),
      FM_STRING("io.cross_weights", io.cross_weights),
      FM_STRING("io.focus_heads", io.focus_heads),
      FM_STRING("io.match_heads", io.match_heads),
  };
  return table;
}

#undef FM_DOUBLE
#undef FM_SIZE
#undef FM_BOOL
#undef FM_STRING
#undef FM_VEC3

const Field& find_field(const std::string& key) {
  for (const auto& f : field_table())
    if (f.key == key) return f;
  fail(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

}  // namespace

DescriptorProviderConfig RunConfig::resolved_descriptor() const {
  auto d = descriptor;
  d.radius = descriptor_radius_factor * voxel();
  return d;
}

FocusParams RunConfig::resolved_focus() const {
  auto f = focus;
  f.sampled_voxel = sampled_voxel_factor * voxel();
  f.seed = seed;
  return f;
}

MatchParams RunConfig::resolved_match() const {
  auto m = match;
  m.anchor_voxel = anchor_voxel_factor * voxel();
  m.l2g.inlier_radius = inlier_factor * voxel();
  return m;
}

MetricThresholds RunConfig::resolved_thresholds() const {
  auto t = thresholds;
  t.voxel = voxel();
  return t;
}

void RunConfig::validate() const {
  scene.validate();
  require(descriptor_radius_factor > 0.0, "config: descriptor.radius_factor must be > 0");
  require(sampled_voxel_factor > 0.0, "config: focus.sampled_voxel_factor must be > 0");
  require(anchor_voxel_factor > 0.0, "config: match.anchor_voxel_factor must be > 0");
  require(inlier_factor > 0.0, "config: match.inlier_factor must be > 0");
  resolved_descriptor().validate();
  resolved_focus().validate();
  resolved_match().validate();
  resolved_thresholds().validate();
}

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, trim(value)); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : field_table()) out.push_back(f.key);
  return out;
}

std::string RunConfig::get(const std::string& key) const { return unquote(find_field(key).get(*this)); }

std::string RunConfig::echo() const {
  std::ostringstream out;
  std::string section;
  for (const auto& f : field_table()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << name << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    // strip comments outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorCode::Parse, origin + ":" + std::to_string(n) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Parse, origin + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorCode::Parse, origin + ":" + std::to_string(n) + ": empty key");
    out.emplace_back(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
  return out;
}

namespace {

RunConfig builtin_config(const std::string& name) {
  RunConfig c;
  c.profile = name;
  c.scene = builtin_profile(name);
  return c;
}

void apply_pairs(RunConfig& c, const std::vector<std::pair<std::string, std::string>>& pairs, const std::string& origin,
                 bool skip_profile) {
  for (const auto& [k, v] : pairs) {
    if (skip_profile && k == "profile") continue;
    try {
      c.set(k, v);
    } catch (const Error& e) {
      fail(e.code(), origin + ": " + e.what());
    }
  }
}

}  // namespace

RunConfig profile_config(const std::string& name) {
  for (const auto& b : builtin_profile_names())
    if (b == name) return builtin_config(name);
  const char* dir = std::getenv("FMREG_PROFILE_DIR");
  if (dir && *dir) {
    const auto path = std::filesystem::path(dir) / (name + ".toml");
    std::ifstream in(path);
    if (in) {
      std::stringstream ss;
      ss << in.rdbuf();
      RunConfig c = builtin_config("scan2cad-like");
      apply_pairs(c, parse_config_text(ss.str(), path.string()), path.string(), true);
      c.profile = name;
      return c;
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown profile '" + name + "' (built-in: scan2cad-like, robi-like; or set FMREG_PROFILE_DIR)");
}

RunConfig load_config(const std::string& config_text, const std::string& origin, const std::string& profile_override,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  const auto pairs = parse_config_text(config_text, origin);
  std::string profile = "scan2cad-like";
  for (const auto& [k, v] : pairs)
    if (k == "profile") profile = unquote(v);
  if (!profile_override.empty()) profile = profile_override;
  RunConfig c = profile_config(profile);
  apply_pairs(c, pairs, origin, true);
  apply_pairs(c, overrides, "override", false);
  c.profile = profile;
  c.validate();
  return c;
}

}  // namespace fmreg
