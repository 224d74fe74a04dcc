#include "records.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "error.hpp"

namespace fmreg {

using nlohmann::json;

RegistrationRecord to_record(const std::string& scene_id, const InstanceRegistration& reg) {
  RegistrationRecord r;
  r.scene_id = scene_id;
  r.proposal_id = reg.proposal_id;
  r.center = reg.center;
  r.pose = reg.pose;
  r.inlier_count = reg.inlier_count;
  r.correspondences = reg.correspondences;
  r.failed = reg.failed;
  r.diagnostic = reg.diagnostic;
  return r;
}

std::string record_to_json(const RegistrationRecord& r) {
  json j;
  j["scene_id"] = r.scene_id;
  j["proposal_id"] = r.proposal_id;
  j["center"] = {r.center.x(), r.center.y(), r.center.z()};
  json R = json::array();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) R.push_back(r.pose.R(a, b));
  j["R"] = std::move(R);
  j["t"] = {r.pose.t.x(), r.pose.t.y(), r.pose.t.z()};
  j["inliers"] = r.inlier_count;
  j["correspondence_count"] = r.correspondences.size();
  j["failed"] = r.failed;
  j["diagnostic"] = r.diagnostic;
  json corr = json::array();
  for (const auto& c : r.correspondences)
    corr.push_back({c.scene_point.x(), c.scene_point.y(), c.scene_point.z(), c.model_point.x(), c.model_point.y(),
                    c.model_point.z(), c.weight});
  j["correspondences"] = std::move(corr);
  return j.dump();
}

namespace {

[[noreturn]] void bad(const std::string& origin, const std::string& field, const std::string& why) {
  fail(ErrorCode::Parse, origin + ": field '" + field + "': " + why);
}

double num(const json& v, const std::string& origin, const std::string& field) {
  if (!v.is_number()) bad(origin, field, "expected a number");
  return v.get<double>();
}

const json& field(const json& j, const char* key, const std::string& origin) {
  if (!j.contains(key)) bad(origin, key, "missing");
  return j.at(key);
}

}  // namespace

RegistrationRecord record_from_json(const std::string& line, const std::string& origin) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, origin + ": " + e.what());
  }
  if (!j.is_object()) bad(origin, "<root>", "expected an object");
  RegistrationRecord r;
  const auto& id = field(j, "scene_id", origin);
  if (!id.is_string()) bad(origin, "scene_id", "expected a string");
  r.scene_id = id.get<std::string>();
  const auto& pid = field(j, "proposal_id", origin);
  if (!pid.is_number_integer()) bad(origin, "proposal_id", "expected an integer");
  r.proposal_id = pid.get<std::size_t>();
  const auto& c = field(j, "center", origin);
  if (!c.is_array() || c.size() != 3) bad(origin, "center", "expected 3 numbers");
  for (int a = 0; a < 3; ++a) r.center[a] = num(c[static_cast<std::size_t>(a)], origin, "center");
  const auto& R = field(j, "R", origin);
  if (!R.is_array() || R.size() != 9) bad(origin, "R", "expected 9 numbers");
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r.pose.R(a, b) = num(R[static_cast<std::size_t>(3 * a + b)], origin, "R");
  const auto& t = field(j, "t", origin);
  if (!t.is_array() || t.size() != 3) bad(origin, "t", "expected 3 numbers");
  for (int a = 0; a < 3; ++a) r.pose.t[a] = num(t[static_cast<std::size_t>(a)], origin, "t");
  const auto& failed = field(j, "failed", origin);
  if (!failed.is_boolean()) bad(origin, "failed", "expected a boolean");
  r.failed = failed.get<bool>();
  if (j.contains("inliers")) r.inlier_count = static_cast<std::size_t>(num(j["inliers"], origin, "inliers"));
  if (j.contains("diagnostic") && j["diagnostic"].is_string()) r.diagnostic = j["diagnostic"].get<std::string>();
  if (j.contains("correspondences")) {
    const auto& list = j["correspondences"];
    if (!list.is_array()) bad(origin, "correspondences", "expected an array");
    for (const auto& e : list) {
      if (!e.is_array() || e.size() < 6) bad(origin, "correspondences", "expected [px,py,pz,qx,qy,qz(,w)] entries");
      Correspondence k;
      k.scene_point = {num(e[0], origin, "correspondences"), num(e[1], origin, "correspondences"), num(e[2], origin, "correspondences")};
      k.model_point = {num(e[3], origin, "correspondences"), num(e[4], origin, "correspondences"), num(e[5], origin, "correspondences")};
      k.weight = e.size() > 6 ? num(e[6], origin, "correspondences") : 1.0;
      r.correspondences.push_back(k);
    }
  }
  if (!r.failed && !r.pose.is_valid(1e-6)) fail(ErrorCode::Invariant, origin + ": pose rotation is not a valid rotation");
  return r;
}

void write_records(std::ostream& out, const std::vector<RegistrationRecord>& records) {
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

std::vector<RegistrationRecord> read_records(std::istream& in, const std::string& origin) {
  std::vector<RegistrationRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(record_from_json(line, origin + ":" + std::to_string(n)));
  }
  return out;
}

std::vector<RegistrationRecord> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open registrations '" + path + "'");
  return read_records(in, path);
}

}  // namespace fmreg
