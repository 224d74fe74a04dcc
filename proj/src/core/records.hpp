#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "matching.hpp"
#include "types.hpp"

namespace fmreg {

/// One line of a registrations JSONL file.
struct RegistrationRecord {
  std::string scene_id;
  std::size_t proposal_id = 0;
  Vec3 center = Vec3::Zero();
  RigidTransform pose;
  std::size_t inlier_count = 0;
  std::vector<Correspondence> correspondences;  ///< only points and weights are stored
  bool failed = false;
  std::string diagnostic;
};

RegistrationRecord to_record(const std::string& scene_id, const InstanceRegistration& reg);

/// Compact single-line JSON with round-trip exact doubles.
std::string record_to_json(const RegistrationRecord& record);
RegistrationRecord record_from_json(const std::string& line, const std::string& origin = "<record>");

void write_records(std::ostream& out, const std::vector<RegistrationRecord>& records);
/// Blank lines are skipped. Parse errors name the line.
std::vector<RegistrationRecord> read_records(std::istream& in, const std::string& origin);
std::vector<RegistrationRecord> read_records(const std::string& path);

}  // namespace fmreg
