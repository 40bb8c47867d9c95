#pragma once

// Typed model of the vehicle command space: drive commands (steering angle,
// speed) crossed with auxiliary commands (alarm, ramp, wiper, door, speaker).

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace avguard::command {

/// Steering angle in degrees. Always finite.
class SteeringAngle {
 public:
  constexpr SteeringAngle() = default;
  explicit SteeringAngle(double degrees);
  constexpr double degrees() const noexcept { return degrees_; }
  friend constexpr bool operator==(SteeringAngle, SteeringAngle) = default;

 private:
  double degrees_ = 0.0;
};

/// Forward speed in km/h. Always finite and non-negative (no reverse).
class Speed {
 public:
  constexpr Speed() = default;
  explicit Speed(double kmh);
  constexpr double kmh() const noexcept { return kmh_; }
  friend constexpr bool operator==(Speed, Speed) = default;

 private:
  double kmh_ = 0.0;
};

struct DriveCommand {
  SteeringAngle steer;
  Speed speed;
  friend bool operator==(const DriveCommand&, const DriveCommand&) = default;
};

/// Auxiliary commands. An unset field means the command does not touch it.
struct AuxCommand {
  std::optional<bool> alarm;
  std::optional<bool> ramp;
  std::optional<bool> wiper;
  std::optional<bool> door;
  std::optional<std::string> speaker;

  bool empty() const noexcept {
    return !alarm && !ramp && !wiper && !door && !speaker;
  }
  friend bool operator==(const AuxCommand&, const AuxCommand&) = default;
};

/// Half-open byte range [begin, end) into the text a command was parsed from.
struct SourceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const SourceSpan&, const SourceSpan&) = default;
};

/// A parsed command. At least one of `drive` / `aux` is present; an aux
/// section with no fields set is a valid no-op.
struct CommandEnvelope {
  std::optional<DriveCommand> drive;
  std::optional<AuxCommand> aux;
  SourceSpan source_span;

  bool well_formed() const noexcept { return drive.has_value() || aux.has_value(); }

  /// Equality ignoring where the command came from.
  bool same_command(const CommandEnvelope& other) const noexcept {
    return drive == other.drive && aux == other.aux;
  }
  friend bool operator==(const CommandEnvelope&, const CommandEnvelope&) = default;
};

struct AuxAvailability {
  bool alarm = true;
  bool ramp = true;
  bool wiper = true;
  bool door = true;
  bool speaker = true;
  friend bool operator==(const AuxAvailability&, const AuxAvailability&) = default;
};

/// Per-vehicle-model bounds of the safe command space. Bounds are closed
/// intervals; speed is a magnitude cap, 0 <= v <= speed_max_kmh.
struct VehicleProfile {
  std::string name = "default";
  double steer_min_deg = -30.0;
  double steer_max_deg = 30.0;
  double speed_max_kmh = 40.0;
  AuxAvailability aux_enabled;
  std::size_t speaker_max_chars = 280;

  /// Throws Error(kInvalidArgument) unless steer_min < steer_max and speed_max > 0.
  void check() const;
  friend bool operator==(const VehicleProfile&, const VehicleProfile&) = default;
};

VehicleProfile profile_from_json(const nlohmann::json& j);
nlohmann::json profile_to_json(const VehicleProfile& profile);

// Field names used in violations, clamp records and the canonical syntax.
inline constexpr std::string_view kSteerField = "steer_deg";
inline constexpr std::string_view kSpeedField = "speed_kmh";

struct Violation {
  std::string field;
  std::string observed;
  std::string permitted;
  friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool valid() const noexcept { return violations.empty(); }
};

/// Checks every field; all failing fields are reported, not only the first.
ValidationResult validate_command(const CommandEnvelope& env, const VehicleProfile& profile);

struct ClampRecord {
  std::string field;
  std::string before;
  std::string after;
};

struct ClampResult {
  CommandEnvelope envelope;
  std::vector<ClampRecord> records;
};

/// Projects an envelope into the profile's safe space. Drive scalars move to
/// the nearest bound, emitted at 0.1 resolution; disabled or oversized aux
/// fields are dropped.
ClampResult clamp_to_safe(const CommandEnvelope& env, const VehicleProfile& profile);

enum class ParseMode { kStrict, kLenient };

/// Strict: exactly one structured command block, optionally fenced.
/// Lenient: first structured block, else `key: value` extraction.
CommandEnvelope parse_command(std::string_view text, ParseMode mode);

/// Every command in the text: all structured blocks, or the key-value
/// extraction when there are none. Empty when the text carries no command.
/// Throws kMalformedCommand when a command-looking region cannot be typed.
std::vector<CommandEnvelope> extract_commands(std::string_view text);

/// Canonical single-line rendering, e.g.
/// {"drive":{"steer_deg":10,"speed_kmh":25},"aux":{"alarm":1}}
std::string serialize_command(const CommandEnvelope& env);

}  // namespace avguard::command
