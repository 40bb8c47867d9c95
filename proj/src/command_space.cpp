#include "avguard/command_space.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <nlohmann/json.hpp>

#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::command {

using nlohmann::json;

SteeringAngle::SteeringAngle(double degrees) : degrees_(degrees) {
  if (!std::isfinite(degrees)) throw Error(ErrorCode::kInvalidArgument, "steering angle must be finite");
  if (degrees_ == 0.0) degrees_ = 0.0;
}

Speed::Speed(double kmh) : kmh_(kmh) {
  if (!std::isfinite(kmh)) throw Error(ErrorCode::kInvalidArgument, "speed must be finite");
  if (kmh < 0.0) throw Error(ErrorCode::kInvalidArgument, "speed must be non-negative");
  if (kmh_ == 0.0) kmh_ = 0.0;
}

void VehicleProfile::check() const {
  if (!std::isfinite(steer_min_deg) || !std::isfinite(steer_max_deg) || !(steer_min_deg < steer_max_deg)) {
    throw Error(ErrorCode::kInvalidArgument, "profile '" + name + "': steer_min must be < steer_max");
  }
  if (!std::isfinite(speed_max_kmh) || !(speed_max_kmh > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "profile '" + name + "': speed_max must be > 0");
  }
}

VehicleProfile profile_from_json(const json& j) {
  VehicleProfile p;
  try {
    p.name = j.value("name", p.name);
    p.steer_min_deg = j.value("steer_min_deg", p.steer_min_deg);
    p.steer_max_deg = j.value("steer_max_deg", p.steer_max_deg);
    p.speed_max_kmh = j.value("speed_max_kmh", p.speed_max_kmh);
    p.speaker_max_chars = j.value("speaker_max_chars", p.speaker_max_chars);
    if (j.contains("aux_enabled")) {
      const auto& a = j.at("aux_enabled");
      p.aux_enabled.alarm = a.value("alarm", true);
      p.aux_enabled.ramp = a.value("ramp", true);
      p.aux_enabled.wiper = a.value("wiper", true);
      p.aux_enabled.door = a.value("door", true);
      p.aux_enabled.speaker = a.value("speaker", true);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("vehicle profile: ") + e.what());
  }
  p.check();
  return p;
}

json profile_to_json(const VehicleProfile& p) {
  return json{{"name", p.name},
              {"steer_min_deg", p.steer_min_deg},
              {"steer_max_deg", p.steer_max_deg},
              {"speed_max_kmh", p.speed_max_kmh},
              {"aux_enabled",
               {{"alarm", p.aux_enabled.alarm},
                {"ramp", p.aux_enabled.ramp},
                {"wiper", p.aux_enabled.wiper},
                {"door", p.aux_enabled.door},
                {"speaker", p.aux_enabled.speaker}}},
              {"speaker_max_chars", p.speaker_max_chars}};
}

namespace {

std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string interval(double lo, double hi) {
  return "[" + text::shortest_double(lo) + ", " + text::shortest_double(hi) + "]";
}

std::string flag_text(bool b) { return b ? "1" : "0"; }

std::string speaker_text(const std::string& s) { return "text(" + std::to_string(utf8_length(s)) + " chars)"; }

// Nearest 0.1-grid value to `bound` that still lies in [lo, hi]; the bound
// itself when the interval holds no grid point near it.
double grid_bound(double bound, double lo, double hi) {
  const double candidates[] = {std::round(bound * 10.0) / 10.0, std::floor(bound * 10.0) / 10.0,
                               std::ceil(bound * 10.0) / 10.0};
  for (double c : candidates) {
    if (c >= lo && c <= hi) return c;
  }
  return bound;
}

struct AuxField {
  std::string_view name;
  std::optional<bool> AuxCommand::*member;
  bool AuxAvailability::*enabled;
};

constexpr AuxField kFlagFields[] = {
    {"alarm", &AuxCommand::alarm, &AuxAvailability::alarm},
    {"ramp", &AuxCommand::ramp, &AuxAvailability::ramp},
    {"wiper", &AuxCommand::wiper, &AuxAvailability::wiper},
    {"door", &AuxCommand::door, &AuxAvailability::door},
};

}  // namespace

ValidationResult validate_command(const CommandEnvelope& env, const VehicleProfile& profile) {
  ValidationResult result;
  if (env.drive) {
    const double steer = env.drive->steer.degrees();
    if (steer < profile.steer_min_deg || steer > profile.steer_max_deg) {
      result.violations.push_back({std::string(kSteerField), text::shortest_double(steer),
                                   interval(profile.steer_min_deg, profile.steer_max_deg)});
    }
    const double speed = env.drive->speed.kmh();
    if (speed > profile.speed_max_kmh) {
      result.violations.push_back(
          {std::string(kSpeedField), text::shortest_double(speed), interval(0.0, profile.speed_max_kmh)});
    }
  }
  if (env.aux) {
    for (const auto& f : kFlagFields) {
      const auto& value = (*env.aux).*(f.member);
      if (value && !(profile.aux_enabled.*(f.enabled))) {
        result.violations.push_back({std::string(f.name), flag_text(*value), "disabled"});
      }
    }
    if (env.aux->speaker) {
      if (!profile.aux_enabled.speaker) {
        result.violations.push_back({"speaker", speaker_text(*env.aux->speaker), "disabled"});
      } else if (utf8_length(*env.aux->speaker) > profile.speaker_max_chars) {
        result.violations.push_back({"speaker", speaker_text(*env.aux->speaker),
                                     "text(<= " + std::to_string(profile.speaker_max_chars) + " chars)"});
      }
    }
  }
  return result;
}

ClampResult clamp_to_safe(const CommandEnvelope& env, const VehicleProfile& profile) {
  ClampResult out{env, {}};
  if (out.envelope.drive) {
    auto& drive = *out.envelope.drive;
    const double steer = drive.steer.degrees();
    if (steer < profile.steer_min_deg || steer > profile.steer_max_deg) {
      const double bound = steer < profile.steer_min_deg ? profile.steer_min_deg : profile.steer_max_deg;
      const double clamped = grid_bound(bound, profile.steer_min_deg, profile.steer_max_deg);
      out.records.push_back({std::string(kSteerField), text::shortest_double(steer), text::shortest_double(clamped)});
      drive.steer = SteeringAngle(clamped);
    }
    const double speed = drive.speed.kmh();
    if (speed > profile.speed_max_kmh) {
      const double clamped = grid_bound(profile.speed_max_kmh, 0.0, profile.speed_max_kmh);
      out.records.push_back({std::string(kSpeedField), text::shortest_double(speed), text::shortest_double(clamped)});
      drive.speed = Speed(clamped);
    }
  }
  if (out.envelope.aux) {
    auto& aux = *out.envelope.aux;
    for (const auto& f : kFlagFields) {
      auto& value = aux.*(f.member);
      if (value && !(profile.aux_enabled.*(f.enabled))) {
        out.records.push_back({std::string(f.name), flag_text(*value), "dropped"});
        value.reset();
      }
    }
    if (aux.speaker &&
        (!profile.aux_enabled.speaker || utf8_length(*aux.speaker) > profile.speaker_max_chars)) {
      out.records.push_back({"speaker", speaker_text(*aux.speaker), "dropped"});
      aux.speaker.reset();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical syntax

std::string serialize_command(const CommandEnvelope& env) {
  if (!env.well_formed()) throw Error(ErrorCode::kInvalidArgument, "envelope has neither drive nor aux");
  std::string out = "{";
  if (env.drive) {
    out += "\"drive\":{\"steer_deg\":" + text::shortest_double(env.drive->steer.degrees()) +
           ",\"speed_kmh\":" + text::shortest_double(env.drive->speed.kmh()) + "}";
  }
  if (env.aux) {
    if (env.drive) out += ",";
    out += "\"aux\":{";
    bool first = true;
    auto sep = [&] {
      if (!first) out += ",";
      first = false;
    };
    for (const auto& f : kFlagFields) {
      const auto& value = (*env.aux).*(f.member);
      if (value) {
        sep();
        out += "\"" + std::string(f.name) + "\":" + flag_text(*value);
      }
    }
    if (env.aux->speaker) {
      sep();
      out += "\"speaker\":" + json(*env.aux->speaker).dump();
    }
    out += "}";
  }
  out += "}";
  return out;
}

namespace {

[[noreturn]] void malformed(const std::string& why) { throw Error(ErrorCode::kMalformedCommand, why); }

double number_field(const json& obj, const char* key) {
  if (!obj.contains(key)) malformed(std::string("drive section missing '") + key + "'");
  const auto& v = obj.at(key);
  if (!v.is_number()) malformed(std::string("'") + key + "' is not a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) malformed(std::string("'") + key + "' is not finite");
  return d;
}

bool flag_value(const json& v, std::string_view key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() || v.is_number_unsigned()) {
    const auto i = v.get<long long>();
    if (i == 0 || i == 1) return i == 1;
  }
  malformed("'" + std::string(key) + "' must be 0 or 1");
}

DriveCommand make_drive(double steer, double speed) {
  if (speed < 0.0) malformed("negative speed (reverse) is not a supported command");
  return DriveCommand{SteeringAngle(steer), Speed(speed)};
}

CommandEnvelope type_block(const json& block, SourceSpan span) {
  CommandEnvelope env;
  env.source_span = span;
  for (const auto& [key, value] : block.items()) {
    if (key == "drive") {
      if (!value.is_object()) malformed("'drive' must be an object");
      for (const auto& [k, _] : value.items()) {
        if (k != kSteerField && k != kSpeedField) malformed("unknown drive field '" + k + "'");
      }
      env.drive = make_drive(number_field(value, "steer_deg"), number_field(value, "speed_kmh"));
    } else if (key == "aux") {
      if (!value.is_object()) malformed("'aux' must be an object");
      AuxCommand aux;
      for (const auto& [k, v] : value.items()) {
        if (k == "alarm") aux.alarm = flag_value(v, k);
        else if (k == "ramp") aux.ramp = flag_value(v, k);
        else if (k == "wiper") aux.wiper = flag_value(v, k);
        else if (k == "door") aux.door = flag_value(v, k);
        else if (k == "speaker") {
          if (!v.is_string()) malformed("'speaker' must be a string");
          aux.speaker = v.get<std::string>();
        } else {
          malformed("unknown aux field '" + k + "'");
        }
      }
      env.aux = std::move(aux);
    } else {
      malformed("unknown command section '" + key + "'");
    }
  }
  return env;
}

// End (exclusive) of the balanced {...} region starting at `open`, honoring
// JSON string literals; npos when unbalanced.
std::size_t matching_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

bool mentions_section(std::string_view s) {
  return s.find("\"drive\"") != std::string_view::npos || s.find("\"aux\"") != std::string_view::npos;
}

std::vector<CommandEnvelope> structured_blocks(std::string_view text) {
  std::vector<CommandEnvelope> found;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string_view::npos) {
    const std::size_t end = matching_brace(text, pos);
    if (end == std::string_view::npos) {
      if (mentions_section(text.substr(pos))) malformed("unterminated command block");
      ++pos;
      continue;
    }
    const auto candidate = text.substr(pos, end - pos);
    const json parsed = json::parse(candidate, nullptr, false);
    if (parsed.is_discarded()) {
      if (mentions_section(candidate)) malformed("command block is not valid JSON");
      ++pos;
      continue;
    }
    if (parsed.is_object() && (parsed.contains("drive") || parsed.contains("aux"))) {
      found.push_back(type_block(parsed, {pos, end}));
      pos = end;
    } else {
      ++pos;
    }
  }
  return found;
}

struct KvMatch {
  std::size_t begin;
  std::size_t end;
};

std::optional<CommandEnvelope> key_value_command(std::string_view text) {
  static const std::regex kSteer(R"(\b(steer_deg|steering_angle)\s*[:=]\s*([-+]?\d+(\.\d+)?))",
                                 std::regex::icase);
  static const std::regex kSpeed(R"(\b(speed_kmh|target_speed)\s*[:=]\s*([-+]?\d+(\.\d+)?))",
                                 std::regex::icase);
  static const std::regex kFlag(R"(\b(alarm|ramp|wiper|door)\s*[:=]\s*(0|1|on|off|true|false)\b)",
                                std::regex::icase);
  static const std::regex kSpeaker(R"re(\bspeaker\s*[:=]\s*"([^"]*)")re", std::regex::icase);

  using It = std::string_view::const_iterator;
  std::optional<KvMatch> extent;
  auto note = [&](const std::match_results<It>& m) {
    const auto b = static_cast<std::size_t>(m.position(0));
    const auto e = b + static_cast<std::size_t>(m.length(0));
    if (!extent) extent = KvMatch{b, e};
    extent->begin = std::min(extent->begin, b);
    extent->end = std::max(extent->end, e);
  };
  auto first = [&](const std::regex& re) -> std::optional<std::match_results<It>> {
    std::match_results<It> m;
    if (std::regex_search(text.begin(), text.end(), m, re)) return m;
    return std::nullopt;
  };

  const auto steer = first(kSteer);
  const auto speed = first(kSpeed);
  CommandEnvelope env;
  if (steer || speed) {
    if (!steer || !speed) malformed("drive command needs both steer_deg and speed_kmh");
    note(*steer);
    note(*speed);
    env.drive = make_drive(std::stod((*steer)[2].str()), std::stod((*speed)[2].str()));
  }
  AuxCommand aux;
  bool any_aux = false;
  for (auto it = std::regex_iterator<It>(text.begin(), text.end(), kFlag); it != std::regex_iterator<It>(); ++it) {
    const auto& m = *it;
    const auto key = text::ascii_lower(m[1].str());
    const auto val = text::ascii_lower(m[2].str());
    const bool on = val == "1" || val == "on" || val == "true";
    for (const auto& f : kFlagFields) {
      if (f.name == key && !(aux.*(f.member))) {
        aux.*(f.member) = on;
        any_aux = true;
        note(m);
      }
    }
  }
  if (const auto sp = first(kSpeaker)) {
    aux.speaker = (*sp)[1].str();
    any_aux = true;
    note(*sp);
  }
  if (any_aux) env.aux = std::move(aux);
  if (!env.well_formed()) return std::nullopt;
  env.source_span = {extent->begin, extent->end};
  return env;
}

}  // namespace

std::vector<CommandEnvelope> extract_commands(std::string_view text) {
  auto blocks = structured_blocks(text);
  if (!blocks.empty()) return blocks;
  if (auto kv = key_value_command(text)) return {std::move(*kv)};
  return {};
}

CommandEnvelope parse_command(std::string_view text, ParseMode mode) {
  if (text.empty()) throw Error(ErrorCode::kInvalidArgument, "empty text");
  auto blocks = structured_blocks(text);
  if (mode == ParseMode::kStrict) {
    if (blocks.empty()) throw Error(ErrorCode::kNoCommandFound, "no structured command block");
    if (blocks.size() > 1) {
      throw Error(ErrorCode::kAmbiguousCommand, std::to_string(blocks.size()) + " command blocks found");
    }
    return std::move(blocks.front());
  }
  if (!blocks.empty()) return std::move(blocks.front());
  if (auto kv = key_value_command(text)) return std::move(*kv);
  throw Error(ErrorCode::kNoCommandFound, "no command in text");
}

}  // namespace avguard::command
