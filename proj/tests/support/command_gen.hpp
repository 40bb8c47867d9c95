#pragma once

// Random command envelopes and vehicle profiles for property checks.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "avguard/command_space.hpp"

namespace testing_support {

using avguard::command::AuxCommand;
using avguard::command::CommandEnvelope;
using avguard::command::DriveCommand;
using avguard::command::Speed;
using avguard::command::SteeringAngle;
using avguard::command::VehicleProfile;

inline std::string random_speaker(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"turn", " ", "left", "\"", "\\", "é", "東", "🚗", "\n", "{", "}", "ok"};
  std::uniform_int_distribution<std::size_t> len(0, 12), pick(0, pieces.size() - 1);
  std::string s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) s += pieces[pick(rng)];
  return s;
}

inline CommandEnvelope random_envelope(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1), sections(0, 2);
  std::uniform_real_distribution<double> steer(-120.0, 120.0), speed(0.0, 150.0);
  CommandEnvelope e;
  const int which = sections(rng);
  if (which != 1) {
    double s = steer(rng), v = speed(rng);
    if (coin(rng)) {
      s = std::round(s * 10) / 10;
      v = std::round(v * 10) / 10;
    }
    e.drive = DriveCommand{SteeringAngle(s), Speed(v)};
  }
  if (which != 0) {
    AuxCommand aux;
    auto maybe = [&](std::optional<bool>& f) {
      if (coin(rng)) f = coin(rng) == 1;
    };
    maybe(aux.alarm);
    maybe(aux.ramp);
    maybe(aux.wiper);
    maybe(aux.door);
    if (coin(rng)) aux.speaker = random_speaker(rng);
    e.aux = aux;
  }
  return e;
}

inline VehicleProfile random_profile(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_real_distribution<double> lo(-60.0, -1.0), hi(1.0, 60.0), vmax(5.0, 120.0);
  VehicleProfile p;
  p.steer_min_deg = lo(rng);
  p.steer_max_deg = hi(rng);
  p.speed_max_kmh = vmax(rng);
  p.aux_enabled = {coin(rng) == 1, coin(rng) == 1, coin(rng) == 1, coin(rng) == 1, coin(rng) == 1};
  p.speaker_max_chars = std::uniform_int_distribution<std::size_t>(0, 20)(rng);
  return p;
}

}  // namespace testing_support
