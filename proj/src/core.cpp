// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/core.hpp"

namespace fringeforge {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonOrthonormalRotation: return "NonOrthonormalRotation";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::DegenerateCloud: return "DegenerateCloud";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::AllStepsFailed: return "AllStepsFailed";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1));
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fringeforge
