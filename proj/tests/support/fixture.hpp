#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "reviewlens/classify/encoder.hpp"
#include "reviewlens/synthetic.hpp"

#ifndef REVIEWLENS_FIXTURE_DIR
#define REVIEWLENS_FIXTURE_DIR "fixtures"
#endif

namespace reviewlens::testing {

inline const std::string kFixtureModelId = "fixture/tiny-bert";

inline std::filesystem::path fixture_models_dir() { return REVIEWLENS_FIXTURE_DIR "/models"; }

/// Ensures the pre-trained tiny encoder exists on disk (building it takes a few seconds,
/// so it is cached across test binaries) and returns the models directory.
inline std::filesystem::path ensure_fixture_encoder() {
  const auto dir = fixture_models_dir();
  const auto target = dir / kFixtureModelId;
  if (!std::filesystem::exists(target / "model.safetensors")) {
    const auto staging = dir / ("staging-" + std::to_string(::getpid()));
    classify::save_encoder(synthetic::pretrained_fixture_encoder(), staging);
    std::filesystem::create_directories(target.parent_path());
    std::error_code ec;
    std::filesystem::rename(staging, target, ec);
    if (ec) std::filesystem::remove_all(staging);  // another process won the race
  }
  return dir;
}

/// Always loaded from disk so every test sees bit-identical weights.
inline const classify::EncoderModel& fixture_encoder() {
  static const classify::EncoderModel encoder = classify::load_encoder(ensure_fixture_encoder(), kFixtureModelId);
  return encoder;
}

}  // namespace reviewlens::testing
