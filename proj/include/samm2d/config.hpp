#pragma once

#include <filesystem>
#include <string>

#include "samm2d/evaluation.hpp"
#include "samm2d/imaging.hpp"
#include "samm2d/model.hpp"
#include "samm2d/optim.hpp"
#include "samm2d/synthgen.hpp"
#include "samm2d/training.hpp"

namespace samm2d {

inline constexpr const char* kToolVersion = "samm2d 0.1.0";

// Everything a run needs, under one roof. Missing keys take the defaults
// below; unknown keys are rejected. The serialized form is canonical
// (sorted keys, compact) and is embedded in every report for provenance.
struct RunConfig {
  GenParams gen;
  PreprocConfig preproc;
  AugmentParams augment;
  ModelConfig model;
  OptimConfig optim;
  FocalParams focal;
  TrainConfig train;
  CostParams cost;

  // Parses JSON (comments allowed in files) and rejects unknown keys.
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);

  std::string to_json() const;
  void validate() const;
};

}  // namespace samm2d
