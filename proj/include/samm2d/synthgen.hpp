#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "samm2d/rng.hpp"
#include "samm2d/volume.hpp"

namespace samm2d {

struct GenParams {
  uint32_t dims[3] = {72, 72, 72};
  float spacing_mm[3] = {1.0f, 1.0f, 1.0f};
  int vessel_count = 3;
  float vessel_intensity = 1.0f;
  float vessel_radius_vox = 1.6f;
  float aneurysm_radius_range_vox[2] = {2.5f, 5.0f};
  float noise_sigma = 0.05f;
  float background_level = 0.1f;
  float prevalence = 0.4f;

  void validate() const;  // throws ConfigError
};

struct LabeledStudy {
  Volume volume;
  bool positive = false;
  // Present iff positive; 0/1 per voxel, same layout as the volume.
  std::vector<uint8_t> aneurysm_mask;
  uint64_t seed = 0;
};

enum class ForceLabel { none, positive, negative };

// Deterministic in (seed, params, force). Vessels are bright tubes along
// Catmull-Rom smoothed random walks (Gaussian intensity falloff from the
// centerline, max-blended); positive studies add a soft-edged sphere of the
// same peak intensity attached to a vessel, recorded in aneurysm_mask.
LabeledStudy gen_study(uint64_t seed, const GenParams& params,
                       ForceLabel force = ForceLabel::none);

struct ManifestRow {
  std::string file;
  int label = 0;
  uint64_t seed = 0;
};

// Writes n studies as MVOL files plus `manifest.csv` (columns file,label,seed)
// into out_dir. Positive studies also get a companion <stem>_mask.mvol with
// 0/1 voxels. Per-study seed = splitmix stream member i of `seed`.
// `header_lines` are prepended to the manifest as '#' comments.
std::vector<ManifestRow> gen_dataset(int n, const GenParams& params, uint64_t seed,
                                     const std::filesystem::path& out_dir,
                                     const std::vector<std::string>& header_lines = {});

std::vector<ManifestRow> load_manifest(const std::filesystem::path& csv_path);
void save_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& csv_path,
                   const std::vector<std::string>& header_lines = {});

inline std::filesystem::path mask_path_for(const std::filesystem::path& study_path) {
  std::filesystem::path p = study_path;
  p.replace_extension();
  p += "_mask.mvol";
  return p;
}

}  // namespace samm2d
