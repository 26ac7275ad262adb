#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "samm2d/rng.hpp"
#include "samm2d/synthgen.hpp"
#include "samm2d/volume.hpp"

namespace samm2d {

struct Image2D {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major

  static Image2D zeros(int h, int w) { return {h, w, std::vector<float>((size_t)h * w, 0.0f)}; }
  float& at(int r, int c) { return pixels[(size_t)r * width + c]; }
  float at(int r, int c) const { return pixels[(size_t)r * width + c]; }
  size_t count() const { return pixels.size(); }
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> on;  // 0/1, row-major

  size_t count_on() const;
};

// Preprocessed training unit: one normalized MIP, its label, and (for
// positives) the projected aneurysm mask aligned to the image.
struct Sample {
  Image2D image;
  int label = 0;
  std::optional<BinaryMask> mask;
  uint64_t seed = 0;
};

enum class MipView : int { axial = 0, coronal = 1, sagittal = 2, oblique45 = 3 };
const char* view_name(MipView v);

struct PreprocConfig {
  float clip_lo_pct = 0.5f;
  float clip_hi_pct = 99.5f;
  int crop = 64;
  float salience_tail_k = 2.0f;

  void validate() const;
};

// Parameter pools for the augmentation regimes. A5/A6 reuse A4's transforms;
// their hyperparameter deltas (focal gamma, learning rates) are applied by
// the training module.
struct AugmentParams {
  float hflip_p = 0.5f;
  float rot_deg_max = 10.0f;
  float scale_range[2] = {0.9f, 1.1f};
  float brightness_range[2] = {-0.2f, 0.2f};
  float contrast_range[2] = {0.9f, 1.1f};
  float gamma_range[2] = {0.8f, 1.25f};
  float noise_sigma = 0.05f;
};

enum class Regime : int {
  A1_none = 0,
  A2_geometric = 1,
  A3_intensity = 2,
  A4_combined = 3,
  A5_high_gamma = 4,
  A6_high_lr = 5,
};
const char* regime_name(Regime r);
Regime regime_from_name(const std::string& name);  // throws ConfigError

// ---- projection and normalization ------------------------------------------

// Per-pixel max along the projection axis. oblique45 resamples the volume
// rotated 45 degrees about Z (trilinear, zero outside) and projects like
// coronal. Image layouts: axial (H=Y,W=X), coronal (H=Z,W=X), sagittal
// (H=Z,W=Y), oblique45 (H=Z,W=X).
Image2D mip_project(const Volume& volume, MipView view);
BinaryMask mip_project_mask(const std::vector<uint8_t>& mask, const Volume& volume, MipView view);

// Fraction of pixels above mean + k*std; 0 for constant images.
float salience_score(const Image2D& image, float k);

struct BestMip {
  Image2D image;
  MipView view;
  float score = 0.0f;
  float all_scores[4] = {0, 0, 0, 0};
};
// Scores all four views, returns the argmax; ties break toward the smaller
// view id (axial < coronal < sagittal < oblique45).
BestMip select_best_mip(const Volume& volume, const PreprocConfig& config);

// Percentiles by linear interpolation between closest ranks of the sorted
// pixel multiset; values clamped into [p_lo, p_hi].
Image2D percentile_clip(const Image2D& image, float lo_pct, float hi_pct);
Image2D zscore(const Image2D& image);
Image2D center_crop(const Image2D& image, int size);
BinaryMask center_crop(const BinaryMask& mask, int size);

// Applies the regime's transforms; A1 returns the input untouched. When
// `counter` is given it is incremented once per image that actually goes
// through the transform machinery (never for A1).
Image2D augment(const Image2D& image, Regime regime, const AugmentParams& params, Rng& rng,
                uint64_t* counter = nullptr);

// select_best_mip -> percentile_clip -> zscore -> center_crop -> augment.
// The mask (positives) is projected with the winning view and cropped
// identically; it sees no intensity ops.
Sample preprocess_study(const LabeledStudy& study, const PreprocConfig& config, Regime regime,
                        const AugmentParams& params, Rng& rng, uint64_t* aug_counter = nullptr);

// ---- sample cache -----------------------------------------------------------

// MIP2: "MIP2" magic, u16 version, u32 height, u32 width, u8 label,
// u8 has_mask, f32 pixel payload, u8 mask payload when present, trailing
// CRC32 over the payload bytes.
void save_sample(const Sample& sample, const std::filesystem::path& path);
Sample load_sample(const std::filesystem::path& path);

// 8-bit PGM with min..max stretched to 0..255, for quick eyeballing.
void save_pgm(const Image2D& image, const std::filesystem::path& path);

inline constexpr uint16_t kMip2Version = 1;

}  // namespace samm2d
