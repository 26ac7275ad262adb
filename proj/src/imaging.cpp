#include "samm2d/imaging.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "samm2d/errors.hpp"

namespace samm2d {

namespace {

constexpr double kPi = 3.14159265358979323846;

double mean_of(const std::vector<float>& xs) {
  double acc = 0.0;
  for (float x : xs) acc += x;
  return acc / (double)xs.size();
}

double std_of(const std::vector<float>& xs, double mean) {
  double acc = 0.0;
  for (float x : xs) {
    const double d = x - mean;
    acc += d * d;
  }
  return std::sqrt(acc / (double)xs.size());
}

// Trilinear sample with zero outside the grid.
float sample_trilinear(const Volume& v, double x, double y, double z) {
  const int X = (int)v.dims[0], Y = (int)v.dims[1], Z = (int)v.dims[2];
  const int x0 = (int)std::floor(x), y0 = (int)std::floor(y), z0 = (int)std::floor(z);
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  double acc = 0.0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
        if (xi < 0 || xi >= X || yi < 0 || yi >= Y || zi < 0 || zi >= Z) continue;
        const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
        acc += w * v.at((uint32_t)xi, (uint32_t)yi, (uint32_t)zi);
      }
  return (float)acc;
}

// Rotate 45 degrees about the Z axis through the XY center, resampling onto
// the same grid.
Volume rotate_z45(const Volume& v, bool nearest) {
  Volume out = v;
  const int X = (int)v.dims[0], Y = (int)v.dims[1], Z = (int)v.dims[2];
  const double cx = (X - 1) / 2.0, cy = (Y - 1) / 2.0;
  const double c = std::cos(kPi / 4.0), s = std::sin(kPi / 4.0);
#pragma omp parallel for schedule(static)
  for (int z = 0; z < Z; ++z)
    for (int y = 0; y < Y; ++y)
      for (int x = 0; x < X; ++x) {
        // Inverse rotation into source coordinates.
        const double rx = (x - cx) * c + (y - cy) * s + cx;
        const double ry = -(x - cx) * s + (y - cy) * c + cy;
        float val;
        if (nearest) {
          const int xi = (int)std::lround(rx), yi = (int)std::lround(ry);
          val = (xi < 0 || xi >= X || yi < 0 || yi >= Y)
                    ? 0.0f
                    : v.at((uint32_t)xi, (uint32_t)yi, (uint32_t)z);
        } else {
          val = sample_trilinear(v, rx, ry, (double)z);
        }
        out.voxels[((size_t)z * Y + y) * X + x] = val;
      }
  return out;
}

Image2D project_axis(const Volume& v, MipView view) {
  const int X = (int)v.dims[0], Y = (int)v.dims[1], Z = (int)v.dims[2];
  Image2D img;
  switch (view) {
    case MipView::axial: {  // max over Z -> (Y, X)
      img = Image2D::zeros(Y, X);
      for (int y = 0; y < Y; ++y)
        for (int x = 0; x < X; ++x) {
          float best = v.at((uint32_t)x, (uint32_t)y, 0);
          for (int z = 1; z < Z; ++z) best = std::max(best, v.at((uint32_t)x, (uint32_t)y, (uint32_t)z));
          img.at(y, x) = best;
        }
      return img;
    }
    case MipView::coronal:
    case MipView::oblique45: {  // max over Y -> (Z, X)
      img = Image2D::zeros(Z, X);
      for (int z = 0; z < Z; ++z)
        for (int x = 0; x < X; ++x) {
          float best = v.at((uint32_t)x, 0, (uint32_t)z);
          for (int y = 1; y < Y; ++y) best = std::max(best, v.at((uint32_t)x, (uint32_t)y, (uint32_t)z));
          img.at(z, x) = best;
        }
      return img;
    }
    case MipView::sagittal: {  // max over X -> (Z, Y)
      img = Image2D::zeros(Z, Y);
      for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y) {
          float best = v.at(0, (uint32_t)y, (uint32_t)z);
          for (int x = 1; x < X; ++x) best = std::max(best, v.at((uint32_t)x, (uint32_t)y, (uint32_t)z));
          img.at(z, y) = best;
        }
      return img;
    }
  }
  throw ConfigError("mip_project: unknown view");
}

Image2D resample_about_center(const Image2D& in, double angle_rad, double scale) {
  Image2D out = Image2D::zeros(in.height, in.width);
  const double cr = (in.height - 1) / 2.0, cc = (in.width - 1) / 2.0;
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  for (int r = 0; r < out.height; ++r)
    for (int col = 0; col < out.width; ++col) {
      // Inverse map: un-scale then un-rotate.
      const double dr = (r - cr) / scale, dc = (col - cc) / scale;
      const double sr = dc * s + dr * c + cr;
      const double sc = dc * c - dr * s + cc;
      const int r0 = (int)std::floor(sr), c0 = (int)std::floor(sc);
      const double fr = sr - r0, fc = sc - c0;
      double acc = 0.0;
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          const int ri = r0 + dy, ci = c0 + dx;
          if (ri < 0 || ri >= in.height || ci < 0 || ci >= in.width) continue;
          acc += (dy ? fr : 1.0 - fr) * (dx ? fc : 1.0 - fc) * in.at(ri, ci);
        }
      out.at(r, col) = (float)acc;
    }
  return out;
}

void hflip_inplace(Image2D& img) {
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width / 2; ++c) std::swap(img.at(r, c), img.at(r, img.width - 1 - c));
}

}  // namespace

size_t BinaryMask::count_on() const {
  size_t n = 0;
  for (uint8_t b : on) n += b;
  return n;
}

const char* view_name(MipView v) {
  switch (v) {
    case MipView::axial: return "axial";
    case MipView::coronal: return "coronal";
    case MipView::sagittal: return "sagittal";
    case MipView::oblique45: return "oblique45";
  }
  return "?";
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::A1_none: return "A1_none";
    case Regime::A2_geometric: return "A2_geometric";
    case Regime::A3_intensity: return "A3_intensity";
    case Regime::A4_combined: return "A4_combined";
    case Regime::A5_high_gamma: return "A5_high_gamma";
    case Regime::A6_high_lr: return "A6_high_lr";
  }
  return "?";
}

Regime regime_from_name(const std::string& name) {
  for (int i = 0; i < 6; ++i) {
    const Regime r = (Regime)i;
    if (name == regime_name(r)) return r;
    // Accept the short "A1".."A6" spelling too.
    if (name.size() == 2 && name == std::string(regime_name(r)).substr(0, 2)) return r;
  }
  throw ConfigError("unknown augmentation regime '" + name + "'");
}

void PreprocConfig::validate() const {
  if (!(0.0f <= clip_lo_pct && clip_lo_pct < clip_hi_pct && clip_hi_pct <= 100.0f))
    throw ConfigError("preproc: need 0 <= clip_lo_pct < clip_hi_pct <= 100");
  if (crop <= 0) throw ConfigError("preproc: crop must be > 0");
  if (salience_tail_k < 0.0f) throw ConfigError("preproc: salience_tail_k must be >= 0");
}

Image2D mip_project(const Volume& volume, MipView view) {
  for (int i = 0; i < 3; ++i)
    if (volume.dims[i] < 2) throw DataError("mip_project: volume dims must be >= 2 per axis");
  if (view == MipView::oblique45) {
    const Volume rotated = rotate_z45(volume, /*nearest=*/false);
    return project_axis(rotated, MipView::oblique45);
  }
  return project_axis(volume, view);
}

BinaryMask mip_project_mask(const std::vector<uint8_t>& mask, const Volume& volume, MipView view) {
  if (mask.size() != volume.voxel_count())
    throw DataError("mip_project_mask: mask size does not match volume");
  Volume tmp;
  for (int i = 0; i < 3; ++i) tmp.dims[i] = volume.dims[i];
  tmp.voxels.resize(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) tmp.voxels[i] = mask[i] ? 1.0f : 0.0f;
  Image2D proj;
  if (view == MipView::oblique45) {
    // Nearest-neighbor keeps the mask binary through the rotation.
    proj = project_axis(rotate_z45(tmp, /*nearest=*/true), MipView::oblique45);
  } else {
    proj = project_axis(tmp, view);
  }
  BinaryMask out{proj.height, proj.width, std::vector<uint8_t>(proj.count(), 0)};
  for (size_t i = 0; i < proj.pixels.size(); ++i) out.on[i] = proj.pixels[i] > 0.5f ? 1 : 0;
  return out;
}

float salience_score(const Image2D& image, float k) {
  if (image.count() == 0) throw DataError("salience_score: empty image");
  const double mu = mean_of(image.pixels);
  const double sigma = std_of(image.pixels, mu);
  if (sigma == 0.0) return 0.0f;
  const double thresh = mu + (double)k * sigma;
  size_t n = 0;
  for (float p : image.pixels)
    if ((double)p > thresh) ++n;
  return (float)((double)n / (double)image.count());
}

BestMip select_best_mip(const Volume& volume, const PreprocConfig& config) {
  config.validate();
  BestMip best;
  bool first = true;
  for (int vi = 0; vi < 4; ++vi) {
    const MipView view = (MipView)vi;
    Image2D img = mip_project(volume, view);
    const float score = salience_score(img, config.salience_tail_k);
    best.all_scores[vi] = score;
    if (first || score > best.score) {  // strict '>' keeps the smaller view id on ties
      best.image = std::move(img);
      best.view = view;
      best.score = score;
      first = false;
    }
  }
  return best;
}

Image2D percentile_clip(const Image2D& image, float lo_pct, float hi_pct) {
  if (!(lo_pct < hi_pct)) throw ConfigError("percentile_clip: lo must be < hi");
  if (image.count() == 0) throw DataError("percentile_clip: empty image");
  std::vector<float> sorted = image.pixels;
  std::sort(sorted.begin(), sorted.end());
  auto percentile = [&sorted](double pct) {
    const double rank = pct / 100.0 * (double)(sorted.size() - 1);
    const size_t lo = (size_t)std::floor(rank);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = rank - (double)lo;
    return (float)((1.0 - frac) * sorted[lo] + frac * sorted[hi]);
  };
  const float p_lo = percentile(lo_pct);
  const float p_hi = percentile(hi_pct);
  Image2D out = image;
  for (float& p : out.pixels) p = std::clamp(p, p_lo, p_hi);
  return out;
}

Image2D zscore(const Image2D& image) {
  if (image.count() == 0) throw DataError("zscore: empty image");
  const double mu = mean_of(image.pixels);
  const double sigma = std::max(std_of(image.pixels, mu), 1e-8);
  Image2D out = image;
  for (float& p : out.pixels) p = (float)(((double)p - mu) / sigma);
  return out;
}

Image2D center_crop(const Image2D& image, int size) {
  if (size <= 0) throw ConfigError("center_crop: size must be > 0");
  if (size > image.height || size > image.width)
    throw ShapeError("center_crop: size " + std::to_string(size) + " exceeds image " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  const int r0 = (image.height - size) / 2;
  const int c0 = (image.width - size) / 2;
  Image2D out = Image2D::zeros(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) out.at(r, c) = image.at(r0 + r, c0 + c);
  return out;
}

BinaryMask center_crop(const BinaryMask& mask, int size) {
  if (size <= 0) throw ConfigError("center_crop: size must be > 0");
  if (size > mask.height || size > mask.width)
    throw ShapeError("center_crop: size exceeds mask dims");
  const int r0 = (mask.height - size) / 2;
  const int c0 = (mask.width - size) / 2;
  BinaryMask out{size, size, std::vector<uint8_t>((size_t)size * size, 0)};
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      out.on[(size_t)r * size + c] = mask.on[(size_t)(r0 + r) * mask.width + (c0 + c)];
  return out;
}

Image2D augment(const Image2D& image, Regime regime, const AugmentParams& params, Rng& rng,
                uint64_t* counter) {
  if (regime == Regime::A1_none) return image;
  if (counter) ++*counter;

  const bool geometric = regime != Regime::A3_intensity;
  const bool intensity = regime != Regime::A2_geometric;
  Image2D img = image;

  if (geometric) {
    if (rng.next_double() < (double)params.hflip_p) hflip_inplace(img);
    const double angle = rng.uniform(-params.rot_deg_max, params.rot_deg_max) * kPi / 180.0;
    if (angle != 0.0) img = resample_about_center(img, angle, 1.0);
    const double scale = rng.uniform(params.scale_range[0], params.scale_range[1]);
    if (scale != 1.0) img = resample_about_center(img, 0.0, scale);
  }
  if (intensity) {
    const double brightness = rng.uniform(params.brightness_range[0], params.brightness_range[1]);
    if (brightness != 0.0)
      for (float& p : img.pixels) p = (float)(p + brightness);
    const double contrast = rng.uniform(params.contrast_range[0], params.contrast_range[1]);
    if (contrast != 1.0) {
      const double mu = mean_of(img.pixels);
      for (float& p : img.pixels) p = (float)((p - mu) * contrast + mu);
    }
    const double gamma = rng.uniform(params.gamma_range[0], params.gamma_range[1]);
    if (gamma != 1.0) {
      const auto [mn_it, mx_it] = std::minmax_element(img.pixels.begin(), img.pixels.end());
      const double mn = *mn_it, mx = *mx_it;
      if (mx > mn) {
        for (float& p : img.pixels) {
          const double u = ((double)p - mn) / (mx - mn);
          p = (float)(std::pow(u, gamma) * (mx - mn) + mn);
        }
      }
    }
    if (params.noise_sigma > 0.0f)
      for (float& p : img.pixels) p = (float)(p + rng.gaussian(0.0, params.noise_sigma));
  }
  return img;
}

Sample preprocess_study(const LabeledStudy& study, const PreprocConfig& config, Regime regime,
                        const AugmentParams& params, Rng& rng, uint64_t* aug_counter) {
  config.validate();
  BestMip best = select_best_mip(study.volume, config);
  Image2D img = percentile_clip(best.image, config.clip_lo_pct, config.clip_hi_pct);
  img = zscore(img);
  img = center_crop(img, config.crop);
  img = augment(img, regime, params, rng, aug_counter);

  Sample sample;
  sample.image = std::move(img);
  sample.label = study.positive ? 1 : 0;
  sample.seed = study.seed;
  if (study.positive && !study.aneurysm_mask.empty()) {
    BinaryMask proj = mip_project_mask(study.aneurysm_mask, study.volume, best.view);
    sample.mask = center_crop(proj, config.crop);
  }
  return sample;
}

// ---- sample cache -----------------------------------------------------------

namespace {

void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(reinterpret_cast<const char*>(p), n);
}

template <typename T>
void put(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}

}  // namespace

void save_sample(const Sample& sample, const std::filesystem::path& path) {
  const Image2D& img = sample.image;
  if ((int)img.pixels.size() != img.height * img.width)
    throw DataError("save_sample: pixel buffer does not match dims");
  const bool has_mask = sample.mask.has_value();
  if (has_mask && (sample.mask->height != img.height || sample.mask->width != img.width))
    throw DataError("save_sample: mask dims do not match image");

  std::string buf;
  put_bytes(buf, "MIP2", 4);
  put<uint16_t>(buf, kMip2Version);
  put<uint32_t>(buf, (uint32_t)img.height);
  put<uint32_t>(buf, (uint32_t)img.width);
  put<uint8_t>(buf, (uint8_t)sample.label);
  put<uint8_t>(buf, has_mask ? 1 : 0);
  const size_t payload_off = buf.size();
  put_bytes(buf, img.pixels.data(), img.pixels.size() * 4);
  if (has_mask) put_bytes(buf, sample.mask->on.data(), sample.mask->on.size());
  const uint32_t crc = (uint32_t)crc32(
      0L, reinterpret_cast<const Bytef*>(buf.data() + payload_off), (uInt)(buf.size() - payload_off));
  put<uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_sample: cannot write " + path.string());
  out.write(buf.data(), (std::streamsize)buf.size());
  if (!out) throw DataError("save_sample: write failed: " + path.string());
}

Sample load_sample(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_sample: cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  size_t pos = 0;
  auto need = [&](size_t n, const char* field) {
    if (pos + n > data.size())
      throw FormatError(FormatError::Kind::truncated,
                        "load_sample: truncated in " + std::string(field));
  };
  need(4, "magic");
  if (std::memcmp(data.data(), "MIP2", 4) != 0)
    throw FormatError(FormatError::Kind::bad_magic, "load_sample: bad magic in " + path.string());
  pos = 4;
  auto get = [&]<typename T>(T*, const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  };
  const uint16_t version = get((uint16_t*)nullptr, "version");
  if (version != kMip2Version)
    throw FormatError(FormatError::Kind::bad_field, "load_sample: unsupported version");
  const uint32_t h = get((uint32_t*)nullptr, "height");
  const uint32_t w = get((uint32_t*)nullptr, "width");
  const uint8_t label = get((uint8_t*)nullptr, "label");
  const uint8_t has_mask = get((uint8_t*)nullptr, "has_mask");
  if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
    throw FormatError(FormatError::Kind::bad_field, "load_sample: implausible dims");
  if (label > 1 || has_mask > 1)
    throw FormatError(FormatError::Kind::bad_field, "load_sample: bad label/mask flag");

  const size_t n = (size_t)h * w;
  const size_t payload_len = n * 4 + (has_mask ? n : 0);
  need(payload_len + 4, "payload");
  const char* payload = data.data() + pos;
  uint32_t stored_crc;
  std::memcpy(&stored_crc, data.data() + pos + payload_len, 4);
  const uint32_t crc =
      (uint32_t)crc32(0L, reinterpret_cast<const Bytef*>(payload), (uInt)payload_len);
  if (crc != stored_crc)
    throw FormatError(FormatError::Kind::crc_mismatch,
                      "load_sample: payload CRC mismatch in " + path.string());

  Sample s;
  s.image.height = (int)h;
  s.image.width = (int)w;
  s.image.pixels.resize(n);
  std::memcpy(s.image.pixels.data(), payload, n * 4);
  s.label = label;
  if (has_mask) {
    BinaryMask m{(int)h, (int)w, std::vector<uint8_t>(n)};
    std::memcpy(m.on.data(), payload + n * 4, n);
    s.mask = std::move(m);
  }
  for (float p : s.image.pixels)
    if (!std::isfinite(p))
      throw FormatError(FormatError::Kind::bad_field, "load_sample: non-finite pixel");
  return s;
}

void save_pgm(const Image2D& image, const std::filesystem::path& path) {
  const auto [mn_it, mx_it] = std::minmax_element(image.pixels.begin(), image.pixels.end());
  const float mn = *mn_it, mx = *mx_it;
  const float scale = mx > mn ? 255.0f / (mx - mn) : 0.0f;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_pgm: cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  for (float p : image.pixels)
    out.put((char)(uint8_t)std::clamp((p - mn) * scale, 0.0f, 255.0f));
}

}  // namespace samm2d
