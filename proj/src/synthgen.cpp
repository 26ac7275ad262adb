#include "samm2d/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "samm2d/errors.hpp"

namespace samm2d {

namespace {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

Vec3 normalize(const Vec3& v) {
  const double n = v.norm();
  return n > 1e-12 ? v * (1.0 / n) : Vec3{1, 0, 0};
}

Vec3 random_unit(Rng& rng) {
  // Rejection-sampled direction; draw count varies but only with the rng
  // stream itself, so determinism is unaffected.
  for (;;) {
    Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v * (1.0 / n);
  }
}

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  return (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 +
          ((p1 - p2) * 3.0 + p3 - p0) * t3) *
         0.5;
}

// Max-blend a Gaussian-falloff stamp centered at p into the field.
void stamp_gaussian(std::vector<float>& field, const GenParams& gp, const Vec3& p, double radius,
                    double reach) {
  const int X = (int)gp.dims[0], Y = (int)gp.dims[1], Z = (int)gp.dims[2];
  const int x0 = std::max(0, (int)std::floor(p.x - reach));
  const int x1 = std::min(X - 1, (int)std::ceil(p.x + reach));
  const int y0 = std::max(0, (int)std::floor(p.y - reach));
  const int y1 = std::min(Y - 1, (int)std::ceil(p.y + reach));
  const int z0 = std::max(0, (int)std::floor(p.z - reach));
  const int z1 = std::min(Z - 1, (int)std::ceil(p.z + reach));
  const double inv2r2 = 1.0 / (2.0 * radius * radius);
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - p.x, dy = y - p.y, dz = z - p.z;
        const double d2 = dx * dx + dy * dy + dz * dz;
        const float v = (float)(gp.vessel_intensity * std::exp(-d2 * inv2r2));
        float& cell = field[((size_t)z * Y + y) * X + x];
        if (v > cell) cell = v;
      }
}

// Solid sphere with a ~1 voxel soft rim, same peak intensity as the vessels.
void stamp_sphere(std::vector<float>& field, const GenParams& gp, const Vec3& c, double radius) {
  const int X = (int)gp.dims[0], Y = (int)gp.dims[1], Z = (int)gp.dims[2];
  const double reach = radius + 2.0, edge = 1.0;
  const int x0 = std::max(0, (int)std::floor(c.x - reach));
  const int x1 = std::min(X - 1, (int)std::ceil(c.x + reach));
  const int y0 = std::max(0, (int)std::floor(c.y - reach));
  const int y1 = std::min(Y - 1, (int)std::ceil(c.y + reach));
  const int z0 = std::max(0, (int)std::floor(c.z - reach));
  const int z1 = std::min(Z - 1, (int)std::ceil(c.z + reach));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - c.x, dy = y - c.y, dz = z - c.z;
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        double v;
        if (d <= radius - edge) {
          v = gp.vessel_intensity;
        } else {
          const double over = d - (radius - edge);
          v = gp.vessel_intensity * std::exp(-(over * over) / (2.0 * (edge / 2.0) * (edge / 2.0)));
        }
        float& cell = field[((size_t)z * Y + y) * X + x];
        if ((float)v > cell) cell = (float)v;
      }
}

std::vector<Vec3> walk_centerline(Rng& rng, const GenParams& gp) {
  const double X = gp.dims[0], Y = gp.dims[1], Z = gp.dims[2];
  const double margin = 2.0, step = 4.0, jitter = 0.55;
  Vec3 p{rng.uniform(margin, X - margin), rng.uniform(margin, Y - margin),
         rng.uniform(margin, Z - margin)};
  Vec3 dir = random_unit(rng);
  std::vector<Vec3> control{p};
  for (int k = 0; k < 64; ++k) {
    dir = normalize(dir + random_unit(rng) * jitter);
    p = p + dir * step;
    if (p.x < margin || p.x > X - margin || p.y < margin || p.y > Y - margin || p.z < margin ||
        p.z > Z - margin)
      break;
    control.push_back(p);
  }
  // Catmull-Rom needs 4 control points; extend short walks by extrapolation.
  while (control.size() < 4) {
    const Vec3 last = control.back();
    const Vec3 prev = control.size() >= 2 ? control[control.size() - 2] : last - dir * step;
    control.push_back(last + (last - prev));
  }
  // Dense samples along the spline, ~0.5 voxel apart.
  std::vector<Vec3> samples;
  for (size_t i = 0; i + 3 < control.size(); ++i) {
    const double seg_len = (control[i + 2] - control[i + 1]).norm();
    const int steps = std::max(2, (int)std::ceil(seg_len / 0.5));
    for (int s = 0; s < steps; ++s)
      samples.push_back(
          catmull_rom(control[i], control[i + 1], control[i + 2], control[i + 3], (double)s / steps));
  }
  return samples;
}

}  // namespace

void GenParams::validate() const {
  for (int i = 0; i < 3; ++i)
    if (dims[i] < 16)
      throw ConfigError("gen: dims must be >= 16 per axis to contain a vessel, got " +
                        std::to_string(dims[i]));
  if (prevalence < 0.0f || prevalence > 1.0f)
    throw ConfigError("gen: prevalence must be in [0,1]");
  if (vessel_radius_vox <= 0.0f || aneurysm_radius_range_vox[0] <= 0.0f)
    throw ConfigError("gen: radii must be > 0");
  if (aneurysm_radius_range_vox[1] < aneurysm_radius_range_vox[0])
    throw ConfigError("gen: aneurysm radius range inverted");
  if (vessel_count < 0) throw ConfigError("gen: vessel_count must be >= 0");
  if (noise_sigma < 0.0f) throw ConfigError("gen: noise_sigma must be >= 0");
}

LabeledStudy gen_study(uint64_t seed, const GenParams& params, ForceLabel force) {
  params.validate();
  Rng rng(seed);

  LabeledStudy study;
  study.seed = seed;
  study.positive = force == ForceLabel::none ? rng.bernoulli(params.prevalence)
                                             : force == ForceLabel::positive;

  Volume& vol = study.volume;
  for (int i = 0; i < 3; ++i) {
    vol.dims[i] = params.dims[i];
    vol.spacing_mm[i] = params.spacing_mm[i];
  }
  const size_t count = vol.voxel_count();
  std::vector<float> field(count, 0.0f);

  std::vector<std::vector<Vec3>> centerlines;
  for (int v = 0; v < params.vessel_count; ++v) {
    centerlines.push_back(walk_centerline(rng, params));
    for (const Vec3& p : centerlines.back())
      stamp_gaussian(field, params, p, params.vessel_radius_vox, 3.0 * params.vessel_radius_vox);
  }

  if (study.positive) {
    const double r = rng.uniform(params.aneurysm_radius_range_vox[0],
                                 params.aneurysm_radius_range_vox[1]);
    // Keep the blob (center + max radius) inside a central cylinder so it
    // survives every MIP view, the 45-degree oblique resample, and a center
    // crop down to ~78% of the face.
    const double cx = params.dims[0] / 2.0, cy = params.dims[1] / 2.0;
    const double r_max = params.aneurysm_radius_range_vox[1];
    const double planar_max =
        std::max(0.30 * std::min(params.dims[0], params.dims[1]) - r_max, 1.0);
    const double z_mid = params.dims[2] / 2.0;
    const double z_lo = std::min(0.2 * params.dims[2] + r_max, z_mid - 1.0);
    const double z_hi = std::max(0.8 * params.dims[2] - r_max, z_mid + 1.0);
    auto in_safe_region = [&](const Vec3& p) {
      const double dx = p.x - cx, dy = p.y - cy;
      return std::sqrt(dx * dx + dy * dy) <= planar_max && p.z >= z_lo && p.z <= z_hi;
    };
    std::vector<Vec3> candidates;
    for (const auto& line : centerlines)
      for (const Vec3& p : line)
        if (in_safe_region(p)) candidates.push_back(p);

    Vec3 center;
    if (!candidates.empty()) {
      const Vec3 anchor = candidates[rng.next_index(candidates.size())];
      // Bulge off the vessel wall along a random perpendicular-ish offset.
      center = anchor + random_unit(rng) * (double)params.vessel_radius_vox;
    } else {
      center = Vec3{rng.uniform(cx - planar_max, cx + planar_max),
                    rng.uniform(cy - planar_max, cy + planar_max), rng.uniform(z_lo, z_hi)};
    }
    stamp_sphere(field, params, center, r);

    study.aneurysm_mask.assign(count, 0);
    const int X = (int)params.dims[0], Y = (int)params.dims[1], Z = (int)params.dims[2];
    for (int z = 0; z < Z; ++z)
      for (int y = 0; y < Y; ++y)
        for (int x = 0; x < X; ++x) {
          const double dx = x - center.x, dy = y - center.y, dz = z - center.z;
          if (dx * dx + dy * dy + dz * dz <= r * r)
            study.aneurysm_mask[((size_t)z * Y + y) * X + x] = 1;
        }
  }

  vol.voxels.resize(count);
  for (size_t i = 0; i < count; ++i)
    vol.voxels[i] =
        params.background_level + field[i] + (float)rng.gaussian(0.0, params.noise_sigma);

  vol.meta["label"] = study.positive ? "positive" : "negative";
  vol.meta["seed"] = std::to_string(seed);
  return study;
}

std::vector<ManifestRow> gen_dataset(int n, const GenParams& params, uint64_t seed,
                                     const std::filesystem::path& out_dir,
                                     const std::vector<std::string>& header_lines) {
  if (n < 1) throw ConfigError("gen: n must be >= 1");
  params.validate();
  std::filesystem::create_directories(out_dir);

  std::vector<ManifestRow> rows((size_t)n);
  std::exception_ptr err;  // OpenMP regions cannot leak exceptions
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      const uint64_t study_seed = derive_seed(seed, (uint64_t)i);
      LabeledStudy study = gen_study(study_seed, params);
      char name[32];
      std::snprintf(name, sizeof(name), "study_%05d.mvol", i);
      save_volume(study.volume, out_dir / name);
      if (study.positive) {
        Volume mask_vol = study.volume;
        mask_vol.meta.clear();
        for (size_t v = 0; v < mask_vol.voxels.size(); ++v)
          mask_vol.voxels[v] = study.aneurysm_mask[v] ? 1.0f : 0.0f;
        save_volume(mask_vol, mask_path_for(out_dir / name));
      }
      rows[(size_t)i] = {name, study.positive ? 1 : 0, study_seed};
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  save_manifest(rows, out_dir / "manifest.csv", header_lines);
  return rows;
}

void save_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& csv_path,
                   const std::vector<std::string>& header_lines) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw DataError("save_manifest: cannot write " + csv_path.string());
  for (const auto& line : header_lines) out << "# " << line << "\n";
  out << "file,label,seed\n";
  for (const auto& r : rows) out << r.file << "," << r.label << "," << r.seed << "\n";
  if (!out) throw DataError("save_manifest: write failed: " + csv_path.string());
}

std::vector<ManifestRow> load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("load_manifest: cannot open " + csv_path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "file,label,seed")
        throw DataError("load_manifest: unexpected header '" + line + "' in " + csv_path.string());
      saw_header = true;
      continue;
    }
    std::istringstream ss(line);
    ManifestRow row;
    std::string label_s, seed_s;
    if (!std::getline(ss, row.file, ',') || !std::getline(ss, label_s, ',') ||
        !std::getline(ss, seed_s))
      throw DataError("load_manifest: malformed row '" + line + "'");
    try {
      row.label = std::stoi(label_s);
      row.seed = std::stoull(seed_s);
    } catch (const std::exception&) {
      throw DataError("load_manifest: malformed row '" + line + "'");
    }
    if (row.label != 0 && row.label != 1)
      throw DataError("load_manifest: label must be 0 or 1, got " + label_s);
    rows.push_back(std::move(row));
  }
  if (!saw_header) throw DataError("load_manifest: missing header row in " + csv_path.string());
  return rows;
}

}  // namespace samm2d
