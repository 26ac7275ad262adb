#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <queue>
#include <set>

#include "samm2d/synthgen.hpp"
#include "samm2d/volume.hpp"

using namespace samm2d;
namespace fs = std::filesystem;

namespace {

GenParams small_params() {
  GenParams p;
  p.dims[0] = p.dims[1] = p.dims[2] = 32;
  p.vessel_count = 2;
  return p;
}

uint64_t checksum(const std::vector<float>& xs) {
  uint64_t h = 1469598103934665603ull;
  for (float x : xs) {
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, 4);
    h = (h ^ bits) * 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("gen_study is deterministic in (seed, params)") {
  const GenParams p = small_params();
  const LabeledStudy a = gen_study(99, p);
  const LabeledStudy b = gen_study(99, p);
  CHECK(a.positive == b.positive);
  CHECK(a.volume.voxels == b.volume.voxels);
  CHECK(a.aneurysm_mask == b.aneurysm_mask);
}

TEST_CASE("no vessels, no noise, forced negative gives a constant background") {
  GenParams p = small_params();
  p.vessel_count = 0;
  p.noise_sigma = 0.0f;
  const LabeledStudy s = gen_study(5, p, ForceLabel::negative);
  CHECK_FALSE(s.positive);
  CHECK(s.aneurysm_mask.empty());
  for (float v : s.volume.voxels) CHECK(v == doctest::Approx(p.background_level));
}

TEST_CASE("label frequency tracks prevalence (binomial 99% bound)") {
  GenParams p;
  p.dims[0] = p.dims[1] = p.dims[2] = 16;
  p.vessel_count = 0;
  p.noise_sigma = 0.0f;
  p.prevalence = 0.43f;
  int positives = 0;
  for (int i = 0; i < 1000; ++i) positives += gen_study(derive_seed(1, (uint64_t)i), p).positive;
  const double frac = positives / 1000.0;
  CHECK(frac > 0.38);
  CHECK(frac < 0.48);
}

TEST_CASE("rejects dims that cannot contain a vessel") {
  GenParams p = small_params();
  p.dims[1] = 15;
  CHECK_THROWS_AS(gen_study(1, p), ConfigError);
}

TEST_CASE("positive studies have a bright voxel inside a connected mask") {
  const GenParams p;  // defaults: 72^3
  for (uint64_t seed : {11ull, 23ull, 37ull}) {
    const LabeledStudy s = gen_study(seed, p, ForceLabel::positive);
    REQUIRE(s.positive);
    REQUIRE_FALSE(s.aneurysm_mask.empty());

    const float thresh = p.background_level + p.vessel_intensity / 2.0f;
    bool bright = false;
    size_t mask_count = 0, first = 0;
    for (size_t i = 0; i < s.aneurysm_mask.size(); ++i) {
      if (!s.aneurysm_mask[i]) continue;
      if (mask_count == 0) first = i;
      ++mask_count;
      if (s.volume.voxels[i] > thresh) bright = true;
    }
    REQUIRE(mask_count > 0);
    CHECK(bright);

    // Single 6-connected component: BFS from the first mask voxel.
    const int X = (int)p.dims[0], Y = (int)p.dims[1], Z = (int)p.dims[2];
    std::set<size_t> seen{first};
    std::queue<size_t> queue;
    queue.push(first);
    while (!queue.empty()) {
      const size_t cur = queue.front();
      queue.pop();
      const int x = (int)(cur % X), y = (int)((cur / X) % Y), z = (int)(cur / ((size_t)X * Y));
      const int deltas[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      for (const auto& d : deltas) {
        const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
        if (nx < 0 || nx >= X || ny < 0 || ny >= Y || nz < 0 || nz >= Z) continue;
        const size_t nidx = ((size_t)nz * Y + ny) * X + nx;
        if (s.aneurysm_mask[nidx] && !seen.count(nidx)) {
          seen.insert(nidx);
          queue.push(nidx);
        }
      }
    }
    CHECK(seen.size() == mask_count);
  }
}

TEST_CASE("distinct seeds give distinct volumes") {
  GenParams p;
  p.dims[0] = p.dims[1] = p.dims[2] = 24;
  p.vessel_count = 1;
  std::set<uint64_t> sums;
  for (uint64_t seed = 0; seed < 100; ++seed)
    sums.insert(checksum(gen_study(derive_seed(7, seed), p).volume.voxels));
  CHECK(sums.size() == 100);
}

TEST_CASE("gen_dataset writes studies, masks and a reloadable manifest") {
  const fs::path dir = fs::temp_directory_path() / "samm2d_test_gen";
  fs::remove_all(dir);
  GenParams p = small_params();
  p.prevalence = 0.5f;

  const auto rows = gen_dataset(10, p, 77, dir);
  REQUIRE(rows.size() == 10);
  const auto reloaded = load_manifest(dir / "manifest.csv");
  REQUIRE(reloaded.size() == 10);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(reloaded[i].file == rows[i].file);
    CHECK(reloaded[i].label == rows[i].label);
    CHECK(reloaded[i].seed == rows[i].seed);

    // Label in the manifest matches a regenerated study and the mask file
    // exists exactly for positives.
    const LabeledStudy regen = gen_study(rows[i].seed, p);
    CHECK((int)regen.positive == rows[i].label);
    CHECK(fs::exists(mask_path_for(dir / rows[i].file)) == (rows[i].label == 1));

    const Volume v = load_volume(dir / rows[i].file);
    CHECK(v.voxels == regen.volume.voxels);
  }
  fs::remove_all(dir);
}

TEST_CASE("gen_dataset positive count stays inside the binomial bound") {
  const fs::path dir = fs::temp_directory_path() / "samm2d_test_gen_binomial";
  fs::remove_all(dir);
  GenParams p;
  p.dims[0] = p.dims[1] = p.dims[2] = 16;
  p.vessel_count = 0;
  p.noise_sigma = 0.0f;
  p.prevalence = 0.4f;
  const auto rows = gen_dataset(500, p, 3, dir);
  int positives = 0;
  for (const auto& r : rows) positives += r.label;
  CHECK(positives >= 160);
  CHECK(positives <= 240);
  fs::remove_all(dir);
}
