#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neat/camera.hpp"
#include "neat/fields.hpp"

// Synthetic ground truth: quasi-uniform camera rigs, ray-marched reference
// renders of the analytic scenes (shaded color + binary masks), and the
// on-disk dataset format shared by training and evaluation.
namespace neat::synth {

// 8-bit image, rows from the top-left corner, channels interleaved.
struct Image8 {
  int width = 0, height = 0, channels = 0;  // 1 = gray, 3 = RGB
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

// Lossless 8-bit PNG, gray or RGB. Errors name the offending path.
void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

struct SceneDataset {
  std::vector<Camera> cameras;
  std::vector<Image8> images;  // RGB renders
  std::vector<Image8> masks;   // gray, strictly {0, 255}
  fields::AnalyticScene scene;

  Scalar scene_radius() const { return scene.scene_radius; }
  int view_count() const { return static_cast<int>(cameras.size()); }
  void validate() const;  // throws SchemaError
};

// Quasi-uniform camera centers (Fibonacci lattice with a seeded azimuth
// rotation; pairwise geometry is seed-independent), all looking at the
// origin. count == 1 is the +z pole. The default field of view fits a unit
// bounding sphere seen from distance 3 with some margin.
std::vector<Camera> sample_viewpoints(int count, Scalar radius, std::uint64_t seed,
                                      int width = 64, int height = 64,
                                      Scalar vertical_fov = 0.75);

// First valid surface crossing along o + t d, t in [t_near, t_far]: fixed
// 512-cell sign scan of the closed-completion distance with bisection
// refinement; crossings inside excised (validity-0) regions are skipped.
struct RayHit {
  Scalar t = 0.0;
  Vec3 p = Vec3::Zero();
  int skipped = 0;  // excised crossings marched through before this hit
};
bool trace_ray(const fields::AnalyticScene& scene, const Vec3& o, const Vec3& d,
               Scalar t_near, Scalar t_far, RayHit* hit = nullptr);

struct RenderStats {
  int hit_pixels = 0;
  int background_pixels = 0;
  int skipped_crossings = 0;  // excised-surface crossings marched through
};

// Ground-truth render: per pixel, scan the bounding-sphere span of the
// pixel-center ray; the first valid crossing shades with the scene palette
// and sets mask 255; rays without one stay black. Optional depth output is
// the hit t, NaN elsewhere, indexed (row, column).
RenderStats reference_render(const fields::AnalyticScene& scene, const Camera& cam,
                             Image8& rgb, Image8& mask, Mat* depth = nullptr);

// Complete dataset for one scene: `count` viewpoints at 3 x scene radius,
// rendered at width x height.
SceneDataset make_dataset(const fields::AnalyticScene& scene, int count,
                          std::uint64_t seed, int width = 64, int height = 64);

// Directory layout: cameras.json, scene.json, rgb/view_###.png,
// mask/view_###.png. Reading re-validates everything; cameras round-trip
// exactly and images bit for bit.
void write_dataset(const SceneDataset& ds, const std::string& dir);
SceneDataset read_dataset(const std::string& dir);

}  // namespace neat::synth
