#include "neat/synth.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "neat/renderer.hpp"
#include "neat/serialize.hpp"

namespace neat::synth {

namespace stdfs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG encode/decode. libpng reports errors by longjmp, so the calls live in
// plain functions whose locals need no destructors; the jump target cleans up
// manually and returns an error string for the wrappers to throw.

namespace {

bool write_png_impl(const char* path, const Image8& img, std::string* err) {
  std::FILE* fp = std::fopen(path, "wb");
  if (!fp) {
    *err = "cannot open for writing";
    return false;
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    if (png) png_destroy_write_struct(&png, nullptr);
    std::fclose(fp);
    *err = "allocation failure";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    *err = "encode failure";
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) {
    *err = "close failure";
    return false;
  }
  return true;
}

bool read_png_impl(const char* path, Image8* out, std::string* err) {
  std::FILE* fp = std::fopen(path, "rb");
  if (!fp) {
    *err = "cannot open";
    return false;
  }
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    *err = "not a PNG file";
    return false;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    if (png) png_destroy_read_struct(&png, nullptr, nullptr);
    std::fclose(fp);
    *err = "allocation failure";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    *err = "malformed file";
    return false;
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  // Normalize everything readable to 8-bit gray or RGB.
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (w <= 0 || h <= 0 || (ch != 1 && ch != 3) ||
      stride != static_cast<std::size_t>(w) * ch) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    *err = "unsupported pixel layout";
    return false;
  }
  out->width = w;
  out->height = h;
  out->channels = ch;
  out->pixels.assign(stride * h, 0);
  for (int y = 0; y < h; ++y) png_read_row(png, out->pixels.data() + y * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return true;
}

std::uint8_t quantize8(Scalar v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

std::string view_path(const std::string& dir, const char* sub, int i) {
  char name[32];
  std::snprintf(name, sizeof name, "view_%03d.png", i);
  return (stdfs::path(dir) / sub / name).string();
}

}  // namespace

void write_png(const std::string& path, const Image8& img) {
  if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3))
    throw SchemaError("png: image must be 8-bit gray or RGB: " + path);
  if (img.pixels.size() !=
      static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw SchemaError("png: pixel buffer does not match dimensions: " + path);
  std::string err;
  if (!write_png_impl(path.c_str(), img, &err)) throw SchemaError("png: " + err + ": " + path);
}

Image8 read_png(const std::string& path) {
  Image8 out;
  std::string err;
  if (!read_png_impl(path.c_str(), &out, &err)) throw SchemaError("png: " + err + ": " + path);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Camera> sample_viewpoints(int count, Scalar radius, std::uint64_t seed,
                                      int width, int height, Scalar vertical_fov) {
  if (count < 1) throw SchemaError("viewpoints: count must be at least 1");
  if (!(radius > 0.0)) throw SchemaError("viewpoints: radius must be positive");
  std::vector<Camera> cams;
  cams.reserve(count);
  if (count == 1) {
    cams.push_back(Camera::look_at(Vec3(0, 0, radius), Vec3::Zero(), width, height,
                                   vertical_fov));
    return cams;
  }
  std::mt19937_64 rng(seed);
  const Scalar azimuth = std::uniform_real_distribution<Scalar>(0.0, 2.0 * kPi)(rng);
  const Scalar golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const Scalar z = 1.0 - (2.0 * i + 1.0) / count;  // pole-free band centers
    const Scalar rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Scalar phi = golden * i + azimuth;
    const Vec3 eye = radius * Vec3(rho * std::cos(phi), rho * std::sin(phi), z);
    cams.push_back(Camera::look_at(eye, Vec3::Zero(), width, height, vertical_fov));
  }
  return cams;
}

bool trace_ray(const fields::AnalyticScene& scene, const Vec3& o, const Vec3& d,
               Scalar t_near, Scalar t_far, RayHit* hit) {
  if (hit) *hit = RayHit{};
  if (!(t_far > t_near)) return false;
  constexpr int kCells = 512;
  const Scalar dt = (t_far - t_near) / kCells;
  int skipped = 0;
  Scalar ta = t_near;
  Scalar fa = scene.sdf(o + ta * d);
  for (int cell = 0; cell < kCells; ++cell) {
    const Scalar tb = t_near + (cell + 1) * dt;
    const Scalar fb = scene.sdf(o + tb * d);
    // zero belongs to the non-positive side so a crossing landing exactly on
    // a cell boundary is detected once, not in both adjacent cells
    if ((fa > 0.0) != (fb > 0.0)) {
      Scalar lo = ta, hi = tb, flo = fa;
      for (int it = 0; it < 100; ++it) {
        const Scalar mid = 0.5 * (lo + hi);
        const Scalar fm = scene.sdf(o + mid * d);
        if ((flo <= 0.0) == (fm <= 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      const Scalar tc = 0.5 * (lo + hi);
      const Vec3 pc = o + tc * d;
      if (scene.valid(pc)) {
        if (hit) {
          hit->t = tc;
          hit->p = pc;
          hit->skipped = skipped;
        }
        return true;
      }
      ++skipped;  // excised region: march on to the next crossing
    }
    ta = tb;
    fa = fb;
  }
  if (hit) hit->skipped = skipped;
  return false;
}

RenderStats reference_render(const fields::AnalyticScene& scene, const Camera& cam,
                             Image8& rgb, Image8& mask, Mat* depth) {
  cam.validate();
  rgb = Image8(cam.width, cam.height, 3);
  mask = Image8(cam.width, cam.height, 1);
  if (depth)
    depth->setConstant(cam.height, cam.width, std::numeric_limits<Scalar>::quiet_NaN());
  RenderStats stats;
  for (int iy = 0; iy < cam.height; ++iy) {
    for (int ix = 0; ix < cam.width; ++ix) {
      const render::Ray ray = render::pixel_ray(cam, ix, iy, scene.scene_radius);
      RayHit h;
      if (ray.hits_bounds && trace_ray(scene, ray.o, ray.v, ray.t_near, ray.t_far, &h)) {
        ++stats.hit_pixels;
        mask.at(ix, iy) = 255;
        const Vec3 c = scene.color(h.p);
        for (int ch = 0; ch < 3; ++ch) rgb.at(ix, iy, ch) = quantize8(c[ch]);
        if (depth) (*depth)(iy, ix) = h.t;
      } else {
        ++stats.background_pixels;
      }
      stats.skipped_crossings += h.skipped;
    }
  }
  return stats;
}

SceneDataset make_dataset(const fields::AnalyticScene& scene, int count,
                          std::uint64_t seed, int width, int height) {
  scene.validate();
  SceneDataset ds;
  ds.scene = scene;
  ds.cameras = sample_viewpoints(count, 3.0 * scene.scene_radius, seed, width, height);
  ds.images.resize(ds.cameras.size());
  ds.masks.resize(ds.cameras.size());
  for (std::size_t i = 0; i < ds.cameras.size(); ++i)
    reference_render(scene, ds.cameras[i], ds.images[i], ds.masks[i]);
  return ds;
}

void SceneDataset::validate() const {
  scene.validate();
  if (cameras.empty()) throw SchemaError("dataset: no views");
  if (images.size() != cameras.size() || masks.size() != cameras.size())
    throw SchemaError("dataset: camera/image/mask counts differ");
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    cameras[i].validate();
    const std::string tag = "dataset view " + std::to_string(i);
    const Image8& im = images[i];
    const Image8& mk = masks[i];
    if (im.width != cameras[i].width || im.height != cameras[i].height || im.channels != 3)
      throw SchemaError(tag + ": image does not match its camera");
    if (mk.width != cameras[i].width || mk.height != cameras[i].height || mk.channels != 1)
      throw SchemaError(tag + ": mask does not match its camera");
    for (std::uint8_t v : mk.pixels)
      if (v != 0 && v != 255) throw SchemaError(tag + ": mask is not binary");
  }
}

// ---------------------------------------------------------------------------

namespace {

Json camera_to_json(const Camera& cam) {
  Json m = Json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(cam.world_to_camera(r, c));
  return Json{{"fx", cam.fx}, {"fy", cam.fy},      {"cx", cam.cx},
              {"cy", cam.cy}, {"W", cam.width},    {"H", cam.height},
              {"world_to_camera", std::move(m)}};
}

Camera camera_from_json(const Json& j, int index) {
  const std::string ctx = "cameras.json entry " + std::to_string(index);
  if (!j.is_object()) throw SchemaError(ctx + ": expected an object");
  require_keys(j, {"fx", "fy", "cx", "cy", "W", "H", "world_to_camera"}, ctx);
  for (const char* key : {"fx", "fy", "cx", "cy", "W", "H", "world_to_camera"})
    if (!j.contains(key)) throw SchemaError(ctx + ": missing '" + key + "'");
  Camera cam;
  try {
    cam.fx = j.at("fx").get<Scalar>();
    cam.fy = j.at("fy").get<Scalar>();
    cam.cx = j.at("cx").get<Scalar>();
    cam.cy = j.at("cy").get<Scalar>();
    cam.width = j.at("W").get<int>();
    cam.height = j.at("H").get<int>();
    const Json& m = j.at("world_to_camera");
    if (!m.is_array() || m.size() != 16)
      throw SchemaError(ctx + ": world_to_camera must hold 16 numbers, row-major");
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = m.at(4 * r + c).get<Scalar>();
  } catch (const Json::exception& e) {
    throw SchemaError(ctx + ": " + e.what());
  }
  try {
    cam.validate();
  } catch (const SchemaError& e) {
    throw SchemaError(ctx + ": " + e.what());
  }
  return cam;
}

}  // namespace

void write_dataset(const SceneDataset& ds, const std::string& dir) {
  ds.validate();
  stdfs::create_directories(stdfs::path(dir) / "rgb");
  stdfs::create_directories(stdfs::path(dir) / "mask");
  Json cams = Json::array();
  for (const Camera& cam : ds.cameras) cams.push_back(camera_to_json(cam));
  save_json_file((stdfs::path(dir) / "cameras.json").string(), cams);
  const std::string scene_path = (stdfs::path(dir) / "scene.json").string();
  std::ofstream scene_out(scene_path);
  if (!scene_out) throw SchemaError("cannot write '" + scene_path + "'");
  scene_out << fields::scene_to_json(ds.scene);
  for (int i = 0; i < ds.view_count(); ++i) {
    write_png(view_path(dir, "rgb", i), ds.images[i]);
    write_png(view_path(dir, "mask", i), ds.masks[i]);
  }
}

SceneDataset read_dataset(const std::string& dir) {
  SceneDataset ds;
  const Json cams = load_json_file((stdfs::path(dir) / "cameras.json").string());
  if (!cams.is_array() || cams.empty())
    throw SchemaError("cameras.json: expected a non-empty array of cameras");
  for (std::size_t i = 0; i < cams.size(); ++i)
    ds.cameras.push_back(camera_from_json(cams.at(i), static_cast<int>(i)));
  const std::string scene_path = (stdfs::path(dir) / "scene.json").string();
  std::ifstream scene_in(scene_path);
  if (!scene_in) throw SchemaError("cannot open '" + scene_path + "'");
  std::stringstream buf;
  buf << scene_in.rdbuf();
  ds.scene = fields::scene_from_json(buf.str());
  for (int i = 0; i < ds.view_count(); ++i) {
    ds.images.push_back(read_png(view_path(dir, "rgb", i)));
    ds.masks.push_back(read_png(view_path(dir, "mask", i)));
  }
  ds.validate();
  return ds;
}

}  // namespace neat::synth
