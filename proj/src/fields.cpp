#include "neat/fields.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "neat/serialize.hpp"

namespace neat {

// ---------------------------------------------------------------------------
// Shared JSON plumbing

void require_keys(const Json& j, const std::vector<std::string>& allowed,
                  const std::string& context) {
  if (!j.is_object()) throw SchemaError(context + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok) throw SchemaError(context + ": unknown key '" + it.key() + "'");
  }
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw SchemaError("malformed JSON in '" + path + "': " + e.what());
  }
  return j;
}

void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

namespace ad {

Json spec_to_json(const MlpSpec& spec) {
  return Json{{"hidden", spec.hidden},
              {"output_dim", spec.output_dim},
              {"hidden_activation", to_string(spec.hidden_activation)},
              {"softplus_beta", spec.softplus_beta},
              {"output_activation", to_string(spec.output_activation)},
              {"skip_layers", spec.skip_layers},
              {"encoding_frequencies", spec.encoding_frequencies}};
}

MlpSpec spec_from_json(const Json& j, const std::string& name) {
  require_keys(j,
               {"hidden", "output_dim", "hidden_activation", "softplus_beta",
                "output_activation", "skip_layers", "encoding_frequencies"},
               "network '" + name + "'");
  MlpSpec spec;
  spec.name = name;
  spec.input_dim = 3;
  try {
    if (j.contains("hidden")) spec.hidden = j.at("hidden").get<std::vector<int>>();
    if (j.contains("output_dim")) spec.output_dim = j.at("output_dim").get<int>();
    if (j.contains("hidden_activation"))
      spec.hidden_activation = activation_from_string(j.at("hidden_activation").get<std::string>());
    if (j.contains("softplus_beta")) spec.softplus_beta = j.at("softplus_beta").get<Scalar>();
    if (j.contains("output_activation"))
      spec.output_activation = activation_from_string(j.at("output_activation").get<std::string>());
    if (j.contains("skip_layers")) spec.skip_layers = j.at("skip_layers").get<std::vector<int>>();
    if (j.contains("encoding_frequencies"))
      spec.encoding_frequencies = j.at("encoding_frequencies").get<int>();
  } catch (const Json::exception& e) {
    throw SchemaError("network '" + name + "': " + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace ad
}  // namespace neat

namespace neat::fields {

// ---------------------------------------------------------------------------
// FieldConfig / FieldSet

FieldConfig FieldConfig::defaults() {
  FieldConfig c;
  c.sdf.name = "sdf";
  c.sdf.hidden = {32, 32, 32};
  c.sdf.output_dim = 1;
  c.sdf.hidden_activation = ad::Activation::Softplus;
  c.sdf.softplus_beta = 100.0;
  c.sdf.output_activation = ad::Activation::Linear;
  c.sdf.encoding_frequencies = 4;

  c.validity.name = "validity";
  c.validity.hidden = {16, 16};
  c.validity.output_dim = 1;
  c.validity.hidden_activation = ad::Activation::Tanh;
  c.validity.output_activation = ad::Activation::Sigmoid;
  c.validity.encoding_frequencies = 2;

  c.color = c.validity;
  c.color.name = "color";
  c.color.output_dim = 3;

  c.scene_radius = 1.0;
  c.s_log_init = std::log(16.0);
  return c;
}

void FieldConfig::validate() const {
  sdf.validate();
  validity.validate();
  color.validate();
  if (sdf.name.empty() || validity.name.empty() || color.name.empty() ||
      sdf.name == validity.name || sdf.name == color.name || validity.name == color.name)
    throw SchemaError("field networks need three distinct non-empty names");
  if (sdf.input_dim != 3 || validity.input_dim != 3 || color.input_dim != 3)
    throw SchemaError("field networks take 3-vector positions");
  if (sdf.output_dim != 1 || sdf.output_activation != ad::Activation::Linear)
    throw SchemaError("sdf network must be 3->1 with linear output");
  if (validity.output_dim != 1 || validity.output_activation != ad::Activation::Sigmoid)
    throw SchemaError("validity network must be 3->1 with sigmoid output");
  if (color.output_dim != 3 || color.output_activation != ad::Activation::Sigmoid)
    throw SchemaError("color network must be 3->3 with sigmoid output");
  if (!(scene_radius > 0.0)) throw SchemaError("scene_radius must be positive");
}

FieldSet::FieldSet(FieldConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::vector<ad::SegmentInfo> layout;
  cfg_.sdf.append_segments(layout);
  cfg_.validity.append_segments(layout);
  cfg_.color.append_segments(layout);
  layout.push_back({"s_log", 1, 1, 0});
  params_ = ad::ParamVector(std::move(layout));
  params_.segment("s_log")(0, 0) = cfg_.s_log_init;
}

Scalar FieldSet::sharpness() const { return std::exp(s_log()); }

VecX FieldSet::sdf(const Mat& p, ad::Tape* tape) const {
  return VecX(ad::forward(cfg_.sdf, params_, p, tape).transpose());
}

VecX FieldSet::validity(const Mat& p, ad::Tape* tape) const {
  return VecX(ad::forward(cfg_.validity, params_, p, tape).transpose());
}

Mat FieldSet::color(const Mat& p, ad::Tape* tape) const {
  return ad::forward(cfg_.color, params_, p, tape);
}

Mat FieldSet::sdf_gradient(const Mat& p) const {
  const Eigen::Index n = p.cols();
  const Scalar h = fd_step();
  Mat probe(3, 6 * n);
  for (int axis = 0; axis < 3; ++axis) {
    probe.middleCols(2 * axis * n, n) = p;
    probe.middleCols(2 * axis * n, n).row(axis).array() += h;
    probe.middleCols((2 * axis + 1) * n, n) = p;
    probe.middleCols((2 * axis + 1) * n, n).row(axis).array() -= h;
  }
  Mat f = ad::forward(cfg_.sdf, params_, probe);  // 1 x 6n
  Mat g(3, n);
  for (int axis = 0; axis < 3; ++axis)
    g.row(axis) =
        (f.middleCols(2 * axis * n, n) - f.middleCols((2 * axis + 1) * n, n)) / (2.0 * h);
  return g;
}

PointEval evaluate(const FieldSet& fs, const Vec3& p) {
  if (!p.allFinite()) throw NumericError("evaluate: non-finite position");
  PointEval e;
  e.p = p;
  const Mat col = Mat(p);
  e.f = fs.sdf(col)[0];
  e.validity = fs.validity(col)[0];
  e.color = fs.color(col).col(0);
  e.n = fs.sdf_gradient(col).col(0);
  return e;
}

void geometric_init(FieldSet& fs, std::uint64_t seed, Scalar radius_fraction) {
  if (!(radius_fraction > 0.0)) throw SchemaError("geometric_init: radius fraction must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> N01(0.0, 1.0);
  auto& P = fs.params();
  const FieldConfig& cfg = fs.config();
  const Scalar r = radius_fraction * cfg.scene_radius;

  auto fill = [&](Eigen::Map<Mat> m, Scalar mean, Scalar std) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = mean + std * N01(rng);
  };

  // SDF: hidden layers N(0, sqrt(2/out)), zero bias; encoded input columns of
  // the first (and any skip) layer zeroed; last layer weights near
  // sqrt(pi/in) with bias -r, so f(p) starts close to |p| - r. At these small
  // widths the induced slope varies a lot between draws, so the last layer is
  // rescaled afterwards to pin the mean gradient norm at 1.
  {
    const ad::MlpSpec& s = cfg.sdf;
    const int depth = s.layer_count();
    for (int k = 0; k < depth; ++k) {
      auto [in, out] = s.layer_dims(k);
      auto W = P.segment(s.name + ".l" + std::to_string(k) + ".W");
      auto b = P.segment(s.name + ".l" + std::to_string(k) + ".b");
      if (k == depth - 1) {
        fill(W, std::sqrt(kPi / in), 1e-4);
        b.setZero();
        b(0, 0) = -r;
      } else {
        fill(W, 0.0, std::sqrt(2.0 / out));
        b.setZero();
        if (k == 0 && s.encoding_frequencies > 0)
          W.rightCols(W.cols() - 3).setZero();
        if (k > 0 && s.has_skip(k))
          W.rightCols(s.encoded_dim()).setZero();
      }
    }
  }

  // Slope calibration: mean |grad f| over deterministic ball points -> 1.
  {
    Mat pts(3, 256);
    std::uniform_real_distribution<Scalar> U(0.0, 1.0);
    for (int i = 0; i < 256; ++i) {
      Vec3 d(N01(rng), N01(rng), N01(rng));
      d.normalize();
      pts.col(i) = cfg.scene_radius * std::cbrt(U(rng)) * d;
    }
    const Scalar c = fs.sdf_gradient(pts).colwise().norm().mean();
    if (!(c > 1e-6) || !std::isfinite(c))
      throw NumericError("geometric_init: degenerate initial gradient");
    const std::string last = cfg.sdf.name + ".l" + std::to_string(cfg.sdf.layer_count() - 1);
    P.segment(last + ".W") /= c;
  }

  // Validity: small hidden weights, final bias pushed positive so V starts
  // close to 1 (the paper trains from an everything-valid prior).
  {
    const ad::MlpSpec& s = cfg.validity;
    const int depth = s.layer_count();
    for (int k = 0; k < depth; ++k) {
      auto [in, out] = s.layer_dims(k);
      (void)out;
      auto W = P.segment(s.name + ".l" + std::to_string(k) + ".W");
      auto b = P.segment(s.name + ".l" + std::to_string(k) + ".b");
      b.setZero();
      if (k == depth - 1) {
        fill(W, 0.0, 0.05);
        b(0, 0) = 2.5;  // sigmoid(2.5) ~ 0.924
      } else {
        fill(W, 0.0, std::sqrt(1.0 / in));
      }
    }
  }

  // Color: plain Xavier-ish start around mid-gray.
  {
    const ad::MlpSpec& s = cfg.color;
    for (int k = 0; k < s.layer_count(); ++k) {
      auto [in, out] = s.layer_dims(k);
      (void)out;
      fill(P.segment(s.name + ".l" + std::to_string(k) + ".W"), 0.0, std::sqrt(1.0 / in));
      P.segment(s.name + ".l" + std::to_string(k) + ".b").setZero();
    }
  }

  P.segment("s_log")(0, 0) = cfg.s_log_init;
}

// ---------------------------------------------------------------------------
// Analytic scenes

SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "sphere") return SceneKind::Sphere;
  if (s == "cut_sphere") return SceneKind::CutSphere;
  if (s == "disk") return SceneKind::Disk;
  if (s == "cylinder") return SceneKind::Cylinder;
  if (s == "sheet") return SceneKind::Sheet;
  throw SchemaError("unknown scene kind '" + s + "'");
}

std::string to_string(SceneKind k) {
  switch (k) {
    case SceneKind::Sphere: return "sphere";
    case SceneKind::CutSphere: return "cut_sphere";
    case SceneKind::Disk: return "disk";
    case SceneKind::Cylinder: return "cylinder";
    case SceneKind::Sheet: return "sheet";
  }
  return "sphere";
}

AnalyticScene AnalyticScene::make(SceneKind kind) {
  AnalyticScene s;
  s.kind = kind;
  s.validate();
  return s;
}

void AnalyticScene::validate() const {
  if (!(radius > 0.0)) throw SchemaError("scene: radius must be positive");
  if (!(scene_radius > 0.0)) throw SchemaError("scene: scene_radius must be positive");
  switch (kind) {
    case SceneKind::Sphere:
      if (radius >= scene_radius) throw SchemaError("scene: sphere exceeds bounding radius");
      break;
    case SceneKind::CutSphere:
      if (radius >= scene_radius) throw SchemaError("scene: sphere exceeds bounding radius");
      // both the kept part and the excised cap must be nonempty
      if (!(cut_z > -radius && cut_z < radius))
        throw SchemaError("scene: cut plane must intersect the sphere");
      break;
    case SceneKind::Disk:
      if (radius >= scene_radius) throw SchemaError("scene: disk exceeds bounding radius");
      break;
    case SceneKind::Cylinder:
      if (!(half_height > 0.0)) throw SchemaError("scene: cylinder needs positive half height");
      if (std::hypot(radius, half_height) >= scene_radius)
        throw SchemaError("scene: cylinder exceeds bounding radius");
      break;
    case SceneKind::Sheet:
      if (!(half_a > 0.0 && half_b > 0.0)) throw SchemaError("scene: sheet needs positive extents");
      if (std::hypot(half_a, half_b) >= scene_radius)
        throw SchemaError("scene: sheet exceeds bounding radius");
      break;
  }
}

Scalar AnalyticScene::sdf(const Vec3& p) const {
  switch (kind) {
    case SceneKind::Sphere:
    case SceneKind::CutSphere:
      return p.norm() - radius;
    case SceneKind::Disk:
    case SceneKind::Sheet:
      return p.z();
    case SceneKind::Cylinder:
      return std::hypot(p.x(), p.y()) - radius;
  }
  return 0.0;
}

Vec3 AnalyticScene::normal(const Vec3& p) const {
  switch (kind) {
    case SceneKind::Sphere:
    case SceneKind::CutSphere: {
      const Scalar n = p.norm();
      return n > 1e-12 ? Vec3(p / n) : Vec3(0, 0, 1);
    }
    case SceneKind::Disk:
    case SceneKind::Sheet:
      return {0, 0, 1};
    case SceneKind::Cylinder: {
      const Scalar n = std::hypot(p.x(), p.y());
      return n > 1e-12 ? Vec3(p.x() / n, p.y() / n, 0) : Vec3(1, 0, 0);
    }
  }
  return {0, 0, 1};
}

bool AnalyticScene::valid(const Vec3& p) const {
  switch (kind) {
    case SceneKind::Sphere: return true;
    case SceneKind::CutSphere: return p.z() <= cut_z;
    case SceneKind::Disk: return p.x() * p.x() + p.y() * p.y() <= radius * radius;
    case SceneKind::Cylinder: return std::abs(p.z()) <= half_height;
    case SceneKind::Sheet: return std::abs(p.x()) <= half_a && std::abs(p.y()) <= half_b;
  }
  return true;
}

Vec3 AnalyticScene::color(const Vec3& p) const {
  const Vec3 base(0.5 + 0.45 * std::sin(3.0 * p.x() + 2.0 * p.z()),
                  0.5 + 0.45 * std::sin(3.0 * p.y() - 2.0 * p.x()),
                  0.5 + 0.45 * std::sin(3.0 * p.z() + 2.0 * p.y()));
  static const Vec3 l1 = Vec3(0.5, 0.6, 0.63).normalized();
  static const Vec3 l2 = Vec3(-0.7, 0.2, 0.69).normalized();
  static const Vec3 l3 = Vec3(0.1, -0.8, -0.59).normalized();
  const Vec3 n = normal(p);
  const Scalar lambert =
      0.45 * std::abs(n.dot(l1)) + 0.35 * std::abs(n.dot(l2)) + 0.20 * std::abs(n.dot(l3));
  const Scalar intensity = 0.25 + 0.75 * lambert;
  return (base * intensity).cwiseMin(1.0).cwiseMax(0.0);
}

namespace {

Vec3 unit_sphere_sample(std::mt19937_64& rng) {
  std::normal_distribution<Scalar> N01(0.0, 1.0);
  Vec3 v;
  do
    v = Vec3(N01(rng), N01(rng), N01(rng));
  while (v.norm() < 1e-9);
  return v.normalized();
}

}  // namespace

Vec3 AnalyticScene::sample_surface(std::mt19937_64& rng) const {
  std::uniform_real_distribution<Scalar> U(0.0, 1.0);
  switch (kind) {
    case SceneKind::Sphere:
      return radius * unit_sphere_sample(rng);
    case SceneKind::CutSphere: {
      Vec3 p;
      do
        p = radius * unit_sphere_sample(rng);
      while (!valid(p));
      return p;
    }
    case SceneKind::Disk: {
      const Scalar rr = radius * std::sqrt(U(rng));
      const Scalar th = 2.0 * kPi * U(rng);
      return {rr * std::cos(th), rr * std::sin(th), 0.0};
    }
    case SceneKind::Cylinder: {
      const Scalar th = 2.0 * kPi * U(rng);
      const Scalar z = half_height * (2.0 * U(rng) - 1.0);
      return {radius * std::cos(th), radius * std::sin(th), z};
    }
    case SceneKind::Sheet:
      return {half_a * (2.0 * U(rng) - 1.0), half_b * (2.0 * U(rng) - 1.0), 0.0};
  }
  return Vec3::Zero();
}

Vec3 AnalyticScene::sample_completion(std::mt19937_64& rng) const {
  std::uniform_real_distribution<Scalar> U(0.0, 1.0);
  switch (kind) {
    case SceneKind::Sphere:
    case SceneKind::CutSphere:
      return radius * unit_sphere_sample(rng);
    case SceneKind::Disk:
    case SceneKind::Sheet: {
      // plane patch inside the scene bounding sphere
      const Scalar rr = scene_radius * std::sqrt(U(rng));
      const Scalar th = 2.0 * kPi * U(rng);
      return {rr * std::cos(th), rr * std::sin(th), 0.0};
    }
    case SceneKind::Cylinder: {
      const Scalar zmax = std::sqrt(scene_radius * scene_radius - radius * radius);
      const Scalar th = 2.0 * kPi * U(rng);
      return {radius * std::cos(th), radius * std::sin(th), zmax * (2.0 * U(rng) - 1.0)};
    }
  }
  return Vec3::Zero();
}

std::string scene_to_json(const AnalyticScene& s) {
  Json j{{"kind", to_string(s.kind)},   {"radius", s.radius},
         {"cut_z", s.cut_z},            {"half_height", s.half_height},
         {"half_a", s.half_a},          {"half_b", s.half_b},
         {"scene_radius", s.scene_radius}};
  return j.dump(2) + "\n";
}

AnalyticScene scene_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const std::exception& e) {
    throw SchemaError(std::string("malformed scene JSON: ") + e.what());
  }
  require_keys(j, {"kind", "radius", "cut_z", "half_height", "half_a", "half_b", "scene_radius"},
               "scene");
  if (!j.contains("kind")) throw SchemaError("scene: missing 'kind'");
  AnalyticScene s;
  try {
    s.kind = scene_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("radius")) s.radius = j.at("radius").get<Scalar>();
    if (j.contains("cut_z")) s.cut_z = j.at("cut_z").get<Scalar>();
    if (j.contains("half_height")) s.half_height = j.at("half_height").get<Scalar>();
    if (j.contains("half_a")) s.half_a = j.at("half_a").get<Scalar>();
    if (j.contains("half_b")) s.half_b = j.at("half_b").get<Scalar>();
    if (j.contains("scene_radius")) s.scene_radius = j.at("scene_radius").get<Scalar>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("scene: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// FieldConfig JSON + checkpoints

Json field_config_to_json(const FieldConfig& cfg) {
  return Json{{"sdf", ad::spec_to_json(cfg.sdf)},
              {"validity", ad::spec_to_json(cfg.validity)},
              {"color", ad::spec_to_json(cfg.color)},
              {"scene_radius", cfg.scene_radius},
              {"s_log_init", cfg.s_log_init}};
}

FieldConfig field_config_from_json(const Json& j) {
  require_keys(j, {"sdf", "validity", "color", "scene_radius", "s_log_init"}, "fields");
  FieldConfig cfg = FieldConfig::defaults();
  try {
    if (j.contains("sdf")) cfg.sdf = ad::spec_from_json(j.at("sdf"), "sdf");
    if (j.contains("validity")) cfg.validity = ad::spec_from_json(j.at("validity"), "validity");
    if (j.contains("color")) cfg.color = ad::spec_from_json(j.at("color"), "color");
    if (j.contains("scene_radius")) cfg.scene_radius = j.at("scene_radius").get<Scalar>();
    if (j.contains("s_log_init")) cfg.s_log_init = j.at("s_log_init").get<Scalar>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("fields: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

std::string sidecar_path(const std::string& json_path) {
  std::filesystem::path p(json_path);
  p.replace_extension(".bin");
  return p.string();
}

void write_le_doubles(const std::string& path, const VecX& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write '" + path + "'");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(sizeof(Scalar) * size_t(v.size())));
  } else {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &v[i], 8);
      char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = char((bits >> (8 * b)) & 0xff);
      out.write(buf, 8);
    }
  }
  if (!out) throw SchemaError("short write to '" + path + "'");
}

VecX read_le_doubles(const std::string& path, Eigen::Index count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  VecX v(count);
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(sizeof(Scalar) * size_t(count)));
  } else {
    for (Eigen::Index i = 0; i < count; ++i) {
      char buf[8];
      in.read(buf, 8);
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(std::uint8_t(buf[b])) << (8 * b);
      std::memcpy(&v[i], &bits, 8);
    }
  }
  if (!in) throw SchemaError("short read from '" + path + "' (expected " +
                             std::to_string(count) + " doubles)");
  char extra;
  if (in.read(&extra, 1)) throw SchemaError("trailing bytes in '" + path + "'");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& json_path, const FieldSet& fs, std::int64_t iteration) {
  const std::string bin = sidecar_path(json_path);
  Json segments = Json::array();
  for (int i = 0; i < fs.params().segment_count(); ++i) {
    const auto& s = fs.params().segment_info(i);
    segments.push_back(Json{{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  }
  Json manifest{{"format", "neat-checkpoint-1"},
                {"iteration", iteration},
                {"fields", field_config_to_json(fs.config())},
                {"segments", segments},
                {"param_count", fs.params().size()},
                {"sidecar", std::filesystem::path(bin).filename().string()}};
  save_json_file(json_path, manifest);
  write_le_doubles(bin, fs.params().values());
}

std::int64_t load_checkpoint(const std::string& json_path, FieldSet& fs) {
  Json manifest = load_json_file(json_path);
  require_keys(manifest, {"format", "iteration", "fields", "segments", "param_count", "sidecar"},
               "checkpoint");
  for (const char* key : {"format", "iteration", "fields", "segments", "param_count", "sidecar"})
    if (!manifest.contains(key))
      throw SchemaError(std::string("checkpoint: missing '") + key + "'");
  if (manifest.at("format").get<std::string>() != "neat-checkpoint-1")
    throw SchemaError("checkpoint: unsupported format tag");

  fs = FieldSet(field_config_from_json(manifest.at("fields")));
  const auto& segments = manifest.at("segments");
  if (!segments.is_array() || int(segments.size()) != fs.params().segment_count())
    throw SchemaError("checkpoint: segment list does not match network shapes");
  for (int i = 0; i < fs.params().segment_count(); ++i) {
    const auto& want = fs.params().segment_info(i);
    const auto& got = segments.at(size_t(i));
    if (got.at("name").get<std::string>() != want.name ||
        got.at("rows").get<int>() != want.rows || got.at("cols").get<int>() != want.cols)
      throw SchemaError("checkpoint: segment '" + want.name + "' mismatch");
  }
  if (manifest.at("param_count").get<Eigen::Index>() != fs.params().size())
    throw SchemaError("checkpoint: parameter count mismatch");

  const std::string bin =
      (std::filesystem::path(json_path).parent_path() /
       manifest.at("sidecar").get<std::string>())
          .string();
  fs.params().values() = read_le_doubles(bin, fs.params().size());
  if (!fs.params().values().allFinite())
    throw NumericError("checkpoint: non-finite parameter values");
  return manifest.at("iteration").get<std::int64_t>();
}

}  // namespace neat::fields
