#pragma once

#include "neat/types.hpp"

namespace neat {

// Pinhole camera, OpenCV axes: x right, y down, z forward. world_to_camera
// maps world points into the camera frame (X_cam = R X_w + t); pixel (ix, iy)
// is sampled at its center (ix + 0.5, iy + 0.5).
struct Camera {
  Scalar fx = 0.0, fy = 0.0;
  Scalar cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat4 world_to_camera = Mat4::Identity();

  void validate() const;  // throws SchemaError (rotation orthonormal to 1e-9)
  Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Vec3 center() const { return -rotation().transpose() * translation(); }
  // Optical axis (camera +z) in world coordinates.
  Vec3 forward() const { return rotation().row(2).transpose(); }
  // World-space unit direction through pixel coordinates (px, py), pixel
  // center offsets already applied by the caller.
  Vec3 pixel_direction(Scalar px, Scalar py) const;

  // Camera at `eye` looking toward `target`, world up (0,0,1) (falls back to
  // (0,1,0) near the poles); vertical field of view in radians.
  static Camera look_at(const Vec3& eye, const Vec3& target, int width, int height,
                        Scalar vertical_fov);
};

}  // namespace neat
