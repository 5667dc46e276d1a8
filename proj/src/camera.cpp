#include "neat/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace neat {

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw SchemaError("camera: image size must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw SchemaError("camera: focal lengths must be positive");
  if (!world_to_camera.allFinite()) throw SchemaError("camera: non-finite pose");
  const Mat3 R = rotation();
  if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw SchemaError("camera: rotation is not orthonormal");
  if (R.determinant() < 0.0) throw SchemaError("camera: rotation is reflected");
  if ((world_to_camera.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0.0)
    throw SchemaError("camera: last pose row must be (0,0,0,1)");
}

Vec3 Camera::pixel_direction(Scalar px, Scalar py) const {
  const Vec3 d_cam((px - cx) / fx, (py - cy) / fy, 1.0);
  return (rotation().transpose() * d_cam).normalized();
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, int width, int height,
                       Scalar vertical_fov) {
  if (!(vertical_fov > 0.0) || !(vertical_fov < kPi))
    throw SchemaError("camera: vertical fov must lie in (0, pi)");
  Vec3 fwd = target - eye;
  if (fwd.norm() < 1e-12) throw SchemaError("camera: eye and target coincide");
  fwd.normalize();
  Vec3 up(0, 0, 1);
  if (fwd.cross(up).norm() < 1e-6) up = Vec3(0, 1, 0);
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right).normalized();

  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * vertical_fov);
  cam.fx = cam.fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  Mat3 R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = fwd.transpose();
  cam.world_to_camera.setIdentity();
  cam.world_to_camera.topLeftCorner<3, 3>() = R;
  cam.world_to_camera.topRightCorner<3, 1>() = -R * eye;
  cam.validate();
  return cam;
}

}  // namespace neat
