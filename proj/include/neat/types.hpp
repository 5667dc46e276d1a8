#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace neat {

// 64-bit floats everywhere; gradient checks run at tight tolerance.
using Scalar = double;

using Vec3 = Eigen::Vector3d;
using Vec3i = Eigen::Vector3i;
using VecX = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // column-major; batched points live in columns
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr Scalar kPi = 3.14159265358979323846;

// Thrown when a config, file, or parameter block does not match its schema.
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a numeric quantity leaves its valid domain (NaN loss, bad input).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// splitmix64; used to derive independent per-ray/per-iteration RNG streams.
inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL + v;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace neat
