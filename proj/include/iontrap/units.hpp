#pragma once

#include <Eigen/Dense>

#include <numbers>

namespace iontrap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Physical constants, SI (CODATA 2018 exact/recommended values).
namespace constants {
inline constexpr double pi = std::numbers::pi;
inline constexpr double elementary_charge = 1.602176634e-19;   // C
inline constexpr double epsilon0 = 8.8541878128e-12;           // F/m
inline constexpr double hbar = 1.054571817e-34;                // J s
inline constexpr double atomic_mass_unit = 1.66053907e-27;     // kg
inline constexpr double mg24_mass_u = 23.985042;
inline constexpr double mg24_mass = mg24_mass_u * atomic_mass_unit;
}  // namespace constants

inline constexpr double two_pi = 2.0 * constants::pi;

inline constexpr double hz_to_rad(double hz) { return two_pi * hz; }
inline constexpr double rad_to_hz(double rad_per_s) { return rad_per_s / two_pi; }
inline constexpr double joule_to_ev(double j) { return j / constants::elementary_charge; }
inline constexpr double ev_to_joule(double ev) { return ev * constants::elementary_charge; }

}  // namespace iontrap
