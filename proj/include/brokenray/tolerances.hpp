#pragma once

namespace brokenray::tol {

inline constexpr double subspace = 1e-10;
inline constexpr double orthonormal = 1e-12;
inline constexpr double membership = 1e-9;
inline constexpr double energy = 1e-9;
inline constexpr double guard_band = 1e-6;
inline constexpr double definiteness = 1e-10;  // relative to trace scale

}  // namespace brokenray::tol
