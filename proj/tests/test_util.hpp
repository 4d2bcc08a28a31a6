#pragma once

#include <random>

#include "eqvs/geom.hpp"

namespace eqvs::test {

inline Pose random_pose(std::mt19937_64& rng, double translation = 1.0) {
  std::uniform_real_distribution<double> u(-translation, translation);
  Pose p = Pose::Identity();
  p.linear() = random_rotation(rng).toRotationMatrix();
  p.translation() = Vec3(u(rng), u(rng), u(rng));
  return p;
}

}  // namespace eqvs::test
