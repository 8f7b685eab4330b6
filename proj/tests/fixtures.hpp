#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "brokenray/lagrangian.hpp"
#include "brokenray/runner.hpp"

namespace fixture {

using namespace brokenray;

struct World {
  ClusterLattice lat;
  SpectralModel model;
};

// Equal-mass 1-D particles; pair planes get `pair_energy`, triple planes (4 bodies) `triple_energy`.
inline World particles(int count, std::optional<double> pair_energy = std::nullopt,
                       std::optional<double> triple_energy = std::nullopt) {
  World w;
  w.lat = runner::particle_lattice(std::vector<double>(static_cast<std::size_t>(count), 1.0));
  std::vector<Channel> chans;
  const int pair_dim = count - 2;
  for (ClusterId c : w.lat.sphere_clusters()) {
    if (c == kFreeCluster) continue;
    if (pair_energy && w.lat.dim(c) == pair_dim) chans.push_back({c, 0, *pair_energy});
    if (triple_energy && w.lat.dim(c) == pair_dim - 1) chans.push_back({c, 0, *triple_energy});
  }
  w.model = SpectralModel(w.lat, chans);
  return w;
}

inline World free_space(int n) {
  World w;
  w.lat = ClusterLattice::build({}, n);
  w.model = SpectralModel(w.lat, {});
  return w;
}

inline Channel free_channel() { return {kFreeCluster, 0, 0.0}; }

inline std::vector<ClusterId> clusters_of_dim(const ClusterLattice& lat, int dim) {
  std::vector<ClusterId> out;
  for (ClusterId c : lat.sphere_clusters())
    if (c != kFreeCluster && lat.dim(c) == dim) out.push_back(c);
  return out;
}

inline Vec unit(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v.normalized();
}

inline std::string scenario_path(const std::string& file) {
  const char* dir = std::getenv("SCENARIO_DIR");
  return (std::filesystem::path(dir ? dir : "scenarios") / file).string();
}

}  // namespace fixture
