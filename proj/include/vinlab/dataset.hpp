#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vinlab/gridworld.hpp"
#include "vinlab/tensor.hpp"

namespace vinlab {

struct Domain {
  GridMap map;
  std::vector<Trajectory> trajectories;

  friend bool operator==(const Domain&, const Domain&) = default;
};

/// Expert demonstrations on a family of same-sized maps.
struct Dataset {
  int rows = 0;
  int cols = 0;
  float obstacle_fraction = 0.0f;
  std::uint64_t seed = 0;
  std::vector<Domain> domains;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetConfig {
  int domains = 1000;
  int trajectories = 7;
  int rows = 8;
  int cols = 8;
  double obstacle_fraction = 0.3;
  std::uint64_t seed = 1;
};

/// Domain d uses the stream Rng(mix_seed(seed, d)): first its map, then its
/// distinct random starts (never the goal, always able to reach it).
Dataset build_dataset(const DatasetConfig& config);

/// Seed used for the held-out split of a dataset generated from `seed`.
std::uint64_t heldout_seed(std::uint64_t seed);

/// Held-out split from heldout_seed(config.seed); any map that also occurs in
/// `exclude` is redrawn, so the split is disjoint from the training maps.
Dataset build_heldout(const DatasetConfig& config, const Dataset& exclude);

/// "VIND" file format, little-endian, version 1. See README.
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

/// One supervised pair: the state and expert label on a domain's map.
struct Sample {
  std::uint32_t domain = 0;
  Cell state;
  Action label = Action::N;
};

/// Every (state, action) pair of every trajectory, in file order.
std::vector<Sample> expand_samples(const Dataset& dataset);

/// [2, m, n] observation: channel 0 obstacles, channel 1 goal.
template <typename T>
Tensor<T> observation_image(const GridMap& map);

/// [3, m, n]: observation_image plus a channel that is 1 at `position`.
template <typename T>
Tensor<T> observation_image_with_position(const GridMap& map, Cell position);

}  // namespace vinlab
