#include "vinlab/dataset.hpp"

#include <fstream>
#include <set>

#include "vinlab/binary_io.hpp"

namespace vinlab {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint64_t kHeldoutStream = 0x48454C444F5554ULL;  // "HELDOUT"

Domain make_domain(const DatasetConfig& config, std::uint64_t domain_seed) {
  Rng rng(domain_seed);
  Domain domain;
  try {
    domain.map = generate_map(config.rows, config.cols, config.obstacle_fraction, rng);
  } catch (const GridError& e) {
    throw GridError(std::string(e.what()) + " (domain seed " + std::to_string(domain_seed) + ")");
  }
  const ShortestPaths sp = shortest_paths(domain.map);
  std::vector<std::size_t> candidates;
  for (std::size_t idx = 0; idx < domain.map.cells(); ++idx) {
    if (sp.policy[idx] != kNoAction) candidates.push_back(idx);
  }
  const std::size_t wanted = std::min<std::size_t>(static_cast<std::size_t>(config.trajectories), candidates.size());
  // Partial Fisher-Yates: the first `wanted` slots become distinct starts.
  for (std::size_t k = 0; k < wanted; ++k) {
    const std::size_t pick = k + static_cast<std::size_t>(rng.below(candidates.size() - k));
    std::swap(candidates[k], candidates[pick]);
    domain.trajectories.push_back(sample_trajectory(domain.map, domain.map.cell(candidates[k]), sp.policy));
  }
  return domain;
}

void check_config(const DatasetConfig& c) {
  if (c.domains <= 0 || c.trajectories <= 0 || c.rows <= 0 || c.cols <= 0) {
    throw std::invalid_argument("dataset config: counts and extents must be positive");
  }
  if (c.rows > 0xFFFF || c.cols > 0xFFFF || c.trajectories > 0xFFFF) {
    throw std::invalid_argument("dataset config: extents and trajectory count must fit in 16 bits");
  }
}

}  // namespace

Dataset build_dataset(const DatasetConfig& config) {
  check_config(config);
  Dataset ds;
  ds.rows = config.rows;
  ds.cols = config.cols;
  ds.obstacle_fraction = static_cast<float>(config.obstacle_fraction);
  ds.seed = config.seed;
  ds.domains.reserve(static_cast<std::size_t>(config.domains));
  for (int d = 0; d < config.domains; ++d) {
    ds.domains.push_back(make_domain(config, mix_seed(config.seed, static_cast<std::uint64_t>(d))));
  }
  return ds;
}

std::uint64_t heldout_seed(std::uint64_t seed) { return mix_seed(seed, kHeldoutStream); }

Dataset build_heldout(const DatasetConfig& config, const Dataset& exclude) {
  check_config(config);
  std::set<std::pair<std::vector<std::uint8_t>, Cell>> seen;
  for (const Domain& d : exclude.domains) seen.emplace(d.map.obstacles, d.map.goal);
  Dataset ds;
  ds.rows = config.rows;
  ds.cols = config.cols;
  ds.obstacle_fraction = static_cast<float>(config.obstacle_fraction);
  ds.seed = heldout_seed(config.seed);
  std::uint64_t stream = 0;
  while (ds.domains.size() < static_cast<std::size_t>(config.domains)) {
    if (stream > 64ULL * static_cast<std::uint64_t>(config.domains) + 1024) {
      throw GridError("held-out split: too many collisions with the training maps");
    }
    Domain d = make_domain(config, mix_seed(ds.seed, stream++));
    if (seen.contains({d.map.obstacles, d.map.goal})) continue;
    ds.domains.push_back(std::move(d));
  }
  return ds;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.tag("VIND");
  w.u32(kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(ds.rows));
  w.u16(static_cast<std::uint16_t>(ds.cols));
  w.u32(static_cast<std::uint32_t>(ds.domains.size()));
  w.f32(ds.obstacle_fraction);
  w.u64(ds.seed);
  const std::size_t cells = static_cast<std::size_t>(ds.rows) * ds.cols;
  for (const Domain& d : ds.domains) {
    if (d.map.rows != ds.rows || d.map.cols != ds.cols) throw FormatError("domain extents differ from header");
    std::vector<std::uint8_t> bitmap((cells + 7) / 8, 0);
    for (std::size_t k = 0; k < cells; ++k) {
      if (d.map.obstacles[k]) bitmap[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
    }
    w.bytes(bitmap);
    w.u16(static_cast<std::uint16_t>(d.map.goal.i));
    w.u16(static_cast<std::uint16_t>(d.map.goal.j));
    if (d.trajectories.size() > 0xFFFF) throw FormatError("too many trajectories in one domain");
    w.u16(static_cast<std::uint16_t>(d.trajectories.size()));
    for (const Trajectory& t : d.trajectories) {
      if (t.actions.size() > 0xFFFF) throw FormatError("trajectory too long");
      w.u16(static_cast<std::uint16_t>(t.start.i));
      w.u16(static_cast<std::uint16_t>(t.start.j));
      w.u16(static_cast<std::uint16_t>(t.actions.size()));
      for (Action a : t.actions) w.u8(static_cast<std::uint8_t>(a));
    }
  }
  return std::move(w.buffer());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("VIND", "dataset");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  Dataset ds;
  ds.rows = r.u16();
  ds.cols = r.u16();
  const std::uint32_t n_domains = r.u32();
  ds.obstacle_fraction = r.f32();
  ds.seed = r.u64();
  if (ds.rows == 0 || ds.cols == 0) throw FormatError("dataset: zero grid extent");
  const std::size_t cells = static_cast<std::size_t>(ds.rows) * ds.cols;
  ds.domains.reserve(std::min<std::size_t>(n_domains, r.remaining()));
  for (std::uint32_t d = 0; d < n_domains; ++d) {
    Domain dom;
    dom.map = GridMap(ds.rows, ds.cols);
    auto bitmap = r.bytes((cells + 7) / 8);
    for (std::size_t k = 0; k < cells; ++k) dom.map.obstacles[k] = (bitmap[k / 8] >> (k % 8)) & 1u;
    dom.map.goal = {r.u16(), r.u16()};
    if (!dom.map.in_bounds(dom.map.goal)) throw FormatError("dataset: goal outside grid");
    const std::uint16_t n_traj = r.u16();
    for (std::uint16_t t = 0; t < n_traj; ++t) {
      Trajectory traj;
      traj.start = {r.u16(), r.u16()};
      if (!dom.map.in_bounds(traj.start)) throw FormatError("dataset: start outside grid");
      const std::uint16_t len = r.u16();
      auto acts = r.bytes(len);
      traj.actions.reserve(len);
      for (std::uint8_t a : acts) {
        if (a >= kNumActions) throw FormatError("dataset: action code " + std::to_string(a));
        traj.actions.push_back(static_cast<Action>(a));
      }
      dom.trajectories.push_back(std::move(traj));
    }
    ds.domains.push_back(std::move(dom));
  }
  if (!r.done()) throw FormatError("dataset: trailing bytes");
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
  try {
    return decode_dataset(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Sample> expand_samples(const Dataset& dataset) {
  std::vector<Sample> samples;
  for (std::size_t d = 0; d < dataset.domains.size(); ++d) {
    for (const Trajectory& t : dataset.domains[d].trajectories) {
      Cell s = t.start;
      for (Action a : t.actions) {
        samples.push_back({static_cast<std::uint32_t>(d), s, a});
        s = moved(s, a);
      }
    }
  }
  return samples;
}

template <typename T>
Tensor<T> observation_image(const GridMap& map) {
  Tensor<T> img({2, map.rows, map.cols});
  for (std::size_t k = 0; k < map.cells(); ++k) img[k] = map.obstacles[k] ? T(1) : T(0);
  img.at(1, map.goal.i, map.goal.j) = T(1);
  return img;
}

template <typename T>
Tensor<T> observation_image_with_position(const GridMap& map, Cell position) {
  Tensor<T> img({3, map.rows, map.cols});
  for (std::size_t k = 0; k < map.cells(); ++k) img[k] = map.obstacles[k] ? T(1) : T(0);
  img.at(1, map.goal.i, map.goal.j) = T(1);
  img.at(2, position.i, position.j) = T(1);
  return img;
}

template Tensor<float> observation_image<float>(const GridMap&);
template Tensor<double> observation_image<double>(const GridMap&);
template Tensor<float> observation_image_with_position<float>(const GridMap&, Cell);
template Tensor<double> observation_image_with_position<double>(const GridMap&, Cell);

}  // namespace vinlab
