#pragma once

// Small synthetic setup shared by the training, pruning and acceptance tests.

#include "stkd/datahub.hpp"
#include "stkd/graph.hpp"
#include "stkd/model.hpp"

namespace fixture {

struct Setup {
  stkd::SyntheticData raw;
  stkd::DatasetSplits splits;
  stkd::GraphKernel graph;
};

inline Setup synthetic(int nodes = 5, int timesteps = 400, std::uint64_t seed = 0) {
  stkd::SyntheticSpec spec;
  spec.n_nodes = nodes;
  spec.n_timesteps = timesteps;
  spec.seed = seed;
  spec.waves = {{10.0, 48.0}, {4.0, 12.0}};
  spec.noise_std = 0.5;
  Setup s;
  s.raw = stkd::generate_synthetic(spec);
  s.splits = stkd::window(s.raw.speeds, 12, 9);
  s.graph = stkd::GraphKernel(stkd::scaled_laplacian(s.raw.adjacency), 3);
  return s;
}

inline stkd::ModelConfig config(std::array<stkd::BlockChannels, 2> blocks, int nodes) {
  stkd::ModelConfig c;
  c.blocks = blocks;
  c.nodes = nodes;
  return c;
}

inline stkd::ModelConfig tiny(int nodes) { return config({{{1, 2, 4}, {4, 2, 8}}}, nodes); }
inline stkd::ModelConfig small(int nodes) { return config({{{1, 8, 16}, {16, 8, 32}}}, nodes); }

}  // namespace fixture
