#pragma once

// Glue between configs, datasets, networks and the stability lab. Shared by
// the command line tool and the acceptance suite.

#include <cstdint>
#include <memory>
#include <optional>

#include "sqnt/config.hpp"
#include "sqnt/datasets.hpp"
#include "sqnt/network.hpp"
#include "sqnt/stability.hpp"
#include "sqnt/training.hpp"

namespace sqnt {

inline constexpr double kTestFraction = 0.25;

struct ImageSplits {
  std::vector<std::int64_t> train, val, test;
};

/// A fixed quarter of the rows is held out for testing; the rest is split
/// into train/val by `val_fraction`.
ImageSplits image_splits(std::int64_t n, double val_fraction, std::uint64_t seed);

struct ExperimentData {
  std::optional<ImageDataset> images;
  std::optional<GraphDataset> graph;
  ImageSplits splits;  // image tasks only

  int input_channels() const;
  int classes() const;
};

/// Generates the configured dataset, or loads it from data_path/edges_path.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// Builds the configured network; graph networks get their incidence operator.
Network build_network(const ExperimentConfig& cfg, const ExperimentData& data);
/// Rebuilds a graph network's operator after loading a checkpoint.
void attach_graph(Network& net, const ExperimentConfig& cfg, const ExperimentData& data);

TrainResult run_training(Network& net, const ExperimentData& data, const ExperimentConfig& cfg,
                         const EpochCallback& on_epoch = {});

/// Test accuracy under the end-of-schedule context.
double test_accuracy(Network& net, const ExperimentData& data, const ExperimentConfig& cfg);

/// Paired bits_a <-> full-precision activation traces on held-out data (at
/// most `max_inputs` test images; graph tasks use the whole graph).
DivergenceReport analyze_divergence(Network& net, const ExperimentData& data,
                                    const ExperimentConfig& cfg, std::int64_t max_inputs = 256);

/// Input tensor used for shape-dependent checks: one test image, or the graph features.
Tensor probe_input(const ExperimentData& data);

}  // namespace sqnt
