#pragma once

// Experiment configuration: flat "key = value" text, validated up front.

#include <cstdint>
#include <string>
#include <vector>

#include "sqnt/datasets.hpp"
#include "sqnt/layers.hpp"
#include "sqnt/training.hpp"

namespace sqnt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::string task = "image";  // image | graph
  std::string arch = "sym_res";
  int depth = 6;      // parametric trunk blocks
  int channels = 8;   // base width
  double h = 0.5;
  int kernel_size = 3;
  int expansion = 1;
  bool tv_enabled = false;
  double tv_gamma_init = 0.1;  // gamma, so gamma^2 = 0.01
  double tv_eps = 1e-3;
  bool graph_normalized = true;

  TrainConfig train;

  std::string data_kind = "textures";  // blobs | textures (image), sbm (graph)
  std::string data_path;   // existing dataset container instead of generating one
  std::string edges_path;  // edge list for graph data
  ImageDataParams image;
  SbmParams sbm;

  /// Sets one key. Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Applies "key=value" or "key = value" lines; '#' starts a comment.
  void parse(const std::string& text);
  /// Cross-field validation; throws ConfigError.
  void validate() const;
  /// Canonical text with every key, sorted.
  std::string to_text() const;
  /// FNV-1a of to_text().
  std::uint64_t hash() const;

  static std::vector<std::string> keys();
  static ExperimentConfig from_file(const std::string& path);
};

/// Trunk layout for image tasks: opening, (depth-1)/2 blocks at `channels`,
/// a channel change to 2*channels, 2x2 average pooling, the remaining blocks,
/// classifier. Graph tasks: opening, `depth` graph blocks, node classifier.
std::vector<BlockSpec> build_specs(const ExperimentConfig& cfg, int input_channels, int classes);

}  // namespace sqnt
