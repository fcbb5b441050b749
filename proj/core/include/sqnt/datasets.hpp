#pragma once

// Deterministic synthetic datasets: small images and stochastic block model graphs.

#include <cstdint>
#include <string>
#include <vector>

#include "sqnt/checkpoint.hpp"
#include "sqnt/graph.hpp"
#include "sqnt/tensor.hpp"

namespace sqnt {

enum class ImageKind { blobs, textures };

struct ImageDataParams {
  ImageKind kind = ImageKind::textures;
  int count = 512;
  int channels = 1;  // 1..3
  int classes = 4;   // 2..4
  int size = 16;
  double noise = 0.3;
  std::uint64_t seed = 7;

  /// Throws std::invalid_argument for out-of-range values.
  void validate() const;
};

struct ImageDataset {
  Tensor images;  // [N, C, size, size]
  std::vector<int> labels;
  int classes = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  /// Rows `idx` as a batch.
  Tensor gather(const std::vector<std::int64_t>& idx) const;
  std::vector<int> gather_labels(const std::vector<std::int64_t>& idx) const;
};

/// Blobs: one Gaussian bump per class at a class-specific position with a
/// random amplitude. Textures: stripes whose orientation encodes the class,
/// with random frequency and phase.
ImageDataset generate_images(const ImageDataParams& p);

/// Deterministic shuffled split; `holdout_fraction` of the rows go to the second part.
std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split_indices(
    std::int64_t n, double holdout_fraction, std::uint64_t seed);

struct SbmParams {
  int nodes = 200;
  int blocks = 4;
  double p_in = 0.1;
  double p_out = 0.01;
  int features = 16;
  double feature_signal = 1.0;  // spread of the per-block feature means
  double feature_noise = 1.0;
  int train_per_class = 10;
  double val_fraction = 0.2;
  std::uint64_t seed = 7;

  void validate() const;
};

struct GraphDataset {
  Graph graph;
  Tensor features;  // [1, F, n, 1]
  std::vector<int> labels;
  int classes = 0;
  std::vector<std::uint8_t> train_mask, val_mask, test_mask;
};

GraphDataset generate_sbm(const SbmParams& p);

RecordFile image_dataset_records(const ImageDataset& d);
ImageDataset image_dataset_from_records(const RecordFile& f);
/// Features, labels and masks; the edges live in a separate edge-list file.
RecordFile graph_dataset_records(const GraphDataset& d);
GraphDataset graph_dataset_from_records(const RecordFile& f, Graph graph);

}  // namespace sqnt
