#include "sqnt/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sqnt {

void ImageDataParams::validate() const {
  if (count <= 0) throw std::invalid_argument("image data: count must be positive");
  if (channels < 1 || channels > 3) throw std::invalid_argument("image data: channels must be 1..3");
  if (classes < 2 || classes > 4) throw std::invalid_argument("image data: classes must be 2..4");
  if (size < 4) throw std::invalid_argument("image data: size must be >= 4");
  if (!(noise >= 0.0)) throw std::invalid_argument("image data: noise must be >= 0");
}

Tensor ImageDataset::gather(const std::vector<std::int64_t>& idx) const {
  Shape s = images.shape();
  const auto per = images.numel() / s[0];
  s[0] = static_cast<std::int64_t>(idx.size());
  Tensor out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(images.data() + idx[i] * per, per, out.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

std::vector<int> ImageDataset::gather_labels(const std::vector<std::int64_t>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

ImageDataset generate_images(const ImageDataParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss;
  ImageDataset d;
  d.classes = p.classes;
  const int s = p.size;
  d.images = Tensor({p.count, p.channels, s, s});
  // Blob centers on a ring, one per class.
  std::vector<std::pair<double, double>> centers;
  for (int c = 0; c < p.classes; ++c) {
    const double a = 2.0 * std::numbers::pi * c / p.classes + std::numbers::pi / 4;
    centers.emplace_back((s - 1) / 2.0 + 0.3 * s * std::cos(a), (s - 1) / 2.0 + 0.3 * s * std::sin(a));
  }
  for (int n = 0; n < p.count; ++n) {
    const int label = static_cast<int>(rng() % static_cast<std::uint64_t>(p.classes));
    d.labels.push_back(label);
    const double amp = 0.5 + uni(rng);
    const double freq = 0.6 + 0.4 * uni(rng);
    const double phase = 2.0 * std::numbers::pi * uni(rng);
    const double theta = std::numbers::pi * label / p.classes;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int c = 0; c < p.channels; ++c) {
      const double cgain = 1.0 - 0.2 * c;
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          double v;
          if (p.kind == ImageKind::blobs) {
            const auto [cy, cx] = centers[static_cast<std::size_t>(label)];
            const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            v = amp * std::exp(-r2 / (2.0 * 1.5 * 1.5));
          } else {
            v = amp * std::sin(freq * (ct * x + st * y) + phase);
          }
          d.images.at(n, c, y, x) = cgain * v + p.noise * gauss(rng);
        }
      }
    }
  }
  return d;
}

std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split_indices(
    std::int64_t n, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("holdout fraction must be in [0, 1)");
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
  }
  const auto hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  std::vector<std::int64_t> first(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(hold));
  std::vector<std::int64_t> second(idx.end() - static_cast<std::ptrdiff_t>(hold), idx.end());
  return {first, second};
}

void SbmParams::validate() const {
  if (nodes < 2) throw std::invalid_argument("sbm: need at least 2 nodes");
  if (blocks < 2 || blocks > nodes) throw std::invalid_argument("sbm: blocks must be in [2, nodes]");
  auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!prob(p_in) || !prob(p_out)) throw std::invalid_argument("sbm: probabilities must be in [0, 1]");
  if (features < 1) throw std::invalid_argument("sbm: features must be positive");
  if (train_per_class < 1) throw std::invalid_argument("sbm: train_per_class must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("sbm: bad val_fraction");
}

GraphDataset generate_sbm(const SbmParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss;
  GraphDataset d;
  d.classes = p.blocks;
  for (int i = 0; i < p.nodes; ++i) d.labels.push_back(i * p.blocks / p.nodes);
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  for (int u = 0; u < p.nodes; ++u)
    for (int v = u + 1; v < p.nodes; ++v) {
      const double pr = d.labels[static_cast<std::size_t>(u)] == d.labels[static_cast<std::size_t>(v)] ? p.p_in : p.p_out;
      if (uni(rng) < pr) edges.emplace_back(u, v);
    }
  d.graph = Graph(p.nodes, std::move(edges));
  std::vector<double> means(static_cast<std::size_t>(p.blocks * p.features));
  for (auto& m : means) m = p.feature_signal * gauss(rng);
  d.features = Tensor({1, p.features, p.nodes, 1});
  for (int i = 0; i < p.nodes; ++i) {
    const int b = d.labels[static_cast<std::size_t>(i)];
    for (int f = 0; f < p.features; ++f) {
      d.features[static_cast<std::int64_t>(f) * p.nodes + i] =
          means[static_cast<std::size_t>(b * p.features + f)] + p.feature_noise * gauss(rng);
    }
  }
  // Masks: a fixed number of training nodes per class, then val/test from the rest.
  std::vector<std::int64_t> order(static_cast<std::size_t>(p.nodes));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  const auto n = static_cast<std::size_t>(p.nodes);
  d.train_mask.assign(n, 0);
  d.val_mask.assign(n, 0);
  d.test_mask.assign(n, 0);
  std::vector<int> taken(static_cast<std::size_t>(p.blocks), 0);
  std::vector<std::int64_t> rest;
  for (auto i : order) {
    int& t = taken[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])];
    if (t < p.train_per_class) {
      d.train_mask[static_cast<std::size_t>(i)] = 1;
      ++t;
    } else {
      rest.push_back(i);
    }
  }
  const auto nval = static_cast<std::size_t>(std::llround(p.val_fraction * static_cast<double>(rest.size())));
  for (std::size_t k = 0; k < rest.size(); ++k) {
    (k < nval ? d.val_mask : d.test_mask)[static_cast<std::size_t>(rest[k])] = 1;
  }
  return d;
}

namespace {

std::vector<std::int32_t> to_i32(const std::vector<int>& v) { return {v.begin(), v.end()}; }
std::vector<std::int32_t> to_i32(const std::vector<std::uint8_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

RecordFile image_dataset_records(const ImageDataset& d) {
  RecordFile f;
  f.put("images", d.images);
  f.put_ints("labels", {d.size()}, to_i32(d.labels));
  f.put_scalar("classes", d.classes);
  return f;
}

ImageDataset image_dataset_from_records(const RecordFile& f) {
  ImageDataset d;
  d.images = f.tensor("images");
  for (auto v : f.ints("labels")) d.labels.push_back(v);
  d.classes = static_cast<int>(f.scalar("classes"));
  if (d.images.rank() != 4 || d.images.dim(0) != d.size()) {
    throw FormatError("image dataset: images and labels disagree");
  }
  for (int l : d.labels)
    if (l < 0 || l >= d.classes) throw FormatError("image dataset: label out of range");
  return d;
}

RecordFile graph_dataset_records(const GraphDataset& d) {
  RecordFile f;
  const auto n = static_cast<std::int64_t>(d.labels.size());
  f.put("features", d.features);
  f.put_ints("labels", {n}, to_i32(d.labels));
  f.put_ints("train_mask", {n}, to_i32(d.train_mask));
  f.put_ints("val_mask", {n}, to_i32(d.val_mask));
  f.put_ints("test_mask", {n}, to_i32(d.test_mask));
  f.put_scalar("classes", d.classes);
  return f;
}

GraphDataset graph_dataset_from_records(const RecordFile& f, Graph graph) {
  GraphDataset d;
  d.graph = std::move(graph);
  d.features = f.tensor("features");
  for (auto v : f.ints("labels")) d.labels.push_back(v);
  for (auto v : f.ints("train_mask")) d.train_mask.push_back(static_cast<std::uint8_t>(v != 0));
  for (auto v : f.ints("val_mask")) d.val_mask.push_back(static_cast<std::uint8_t>(v != 0));
  for (auto v : f.ints("test_mask")) d.test_mask.push_back(static_cast<std::uint8_t>(v != 0));
  d.classes = static_cast<int>(f.scalar("classes"));
  const auto n = d.graph.num_nodes();
  if (d.features.rank() != 4 || d.features.dim(2) != n || static_cast<std::int64_t>(d.labels.size()) != n) {
    throw FormatError("graph dataset: features/labels do not match the graph (" + std::to_string(n) + " nodes)");
  }
  return d;
}

}  // namespace sqnt
