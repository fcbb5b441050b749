#include "sqnt/experiment.hpp"

#include <algorithm>

#include "sqnt/checkpoint.hpp"

namespace sqnt {

ImageSplits image_splits(std::int64_t n, double val_fraction, std::uint64_t seed) {
  auto [rest, test] = split_indices(n, kTestFraction, seed);
  ImageSplits s;
  s.test = std::move(test);
  auto [train, val] = split_indices(static_cast<std::int64_t>(rest.size()), val_fraction, seed + 1);
  for (auto i : train) s.train.push_back(rest[static_cast<std::size_t>(i)]);
  for (auto i : val) s.val.push_back(rest[static_cast<std::size_t>(i)]);
  return s;
}

int ExperimentData::input_channels() const {
  return images ? static_cast<int>(images->images.dim(1)) : static_cast<int>(graph->features.dim(1));
}

int ExperimentData::classes() const { return images ? images->classes : graph->classes; }

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentData d;
  if (cfg.task == "image") {
    if (cfg.data_path.empty()) {
      ImageDataParams p = cfg.image;
      p.kind = cfg.data_kind == "blobs" ? ImageKind::blobs : ImageKind::textures;
      d.images = generate_images(p);
    } else {
      d.images = image_dataset_from_records(RecordFile::load(cfg.data_path));
    }
    d.splits = image_splits(d.images->size(), cfg.train.val_fraction, cfg.image.seed);
  } else {
    if (cfg.data_path.empty()) {
      d.graph = generate_sbm(cfg.sbm);
    } else {
      const RecordFile f = RecordFile::load(cfg.data_path);
      const auto n = f.tensor("features").dim(2);
      d.graph = graph_dataset_from_records(f, read_edge_list_file(cfg.edges_path, n));
    }
  }
  return d;
}

void attach_graph(Network& net, const ExperimentConfig& cfg, const ExperimentData& data) {
  if (data.graph) net.set_graph(std::make_shared<GraphOperator>(data.graph->graph, cfg.graph_normalized));
}

Network build_network(const ExperimentConfig& cfg, const ExperimentData& data) {
  Network net = Network::build(build_specs(cfg, data.input_channels(), data.classes()), cfg.train.seed);
  attach_graph(net, cfg, data);
  return net;
}

TrainResult run_training(Network& net, const ExperimentData& data, const ExperimentConfig& cfg,
                         const EpochCallback& on_epoch) {
  if (data.images) return train_images(net, *data.images, data.splits.train, data.splits.val, cfg.train, on_epoch);
  return train_graph(net, *data.graph, cfg.train, on_epoch);
}

double test_accuracy(Network& net, const ExperimentData& data, const ExperimentConfig& cfg) {
  const ForwardContext ctx = final_context(cfg.train);
  if (data.images) return evaluate_images(net, *data.images, data.splits.test, ctx);
  return evaluate_graph(net, *data.graph, data.graph->test_mask, ctx);
}

DivergenceReport analyze_divergence(Network& net, const ExperimentData& data,
                                    const ExperimentConfig& cfg, std::int64_t max_inputs) {
  const ForwardContext fc = final_context(cfg.train);
  Tensor input;
  if (data.images) {
    std::vector<std::int64_t> idx = data.splits.test;
    if (static_cast<std::int64_t>(idx.size()) > max_inputs) idx.resize(static_cast<std::size_t>(max_inputs));
    input = data.images->gather(idx);
  } else {
    input = data.graph->features;
  }
  auto [q, fp] = paired_trace(net, input, fc.bits_w, fc.bits_a);
  DivergenceReport r = divergence(q, fp);
  r.meta["bits_w"] = std::to_string(fc.bits_w);
  r.meta["bits_a"] = std::to_string(fc.bits_a);
  r.meta["inputs"] = std::to_string(input.dim(0));
  return r;
}

Tensor probe_input(const ExperimentData& data) {
  if (data.images) {
    const auto& idx = data.splits.test.empty() ? data.splits.train : data.splits.test;
    return data.images->gather({idx.front()});
  }
  return data.graph->features;
}

}  // namespace sqnt
