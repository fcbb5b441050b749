#pragma once

// Integer-only inference for exported checkpoints.
//
// Quantized kernels are stored as int32 grid indices plus one real step per
// kernel (alpha_w / M * gain). Convolutions accumulate in 32-bit integers and
// each result is rescaled once by the product of the two steps, so every
// quantization site sees exactly the value the fake-quant float path computes.
// The opening convolution, TV smoothing, the graph incidence and the
// classifier stay in floating point.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqnt/checkpoint.hpp"
#include "sqnt/graph.hpp"
#include "sqnt/layers.hpp"

namespace sqnt {

struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> values;
};

/// Raised when an integer accumulator leaves the int32 range.
class AccumulatorOverflow : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// 'same'-padded stride-1 cross-correlation on grid indices.
IntTensor int_conv2d(const IntTensor& x, const IntTensor& k, int groups);
/// Adjoint of int_conv2d in x; the output has the spatial extent of y.
IntTensor int_conv2d_transpose(const IntTensor& y, const IntTensor& k, int groups);
/// Sum over 2x2 windows, stride 2; trailing odd rows/columns are dropped.
IntTensor int_sum_pool2(const IntTensor& x);

struct IntKernel {
  IntTensor q;
  double step = 0.0;
};

class IntModel {
 public:
  /// Converts a checkpoint. Bit widths default to those recorded at training
  /// time. Throws OffGridError naming the kernel when stored weights are not
  /// on the requested grid, and FormatError when the network has a stage that
  /// cannot run on integers.
  static IntModel from_checkpoint(const RecordFile& ckpt, std::optional<int> bits_w = {},
                                  std::optional<int> bits_a = {});

  RecordFile to_records() const;
  static IntModel from_records(const RecordFile& f);
  void save(const std::string& path) const { to_records().save(path); }
  static IntModel load(const std::string& path) { return from_records(RecordFile::load(path)); }

  /// Logits for x. Graph models need the incidence operator. When `sites` is
  /// given every quantized activation is recorded in forward order.
  Tensor forward(const Tensor& x, const GraphOperator* graph = nullptr,
                 QuantSiteLog* sites = nullptr) const;

  const std::vector<BlockSpec>& specs() const { return specs_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  int bits_w() const { return bits_w_; }
  int bits_a() const { return bits_a_; }
  bool is_graph_model() const;
  /// Normalization flag recorded at training time for graph models.
  std::optional<bool> graph_normalized() const { return graph_normalized_; }
  const std::map<std::string, IntKernel>& kernels() const { return kernels_; }
  /// Experiment config the checkpoint was trained with, when recorded.
  const std::string& config_text() const { return config_text_; }

 private:
  std::vector<BlockSpec> specs_;
  std::uint64_t fingerprint_ = 0;
  int bits_w_ = 0;
  int bits_a_ = 0;
  std::optional<bool> graph_normalized_;
  std::map<std::string, IntKernel> kernels_;
  std::map<std::string, Tensor> reals_;  // opening/classifier weights, scales, gammas
  Tensor arch_;
  std::string config_text_;

  double real_scalar(const std::string& name) const;
  const Tensor& real(const std::string& name) const;
  const IntKernel& kernel(const std::string& name) const;
};

/// Elements that differ between two site logs. Sites are matched in order;
/// a name, shape or step disagreement counts every element of that site, and
/// unmatched trailing sites count in full.
std::int64_t count_site_mismatches(const QuantSiteLog& a, const QuantSiteLog& b);

}  // namespace sqnt
