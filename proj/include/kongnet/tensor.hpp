#ifndef KONGNET_TENSOR_HPP
#define KONGNET_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kongnet::nn {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Single-sample C x H x W feature map.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  double& at(int c, int y, int x) { return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  bool same_shape(const Tensor& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

/// Flat parameter vector with named, shaped slices.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    std::size_t offset;
    std::size_t size;
    std::vector<int> shape;
  };

  /// Reserves a slice and returns its offset.
  std::size_t add(std::string name, std::vector<int> shape);

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<double> values_;
  std::vector<Entry> entries_;
};

/// Offsets of a conv layer's weight [out][in][k][k] and bias [out] in a ParameterSet.
struct ConvParams {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

ConvParams add_conv(ParameterSet& params, const std::string& name, int in_channels, int out_channels, int kernel,
                    int stride = 1);

/// Records a forward computation and replays it backwards.
/// Parameter values are read from the span passed at construction; gradients go to the span passed to backward().
class Tape {
 public:
  using Var = std::size_t;

  explicit Tape(std::span<const double> params) : params_(params) {}

  Var input(Tensor value);
  Var conv2d(Var x, const ConvParams& conv);
  Var silu(Var x);
  Var sigmoid(Var x);
  Var global_avg_pool(Var x);
  /// y[c,h,w] = x[c,h,w] * gate[c]; gate is C x 1 x 1.
  Var scale_channels(Var x, Var gate);
  /// y[c,h,w] = x[c,h,w] * gate[h,w]; gate is 1 x H x W.
  Var scale_spatial(Var x, Var gate);
  Var add(Var a, Var b);
  Var concat(Var a, Var b);
  /// out[c, y*r+i, x*r+j] = in[c*r*r + i*r + j, y, x].
  Var pixel_shuffle(Var x, int r);
  Var slice_channels(Var x, int begin, int count);

  const Tensor& value(Var v) const { return nodes_.at(v).value; }
  /// Gradient buffer of a node, allocated on first access.
  Tensor& grad(Var v);

  /// Propagates seeded gradients to every node and accumulates parameter gradients into `param_grad`.
  void backward(std::span<double> param_grad);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    std::function<void(Tape&, Var, std::span<double>)> backward;
  };

  Var push(Tensor value, std::function<void(Tape&, Var, std::span<double>)> backward);

  std::span<const double> params_;
  std::vector<Node> nodes_;
};

/// Plain functions shared with tests.
Tensor pixel_shuffle(const Tensor& x, int r);
double sigmoid(double x);

}  // namespace kongnet::nn

#endif  // KONGNET_TENSOR_HPP
