#include "kongnet/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace kongnet::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int conv_out_size(int in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

// cols[(c*k + ky)*k + kx][oy*wo + ox]
void im2col(const Tensor& x, int kernel, int stride, int ho, int wo, std::vector<double>& cols) {
  const int pad = kernel / 2;
  const std::size_t n_out = static_cast<std::size_t>(ho) * wo;
  cols.assign(static_cast<std::size_t>(x.channels) * kernel * kernel * n_out, 0.0);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = cols.data() + (static_cast<std::size_t>(c * kernel + ky) * kernel + kx) * n_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= x.height) continue;
          const double* src = x.data.data() + static_cast<std::size_t>(c) * x.plane() + static_cast<std::size_t>(iy) * x.width;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < x.width) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& cols, int kernel, int stride, int ho, int wo, Tensor& dx) {
  const int pad = kernel / 2;
  const std::size_t n_out = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < dx.channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = cols.data() + (static_cast<std::size_t>(c * kernel + ky) * kernel + kx) * n_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= dx.height) continue;
          double* dst = dx.data.data() + static_cast<std::size_t>(c) * dx.plane() + static_cast<std::size_t>(iy) * dx.width;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < dx.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t ParameterSet::add(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("parameter '" + name + "' has a nonpositive dimension");
    n *= static_cast<std::size_t>(d);
  }
  const std::size_t offset = values_.size();
  values_.resize(offset + n, 0.0);
  entries_.push_back({std::move(name), offset, n, std::move(shape)});
  return offset;
}

ConvParams add_conv(ParameterSet& params, const std::string& name, int in_channels, int out_channels, int kernel,
                    int stride) {
  if (kernel % 2 == 0) throw ShapeError("conv kernels must be odd");
  ConvParams p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.kernel = kernel;
  p.stride = stride;
  p.weight = params.add(name + ".weight", {out_channels, in_channels, kernel, kernel});
  p.bias = params.add(name + ".bias", {out_channels});
  return p;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (r <= 0 || x.channels % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(x.channels) + " not divisible by r^2");
  }
  const int oc = x.channels / (r * r);
  Tensor out(oc, x.height * r, x.width * r);
  for (int c = 0; c < oc; ++c) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const int q = c * r * r + i * r + j;
        for (int y = 0; y < x.height; ++y) {
          for (int xx = 0; xx < x.width; ++xx) out.at(c, y * r + i, xx * r + j) = x.at(q, y, xx);
        }
      }
    }
  }
  return out;
}

Tensor& Tape::grad(Var v) {
  auto& n = nodes_.at(v);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.channels, n.value.height, n.value.width);
    n.has_grad = true;
  }
  return n.grad;
}

Tape::Var Tape::push(Tensor value, std::function<void(Tape&, Var, std::span<double>)> backward) {
  nodes_.push_back({std::move(value), Tensor{}, false, std::move(backward)});
  return nodes_.size() - 1;
}

Tape::Var Tape::input(Tensor value) { return push(std::move(value), nullptr); }

Tape::Var Tape::conv2d(Var xv, const ConvParams& conv) {
  const Tensor& x = value(xv);
  if (x.channels != conv.in_channels) {
    throw ShapeError("conv2d: expected " + std::to_string(conv.in_channels) + " input channels, got " +
                     std::to_string(x.channels));
  }
  const int k = conv.kernel;
  const int ho = conv_out_size(x.height, k, conv.stride);
  const int wo = conv_out_size(x.width, k, conv.stride);
  const auto n_out = static_cast<Eigen::Index>(ho) * wo;
  const auto n_in = static_cast<Eigen::Index>(conv.in_channels) * k * k;

  Tensor out(conv.out_channels, ho, wo);
  ConstMapMat w(params_.data() + conv.weight, conv.out_channels, n_in);
  Eigen::Map<const Eigen::VectorXd> b(params_.data() + conv.bias, conv.out_channels);
  MapMat y(out.data.data(), conv.out_channels, n_out);
  const bool pointwise = k == 1 && conv.stride == 1;
  if (pointwise) {
    y.noalias() = w * ConstMapMat(x.data.data(), n_in, n_out);
  } else {
    std::vector<double> cols;
    im2col(x, k, conv.stride, ho, wo, cols);
    y.noalias() = w * ConstMapMat(cols.data(), n_in, n_out);
  }
  y.colwise() += b;

  return push(std::move(out), [xv, conv, ho, wo, n_in, n_out, pointwise](Tape& t, Var self, std::span<double> pg) {
    const Tensor& dy_t = t.nodes_[self].grad;
    const Tensor& x = t.value(xv);
    ConstMapMat dy(dy_t.data.data(), conv.out_channels, n_out);
    ConstMapMat w(t.params_.data() + conv.weight, conv.out_channels, n_in);
    MapMat dw(pg.data() + conv.weight, conv.out_channels, n_in);
    Eigen::Map<Eigen::VectorXd> db(pg.data() + conv.bias, conv.out_channels);
    db += dy.rowwise().sum();
    Tensor& dx = t.grad(xv);
    if (pointwise) {
      dw.noalias() += dy * ConstMapMat(x.data.data(), n_in, n_out).transpose();
      MapMat(dx.data.data(), n_in, n_out).noalias() += w.transpose() * dy;
    } else {
      std::vector<double> cols;
      im2col(x, conv.kernel, conv.stride, ho, wo, cols);
      dw.noalias() += dy * ConstMapMat(cols.data(), n_in, n_out).transpose();
      std::vector<double> dcols(cols.size());
      MapMat(dcols.data(), n_in, n_out).noalias() = w.transpose() * dy;
      col2im_add(dcols, conv.kernel, conv.stride, ho, wo, dx);
    }
  });
}

Tape::Var Tape::silu(Var xv) {
  const Tensor& x = value(xv);
  Tensor out(x.channels, x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] * nn::sigmoid(x.data[i]);
  return push(std::move(out), [xv](Tape& t, Var self, std::span<double>) {
    const Tensor& x = t.value(xv);
    const Tensor& dy = t.nodes_[self].grad;
    Tensor& dx = t.grad(xv);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = nn::sigmoid(x.data[i]);
      dx.data[i] += dy.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
    }
  });
}

Tape::Var Tape::sigmoid(Var xv) {
  const Tensor& x = value(xv);
  Tensor out(x.channels, x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = nn::sigmoid(x.data[i]);
  return push(std::move(out), [xv](Tape& t, Var self, std::span<double>) {
    const Tensor& y = t.nodes_[self].value;
    const Tensor& dy = t.nodes_[self].grad;
    Tensor& dx = t.grad(xv);
    for (std::size_t i = 0; i < y.size(); ++i) dx.data[i] += dy.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

Tape::Var Tape::global_avg_pool(Var xv) {
  const Tensor& x = value(xv);
  Tensor out(x.channels, 1, 1);
  const std::size_t plane = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    double s = 0.0;
    const double* p = x.data.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out.data[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  return push(std::move(out), [xv](Tape& t, Var self, std::span<double>) {
    const Tensor& dy = t.nodes_[self].grad;
    Tensor& dx = t.grad(xv);
    const std::size_t plane = dx.plane();
    for (int c = 0; c < dx.channels; ++c) {
      const double g = dy.data[static_cast<std::size_t>(c)] / static_cast<double>(plane);
      double* p = dx.data.data() + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += g;
    }
  });
}

Tape::Var Tape::scale_channels(Var xv, Var gv) {
  const Tensor& x = value(xv);
  const Tensor& g = value(gv);
  if (g.channels != x.channels || g.height != 1 || g.width != 1) throw ShapeError("scale_channels: gate must be Cx1x1");
  Tensor out(x.channels, x.height, x.width);
  const std::size_t plane = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const double gate = g.data[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t idx = static_cast<std::size_t>(c) * plane + i;
      out.data[idx] = x.data[idx] * gate;
    }
  }
  return push(std::move(out), [xv, gv](Tape& t, Var self, std::span<double>) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& x = t.value(xv);
    const Tensor& g = t.value(gv);
    Tensor& dx = t.grad(xv);
    Tensor& dg = t.grad(gv);
    const std::size_t plane = x.plane();
    for (int c = 0; c < x.channels; ++c) {
      const double gate = g.data[static_cast<std::size_t>(c)];
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = static_cast<std::size_t>(c) * plane + i;
        dx.data[idx] += dy.data[idx] * gate;
        acc += dy.data[idx] * x.data[idx];
      }
      dg.data[static_cast<std::size_t>(c)] += acc;
    }
  });
}

Tape::Var Tape::scale_spatial(Var xv, Var gv) {
  const Tensor& x = value(xv);
  const Tensor& g = value(gv);
  if (g.channels != 1 || g.height != x.height || g.width != x.width) throw ShapeError("scale_spatial: gate must be 1xHxW");
  Tensor out(x.channels, x.height, x.width);
  const std::size_t plane = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t idx = static_cast<std::size_t>(c) * plane + i;
      out.data[idx] = x.data[idx] * g.data[i];
    }
  }
  return push(std::move(out), [xv, gv](Tape& t, Var self, std::span<double>) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& x = t.value(xv);
    const Tensor& g = t.value(gv);
    Tensor& dx = t.grad(xv);
    Tensor& dg = t.grad(gv);
    const std::size_t plane = x.plane();
    for (int c = 0; c < x.channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = static_cast<std::size_t>(c) * plane + i;
        dx.data[idx] += dy.data[idx] * g.data[i];
        dg.data[i] += dy.data[idx] * x.data[idx];
      }
    }
  });
}

Tape::Var Tape::add(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return push(std::move(out), [av, bv](Tape& t, Var self, std::span<double>) {
    const Tensor& dy = t.nodes_[self].grad;
    Tensor& da = t.grad(av);
    for (std::size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i];
    Tensor& db = t.grad(bv);
    for (std::size_t i = 0; i < dy.size(); ++i) db.data[i] += dy.data[i];
  });
}

Tape::Var Tape::concat(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("concat: spatial mismatch " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return push(std::move(out), [av, bv](Tape& t, Var self, std::span<double>) {
    const Tensor& dy = t.nodes_[self].grad;
    Tensor& da = t.grad(av);
    for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += dy.data[i];
    Tensor& db = t.grad(bv);
    for (std::size_t i = 0; i < db.size(); ++i) db.data[i] += dy.data[da.size() + i];
  });
}

Tape::Var Tape::pixel_shuffle(Var xv, int r) {
  Tensor out = nn::pixel_shuffle(value(xv), r);
  return push(std::move(out), [xv, r](Tape& t, Var self, std::span<double>) {
    const Tensor& dy = t.nodes_[self].grad;
    Tensor& dx = t.grad(xv);
    const int oc = dy.channels;
    for (int c = 0; c < oc; ++c) {
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          const int q = c * r * r + i * r + j;
          for (int y = 0; y < dx.height; ++y) {
            for (int x = 0; x < dx.width; ++x) dx.at(q, y, x) += dy.at(c, y * r + i, x * r + j);
          }
        }
      }
    }
  });
}

Tape::Var Tape::slice_channels(Var xv, int begin, int count) {
  const Tensor& x = value(xv);
  if (begin < 0 || count <= 0 || begin + count > x.channels) throw ShapeError("slice_channels: range out of bounds");
  Tensor out(count, x.height, x.width);
  const auto first = x.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(begin) * x.plane());
  std::copy(first, first + static_cast<std::ptrdiff_t>(out.size()), out.data.begin());
  return push(std::move(out), [xv, begin](Tape& t, Var self, std::span<double>) {
    const Tensor& dy = t.nodes_[self].grad;
    Tensor& dx = t.grad(xv);
    const std::size_t base = static_cast<std::size_t>(begin) * dx.plane();
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[base + i] += dy.data[i];
  });
}

void Tape::backward(std::span<double> param_grad) {
  if (param_grad.size() != params_.size()) throw ShapeError("backward: parameter gradient size mismatch");
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!nodes_[i].has_grad || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, i, param_grad);
  }
}

}  // namespace kongnet::nn
