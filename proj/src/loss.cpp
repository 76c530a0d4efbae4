#include "kongnet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>

namespace kongnet::loss {
namespace {

void check_shapes(std::span<const double> p, std::span<const double> g, std::span<double> grad, const char* what) {
  if (p.size() != g.size()) throw std::invalid_argument(std::string(what) + ": shape mismatch between p and g");
  if (!grad.empty() && grad.size() != p.size()) throw std::invalid_argument(std::string(what) + ": gradient size mismatch");
  if (p.empty()) throw std::invalid_argument(std::string(what) + ": empty maps");
}

void check_finite(double v, const std::string& component) {
  if (!std::isfinite(v)) throw LossError("non-finite loss in component: " + component);
}

std::vector<double> to_double(const Mask& m) { return std::vector<double>(m.values().begin(), m.values().end()); }

}  // namespace

std::string to_string(Weighting w) { return w == Weighting::fixed_equal ? "fixed_equal" : "uncertainty"; }

Weighting weighting_from_string(const std::string& s) {
  if (s == "fixed_equal") return Weighting::fixed_equal;
  if (s == "uncertainty") return Weighting::uncertainty;
  throw std::invalid_argument("unknown loss weighting '" + s + "'");
}

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("LossConfig: epsilon must be > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("LossConfig: alpha must be in (0,1)");
  if (!(gamma >= 0.0)) throw std::invalid_argument("LossConfig: gamma must be >= 0");
  if (!(clamp > 0.0 && clamp < 0.5)) throw std::invalid_argument("LossConfig: clamp must be in (0, 0.5)");
}

double bce(std::span<const double> p, std::span<const double> g, double clamp, std::span<double> grad, double scale) {
  check_shapes(p, g, grad, "bce");
  const double n = static_cast<double>(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], clamp, 1.0 - clamp);
    sum += g[i] * std::log(pc) + (1.0 - g[i]) * std::log(1.0 - pc);
    if (!grad.empty() && p[i] >= clamp && p[i] <= 1.0 - clamp) {
      grad[i] += scale * (-(g[i] / pc - (1.0 - g[i]) / (1.0 - pc)) / n);
    }
  }
  return -sum / n;
}

double dice_loss(std::span<const double> p, std::span<const double> g, double epsilon, std::span<double> grad,
                 double scale) {
  check_shapes(p, g, grad, "dice_loss");
  double spg = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    spg += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  const double num = 2.0 * spg + epsilon;
  const double den = sp + sg + epsilon;
  if (!grad.empty()) {
    for (std::size_t i = 0; i < p.size(); ++i) grad[i] += scale * (-(2.0 * g[i] * den - num) / (den * den));
  }
  return 1.0 - num / den;
}

double jaccard_loss(std::span<const double> p, std::span<const double> g, double epsilon, std::span<double> grad,
                    double scale) {
  check_shapes(p, g, grad, "jaccard_loss");
  double spg = 0.0, spp = 0.0, sgg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    spg += p[i] * g[i];
    spp += p[i] * p[i];
    sgg += g[i] * g[i];
  }
  const double num = spg + epsilon;
  const double den = spp + sgg - spg + epsilon;
  if (!grad.empty()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      grad[i] += scale * (-(g[i] * den - num * (2.0 * p[i] - g[i])) / (den * den));
    }
  }
  return 1.0 - num / den;
}

double focal_loss(std::span<const double> p, std::span<const double> g, double alpha, double gamma, double clamp,
                  std::span<double> grad, double scale) {
  check_shapes(p, g, grad, "focal_loss");
  const double n = static_cast<double>(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], clamp, 1.0 - clamp);
    const double q = 1.0 - pc;
    const double pos = alpha * g[i] * std::pow(q, gamma) * std::log(pc);
    const double neg = (1.0 - alpha) * (1.0 - g[i]) * std::pow(pc, gamma) * std::log(q);
    sum += pos + neg;
    if (!grad.empty() && p[i] >= clamp && p[i] <= 1.0 - clamp) {
      double dpos = std::pow(q, gamma) / pc;
      if (gamma != 0.0) dpos -= gamma * std::pow(q, gamma - 1.0) * std::log(pc);
      double dneg = -std::pow(pc, gamma) / q;
      if (gamma != 0.0) dneg += gamma * std::pow(pc, gamma - 1.0) * std::log(q);
      const double d = alpha * g[i] * dpos + (1.0 - alpha) * (1.0 - g[i]) * dneg;
      grad[i] += scale * (-d / n);
    }
  }
  return -sum / n;
}

double centroid_loss(std::span<const double> p, std::span<const double> g, const LossConfig& cfg,
                     std::span<double> grad, double scale) {
  return jaccard_loss(p, g, cfg.epsilon, grad, scale) + dice_loss(p, g, cfg.epsilon, grad, scale) +
         focal_loss(p, g, cfg.alpha, cfg.gamma, cfg.clamp, grad, scale);
}

ClassLoss class_loss(const ClassPrediction& p, const ClassTargetValues& g, TaskMode mode, const LossConfig& cfg,
                     const ClassGradient* grad, double scale) {
  ClassLoss out;
  out.centroid = centroid_loss(p.centroid, g.centroid, cfg, grad ? grad->centroid : std::span<double>{}, scale);
  if (mode == TaskMode::multitask) {
    if (p.seg.empty() || p.contour.empty()) throw std::invalid_argument("class_loss: missing seg/contour predictions");
    if (g.seg.empty() || g.contour.empty()) throw std::invalid_argument("class_loss: missing seg/contour targets");
    const auto gs = grad ? grad->seg : std::span<double>{};
    const auto gc = grad ? grad->contour : std::span<double>{};
    out.seg = bce(p.seg, g.seg, cfg.clamp, gs, scale) + dice_loss(p.seg, g.seg, cfg.epsilon, gs, scale);
    const double cw = cfg.contour_weight * scale;
    out.contour = bce(p.contour, g.contour, cfg.clamp, gc, cw) + dice_loss(p.contour, g.contour, cfg.epsilon, gc, cw);
  }
  out.total = out.centroid + out.seg + cfg.contour_weight * out.contour;
  return out;
}

double interclass_exclusion(std::span<const std::span<const double>> maps, std::span<const std::span<double>> grads,
                            double scale) {
  if (maps.size() < 2) {
    static std::once_flag warned;
    std::call_once(warned, [] {
      std::cerr << "warning: inter-class exclusion needs at least two classes; using 0\n";
    });
    return 0.0;
  }
  const std::size_t n = maps.front().size();
  for (auto m : maps) {
    if (m.size() != n) throw std::invalid_argument("interclass_exclusion: shape mismatch");
  }
  if (!grads.empty() && grads.size() != maps.size()) throw std::invalid_argument("interclass_exclusion: grads mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double prod = 1.0;
    for (auto m : maps) prod *= m[i];
    sum += prod;
    if (!grads.empty()) {
      for (std::size_t k = 0; k < maps.size(); ++k) {
        double others = 1.0;
        for (std::size_t j = 0; j < maps.size(); ++j) {
          if (j != k) others *= maps[j][i];
        }
        grads[k][i] += scale * others * inv_n;
      }
    }
  }
  return sum * inv_n;
}

TotalLoss total_loss(std::span<const double> class_losses, double interclass, Weighting weighting,
                     std::span<const double> log_vars) {
  for (std::size_t k = 0; k < class_losses.size(); ++k) check_finite(class_losses[k], "class " + std::to_string(k));
  check_finite(interclass, "interclass");
  TotalLoss out;
  out.class_scale.assign(class_losses.size(), 1.0);
  out.value = interclass;
  if (weighting == Weighting::fixed_equal) {
    for (double l : class_losses) out.value += l;
  } else {
    if (log_vars.size() != class_losses.size()) throw std::invalid_argument("total_loss: need one log-variance per class");
    out.log_var_grad.resize(class_losses.size());
    for (std::size_t k = 0; k < class_losses.size(); ++k) {
      check_finite(log_vars[k], "log_var " + std::to_string(k));
      const double w = std::exp(-log_vars[k]);
      out.class_scale[k] = w;
      out.value += w * class_losses[k] + log_vars[k];
      out.log_var_grad[k] = -w * class_losses[k] + 1.0;
    }
  }
  check_finite(out.value, "total");
  return out;
}

LossReport compute_loss(const PredictionMaps& prediction, const TargetMaskSet& targets, const LossConfig& cfg,
                        std::size_t n_exclusive, std::span<const double> log_vars, MapGradients* grads) {
  const std::size_t n_classes = prediction.classes.size();
  if (targets.classes.size() != n_classes) {
    throw std::invalid_argument("compute_loss: prediction has " + std::to_string(n_classes) + " classes, targets " +
                                std::to_string(targets.classes.size()));
  }
  if (targets.height != prediction.height || targets.width != prediction.width) {
    throw std::invalid_argument("compute_loss: spatial shape mismatch");
  }
  n_exclusive = std::min(n_exclusive, n_classes);
  const bool multitask = std::all_of(prediction.classes.begin(), prediction.classes.end(),
                                     [](const ClassMaps& c) { return c.seg && c.contour; });
  const TaskMode mode = multitask ? TaskMode::multitask : TaskMode::detection_only;
  if (multitask && !targets.has_segmentation()) {
    throw std::invalid_argument("compute_loss: multitask prediction needs segmentation and contour targets");
  }

  std::vector<std::vector<double>> gc(n_classes), gs(n_classes), gk(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    gc[k] = to_double(targets.classes[k].centroid);
    if (multitask) {
      gs[k] = to_double(*targets.classes[k].nucleus);
      gk[k] = to_double(*targets.classes[k].contour);
    }
  }
  auto pred_of = [&](std::size_t k) {
    const auto& c = prediction.classes[k];
    ClassPrediction p{c.centroid.values(), {}, {}};
    if (multitask) {
      p.seg = c.seg->values();
      p.contour = c.contour->values();
    }
    return p;
  };

  LossReport report;
  std::vector<double> class_totals;
  for (std::size_t k = 0; k < n_classes; ++k) {
    const auto cl = class_loss(pred_of(k), {gc[k], gs[k], gk[k]}, mode, cfg);
    check_finite(cl.centroid, "class " + std::to_string(k) + " centroid");
    check_finite(cl.seg, "class " + std::to_string(k) + " seg");
    check_finite(cl.contour, "class " + std::to_string(k) + " contour");
    report.classes.push_back(cl);
    class_totals.push_back(cl.total);
  }

  std::vector<std::span<const double>> exclusive;
  for (std::size_t k = 0; k < n_exclusive; ++k) exclusive.push_back(prediction.classes[k].centroid.values());
  report.interclass = interclass_exclusion(exclusive);

  const auto total = total_loss(class_totals, report.interclass, cfg.weighting, log_vars);
  report.total = total.value;
  report.log_var_grad = total.log_var_grad;

  if (grads) {
    const std::size_t n_pix = static_cast<std::size_t>(prediction.height) * prediction.width;
    grads->centroid.assign(n_classes, std::vector<double>(n_pix, 0.0));
    grads->seg.assign(n_classes, multitask ? std::vector<double>(n_pix, 0.0) : std::vector<double>{});
    grads->contour.assign(n_classes, multitask ? std::vector<double>(n_pix, 0.0) : std::vector<double>{});
    for (std::size_t k = 0; k < n_classes; ++k) {
      ClassGradient g{grads->centroid[k], grads->seg[k], grads->contour[k]};
      class_loss(pred_of(k), {gc[k], gs[k], gk[k]}, mode, cfg, &g, total.class_scale[k]);
    }
    std::vector<std::span<double>> exclusive_grads;
    for (std::size_t k = 0; k < n_exclusive; ++k) exclusive_grads.push_back(grads->centroid[k]);
    if (exclusive.size() >= 2) interclass_exclusion(exclusive, exclusive_grads);
  }
  return report;
}

}  // namespace kongnet::loss
