// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/recognize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fringeforge {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int kKernel = 5;
constexpr int kStride = 2;
constexpr int kPad = 2;

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

template <typename M>
M silu(const M& a) {
  return a.unaryExpr([](double x) { return x * sigmoid(x); });
}

template <typename M>
M silu_prime(const M& a) {
  return a.unaryExpr([](double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
  });
}

int conv_out(int n) { return (n + 2 * kPad - kKernel) / kStride + 1; }

// input: channels x (side*side), row-major pixels. Output rows c*k*k + ky*k + kx.
MatrixXd im2col(const MatrixXd& input, int side) {
  const int channels = static_cast<int>(input.rows());
  const int out = conv_out(side);
  MatrixXd cols = MatrixXd::Zero(channels * kKernel * kKernel, out * out);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        const int row = (c * kKernel + ky) * kKernel + kx;
        for (int oy = 0; oy < out; ++oy) {
          const int y = oy * kStride - kPad + ky;
          if (y < 0 || y >= side) continue;
          for (int ox = 0; ox < out; ++ox) {
            const int x = ox * kStride - kPad + kx;
            if (x < 0 || x >= side) continue;
            cols(row, oy * out + ox) = input(c, y * side + x);
          }
        }
      }
  return cols;
}

MatrixXd col2im(const MatrixXd& cols, int channels, int side) {
  const int out = conv_out(side);
  MatrixXd input = MatrixXd::Zero(channels, side * side);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        const int row = (c * kKernel + ky) * kKernel + kx;
        for (int oy = 0; oy < out; ++oy) {
          const int y = oy * kStride - kPad + ky;
          if (y < 0 || y >= side) continue;
          for (int ox = 0; ox < out; ++ox) {
            const int x = ox * kStride - kPad + kx;
            if (x < 0 || x >= side) continue;
            input(c, y * side + x) += cols(row, oy * out + ox);
          }
        }
      }
  return input;
}

std::vector<Layer> zero_like(const std::vector<Layer>& layers) {
  std::vector<Layer> g(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    g[i].weight = MatrixXd::Zero(layers[i].weight.rows(), layers[i].weight.cols());
    g[i].bias = VectorXd::Zero(layers[i].bias.size());
  }
  return g;
}

// One forward/backward pass through the point network. Parameter gradients
// are accumulated when params != nullptr; input gradient written when dx != nullptr.
double point_pass(const ModelParams& m, const PointCloud& cloud, const LossFn* loss, Logits& logits,
                  std::vector<Layer>* params, std::vector<Vec3>* dx) {
  const std::size_t n = cloud.size();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "empty cloud");
  MatrixXd X(3, n);
  for (std::size_t i = 0; i < n; ++i) X.col(i) = cloud.points[i];
  const auto& L = m.layers;
  MatrixXd A1 = L[0].weight * X;
  A1.colwise() += L[0].bias;
  const MatrixXd H1 = silu(A1);
  MatrixXd A2 = L[1].weight * H1;
  A2.colwise() += L[1].bias;
  const MatrixXd H2 = silu(A2);
  const int f = static_cast<int>(H2.rows());
  VectorXd g(f);
  std::vector<Eigen::Index> arg(f);
  for (int r = 0; r < f; ++r) g[r] = H2.row(r).maxCoeff(&arg[r]);  // first max on ties
  const VectorXd a3 = L[2].weight * g + L[2].bias;
  const VectorXd h3 = silu(a3);
  logits = L[3].weight * h3 + L[3].bias;
  if (!loss) return 0.0;

  Logits dz = Logits::Zero(logits.size());
  const double value = (*loss)(logits, dz);
  const VectorXd dh3 = L[3].weight.transpose() * dz;
  const VectorXd da3 = dh3.cwiseProduct(silu_prime(a3));
  const VectorXd dg = L[2].weight.transpose() * da3;
  // Only argmax entries of H2 receive gradient; keep the backward sparse.
  MatrixXd dA2 = MatrixXd::Zero(f, n);
  for (int r = 0; r < f; ++r) {
    const double a = A2(r, arg[r]);
    const double s = sigmoid(a);
    dA2(r, arg[r]) = dg[r] * s * (1.0 + a * (1.0 - s));
  }
  const MatrixXd dH1 = L[1].weight.transpose() * dA2;
  const MatrixXd dA1 = dH1.cwiseProduct(silu_prime(A1));
  if (params) {
    auto& P = *params;
    P[3].weight += dz * h3.transpose();
    P[3].bias += dz;
    P[2].weight += da3 * g.transpose();
    P[2].bias += da3;
    P[1].weight += dA2 * H1.transpose();
    P[1].bias += dA2.rowwise().sum();
    P[0].weight += dA1 * X.transpose();
    P[0].bias += dA1.rowwise().sum();
  }
  if (dx) {
    const MatrixXd dX = L[0].weight.transpose() * dA1;
    dx->resize(n);
    for (std::size_t i = 0; i < n; ++i) (*dx)[i] = dX.col(i);
  }
  return value;
}

struct DepthInput {
  MatrixXd x;  // 1 x side*side
  double mean = 0.0;
  double count = 0.0;
};

DepthInput depth_input(const ModelParams& m, const DepthImage& d) {
  const int side = m.input_size;
  if (!d.depth.same_shape(side, side) || !d.mask.same_shape(side, side)) {
    throw Error(ErrorCode::ShapeMismatch, "depth image must be " + std::to_string(side) + "x" + std::to_string(side));
  }
  DepthInput in;
  in.x = MatrixXd::Zero(1, side * side);
  double sum = 0.0;
  for (std::size_t i = 0; i < d.depth.size(); ++i)
    if (d.mask[i]) {
      sum += d.depth[i];
      in.count += 1.0;
    }
  if (in.count == 0.0) return in;
  in.mean = sum / in.count;
  for (std::size_t i = 0; i < d.depth.size(); ++i)
    if (d.mask[i]) in.x(0, static_cast<Eigen::Index>(i)) = (d.depth[i] - in.mean) / m.depth_scale;
  return in;
}

double depth_pass(const ModelParams& m, const DepthImage& d, const LossFn* loss, Logits& logits,
                  std::vector<Layer>* params, Image* dx) {
  const auto& L = m.layers;
  const int side = m.input_size;
  const int s1 = conv_out(side);
  const DepthInput in = depth_input(m, d);
  const MatrixXd cols1 = im2col(in.x, side);
  MatrixXd A1 = L[0].weight * cols1;
  A1.colwise() += L[0].bias;
  const MatrixXd H1 = silu(A1);
  const MatrixXd cols2 = im2col(H1, s1);
  MatrixXd A2 = L[1].weight * cols2;
  A2.colwise() += L[1].bias;
  const MatrixXd H2 = silu(A2);
  const Eigen::Map<const VectorXd> flat(H2.data(), H2.size());
  const VectorXd a3 = L[2].weight * flat + L[2].bias;
  const VectorXd h3 = silu(a3);
  logits = L[3].weight * h3 + L[3].bias;
  if (!loss) return 0.0;

  Logits dz = Logits::Zero(logits.size());
  const double value = (*loss)(logits, dz);
  const VectorXd da3 = (L[3].weight.transpose() * dz).cwiseProduct(silu_prime(a3));
  const VectorXd dflat = L[2].weight.transpose() * da3;
  const MatrixXd dA2 = Eigen::Map<const MatrixXd>(dflat.data(), H2.rows(), H2.cols()).cwiseProduct(silu_prime(A2));
  const MatrixXd dH1 = col2im(L[1].weight.transpose() * dA2, static_cast<int>(H1.rows()), s1);
  const MatrixXd dA1 = dH1.cwiseProduct(silu_prime(A1));
  if (params) {
    auto& P = *params;
    P[3].weight += dz * h3.transpose();
    P[3].bias += dz;
    P[2].weight += da3 * flat.transpose();
    P[2].bias += da3;
    P[1].weight += dA2 * cols2.transpose();
    P[1].bias += dA2.rowwise().sum();
    P[0].weight += dA1 * cols1.transpose();
    P[0].bias += dA1.rowwise().sum();
  }
  if (dx) {
    const MatrixXd dX = col2im(L[0].weight.transpose() * dA1, 1, side);
    *dx = Image(side, side);
    if (in.count > 0.0) {
      double masked_sum = 0.0;
      for (std::size_t i = 0; i < dx->size(); ++i)
        if (d.mask[i]) masked_sum += dX(0, static_cast<Eigen::Index>(i));
      const double mean_grad = masked_sum / in.count;
      for (std::size_t i = 0; i < dx->size(); ++i)
        if (d.mask[i]) (*dx)[i] = (dX(0, static_cast<Eigen::Index>(i)) - mean_grad) / m.depth_scale;
    }
  }
  return value;
}

double cross_entropy(const Logits& z, int label, Logits& grad) {
  const double zmax = z.maxCoeff();
  const VectorXd e = (z.array() - zmax).exp();
  const double sum = e.sum();
  grad = e / sum;
  grad[label] -= 1.0;
  return std::log(sum) + zmax - z[label];
}

}  // namespace

const char* to_string(Architecture a) { return a == Architecture::PointMlp ? "pointmlp" : "depthconv"; }

Architecture parse_architecture(const std::string& s) {
  if (s == "pointmlp") return Architecture::PointMlp;
  if (s == "depthconv") return Architecture::DepthConv;
  throw Error(ErrorCode::InvalidConfig, "unknown architecture '" + s + "'");
}

const char* to_string(AttackMode m) { return m == AttackMode::Dodge ? "dodge" : "impersonate"; }

AttackMode parse_mode(const std::string& s) {
  if (s == "dodge") return AttackMode::Dodge;
  if (s == "impersonate") return AttackMode::Impersonate;
  throw Error(ErrorCode::InvalidConfig, "unknown mode '" + s + "'");
}

std::vector<int> default_widths(Architecture arch) {
  return arch == Architecture::PointMlp ? std::vector<int>{32, 64, 32} : std::vector<int>{8, 16, 64};
}

ModelParams init_model(Architecture arch, int classes, std::vector<int> widths, std::uint64_t seed, int input_size) {
  if (classes < 2) throw Error(ErrorCode::InvalidConfig, "need at least 2 classes");
  if (widths.empty()) widths = default_widths(arch);
  if (widths.size() != 3 || *std::min_element(widths.begin(), widths.end()) < 1) {
    throw Error(ErrorCode::InvalidConfig, "widths must hold 3 positive entries");
  }
  ModelParams m;
  m.architecture = arch;
  m.classes = classes;
  m.seed = seed;
  m.widths = widths;
  m.input_size = input_size;
  for (int c = 0; c < classes; ++c) m.class_names.push_back("id" + std::to_string(c));
  std::vector<std::pair<int, int>> shapes;  // (out, in)
  if (arch == Architecture::PointMlp) {
    shapes = {{widths[0], 3}, {widths[1], widths[0]}, {widths[2], widths[1]}, {classes, widths[2]}};
  } else {
    const int s2 = conv_out(conv_out(m.input_size));
    shapes = {{widths[0], kKernel * kKernel},
              {widths[1], widths[0] * kKernel * kKernel},
              {widths[2], widths[1] * s2 * s2},
              {classes, widths[2]}};
  }
  Rng rng(derive_seed(seed, 0x1417));
  std::normal_distribution<double> unit(0.0, 1.0);
  for (const auto& [out, in] : shapes) {
    Layer l;
    const double sd = std::sqrt(2.0 / in);
    l.weight = MatrixXd::NullaryExpr(out, in, [&]() { return sd * unit(rng); });
    l.bias = VectorXd::Zero(out);
    m.layers.push_back(std::move(l));
  }
  return m;
}

void ModelParams::validate() const {
  if (classes < 2 || layers.size() != 4 || widths.size() != 3) throw Error(ErrorCode::ShapeMismatch, "model layout");
  if (static_cast<int>(class_names.size()) != classes) throw Error(ErrorCode::ShapeMismatch, "class names");
  const ModelParams ref = init_model(architecture, classes, widths, 0, input_size);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != ref.layers[i].weight.rows() || layers[i].weight.cols() != ref.layers[i].weight.cols() ||
        layers[i].bias.size() != ref.layers[i].bias.size()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + " shape");
    }
    if (!layers[i].weight.allFinite() || !layers[i].bias.allFinite()) {
      throw Error(ErrorCode::TrainingDiverged, "non-finite weights in layer " + std::to_string(i));
    }
  }
}

Logits classify(const ModelParams& model, const PointCloud& normalized) {
  if (model.architecture != Architecture::PointMlp) throw Error(ErrorCode::ShapeMismatch, "depth model given a cloud");
  Logits z;
  point_pass(model, normalized, nullptr, z, nullptr, nullptr);
  return z;
}

Logits classify(const ModelParams& model, const DepthImage& depth) {
  if (model.architecture != Architecture::DepthConv) throw Error(ErrorCode::ShapeMismatch, "point model given a depth image");
  Logits z;
  depth_pass(model, depth, nullptr, z, nullptr, nullptr);
  return z;
}

PointGradient classify_gradient(const ModelParams& model, const PointCloud& normalized, const LossFn& loss) {
  if (model.architecture != Architecture::PointMlp) throw Error(ErrorCode::ShapeMismatch, "depth model given a cloud");
  PointGradient r;
  r.loss = point_pass(model, normalized, &loss, r.logits, nullptr, &r.grad);
  return r;
}

DepthGradient classify_gradient(const ModelParams& model, const DepthImage& depth, const LossFn& loss) {
  if (model.architecture != Architecture::DepthConv) throw Error(ErrorCode::ShapeMismatch, "point model given a depth image");
  DepthGradient r;
  r.loss = depth_pass(model, depth, &loss, r.logits, nullptr, &r.grad);
  return r;
}

Normalized preprocess_cloud(const ModelParams& model, const PointCloud& cloud, std::uint64_t seed) {
  return renormalize(cloud, model.points, seed);
}

int argmax(const Logits& z) {
  int best = 0;
  for (int i = 1; i < z.size(); ++i)
    if (z[i] > z[best]) best = i;
  return best;
}

Eigen::VectorXd softmax(const Logits& z) {
  const VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

LossValue logits_loss(const Logits& z, int target, AttackMode mode, double kappa) {
  if (target < 0 || target >= z.size()) throw Error(ErrorCode::InvalidConfig, "target class out of range");
  int other = target == 0 ? 1 : 0;
  for (int i = 0; i < z.size(); ++i)
    if (i != target && z[i] > z[other]) other = i;
  const double margin = mode == AttackMode::Impersonate ? z[other] - z[target] : z[target] - z[other];
  LossValue r;
  r.grad = Logits::Zero(z.size());
  if (margin <= -kappa) {
    r.value = -kappa;
    return r;
  }
  r.value = margin;
  const double sign = mode == AttackMode::Impersonate ? 1.0 : -1.0;
  r.grad[other] = sign;
  r.grad[target] = -sign;
  return r;
}

bool criterion_met(const Logits& z, int target, AttackMode mode) {
  const int top = argmax(z);
  return mode == AttackMode::Impersonate ? top == target : top != target;
}

double accuracy(const ModelParams& model, const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i : indices) {
    const Logits z = model.architecture == Architecture::PointMlp
                         ? classify(model, preprocess_cloud(model, data.clouds[i], derive_seed(model.seed, i)).cloud)
                         : classify(model, data.depths[i]);
    if (argmax(z) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

TrainReport train(const Dataset& data, const TrainConfig& cfg) {
  const bool points = data.kind == Architecture::PointMlp;
  const std::size_t n = data.size();
  if (points ? data.clouds.size() != n : data.depths.size() != n) throw Error(ErrorCode::ShapeMismatch, "dataset");
  if (data.classes < 2) throw Error(ErrorCode::InvalidConfig, "need at least 2 classes");
  std::vector<std::vector<std::size_t>> by_class(data.classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (data.labels[i] < 0 || data.labels[i] >= data.classes) throw Error(ErrorCode::InvalidConfig, "label out of range");
    by_class[data.labels[i]].push_back(i);
  }
  for (const auto& c : by_class)
    if (c.size() < 8) throw Error(ErrorCode::InvalidConfig, "need at least 8 samples per class");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0) || cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw Error(ErrorCode::InvalidConfig, "train config");

  TrainReport report;
  ModelParams& m = report.model;
  m = init_model(data.kind, data.classes, cfg.widths, cfg.seed, points ? 64 : data.depths.front().depth.width);
  m.points = cfg.points;
  if (!data.class_names.empty()) m.class_names = data.class_names;

  Rng split_rng(derive_seed(cfg.seed, 0x5b1));
  std::vector<std::size_t> train_idx;
  for (auto& c : by_class) {
    std::shuffle(c.begin(), c.end(), split_rng);
    const auto hold = static_cast<std::size_t>(std::lround(cfg.validation_fraction * static_cast<double>(c.size())));
    for (std::size_t j = 0; j < c.size(); ++j) (j + hold < c.size() ? train_idx : report.validation_indices).push_back(c[j]);
  }
  std::sort(report.validation_indices.begin(), report.validation_indices.end());

  std::vector<PointCloud> prepared(points ? n : 0);
  if (points)
    for (std::size_t i : train_idx) prepared[i] = preprocess_cloud(m, data.clouds[i], derive_seed(m.seed, i)).cloud;

  Rng order_rng(derive_seed(cfg.seed, 0x0de));
  auto velocity = zero_like(m.layers);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    if (epoch >= cfg.epochs / 2) lr *= 0.3;
    if (epoch >= (3 * cfg.epochs) / 4) lr *= 0.3;
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
      auto grads = zero_like(m.layers);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = train_idx[b];
        const int label = data.labels[i];
        const LossFn ce = [label](const Logits& z, Logits& g) { return cross_entropy(z, label, g); };
        Logits z;
        double l;
        if (points) {
          if (cfg.tiv_augment) {
            const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) * n + i);
            const PointCloud moved = random_transform(data.clouds[i], cfg.augment, s);
            l = point_pass(m, preprocess_cloud(m, moved, derive_seed(m.seed, i)).cloud, &ce, z, &grads, nullptr);
          } else {
            l = point_pass(m, prepared[i], &ce, z, &grads, nullptr);
          }
        } else {
          l = depth_pass(m, data.depths[i], &ce, z, &grads, nullptr);
        }
        if (!std::isfinite(l)) throw Error(ErrorCode::TrainingDiverged, "non-finite loss at epoch " + std::to_string(epoch));
        epoch_loss += l;
      }
      double scale = 1.0 / static_cast<double>(end - start);
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads) sq += g.weight.squaredNorm() + g.bias.squaredNorm();
        const double norm = std::sqrt(sq) * scale;
        if (norm > cfg.clip_norm) scale *= cfg.clip_norm / norm;
      }
      for (std::size_t k = 0; k < m.layers.size(); ++k) {
        velocity[k].weight = cfg.momentum * velocity[k].weight + scale * grads[k].weight;
        velocity[k].bias = cfg.momentum * velocity[k].bias + scale * grads[k].bias;
        m.layers[k].weight -= lr * velocity[k].weight;
        m.layers[k].bias -= lr * velocity[k].bias;
      }
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(1, train_idx.size()));
    if (!std::isfinite(epoch_loss)) throw Error(ErrorCode::TrainingDiverged, "non-finite loss");
    report.epoch_loss.push_back(epoch_loss);
  }
  m.validate();
  report.train_accuracy = accuracy(m, data, train_idx);
  report.validation_accuracy = accuracy(m, data, report.validation_indices);
  return report;
}

}  // namespace fringeforge
