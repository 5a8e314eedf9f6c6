// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fringeforge/core.hpp"
#include "fringeforge/reconstruct.hpp"

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace fringeforge {

enum class Architecture { PointMlp, DepthConv };

const char* to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

using Logits = Eigen::VectorXd;

struct Layer {
  Eigen::MatrixXd weight;  // out x in (conv: out x in_channels*k*k)
  Eigen::VectorXd bias;
};

/// pointmlp widths: {per-point 1, per-point 2, head hidden}, default {32, 64, 32}.
/// depthconv widths: {conv1 channels, conv2 channels, dense hidden}, default {8, 16, 64}.
struct ModelParams {
  Architecture architecture = Architecture::PointMlp;
  int classes = 0;
  std::uint64_t seed = 0;
  std::vector<int> widths;
  std::vector<Layer> layers;
  std::vector<std::string> class_names;
  std::size_t points = 512;  // FPS target for point clouds
  int input_size = 64;        // depth crop side
  double depth_scale = 50.0;  // mm per input unit

  void validate() const;  // shapes consistent, weights finite
};

ModelParams init_model(Architecture arch, int classes, std::vector<int> widths, std::uint64_t seed,
                       int input_size = 64);
std::vector<int> default_widths(Architecture arch);

/// Logits of a normalized cloud (pointmlp) or a depth image (depthconv).
Logits classify(const ModelParams& model, const PointCloud& normalized);
Logits classify(const ModelParams& model, const DepthImage& depth);

/// Returns the loss and writes dloss/dlogits into grad (same length as logits).
using LossFn = std::function<double(const Logits& logits, Logits& grad)>;

struct PointGradient {
  Logits logits;
  double loss = 0.0;
  std::vector<Vec3> grad;  // dloss/dpoint
};
PointGradient classify_gradient(const ModelParams& model, const PointCloud& normalized, const LossFn& loss);

struct DepthGradient {
  Logits logits;
  double loss = 0.0;
  Image grad;  // dloss/ddepth (zero outside the mask)
};
DepthGradient classify_gradient(const ModelParams& model, const DepthImage& depth, const LossFn& loss);

/// FPS to model.points, then renormalize; the seed feeds FPS.
Normalized preprocess_cloud(const ModelParams& model, const PointCloud& cloud, std::uint64_t seed);

int argmax(const Logits& z);  // ties resolve to the lower index
Eigen::VectorXd softmax(const Logits& z);

enum class AttackMode { Dodge, Impersonate };
const char* to_string(AttackMode m);
AttackMode parse_mode(const std::string& s);

struct LossValue {
  double value = 0.0;
  Logits grad;
};

/// C&W margin. impersonate: max(max_{i!=t} z_i - z_t, -kappa);
/// dodge: max(z_t - max_{i!=t} z_i, -kappa) with t the true label.
LossValue logits_loss(const Logits& z, int target, AttackMode mode, double kappa);

/// Argmax criterion: dodge wants argmax != t, impersonate wants argmax == t.
bool criterion_met(const Logits& z, int target, AttackMode mode);

struct Dataset {
  Architecture kind = Architecture::PointMlp;
  std::vector<PointCloud> clouds;  // raw clouds (preprocessed during training)
  std::vector<DepthImage> depths;
  std::vector<int> labels;
  int classes = 0;
  std::vector<std::string> class_names;
  std::size_t size() const { return labels.size(); }
};

struct TrainConfig {
  std::vector<int> widths;  // empty -> default_widths
  int epochs = 80;
  int batch_size = 8;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double clip_norm = 5.0;  // global gradient norm cap per step; 0 disables
  double validation_fraction = 0.2;
  std::size_t points = 512;
  bool tiv_augment = false;
  TransformParams augment = default_transform_params();
  std::uint64_t seed = 1;
};

struct TrainReport {
  ModelParams model;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  std::vector<double> epoch_loss;
  std::vector<std::size_t> validation_indices;
};

/// Minibatch SGD with momentum on softmax cross-entropy with a fixed step schedule.
/// Validation holds out the last fraction of every class after a seeded shuffle.
TrainReport train(const Dataset& data, const TrainConfig& config);

/// Fraction of samples whose argmax equals the label.
double accuracy(const ModelParams& model, const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace fringeforge
