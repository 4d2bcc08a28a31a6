#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eqvs/geom.hpp"
#include "eqvs/grad.hpp"
#include "eqvs/imaging.hpp"

namespace eqvs {

/// Encoder f: fixed average pooling, strided 4x4 convolutions (stride 2,
/// pad 1) and an MLP head. The transformer h is an MLP on [feature; pose]
/// whose output is added back to the feature.
struct EncoderConfig {
  int image_size = 64;
  int pool = 2;
  std::vector<int> conv_channels{16, 32, 32};
  std::vector<int> head_widths{128, 128};
  int feature_dim = 64;
  std::vector<int> transformer_widths{256, 256};

  /// Spatial size after pooling and convolutions.
  int conv_output_size() const;
  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

inline constexpr int kPoseDim = 7;

template <class Scalar>
struct Model {
  EncoderConfig config;
  grad::ParamSet<Scalar> params;

  template <class Other>
  Model<Other> cast() const {
    return {config, params.template cast<Other>()};
  }
};

/// He-initialized encoder and transformer; the last transformer layer is zero
/// so the residual starts at exactly zero.
Model<float> init_model(const EncoderConfig& config, std::uint64_t seed);

/// Adds encoder parameters named `<prefix>.*` to `params`.
void init_encoder_params(grad::ParamSet<float>& params, const EncoderConfig& config, const std::string& prefix,
                         std::mt19937_64& rng);
/// Adds an MLP `<prefix>.fc<i>` with the given widths (input first).
void init_mlp_params(grad::ParamSet<float>& params, const std::string& prefix, const std::vector<int>& widths,
                     std::mt19937_64& rng, bool zero_last = false);

/// NHWC batch tensor with the 0.5 background offset removed.
template <class Scalar>
grad::Tensor<Scalar> images_to_tensor(const std::vector<const Image*>& images, int size);

/// Graph builders shared by training, inference and the RPR baseline.
template <class Scalar>
grad::Var build_encoder(grad::Graph<Scalar>& g, const EncoderConfig& config, grad::Var images,
                        const std::string& prefix = "f");
template <class Scalar>
grad::Var build_mlp(grad::Graph<Scalar>& g, grad::Var x, const std::string& prefix, std::size_t layers);
template <class Scalar>
grad::Var build_transformer(grad::Graph<Scalar>& g, const EncoderConfig& config, grad::Var features,
                            grad::Var poses);

/// (tx, ty, tz, qw, qx, qy, qz), w >= 0, zero translation for reduced transforms.
Eigen::Matrix<double, kPoseDim, 1> pose_to_vec(const RelTransform& p);
RelTransform vec_to_pose(const Eigen::Matrix<double, kPoseDim, 1>& v, bool reduced);

/// f(I). Throws std::invalid_argument when the image size does not match.
Eigen::VectorXf extract(const Model<float>& model, const Image& img);
/// One feature row per image.
Eigen::MatrixXf extract_batch(const Model<float>& model, const std::vector<const Image*>& images);

/// h_W(feat, p) = feat + MLP([feat; pose_to_vec(p)]).
Eigen::VectorXf transform_feature(const Model<float>& model, const Eigen::VectorXf& feat, const RelTransform& p);

struct LossWeights {
  double lambda = 0.1;
  double c = 1.0;
  /// Radians per meter in the norm of unreduced transforms.
  double translation_weight = 1.0;
};

struct LossTerms {
  double equi = 0.0;
  double geo = 0.0;
  double total = 0.0;
};

/// Index pair into an image list with its relative transform.
struct TrainingPair {
  int src = 0;
  int tar = 0;
  RelTransform p;
};

struct TrainBatch {
  std::vector<const Image*> src;
  std::vector<const Image*> tar;
  std::vector<RelTransform> p;

  std::size_t size() const { return p.size(); }
  void validate() const;
};

TrainBatch make_batch(const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                      const std::vector<std::size_t>& indices);

/// Rolling a camera about its optical axis rotates its image about the
/// principal point, so any pair yields further exact pairs: each image is
/// rolled by its own random angle and the label becomes Z_tar * p * Z_src^-1.
/// The rolled images are written to `storage`, which the batch points into.
TrainBatch make_rolled_batch(const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                             const std::vector<std::size_t>& indices, const CameraIntrinsics& k,
                             std::mt19937_64& rng, std::vector<Image>& storage);

/// Label of a pair after rolling the source by `src_roll` and the target by
/// `tar_roll` radians.
RelTransform rolled_label(const RelTransform& p, double src_roll, double tar_roll);
Image roll_image(const Image& img, const CameraIntrinsics& k, double angle);

/// Feature-level definitions. Rows are samples.
double equivariance_loss(const Eigen::MatrixXd& f_tar, const Eigen::MatrixXd& h_src);
double geodesic_loss(const Eigen::MatrixXd& h_src, const Eigen::MatrixXd& f_src, const Eigen::VectorXd& p_norms,
                     double c);
double total_loss(double equi, double geo, double lambda);

/// Vars of the Siamese loss graph.
struct LossVars {
  grad::Var f_src, f_tar, h_src, equi, geo, total;
};

template <class Scalar>
LossVars build_loss(grad::Graph<Scalar>& g, const Model<Scalar>& model, const TrainBatch& batch,
                    const LossWeights& weights);

template <class Scalar>
LossTerms evaluate_loss(const Model<Scalar>& model, const TrainBatch& batch, const LossWeights& weights);

/// Loss and parameter gradients in one pass.
template <class Scalar>
LossTerms loss_and_grads(const Model<Scalar>& model, const TrainBatch& batch, const LossWeights& weights,
                         grad::ParamSet<Scalar>& grads);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  LossWeights weights;
  grad::OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  /// Half-cosine learning-rate decay from optimizer.lr towards 0 over all steps.
  bool cosine_decay = false;
  /// Random roll augmentation with these intrinsics (see make_rolled_batch).
  std::optional<CameraIntrinsics> roll_augment;
};

struct EpochStats {
  int epoch = 0;
  LossTerms loss;
};

struct TrainResult {
  /// Loss over the whole training set before the first update.
  LossTerms initial;
  /// Mean minibatch loss per epoch, epochs 1..N.
  std::vector<EpochStats> epochs;
};

using EpochCallback = std::function<void(const EpochStats&)>;
/// Loss and gradients for the pairs at the given indices.
using BatchLossFn = std::function<LossTerms(const std::vector<std::size_t>& indices, grad::ParamSet<float>& grads)>;

/// Shared minibatch loop: seeded shuffle per epoch, one optimizer step per
/// batch, mean loss per epoch weighted by batch size.
std::vector<EpochStats> train_loop(grad::ParamSet<float>& params, std::size_t pair_count, const TrainConfig& config,
                                   const BatchLossFn& batch_loss, const EpochCallback& on_epoch = {});

/// Minibatch training with a seeded shuffle per epoch. Both branches go
/// through the same encoder parameters.
TrainResult train(Model<float>& model, const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean loss over all pairs, in batches of `batch_size`.
LossTerms evaluate_dataset(const Model<float>& model, const std::vector<Image>& images,
                           const std::vector<TrainingPair>& pairs, const LossWeights& weights,
                           int batch_size = 64);

/// "epoch,L_equi,L_geo,L" rows.
std::string stats_csv(const TrainResult& result);

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace eqvs
