#include "eqvs/repr.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace eqvs {

using grad::Index;
using grad::Shape;
using grad::Var;

int EncoderConfig::conv_output_size() const {
  int s = image_size / std::max(pool, 1);
  for (std::size_t i = 0; i < conv_channels.size(); ++i) s /= 2;
  return s;
}

void EncoderConfig::validate() const {
  if (image_size < 8) throw std::invalid_argument("EncoderConfig: image_size must be >= 8");
  if (pool < 1 || image_size % pool) throw std::invalid_argument("EncoderConfig: pool must divide image_size");
  int s = image_size / pool;
  for (int c : conv_channels) {
    if (c < 1) throw std::invalid_argument("EncoderConfig: channel counts must be positive");
    if (s % 2) throw std::invalid_argument("EncoderConfig: spatial size not divisible by 2 at every conv layer");
    s /= 2;
  }
  if (s < 1) throw std::invalid_argument("EncoderConfig: too many conv layers for the image size");
  if (feature_dim < 8) throw std::invalid_argument("EncoderConfig: feature_dim must be >= 8");
  for (int w : head_widths) {
    if (w < 1) throw std::invalid_argument("EncoderConfig: head widths must be positive");
  }
  for (int w : transformer_widths) {
    if (w < 1) throw std::invalid_argument("EncoderConfig: transformer widths must be positive");
  }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

namespace {

grad::Tensor<float> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  grad::Tensor<float> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(n(rng));
  return t;
}

}  // namespace

void init_mlp_params(grad::ParamSet<float>& params, const std::string& prefix, const std::vector<int>& widths,
                     std::mt19937_64& rng, bool zero_last) {
  if (widths.size() < 2) throw std::invalid_argument("init_mlp_params: need input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::string name = prefix + ".fc" + std::to_string(i);
    const bool last = i + 2 == widths.size();
    if (last && zero_last) {
      params.add(name + ".w", grad::Tensor<float>({widths[i], widths[i + 1]}));
    } else {
      params.add(name + ".w", he_normal({widths[i], widths[i + 1]}, widths[i], rng));
    }
    params.add(name + ".b", grad::Tensor<float>({widths[i + 1]}));
  }
}

void init_encoder_params(grad::ParamSet<float>& params, const EncoderConfig& config, const std::string& prefix,
                         std::mt19937_64& rng) {
  config.validate();
  int cin = Image::kChannels;
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    const int cout = config.conv_channels[i];
    const std::string name = prefix + ".conv" + std::to_string(i);
    params.add(name + ".w", he_normal({4, 4, cin, cout}, 16 * cin, rng));
    params.add(name + ".b", grad::Tensor<float>({cout}));
    cin = cout;
  }
  const int s = config.conv_output_size();
  std::vector<int> widths{s * s * cin};
  widths.insert(widths.end(), config.head_widths.begin(), config.head_widths.end());
  widths.push_back(config.feature_dim);
  init_mlp_params(params, prefix + ".head", widths, rng);
}

Model<float> init_model(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model<float> model;
  model.config = config;
  init_encoder_params(model.params, config, "f", rng);
  std::vector<int> widths{config.feature_dim + kPoseDim};
  widths.insert(widths.end(), config.transformer_widths.begin(), config.transformer_widths.end());
  widths.push_back(config.feature_dim);
  init_mlp_params(model.params, "h", widths, rng, /*zero_last=*/true);
  return model;
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

template <class Scalar>
grad::Tensor<Scalar> images_to_tensor(const std::vector<const Image*>& images, int size) {
  const Index n = static_cast<Index>(images.size());
  grad::Tensor<Scalar> t({n, size, size, Image::kChannels});
  for (Index i = 0; i < n; ++i) {
    const Image& img = *images[static_cast<std::size_t>(i)];
    if (img.width() != size || img.height() != size) {
      throw std::invalid_argument("image " + std::to_string(i) + " is " + std::to_string(img.width()) + "x" +
                                  std::to_string(img.height()) + ", model expects " + std::to_string(size) + "x" +
                                  std::to_string(size));
    }
    t.data().segment(i * img.data().size(), img.data().size()) =
        (img.data() - 0.5f).matrix().template cast<Scalar>();
  }
  return t;
}

template <class Scalar>
Var build_mlp(grad::Graph<Scalar>& g, Var x, const std::string& prefix, std::size_t layers) {
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = prefix + ".fc" + std::to_string(i);
    x = g.linear(x, name + ".w", name + ".b");
    if (i + 1 < layers) x = g.relu(x);
  }
  return x;
}

template <class Scalar>
Var build_encoder(grad::Graph<Scalar>& g, const EncoderConfig& config, Var images, const std::string& prefix) {
  Var x = images;
  if (config.pool > 1) x = g.avg_pool(x, config.pool);
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    const std::string name = prefix + ".conv" + std::to_string(i);
    x = g.relu(g.conv2d(x, g.parameter(name + ".w"), g.parameter(name + ".b"), {2, 1}));
  }
  const Index n = g.value(x).rows();
  x = g.reshape(x, {n, g.value(x).size() / std::max<Index>(n, 1)});
  return build_mlp(g, x, prefix + ".head", config.head_widths.size() + 1);
}

template <class Scalar>
Var build_transformer(grad::Graph<Scalar>& g, const EncoderConfig& config, Var features, Var poses) {
  const Var residual = build_mlp(g, g.concat(features, poses), "h", config.transformer_widths.size() + 1);
  return g.add(features, residual);
}

// ---------------------------------------------------------------------------
// Pose vectors and inference helpers
// ---------------------------------------------------------------------------

Eigen::Matrix<double, kPoseDim, 1> pose_to_vec(const RelTransform& p) {
  const auto a = p.to_array();
  return Eigen::Map<const Eigen::Matrix<double, kPoseDim, 1>>(a.data());
}

RelTransform vec_to_pose(const Eigen::Matrix<double, kPoseDim, 1>& v, bool reduced) {
  std::array<double, 7> a{};
  Eigen::Map<Eigen::Matrix<double, kPoseDim, 1>>(a.data()) = v;
  return RelTransform::from_array(a, reduced);
}

Eigen::MatrixXf extract_batch(const Model<float>& model, const std::vector<const Image*>& images) {
  if (images.empty()) return Eigen::MatrixXf(0, model.config.feature_dim);
  grad::Graph<float> g(&model.params);
  const Var x = g.constant(images_to_tensor<float>(images, model.config.image_size));
  return g.value(build_encoder(g, model.config, x)).matrix();
}

Eigen::VectorXf extract(const Model<float>& model, const Image& img) {
  return extract_batch(model, {&img}).row(0).transpose();
}

Eigen::VectorXf transform_feature(const Model<float>& model, const Eigen::VectorXf& feat, const RelTransform& p) {
  if (feat.size() != model.config.feature_dim) throw std::invalid_argument("transform_feature: feature size mismatch");
  if (!feat.allFinite()) throw std::invalid_argument("transform_feature: non-finite feature");
  grad::Graph<float> g(&model.params);
  const Var f = g.constant(grad::Tensor<float>({1, feat.size()}, feat));
  const Var q = g.constant(grad::Tensor<float>({1, kPoseDim}, pose_to_vec(p).cast<float>()));
  return g.value(build_transformer(g, model.config, f, q)).data();
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

void TrainBatch::validate() const {
  if (p.empty()) throw std::invalid_argument("TrainBatch: empty batch");
  if (src.size() != p.size() || tar.size() != p.size()) throw std::invalid_argument("TrainBatch: length mismatch");
}

TrainBatch make_batch(const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                      const std::vector<std::size_t>& indices) {
  TrainBatch b;
  for (std::size_t i : indices) {
    const TrainingPair& tp = pairs.at(i);
    b.src.push_back(&images.at(static_cast<std::size_t>(tp.src)));
    b.tar.push_back(&images.at(static_cast<std::size_t>(tp.tar)));
    b.p.push_back(tp.p);
  }
  return b;
}

Image roll_image(const Image& img, const CameraIntrinsics& k, double angle) {
  const Mat3 z = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
  return warp(img, k.matrix() * z * k.inverse());
}

RelTransform rolled_label(const RelTransform& p, double src_roll, double tar_roll) {
  const Quat za(Eigen::AngleAxisd(src_roll, Vec3::UnitZ()));
  const Quat zb(Eigen::AngleAxisd(tar_roll, Vec3::UnitZ()));
  const Quat q = (zb * p.q * za.conjugate()).normalized();
  if (p.reduced) return RelTransform::rotation(q);
  return RelTransform::rigid(zb * p.t, q);
}

TrainBatch make_rolled_batch(const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                             const std::vector<std::size_t>& indices, const CameraIntrinsics& k,
                             std::mt19937_64& rng, std::vector<Image>& storage) {
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  storage.clear();
  storage.reserve(2 * indices.size());
  TrainBatch b;
  for (std::size_t i : indices) {
    const TrainingPair& tp = pairs.at(i);
    const double a = angle(rng);
    const double c = angle(rng);
    storage.push_back(roll_image(images.at(static_cast<std::size_t>(tp.src)), k, a));
    storage.push_back(roll_image(images.at(static_cast<std::size_t>(tp.tar)), k, c));
    b.p.push_back(rolled_label(tp.p, a, c));
  }
  for (std::size_t j = 0; j < indices.size(); ++j) {
    b.src.push_back(&storage[2 * j]);
    b.tar.push_back(&storage[2 * j + 1]);
  }
  return b;
}

double equivariance_loss(const Eigen::MatrixXd& f_tar, const Eigen::MatrixXd& h_src) {
  if (f_tar.rows() != h_src.rows() || f_tar.cols() != h_src.cols() || f_tar.rows() == 0) {
    throw std::invalid_argument("equivariance_loss: shape mismatch");
  }
  return (f_tar - h_src).rowwise().squaredNorm().mean();
}

double geodesic_loss(const Eigen::MatrixXd& h_src, const Eigen::MatrixXd& f_src, const Eigen::VectorXd& p_norms,
                     double c) {
  if (!(c > 0)) throw std::invalid_argument("geodesic_loss: c must be positive");
  if (h_src.rows() != f_src.rows() || h_src.cols() != f_src.cols() || p_norms.size() != h_src.rows() ||
      h_src.rows() == 0) {
    throw std::invalid_argument("geodesic_loss: shape mismatch");
  }
  return ((h_src - f_src).rowwise().norm() - c * p_norms).cwiseAbs().mean();
}

double total_loss(double equi, double geo, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("total_loss: lambda must be non-negative");
  return equi + lambda * geo;
}

template <class Scalar>
LossVars build_loss(grad::Graph<Scalar>& g, const Model<Scalar>& model, const TrainBatch& batch,
                    const LossWeights& weights) {
  batch.validate();
  if (!(weights.c > 0) || !(weights.lambda >= 0)) throw std::invalid_argument("LossWeights: need c > 0, lambda >= 0");
  const Index b = static_cast<Index>(batch.size());
  const int size = model.config.image_size;
  grad::Tensor<Scalar> poses({b, kPoseDim});
  grad::Tensor<Scalar> norms({b, 1});
  for (Index i = 0; i < b; ++i) {
    const RelTransform& p = batch.p[static_cast<std::size_t>(i)];
    poses.matrix().row(i) = pose_to_vec(p).transpose().template cast<Scalar>();
    norms.data()[i] = static_cast<Scalar>(weights.c * transform_norm(p, weights.translation_weight));
  }
  LossVars v;
  v.f_src = build_encoder(g, model.config, g.constant(images_to_tensor<Scalar>(batch.src, size)));
  v.f_tar = build_encoder(g, model.config, g.constant(images_to_tensor<Scalar>(batch.tar, size)));
  v.h_src = build_transformer(g, model.config, v.f_src, g.constant(std::move(poses)));
  v.equi = g.mse(v.f_tar, v.h_src);
  const Var dist = g.row_norm(g.sub(v.h_src, v.f_src));
  v.geo = g.reduce_mean(g.abs(g.sub(dist, g.constant(std::move(norms)))));
  v.total = g.add(v.equi, g.scale(v.geo, static_cast<Scalar>(weights.lambda)));
  return v;
}

template <class Scalar>
LossTerms evaluate_loss(const Model<Scalar>& model, const TrainBatch& batch, const LossWeights& weights) {
  grad::Graph<Scalar> g(&model.params);
  const LossVars v = build_loss(g, model, batch, weights);
  return {static_cast<double>(g.value(v.equi).item()), static_cast<double>(g.value(v.geo).item()),
          static_cast<double>(g.value(v.total).item())};
}

template <class Scalar>
LossTerms loss_and_grads(const Model<Scalar>& model, const TrainBatch& batch, const LossWeights& weights,
                         grad::ParamSet<Scalar>& grads) {
  grad::Graph<Scalar> g(&model.params);
  const LossVars v = build_loss(g, model, batch, weights);
  g.backward(v.total);
  grads = g.param_grads();
  return {static_cast<double>(g.value(v.equi).item()), static_cast<double>(g.value(v.geo).item()),
          static_cast<double>(g.value(v.total).item())};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

LossTerms evaluate_dataset(const Model<float>& model, const std::vector<Image>& images,
                           const std::vector<TrainingPair>& pairs, const LossWeights& weights, int batch_size) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_dataset: no pairs");
  if (batch_size < 1) throw std::invalid_argument("evaluate_dataset: batch_size must be positive");
  LossTerms sum;
  for (std::size_t begin = 0; begin < pairs.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(pairs.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const LossTerms l = evaluate_loss(model, make_batch(images, pairs, idx), weights);
    const double w = static_cast<double>(idx.size());
    sum.equi += w * l.equi;
    sum.geo += w * l.geo;
    sum.total += w * l.total;
  }
  const double n = static_cast<double>(pairs.size());
  return {sum.equi / n, sum.geo / n, sum.total / n};
}

std::vector<EpochStats> train_loop(grad::ParamSet<float>& params, std::size_t pair_count, const TrainConfig& config,
                                   const BatchLossFn& batch_loss, const EpochCallback& on_epoch) {
  if (pair_count == 0) throw std::invalid_argument("train: empty dataset");
  if (config.epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  std::mt19937_64 rng(config.seed);
  grad::OptimizerState<float> state;
  std::vector<std::size_t> order(pair_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  grad::ParamSet<float> grads;
  std::vector<EpochStats> stats;
  const std::size_t batches = (pair_count + static_cast<std::size_t>(config.batch_size) - 1) /
                              static_cast<std::size_t>(config.batch_size);
  const double total_steps = static_cast<double>(batches) * config.epochs;
  grad::OptimizerConfig opt = config.optimizer;
  double step = 0.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossTerms sum;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const LossTerms l = batch_loss(idx, grads);
      if (!std::isfinite(l.total)) {
        throw std::runtime_error("train: non-finite loss in epoch " + std::to_string(epoch));
      }
      if (config.cosine_decay) opt.lr = config.optimizer.lr * 0.5 * (1.0 + std::cos(kPi * step / total_steps));
      grad::optimizer_step(params, grads, state, opt);
      step += 1.0;
      const double w = static_cast<double>(idx.size());
      sum.equi += w * l.equi;
      sum.geo += w * l.geo;
      sum.total += w * l.total;
    }
    const double n = static_cast<double>(pair_count);
    stats.push_back({epoch, {sum.equi / n, sum.geo / n, sum.total / n}});
    if (on_epoch) on_epoch(stats.back());
  }
  return stats;
}

TrainResult train(Model<float>& model, const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (pairs.empty()) throw std::invalid_argument("train: empty dataset");
  TrainResult result;
  result.initial = evaluate_dataset(model, images, pairs, config.weights);
  std::mt19937_64 roll_rng(derive_seed(config.seed, 1));
  std::vector<Image> storage;
  result.epochs = train_loop(
      model.params, pairs.size(), config,
      [&](const std::vector<std::size_t>& idx, grad::ParamSet<float>& grads) {
        const TrainBatch b = config.roll_augment
                                 ? make_rolled_batch(images, pairs, idx, *config.roll_augment, roll_rng, storage)
                                 : make_batch(images, pairs, idx);
        return loss_and_grads(model, b, config.weights, grads);
      },
      on_epoch);
  return result;
}

std::string stats_csv(const TrainResult& result) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,L_equi,L_geo,L\n";
  for (const auto& e : result.epochs) {
    os << e.epoch << ',' << e.loss.equi << ',' << e.loss.geo << ',' << e.loss.total << '\n';
  }
  return os.str();
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal-length samples");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt((da * da).sum() * (db * db).sum());
  return denom > 0 ? (da * db).sum() / denom : 0.0;
}

namespace {

// Average ranks; ties share the mean rank.
Eigen::VectorXd ranks(const Eigen::VectorXd& v) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
  Eigen::VectorXd r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return pearson(ranks(a), ranks(b)); }

#define EQVS_INSTANTIATE(S)                                                                                  \
  template grad::Tensor<S> images_to_tensor<S>(const std::vector<const Image*>&, int);                      \
  template Var build_encoder<S>(grad::Graph<S>&, const EncoderConfig&, Var, const std::string&);            \
  template Var build_mlp<S>(grad::Graph<S>&, Var, const std::string&, std::size_t);                         \
  template Var build_transformer<S>(grad::Graph<S>&, const EncoderConfig&, Var, Var);                       \
  template LossVars build_loss<S>(grad::Graph<S>&, const Model<S>&, const TrainBatch&, const LossWeights&); \
  template LossTerms evaluate_loss<S>(const Model<S>&, const TrainBatch&, const LossWeights&);              \
  template LossTerms loss_and_grads<S>(const Model<S>&, const TrainBatch&, const LossWeights&,              \
                                       grad::ParamSet<S>&);

EQVS_INSTANTIATE(float)
EQVS_INSTANTIATE(double)
#undef EQVS_INSTANTIATE

}  // namespace eqvs
