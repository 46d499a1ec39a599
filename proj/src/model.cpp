#include "pnr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

#include "pnr/error.hpp"

namespace pnr {

ModelDims ModelDims::from_config(const TrainConfig& cfg) {
  ModelDims dims;
  dims.d = cfg.d;
  dims.feat_dim = cfg.feat_dim;
  dims.hidden = cfg.hidden;
  dims.layers = cfg.layers;
  return dims;
}

namespace {

Block make_block(const std::vector<int>& widths, Rng* rng) {
  Block b;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    Matrix w(widths[k], widths[k + 1]);
    if (rng != nullptr) {
      const double limit = std::sqrt(6.0 / (widths[k] + widths[k + 1]));
      for (long long i = 0; i < w.size(); ++i) w.data()[i] = rng->uniform(-limit, limit);
    }
    b.weights.push_back(std::move(w));
    b.biases.push_back(Matrix(1, widths[k + 1]));
  }
  return b;
}

std::vector<int> chain_widths(int in, int hidden, int out, int layers) {
  std::vector<int> widths = {in};
  for (int k = 0; k < layers - 1; ++k) widths.push_back(hidden);
  widths.push_back(out);
  return widths;
}

ModelParams build_params(const ModelDims& dims, Rng* rng) {
  ModelParams p;
  p.dims = dims;
  p.appearance =
      make_block(chain_widths(dims.patch_values(), dims.hidden, dims.feat_dim, dims.layers), rng);
  // pose: `layers` tanh-activated maps onto the hidden width, then a final
  // linear layer down to d
  std::vector<int> pose_widths =
      chain_widths(dims.pose_patch_values(), dims.hidden, dims.hidden, dims.layers);
  pose_widths.push_back(dims.d);
  p.pose = make_block(pose_widths, rng);
  p.generator =
      make_block(chain_widths(dims.feat_dim, dims.hidden, dims.patch_values(), dims.layers), rng);
  p.disc_image =
      make_block({dims.image_values() + dims.image_values(), dims.hidden, 1}, rng);
  p.disc_pose =
      make_block({dims.image_values() + dims.pose_values(), dims.hidden, 1}, rng);
  return p;
}

}  // namespace

ModelParams ModelParams::init(const ModelDims& dims, Rng& rng) {
  return build_params(dims, &rng);
}

// ---- tape-side forward ----

namespace {

enum class Act { kNone, kTanh, kRelu, kSigmoid };

NodeId affine(Tape& tape, NodeId x, NodeId w, NodeId b) {
  NodeId xw = tape.matmul(x, w);
  // Row-broadcast bias through a ones column; its leaf gradient is unused.
  NodeId ones = tape.input(Matrix::ones(tape.value(xw).rows(), 1));
  return tape.add(xw, tape.matmul(ones, b));
}

NodeId apply_act(Tape& tape, NodeId x, Act act) {
  switch (act) {
    case Act::kNone:
      return x;
    case Act::kTanh:
      return tape.tanh(x);
    case Act::kRelu:
      return tape.relu(x);
    case Act::kSigmoid:
      return tape.sigmoid(x);
  }
  return x;
}

NodeId apply_chain(Tape& tape, const std::vector<NodeId>& ws,
                   const std::vector<NodeId>& bs, NodeId x, Act between, Act last) {
  for (std::size_t k = 0; k < ws.size(); ++k) {
    x = affine(tape, x, ws[k], bs[k]);
    x = apply_act(tape, x, k + 1 < ws.size() ? between : last);
  }
  return x;
}

}  // namespace

TapedModel::TapedModel(Tape& tape, const ModelParams& params)
    : tape_(tape), params_(params) {
  params_.for_each([&](const std::string& name, const Matrix& m, ParamGroup group) {
    leaves_[name] = tape_.input(m);
    groups_[name] = group;
  });
}

NodeId TapedModel::param_node(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

namespace {

void block_nodes(const TapedModel& model, const char* prefix, const Block& block,
                 std::vector<NodeId>& ws, std::vector<NodeId>& bs) {
  ws.clear();
  bs.clear();
  for (std::size_t k = 0; k < block.weights.size(); ++k) {
    ws.push_back(model.param_node(std::string(prefix) + ".w" + std::to_string(k)));
    bs.push_back(model.param_node(std::string(prefix) + ".b" + std::to_string(k)));
  }
}

}  // namespace

NodeId TapedModel::appearance(NodeId image_patches) const {
  std::vector<NodeId> ws, bs;
  block_nodes(*this, "fa", params_.appearance, ws, bs);
  return apply_chain(tape_, ws, bs, image_patches, Act::kTanh, Act::kNone);
}

NodeId TapedModel::pose(NodeId pose_patches) const {
  std::vector<NodeId> ws, bs;
  block_nodes(*this, "fp", params_.pose, ws, bs);
  // tanh after every layer except the final linear reduction to d
  return apply_chain(tape_, ws, bs, pose_patches, Act::kTanh, Act::kNone);
}

NodeId TapedModel::generate(NodeId features) const {
  const Matrix& v = tape_.value(features);
  if (v.rows() != params_.dims.patches()) {
    throw DimensionError("generate: feature matrix has " + std::to_string(v.rows()) +
                         " rows for a " + std::to_string(params_.dims.patches()) +
                         "-patch grid");
  }
  std::vector<NodeId> ws, bs;
  block_nodes(*this, "gen", params_.generator, ws, bs);
  return apply_chain(tape_, ws, bs, features, Act::kTanh, Act::kSigmoid);
}

namespace {

NodeId disc_logit(Tape& tape, const TapedModel& model, const char* prefix,
                  const Block& block, NodeId candidate, NodeId condition) {
  std::vector<NodeId> ws, bs;
  block_nodes(model, prefix, block, ws, bs);
  const Matrix& a = tape.value(candidate);
  const Matrix& b = tape.value(condition);
  NodeId flat_a = tape.reshape(candidate, 1, static_cast<int>(a.size()));
  NodeId flat_b = tape.reshape(condition, 1, static_cast<int>(b.size()));
  NodeId pair = tape.hconcat(flat_a, flat_b);
  return apply_chain(tape, ws, bs, pair, Act::kRelu, Act::kNone);
}

}  // namespace

NodeId TapedModel::disc_image_logit(NodeId candidate_patches, NodeId source_patches) const {
  return disc_logit(tape_, *this, "di", params_.disc_image, candidate_patches,
                    source_patches);
}

NodeId TapedModel::disc_pose_logit(NodeId candidate_patches, NodeId pose_patches) const {
  return disc_logit(tape_, *this, "dk", params_.disc_pose, candidate_patches,
                    pose_patches);
}

void TapedModel::accumulate_grads(const std::vector<Matrix>& grads, ParamGroup group,
                                  std::map<std::string, Matrix>& acc) const {
  for (const auto& [name, id] : leaves_) {
    if (groups_.at(name) != group) continue;
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, grads[id]);
    } else {
      it->second = it->second + grads[id];
    }
  }
}

Matrix extract_appearance(const ModelParams& params, const Matrix& image_patches) {
  Tape tape;
  TapedModel model(tape, params);
  return tape.value(model.appearance(tape.input(image_patches)));
}

Matrix extract_pose(const ModelParams& params, const Matrix& pose_patches) {
  Tape tape;
  TapedModel model(tape, params);
  return tape.value(model.pose(tape.input(pose_patches)));
}

Matrix generate_image(const ModelParams& params, const Matrix& features) {
  Tape tape;
  TapedModel model(tape, params);
  return tape.value(model.generate(tape.input(features)));
}

// ---- losses ----

NodeId loss_l1(Tape& tape, NodeId a, NodeId b) {
  return tape.mean(tape.abs(tape.sub(a, b)));
}

double loss_l1(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("loss_l1: shapes " + a.shape_str() + " vs " + b.shape_str());
  }
  double s = 0.0;
  for (long long i = 0; i < a.size(); ++i) s += std::fabs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.size());
}

NodeId loss_perceptual(Tape& tape, NodeId a, NodeId b, const Matrix& proj_left,
                       const Matrix& proj_right) {
  NodeId diff = tape.sub(a, b);
  NodeId left = tape.input(proj_left);
  NodeId right = tape.input(proj_right);
  NodeId projected = tape.matmul(tape.matmul(left, diff), right);
  return tape.mean(tape.abs(projected));
}

NodeId disc_loss(Tape& tape, NodeId logit_real, NodeId logit_fake) {
  return tape.add(tape.softplus(tape.scale(logit_real, -1.0)), tape.softplus(logit_fake));
}

NodeId gen_gan_loss(Tape& tape, NodeId logit_fake) {
  return tape.softplus(tape.scale(logit_fake, -1.0));
}

GanLossValues loss_gan(const ModelParams& params, ParamGroup disc,
                       const Matrix& real_candidate, const Matrix& real_condition,
                       const Matrix& fake_candidate, const Matrix& fake_condition) {
  if (disc == ParamGroup::kGenerator) {
    throw ContractError("loss_gan: disc must name a discriminator");
  }
  Tape tape;
  TapedModel model(tape, params);
  auto logit = [&](const Matrix& cand, const Matrix& cond) {
    NodeId c = tape.input(cand);
    NodeId k = tape.input(cond);
    return disc == ParamGroup::kDiscImage ? model.disc_image_logit(c, k)
                                          : model.disc_pose_logit(c, k);
  };
  NodeId lr = logit(real_candidate, real_condition);
  NodeId lf = logit(fake_candidate, fake_condition);
  GanLossValues out;
  out.d_loss = tape.value(disc_loss(tape, lr, lf))(0, 0);
  out.g_loss = tape.value(gen_gan_loss(tape, lf))(0, 0);
  return out;
}

double total_loss(const TrainConfig& cfg, double l1, double per, double gan_i,
                  double gan_k) {
  return cfg.lambda1 * l1 + cfg.lambda2 * per + cfg.lambda3 * gan_i +
         cfg.lambda4 * gan_k;
}

// ---- optimizer ----

void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
               long long t, const AdamParams& opt) {
  if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v)) {
    throw DimensionError("adam_step: parameter/gradient/moment shape mismatch");
  }
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (long long i = 0; i < param.size(); ++i) {
    const double g = grad.data()[i];
    double& mi = m.data()[i];
    double& vi = v.data()[i];
    mi = opt.beta1 * mi + (1.0 - opt.beta1) * g;
    vi = opt.beta2 * vi + (1.0 - opt.beta2) * g * g;
    const double m_hat = mi / bc1;
    const double v_hat = vi / bc2;
    param.data()[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

namespace {

void apply_adam_group(ModelParams& params, ParamGroup group,
                      const std::map<std::string, Matrix>& grads, AdamState& state,
                      const AdamParams& opt, double batch_scale) {
  state.t += 1;
  params.for_each([&](const std::string& name, Matrix& param, ParamGroup g) {
    if (g != group) return;
    auto it = grads.find(name);
    if (it == grads.end()) return;
    Matrix grad = batch_scale * it->second;
    auto entry = state.moments
                     .try_emplace(name, std::make_pair(
                                            Matrix::zeros(param.rows(), param.cols()),
                                            Matrix::zeros(param.rows(), param.cols())))
                     .first;
    adam_step(param, grad, entry->second.first, entry->second.second, state.t, opt);
  });
}

}  // namespace

// ---- trainer ----

Trainer::Trainer(const TrainConfig& cfg) : Trainer(cfg, [&] {
  Rng init_rng(derive_seed(cfg.seed, 0));
  return ModelParams::init(ModelDims::from_config(cfg), init_rng);
}()) {}

Trainer::Trainer(const TrainConfig& cfg, ModelParams params)
    : cfg_(cfg),
      params_(std::move(params)),
      data_rng_(derive_seed(cfg.seed, 1)),
      mask_rng_(derive_seed(cfg.seed, 2)) {
  cfg_.validate();
  Rng proj_rng(derive_seed(cfg.seed, 3));
  const int rows = params_.dims.patches();
  const int cols = params_.dims.patch_values();
  const int k = 8;
  proj_left_ = Matrix(k, rows);
  proj_right_ = Matrix(cols, k);
  const double s_left = std::sqrt(3.0 / rows);
  const double s_right = std::sqrt(3.0 / cols);
  for (long long i = 0; i < proj_left_.size(); ++i) {
    proj_left_.data()[i] = proj_rng.uniform(-s_left, s_left);
  }
  for (long long i = 0; i < proj_right_.size(); ++i) {
    proj_right_.data()[i] = proj_rng.uniform(-s_right, s_right);
  }
}

Trainer::BatchItem Trainer::draw_item(const ToyDataset& ds) {
  const auto& train = ds.train;
  if (train.empty()) throw ContractError("train_step: empty training set");
  BatchItem item;
  if (cfg_.mode == TrainMode::kMultishot) {
    // group indices of one random identity, then pick M sources + 1 target
    const int anchor = data_rng_.uniform_int(static_cast<int>(train.size()));
    const int identity = train[anchor].identity;
    std::vector<int> members;
    for (int i = 0; i < static_cast<int>(train.size()); ++i) {
      if (train[i].identity == identity) members.push_back(i);
    }
    const int need = cfg_.multishot_m + 1;
    if (static_cast<int>(members.size()) < need) {
      throw ContractError("multishot training: identity has too few samples");
    }
    for (int j = 0; j < need; ++j) {
      const int pick = j + data_rng_.uniform_int(static_cast<int>(members.size()) - j);
      std::swap(members[j], members[pick]);
    }
    for (int j = 0; j < cfg_.multishot_m; ++j) {
      item.sources.push_back(&train[members[j]]);
    }
    item.target = &train[members[cfg_.multishot_m]];
  } else {
    const int idx = data_rng_.uniform_int(static_cast<int>(train.size()));
    item.sources.push_back(&train[idx]);
    item.target = &train[idx];
    item.self_target = cfg_.mode == TrainMode::kUnsupervised;
  }
  return item;
}

StepLosses Trainer::train_step(const ToyDataset& ds) {
  std::vector<BatchItem> batch;
  batch.reserve(cfg_.batch);
  for (int b = 0; b < cfg_.batch; ++b) batch.push_back(draw_item(ds));
  try {
    return run_step(batch);
  } catch (const SingularityError&) {
    ++skipped_steps_;
    StepLosses losses;
    losses.skipped = true;
    return losses;
  }
}

StepLosses Trainer::run_step(const std::vector<BatchItem>& batch) {
  const ModelDims& dims = params_.dims;
  const ImageShape& shape = dims.image;
  const int grid = dims.grid;
  const PnrConfig pnr_cfg = cfg_.pnr();
  const bool use_disc_i = cfg_.lambda3 > 0.0;
  const bool use_disc_k = cfg_.lambda4 > 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  // Per-item row masks (unsupervised), drawn once per step and shared by
  // both half-steps.
  std::vector<std::vector<double>> masks(batch.size());
  if (cfg_.mode == TrainMode::kUnsupervised) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int rows = dims.patches();
      std::vector<std::uint8_t> mask = sample_mask(rows, cfg_.keep_prob, mask_rng_);
      masks[i].assign(mask.begin(), mask.end());
    }
  }

  struct ItemData {
    Matrix target_patches;      // reconstruction target (patch form)
    Matrix target_pose_patches; // pose conditioning of the target view
    Matrix condition_patches;   // source image conditioning for D_I
    std::vector<Matrix> source_patches;
    std::vector<Matrix> source_pose_patches;
  };
  std::vector<ItemData> items(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const BatchItem& it = batch[i];
    ItemData& data = items[i];
    const Matrix& target_image =
        it.self_target ? it.sources[0]->source_image : it.target->target_image;
    const Matrix& target_pose =
        it.self_target ? it.sources[0]->source_pose_map : it.target->target_pose_map;
    ImageShape pose_shape = shape;
    pose_shape.channels = dims.pose_channels;
    data.target_patches = to_patches(target_image, shape, grid);
    data.target_pose_patches = to_patches(target_pose, pose_shape, grid);
    data.condition_patches = to_patches(it.sources[0]->source_image, shape, grid);
    for (const ToySample* s : it.sources) {
      data.source_patches.push_back(to_patches(s->source_image, shape, grid));
      data.source_pose_patches.push_back(to_patches(s->source_pose_map, pose_shape, grid));
    }
  }

  // Forward-only pipeline producing the generated patches for one item.
  auto forward_item = [&](std::size_t i, Tape& tape, TapedModel& model,
                          NodeId& i_g_out) {
    const ItemData& data = items[i];
    NodeId h_s = -1, p_s = -1;
    for (std::size_t shot = 0; shot < data.source_patches.size(); ++shot) {
      NodeId img = tape.input(data.source_patches[shot]);
      NodeId pose = tape.input(data.source_pose_patches[shot]);
      NodeId h = model.appearance(img);
      NodeId p = model.pose(pose);
      if (shot == 0) {
        h_s = h;
        p_s = p;
      } else {
        h_s = tape.vconcat(h_s, h);
        p_s = tape.vconcat(p_s, p);
      }
    }
    NodeId p_t = model.pose(tape.input(data.target_pose_patches));
    PnrForwardResult pf = pnr_forward(tape, h_s, p_s, p_t, pnr_cfg, masks[i]);
    i_g_out = model.generate(pf.h_t);
  };

  StepLosses losses;

  // Discriminator half-step: fakes are detached values from a forward-only
  // pass, so no gradient reaches the generator side.
  if (use_disc_i || use_disc_k) {
    std::map<std::string, Matrix> di_grads, dk_grads;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Matrix fake_patches;
      {
        Tape tape;
        TapedModel model(tape, params_);
        NodeId i_g = -1;
        forward_item(i, tape, model, i_g);
        fake_patches = tape.value(i_g);
      }
      const ItemData& data = items[i];
      if (use_disc_i) {
        Tape tape;
        TapedModel model(tape, params_);
        NodeId real = model.disc_image_logit(tape.input(data.target_patches),
                                             tape.input(data.condition_patches));
        NodeId fake = model.disc_image_logit(tape.input(fake_patches),
                                             tape.input(data.condition_patches));
        NodeId loss = disc_loss(tape, real, fake);
        losses.d_i += tape.value(loss)(0, 0) * inv_batch;
        model.accumulate_grads(tape.backward(loss), ParamGroup::kDiscImage, di_grads);
      }
      if (use_disc_k) {
        Tape tape;
        TapedModel model(tape, params_);
        NodeId real = model.disc_pose_logit(tape.input(data.target_patches),
                                            tape.input(data.target_pose_patches));
        NodeId fake = model.disc_pose_logit(tape.input(fake_patches),
                                            tape.input(data.target_pose_patches));
        NodeId loss = disc_loss(tape, real, fake);
        losses.d_k += tape.value(loss)(0, 0) * inv_batch;
        model.accumulate_grads(tape.backward(loss), ParamGroup::kDiscPose, dk_grads);
      }
    }
    const AdamParams opt{cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8};
    if (use_disc_i) {
      apply_adam_group(params_, ParamGroup::kDiscImage, di_grads, disc_i_opt_, opt,
                       inv_batch);
    }
    if (use_disc_k) {
      apply_adam_group(params_, ParamGroup::kDiscPose, dk_grads, disc_k_opt_, opt,
                       inv_batch);
    }
  }

  // Generator half-step: discriminators participate in the graph but only
  // generator-side gradients are applied.
  std::map<std::string, Matrix> gen_grads;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape tape;
    TapedModel model(tape, params_);
    NodeId i_g = -1;
    forward_item(i, tape, model, i_g);
    const ItemData& data = items[i];
    NodeId target = tape.input(data.target_patches);

    NodeId l1 = loss_l1(tape, i_g, target);
    NodeId per = loss_perceptual(tape, i_g, target, proj_left_, proj_right_);
    NodeId total = tape.add(tape.scale(l1, cfg_.lambda1), tape.scale(per, cfg_.lambda2));
    losses.l1 += tape.value(l1)(0, 0) * inv_batch;
    losses.per += tape.value(per)(0, 0) * inv_batch;

    if (use_disc_i) {
      NodeId fake = model.disc_image_logit(i_g, tape.input(data.condition_patches));
      NodeId gan_i = gen_gan_loss(tape, fake);
      losses.gan_i += tape.value(gan_i)(0, 0) * inv_batch;
      total = tape.add(total, tape.scale(gan_i, cfg_.lambda3));
    }
    if (use_disc_k) {
      NodeId fake = model.disc_pose_logit(i_g, tape.input(data.target_pose_patches));
      NodeId gan_k = gen_gan_loss(tape, fake);
      losses.gan_k += tape.value(gan_k)(0, 0) * inv_batch;
      total = tape.add(total, tape.scale(gan_k, cfg_.lambda4));
    }
    losses.total += tape.value(total)(0, 0) * inv_batch;
    model.accumulate_grads(tape.backward(total), ParamGroup::kGenerator, gen_grads);
  }
  const AdamParams opt{cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8};
  apply_adam_group(params_, ParamGroup::kGenerator, gen_grads, gen_opt_, opt, inv_batch);

  return losses;
}

double Trainer::held_out_l1(const std::vector<ToySample>& samples) const {
  if (samples.empty()) throw ContractError("held_out_l1: empty sample set");
  double total = 0.0;
  PnrConfig pnr_cfg = cfg_.pnr();
  for (const ToySample& s : samples) {
    const bool self = cfg_.mode == TrainMode::kUnsupervised;
    const Matrix& pose = self ? s.source_pose_map : s.target_pose_map;
    const Matrix& reference = self ? s.source_image : s.target_image;
    Matrix generated = infer_multishot(
        params_, {{s.source_image, s.source_pose_map}}, pose, pnr_cfg);
    total += loss_l1(generated, reference);
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train_loop(Trainer& trainer, const ToyDataset& ds) {
  TrainResult res;
  const std::vector<ToySample>& holdout = ds.test.empty() ? ds.train : ds.test;
  res.initial_holdout_l1 = trainer.held_out_l1(holdout);
  const int steps = trainer.config().steps;
  for (int s = 0; s < steps; ++s) {
    StepLosses l = trainer.train_step(ds);
    if (!l.skipped &&
        (!std::isfinite(l.total) || !std::isfinite(l.l1) || !std::isfinite(l.per) ||
         !std::isfinite(l.gan_i) || !std::isfinite(l.gan_k) ||
         !std::isfinite(l.d_i) || !std::isfinite(l.d_k))) {
      throw DivergenceError("training diverged at step " + std::to_string(s));
    }
    res.log.push_back(l);
  }
  res.final_holdout_l1 = trainer.held_out_l1(holdout);
  res.skipped = trainer.skipped_steps();
  return res;
}

Matrix infer_multishot(const ModelParams& params,
                       const std::vector<std::pair<Matrix, Matrix>>& shots,
                       const Matrix& target_pose_map, const PnrConfig& cfg) {
  if (shots.empty()) throw ContractError("infer_multishot: need at least one shot");
  const ModelDims& dims = params.dims;
  const ImageShape& shape = dims.image;
  ImageShape pose_shape = shape;
  pose_shape.channels = dims.pose_channels;

  std::vector<Shot> feature_shots;
  feature_shots.reserve(shots.size());
  for (const auto& [image, pose_map] : shots) {
    Shot shot;
    shot.h = extract_appearance(params, to_patches(image, shape, dims.grid));
    shot.p = extract_pose(params, to_patches(pose_map, pose_shape, dims.grid));
    feature_shots.push_back(std::move(shot));
  }
  RegressionProblem prob = stack_shots(feature_shots);
  RegressionSolution sol = solve(prob, cfg);
  Matrix p_t = extract_pose(params, to_patches(target_pose_map, pose_shape, dims.grid));
  Matrix h_t = predict_target(sol.f, p_t);
  Matrix patches = generate_image(params, h_t);
  return from_patches(patches, shape, dims.grid);
}

// ---- checkpoints ----

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'N', 'R', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("PNRC: truncated stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void collect_records(const ModelParams& params, const AdamState& gen,
                     const AdamState& di, const AdamState& dk,
                     std::vector<std::pair<std::string, const Matrix*>>& records,
                     std::vector<Matrix>& scratch) {
  // records will point into scratch; size it up front so it never reallocates
  scratch.reserve(3);
  params.for_each([&](const std::string& name, const Matrix& m, ParamGroup) {
    records.emplace_back(name, &m);
  });
  auto add_state = [&](const char* tag, const AdamState& state) {
    scratch.push_back(Matrix::full(1, 1, static_cast<double>(state.t)));
    records.emplace_back(std::string("adam.") + tag + ".t", &scratch.back());
    for (const auto& [name, mv] : state.moments) {
      records.emplace_back(std::string("adam.") + tag + ".m." + name, &mv.first);
      records.emplace_back(std::string("adam.") + tag + ".v." + name, &mv.second);
    }
  };
  add_state("gen", gen);
  add_state("di", di);
  add_state("dk", dk);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState& gen_opt, const AdamState& disc_i_opt,
                     const AdamState& disc_k_opt) {
  std::vector<std::pair<std::string, const Matrix*>> records;
  std::vector<Matrix> scratch;
  collect_records(params, gen_opt, disc_i_opt, disc_k_opt, records, scratch);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kCheckpointMagic, 4);
  write_u32le(out, kCheckpointVersion);
  write_u32le(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, m] : records) {
    write_u32le(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_matrix(out, *m);
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path, const ModelDims& dims) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError("PNRC: bad magic bytes");
  }
  const std::uint32_t version = read_u32le(in);
  if (version != kCheckpointVersion) {
    throw IoError("PNRC: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = read_u32le(in);
  std::map<std::string, Matrix> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32le(in);
    if (len > 4096) throw IoError("PNRC: implausible record name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw IoError("PNRC: truncated record name");
    records[name] = read_matrix(in);
  }

  Checkpoint ckpt;
  ckpt.params = build_params(dims, nullptr);
  ckpt.params.for_each([&](const std::string& name, Matrix& m, ParamGroup) {
    auto it = records.find(name);
    if (it == records.end()) {
      throw IoError("checkpoint/config mismatch: missing parameter '" + name + "'");
    }
    if (!it->second.same_shape(m)) {
      throw IoError("checkpoint/config mismatch: '" + name + "' is " +
                    it->second.shape_str() + ", expected " + m.shape_str());
    }
    m = it->second;
  });

  auto load_state = [&](const char* tag, AdamState& state) {
    auto t_it = records.find(std::string("adam.") + tag + ".t");
    if (t_it != records.end()) state.t = static_cast<long long>(t_it->second(0, 0));
    ckpt.params.for_each([&](const std::string& name, Matrix& m, ParamGroup) {
      auto m_it = records.find(std::string("adam.") + tag + ".m." + name);
      auto v_it = records.find(std::string("adam.") + tag + ".v." + name);
      if (m_it == records.end() || v_it == records.end()) return;
      if (!m_it->second.same_shape(m) || !v_it->second.same_shape(m)) {
        throw IoError("checkpoint/config mismatch: optimizer moments for '" + name + "'");
      }
      state.moments[name] = {m_it->second, v_it->second};
    });
  };
  load_state("gen", ckpt.gen_opt);
  load_state("di", ckpt.disc_i_opt);
  load_state("dk", ckpt.disc_k_opt);
  return ckpt;
}

}  // namespace pnr
