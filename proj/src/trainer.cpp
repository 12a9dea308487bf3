#include "cmo/trainer.hpp"

#include "cmo/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace cmo {

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (c.epochs < 1) fail("epochs must be positive");
  if (c.batch_size < 1) fail("batch_size must be positive");
  if (!(c.base_lr >= 0.0) || !std::isfinite(c.base_lr)) fail("base_lr must be a non-negative number");
  if (c.warmup_epochs < 0) fail("warmup_epochs must be non-negative");
  if (!std::is_sorted(c.decay_epochs.begin(), c.decay_epochs.end())) fail("decay_epochs must be increasing");
  if (!c.decay_epochs.empty()) {
    if (c.warmup_epochs >= c.decay_epochs.front()) fail("warmup must end before the first decay epoch");
    if (c.decay_epochs.back() >= c.epochs) fail("decay epochs must lie before the last epoch");
  }
  if (!(c.decay_factor > 0.0)) fail("decay_factor must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(c.alpha > 0.0)) fail("alpha must be positive");
  if (c.q_strategy.kind == WeightStrategy::Kind::power && !(c.q_strategy.r >= 0.0 && std::isfinite(c.q_strategy.r)))
    fail("q strategy exponent must be finite and non-negative");
  if (c.drw_epoch && (*c.drw_epoch < 0 || *c.drw_epoch >= c.epochs)) fail("drw_epoch must lie in [0, epochs)");
  if (c.cmo_off_last < 0 || c.cmo_off_last > c.epochs) fail("cmo_off_last must lie in [0, epochs]");
  if (c.thresholds.few >= c.thresholds.many) fail("few-shot threshold must be below the many-shot threshold");
  if (c.workers < 1) fail("workers must be positive");
  if (c.architecture != Architecture::linear && c.hidden.empty()) fail("mlp and tinyconv need hidden sizes");
}

double lr_at(int epoch, const TrainConfig& config) {
  double lr = config.base_lr;
  if (epoch < config.warmup_epochs) lr *= static_cast<double>(epoch + 1) / config.warmup_epochs;
  for (int d : config.decay_epochs)
    if (epoch >= d) lr *= config.decay_factor;
  return lr;
}

std::vector<bool> minority_mask(const Dataset& dataset, ShotThresholds thresholds) {
  std::vector<bool> mask(static_cast<std::size_t>(dataset.num_classes()));
  for (int k = 0; k < dataset.num_classes(); ++k)
    mask[static_cast<std::size_t>(k)] = dataset.class_counts()[static_cast<std::size_t>(k)] <= thresholds.many;
  return mask;
}

namespace {

enum StreamTag : std::uint64_t { kInit = 1, kEpoch = 2, kBatch = 3, kRos = 4 };

/// Everything needed to build the batches of one epoch. Batches are pure
/// functions of (context, batch index).
struct EpochContext {
  const TrainConfig& config;
  const Dataset& data;
  const InstanceSampler& p_sampler;
  const InstanceSampler& q_sampler;
  const std::vector<bool>& minority;
  Rng root;
  int epoch;
  bool mixing;
  std::vector<std::size_t> order;  // P loader order for this epoch

  std::size_t batch_count() const {
    const auto b = static_cast<std::size_t>(config.batch_size);
    return (order.size() + b - 1) / b;
  }

  std::span<const std::size_t> p_slice(std::size_t i) const {
    const auto b = static_cast<std::size_t>(config.batch_size);
    const std::size_t start = i * b;
    return std::span<const std::size_t>(order).subspan(start, std::min(b, order.size() - start));
  }
};

Batch hard_batch(const Dataset& data, std::span<const std::size_t> idx) {
  Batch out;
  out.x = data.batch(idx);
  for (std::size_t i : idx) out.y_b.push_back(data.label(i));
  out.y_f = out.y_b;
  out.lambda.assign(idx.size(), 1.0);
  return out;
}

Batch prepare_batch(const EpochContext& ctx, std::size_t index) {
  const auto p_idx = ctx.p_slice(index);
  if (!ctx.mixing) return hard_batch(ctx.data, p_idx);

  Rng rng = ctx.root.substream({kBatch, static_cast<std::uint64_t>(ctx.epoch), index});
  const TrainConfig& cfg = ctx.config;
  const std::size_t n = p_idx.size();
  const ImageShape shape = ctx.data.shape();

  if (cfg.variant == MixVariant::blur_oversample || cfg.variant == MixVariant::jitter_oversample) {
    // Original batch plus a Q-drawn batch whose minority images are augmented.
    std::vector<std::size_t> idx(p_idx.begin(), p_idx.end());
    const auto extra = ctx.q_sampler.draw(n, rng);
    Batch out = hard_batch(ctx.data, idx);
    out.x.conservativeResize(static_cast<Index>(2 * n), Eigen::NoChange);
    for (std::size_t j = 0; j < n; ++j) {
      const LabeledImage& src = ctx.data[extra[j]];
      Image img = src.image;
      if (ctx.minority[static_cast<std::size_t>(src.label)]) {
        img = cfg.variant == MixVariant::blur_oversample ? gaussian_blur(img, cfg.blur, rng)
                                                         : color_jitter(img, cfg.jitter, rng);
      }
      out.x.row(static_cast<Index>(n + j)) = img.pixels.matrix().transpose();
      out.y_b.push_back(src.label);
      out.y_f.push_back(src.label);
      out.lambda.push_back(1.0);
    }
    return out;
  }

  const auto plan = pair_plan(cfg.variant);
  if (!plan) return hard_batch(ctx.data, p_idx);
  auto side = [&](Source s) {
    return s == Source::original ? std::vector<std::size_t>(p_idx.begin(), p_idx.end()) : ctx.q_sampler.draw(n, rng);
  };
  // The P loader drives the epoch; whichever side uses Q gets weighted draws.
  std::vector<std::size_t> bg = side(plan->background);
  std::vector<std::size_t> fg = plan->foreground == plan->background && plan->background == Source::original
                                    ? ctx.p_sampler.draw(n, rng)
                                    : side(plan->foreground);

  Batch out;
  out.x.resize(static_cast<Index>(n), shape.size());
  const double batch_lambda = draw_lambda(cfg.alpha, rng);
  const MixRegion batch_region = sample_region(shape.width, shape.height, batch_lambda, rng);
  for (std::size_t j = 0; j < n; ++j) {
    const LabeledImage& b = ctx.data[bg[j]];
    const LabeledImage& f = ctx.data[fg[j]];
    double lam;
    Image mixed;
    if (plan->compositor == Compositor::mixup) {
      lam = cfg.per_image_region ? draw_lambda(cfg.alpha, rng) : batch_lambda;
      mixed = mixup(b.image, f.image, lam);
    } else {
      const MixRegion region = cfg.per_image_region
                                   ? sample_region(shape.width, shape.height, draw_lambda(cfg.alpha, rng), rng)
                                   : batch_region;
      lam = region.lambda_adj;
      mixed = cutmix(b.image, f.image, region);
    }
    out.x.row(static_cast<Index>(j)) = mixed.pixels.matrix().transpose();
    out.y_b.push_back(b.label);
    out.y_f.push_back(f.label);
    out.lambda.push_back(lam);
  }
  return out;
}

std::vector<Batch> prepare_epoch(const EpochContext& ctx, int workers) {
  std::vector<Batch> batches(ctx.batch_count());
  const auto w = static_cast<std::size_t>(std::max(1, std::min<int>(workers, static_cast<int>(batches.size()))));
  if (w == 1) {
    for (std::size_t i = 0; i < batches.size(); ++i) batches[i] = prepare_batch(ctx, i);
    return batches;
  }
  std::vector<std::exception_ptr> errors(w);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < w; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < batches.size(); i += w) batches[i] = prepare_batch(ctx, i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return batches;
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& input, const Dataset* monitor) {
  validate(config);
  if (input.empty()) throw std::invalid_argument("training set is empty");
  const Rng root(config.seed);

  Rng ros_rng = root.substream({kRos});
  const Dataset data = config.ros ? ros_expand(input, ros_rng) : input;
  const ClassHistogram hist = data.histogram();

  const SamplingDistribution p = original_p(data);
  const SamplingDistribution q = weighted_q(data, config.q_strategy);
  const InstanceSampler p_sampler(p);
  const InstanceSampler q_sampler(q);
  const std::vector<bool> minority = minority_mask(data, config.thresholds);

  std::vector<double> drw_weights;
  if (config.drw_epoch) {
    if (config.drw_weights_override) {
      drw_weights = *config.drw_weights_override;
      if (static_cast<int>(drw_weights.size()) != data.num_classes())
        throw ConfigError("drw weight override needs one weight per class");
    } else {
      const ClassWeights cw = drw_class_weights(hist);
      drw_weights.assign(cw.weights.data(), cw.weights.data() + cw.weights.size());
    }
  }

  ModelSpec spec{config.architecture, data.shape(), data.num_classes(),
                 config.architecture == Architecture::linear ? std::vector<int>{} : config.hidden};
  Rng init_rng = root.substream({kInit});
  TrainResult result{Model::initialized(spec, init_rng), {}};
  Model& model = result.model;
  Model::Vector velocity = Model::Vector::Zero(model.param_count());

  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng epoch_rng = root.substream({kEpoch, static_cast<std::uint64_t>(epoch)});
    shuffle(order.begin(), order.end(), epoch_rng);

    const bool mixing = config.variant != MixVariant::none && epoch < config.epochs - config.cmo_off_last;
    const bool drw = config.drw_epoch && epoch >= *config.drw_epoch;
    const EpochContext ctx{config, data, p_sampler, q_sampler, minority, root, epoch, mixing, order};
    const std::vector<Batch> batches = prepare_epoch(ctx, config.workers);

    const double lr = lr_at(epoch, config);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      try {
        Model::Tape tape;
        const RowMatrixXd logits = model.forward(batch.x, &tape);
        const auto lg = soft_ce<double>(logits, batch.y_b, batch.y_f, batch.lambda,
                                        drw ? std::span<const double>(drw_weights) : std::span<const double>{});
        if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss");
        const Model::Vector grad = model.backward(tape, lg.dlogits);
        sgd_step<double>(model.params(), grad, velocity, lr, config.momentum, config.weight_decay);
        loss_sum += lg.loss * static_cast<double>(batch.x.rows());
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi) + ")");
      }
      seen += static_cast<std::size_t>(batch.x.rows());
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), lr, mixing, drw, std::nullopt};
    if (monitor) rec.eval_accuracy = accuracy(model, *monitor);
    result.history.epochs.push_back(rec);
  }
  return result;
}

}  // namespace cmo
