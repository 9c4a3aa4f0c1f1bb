#pragma once

#include "tgsim/nn/layers.hpp"
#include "tgsim/nn/optim.hpp"
#include "tgsim/nn/weights.hpp"
#include "tgsim/trajectory_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgsim {

struct GanConfig {
  int o_l = 8;
  int p_l = 8;
  int z_dim = 8;
  int embed_dim = 64;
  int hidden_dim = 64;
  int pool_dim = 64;
  double position_scale = 0.05;  ///< relative positions are multiplied by this before pooling
  int batch_size = 16;           ///< scene windows per iteration
  double lr_g = 1e-3;
  double lr_d = 1e-3;
  double lambda_adv = 1.0;
  int k_v = 4;
  long iterations = 2000;
  double grad_clip = 5.0;

  void validate() const {
    if (o_l < 2 || p_l < 1) throw std::invalid_argument("gan: need o_l >= 2 and p_l >= 1");
    if (z_dim < 0 || embed_dim < 1 || hidden_dim < 1 || pool_dim < 1) {
      throw std::invalid_argument("gan: layer sizes must be positive");
    }
    if (batch_size < 1 || k_v < 1) throw std::invalid_argument("gan: batch_size and k_v must be >= 1");
    if (!(lr_g > 0 && lr_d > 0)) throw std::invalid_argument("gan: learning rates must be > 0");
    if (lambda_adv < 0) throw std::invalid_argument("gan: lambda_adv must be >= 0");
    if (!(grad_clip > 0)) throw std::invalid_argument("gan: grad_clip must be > 0");
    if (!(position_scale > 0)) throw std::invalid_argument("gan: position_scale must be > 0");
  }
  std::size_t decoder_hidden() const { return static_cast<std::size_t>(pool_dim + z_dim); }
};

/// Vehicles of several scenes stacked row-wise. observed/future hold one
/// (vehicles x 2) tensor of absolute positions per frame.
struct SceneBatch {
  std::size_t vehicles = 0;
  std::vector<std::size_t> scene_of;
  std::vector<nn::Tensor> observed;
  std::vector<nn::Tensor> future;
  std::vector<std::size_t> pair_self;   ///< receiving vehicle of each ordered pair
  std::vector<std::size_t> pair_other;  ///< contributing vehicle
};

namespace detail {

inline void add_pairs(SceneBatch& b) {
  b.pair_self.clear();
  b.pair_other.clear();
  for (std::size_t i = 0; i < b.vehicles; ++i) {
    for (std::size_t j = 0; j < b.vehicles; ++j) {
      if (i != j && b.scene_of[i] == b.scene_of[j]) {
        b.pair_self.push_back(i);
        b.pair_other.push_back(j);
      }
    }
  }
}

inline nn::Tensor frame_tensor(const std::vector<const std::vector<Point2>*>& rows, std::size_t k) {
  nn::Tensor t(rows.size(), 2);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    t(r, 0) = (*rows[r])[k].x;
    t(r, 1) = (*rows[r])[k].y;
  }
  return t;
}

}  // namespace detail

inline SceneBatch make_scene_batch(const std::vector<const SceneWindow*>& windows) {
  SceneBatch b;
  std::vector<const std::vector<Point2>*> obs, fut;
  for (std::size_t s = 0; s < windows.size(); ++s) {
    for (std::size_t v = 0; v < windows[s]->vehicle_ids.size(); ++v) {
      b.scene_of.push_back(s);
      obs.push_back(&windows[s]->observed[v]);
      fut.push_back(&windows[s]->future[v]);
    }
  }
  b.vehicles = obs.size();
  if (b.vehicles == 0) throw std::invalid_argument("make_scene_batch: no vehicles");
  const std::size_t o_l = obs[0]->size();
  const std::size_t p_l = fut[0]->size();
  for (std::size_t r = 0; r < obs.size(); ++r) {
    if (obs[r]->size() != o_l || fut[r]->size() != p_l) {
      throw std::invalid_argument("make_scene_batch: windows have different lengths");
    }
  }
  for (std::size_t k = 0; k < o_l; ++k) b.observed.push_back(detail::frame_tensor(obs, k));
  for (std::size_t k = 0; k < p_l; ++k) b.future.push_back(detail::frame_tensor(fut, k));
  detail::add_pairs(b);
  return b;
}

inline SceneBatch make_scene_batch(const std::vector<SceneWindow>& windows) {
  std::vector<const SceneWindow*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  return make_scene_batch(ptrs);
}

/// One scene from per-vehicle histories; histories shorter than o_l are
/// padded at the front by repeating their earliest frame.
inline SceneBatch make_history_batch(const std::vector<std::vector<Point2>>& histories, int o_l) {
  SceneBatch b;
  b.vehicles = histories.size();
  if (b.vehicles == 0) throw std::invalid_argument("make_history_batch: no vehicles");
  b.scene_of.assign(b.vehicles, 0);
  std::vector<std::vector<Point2>> padded;
  for (const auto& h : histories) {
    if (h.empty()) throw std::invalid_argument("make_history_batch: empty history");
    std::vector<Point2> p;
    const auto n = static_cast<int>(h.size());
    for (int k = 0; k < o_l; ++k) {
      const int src = n - o_l + k;
      p.push_back(src < 0 ? h.front() : h[static_cast<std::size_t>(src)]);
    }
    padded.push_back(std::move(p));
  }
  std::vector<const std::vector<Point2>*> rows;
  for (const auto& p : padded) rows.push_back(&p);
  for (int k = 0; k < o_l; ++k) b.observed.push_back(detail::frame_tensor(rows, static_cast<std::size_t>(k)));
  detail::add_pairs(b);
  return b;
}

/// Encoder, social max-pool and noise-conditioned decoder. The network reads
/// per-step displacements and relative positions and emits displacements,
/// so translating a scene translates its prediction.
class Generator {
 public:
  Generator() = default;
  Generator(const GanConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const auto e = static_cast<std::size_t>(cfg.embed_dim);
    const auto h = static_cast<std::size_t>(cfg.hidden_dim);
    const auto p = static_cast<std::size_t>(cfg.pool_dim);
    embed = nn::Linear(2, e, rng);
    encoder = nn::LstmCell(e, h, rng);
    pool_mlp = nn::Linear(2 + h, p, rng);
    pool_fallback = nn::parameter(nn::uniform_tensor(1, p, 0.1, rng));
    context_mlp = nn::Linear(p + h, p, rng);
    decoder = nn::LstmCell(e, cfg.decoder_hidden(), rng);
    head = nn::Linear(cfg.decoder_hidden(), 2, rng);
  }

  const GanConfig& config() const { return cfg_; }

  nn::ParamList parameters() const {
    nn::ParamList out;
    embed.collect(out, "embed");
    encoder.collect(out, "encoder");
    pool_mlp.collect(out, "pool_mlp");
    out.push_back({"pool_fallback", pool_fallback});
    context_mlp.collect(out, "context_mlp");
    decoder.collect(out, "decoder");
    head.collect(out, "head");
    return out;
  }

  /// phi: ReLU(W [x, y] + b).
  nn::Var embed_position(const nn::Var& xy) const { return nn::relu(embed.forward(xy)); }

  /// Final encoder hidden state per vehicle over the observed displacements
  /// (the first frame contributes a zero displacement).
  nn::Var encode_scene(const std::vector<nn::Tensor>& observed) const {
    if (observed.empty()) throw std::invalid_argument("encode_scene: empty observation");
    nn::LstmState s = encoder.zero_state(observed[0].rows());
    for (std::size_t t = 0; t < observed.size(); ++t) {
      nn::Tensor d(observed[t].rows(), 2);
      if (t > 0) d.map() = observed[t].map() - observed[t - 1].map();
      s = encoder.step(embed_position(nn::constant(std::move(d))), s);
    }
    return s.h;
  }

  /// Elementwise max over the other vehicles j of ReLU(gamma([s r_ij, h_j]));
  /// vehicles alone in their scene take the learned fallback row.
  nn::Var social_pool(const nn::Var& hidden, const nn::Tensor& positions, const SceneBatch& batch) const {
    const std::size_t v = positions.rows();
    if (batch.pair_self.empty()) return nn::gather_rows(pool_fallback, std::vector<std::size_t>(v, 0));
    nn::Tensor rel(batch.pair_self.size(), 2);
    for (std::size_t k = 0; k < batch.pair_self.size(); ++k) {
      const std::size_t i = batch.pair_self[k];
      const std::size_t j = batch.pair_other[k];
      rel(k, 0) = (positions(j, 0) - positions(i, 0)) * cfg_.position_scale;
      rel(k, 1) = (positions(j, 1) - positions(i, 1)) * cfg_.position_scale;
    }
    const nn::Var input = nn::concat_cols({nn::constant(std::move(rel)), nn::gather_rows(hidden, batch.pair_other)});
    return nn::segment_max(nn::relu(pool_mlp.forward(input)), batch.pair_self, v, pool_fallback);
  }

  /// c_i = ReLU(W [P_i, h_i] + b).
  nn::Var context(const nn::Var& pooled, const nn::Var& hidden) const {
    return nn::relu(context_mlp.forward(nn::concat_cols({pooled, hidden})));
  }

  /// Autoregressive rollout from hidden [c; z] with zero cell state. Returns
  /// `steps` absolute positions, each last position plus summed displacements.
  std::vector<nn::Var> decode_future(const nn::Var& c, const nn::Tensor& z, const nn::Tensor& last_position,
                                     const nn::Tensor& last_displacement, int steps) const {
    const std::size_t v = last_position.rows();
    if (z.rows() != v || z.cols() != static_cast<std::size_t>(cfg_.z_dim)) {
      throw std::invalid_argument("decode_future: z must be " + std::to_string(v) + "x" + std::to_string(cfg_.z_dim));
    }
    nn::LstmState s{cfg_.z_dim > 0 ? nn::concat_cols({c, nn::constant(z)}) : c,
                    nn::constant(nn::Tensor(v, cfg_.decoder_hidden()))};
    nn::Var position = nn::constant(last_position);
    nn::Var displacement = nn::constant(last_displacement);
    std::vector<nn::Var> out;
    for (int t = 0; t < steps; ++t) {
      s = decoder.step(embed_position(displacement), s);
      displacement = head.forward(s.h);
      position = nn::add(position, displacement);
      out.push_back(position);
    }
    return out;
  }

  struct Encoded {
    nn::Var context;
    nn::Tensor last_position;
    nn::Tensor last_displacement;
  };

  Encoded encode(const SceneBatch& batch) const {
    const nn::Var h = encode_scene(batch.observed);
    const nn::Tensor& last = batch.observed.back();
    nn::Tensor disp(last.rows(), 2);
    disp.map() = last.map() - batch.observed[batch.observed.size() - 2].map();
    return {context(social_pool(h, last, batch), h), last, std::move(disp)};
  }

  std::vector<nn::Var> generate(const Encoded& enc, const nn::Tensor& z, int steps) const {
    return decode_future(enc.context, z, enc.last_position, enc.last_displacement, steps);
  }

  std::vector<nn::Var> generate(const SceneBatch& batch, const nn::Tensor& z) const {
    return generate(encode(batch), z, cfg_.p_l);
  }

  nn::Tensor sample_noise(std::size_t rows, nn::Rng& rng) const {
    nn::Tensor z(rows, static_cast<std::size_t>(cfg_.z_dim));
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : z.data()) x = n(rng);
    return z;
  }

  nn::Linear embed, pool_mlp, context_mlp, head;
  nn::LstmCell encoder, decoder;
  nn::Var pool_fallback;

 private:
  GanConfig cfg_{};
};

/// Per-vehicle trajectory classifier over displacements of observed ++ future.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const GanConfig& cfg, nn::Rng& rng) {
    const auto e = static_cast<std::size_t>(cfg.embed_dim);
    const auto h = static_cast<std::size_t>(cfg.hidden_dim);
    embed = nn::Linear(2, e, rng);
    encoder = nn::LstmCell(e, h, rng);
    head = nn::Linear(h, 1, rng);
  }

  nn::ParamList parameters() const {
    nn::ParamList out;
    embed.collect(out, "embed");
    encoder.collect(out, "encoder");
    head.collect(out, "head");
    return out;
  }

  /// Logit of "real" per vehicle, (vehicles x 1).
  nn::Var logits(const std::vector<nn::Var>& positions) const {
    if (positions.size() < 2) throw std::invalid_argument("discriminate: need at least two frames");
    nn::LstmState s = encoder.zero_state(positions[0]->value.rows());
    for (std::size_t t = 1; t < positions.size(); ++t) {
      s = encoder.step(nn::relu(embed.forward(nn::sub(positions[t], positions[t - 1]))), s);
    }
    return head.forward(s.h);
  }

  std::vector<double> probabilities(const std::vector<nn::Var>& positions) const {
    const nn::Var z = logits(positions);
    std::vector<double> p;
    for (double v : z->value.data()) p.push_back(1.0 / (1.0 + std::exp(-v)));
    return p;
  }

  nn::Linear embed, head;
  nn::LstmCell encoder;
};

inline std::vector<nn::Var> real_sequence(const SceneBatch& b) {
  std::vector<nn::Var> out;
  for (const auto& t : b.observed) out.push_back(nn::constant(t));
  for (const auto& t : b.future) out.push_back(nn::constant(t));
  return out;
}

/// Observed frames followed by `future`, detached from the generator graph
/// when `detach` is set.
inline std::vector<nn::Var> joined_sequence(const SceneBatch& b, const std::vector<nn::Var>& future, bool detach) {
  std::vector<nn::Var> out;
  for (const auto& t : b.observed) out.push_back(nn::constant(t));
  for (const auto& f : future) out.push_back(detach ? nn::constant(f->value) : f);
  return out;
}

inline DisplacementErrors displacement_errors(const std::vector<nn::Tensor>& pred,
                                              const std::vector<nn::Tensor>& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw std::invalid_argument("displacement_errors: step counts");
  std::vector<std::vector<Point2>> p(pred[0].rows()), t(pred[0].rows());
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!pred[k].same_shape(truth[k]) || pred[k].rows() != p.size()) {
      throw std::invalid_argument("displacement_errors: shape mismatch");
    }
    for (std::size_t r = 0; r < p.size(); ++r) {
      p[r].push_back({pred[k](r, 0), pred[k](r, 1)});
      t[r].push_back({truth[k](r, 0), truth[k](r, 1)});
    }
  }
  return displacement_errors(p, t);
}

inline std::vector<nn::Tensor> values(const std::vector<nn::Var>& vars) {
  std::vector<nn::Tensor> out;
  for (const auto& v : vars) out.push_back(v->value);
  return out;
}

/// Next position per vehicle: step one of the generator's rollout.
inline std::vector<Point2> generate_next_position(const Generator& gen,
                                                  const std::vector<std::vector<Point2>>& histories, nn::Rng& rng) {
  const nn::NoGradGuard no_grad;
  const SceneBatch b = make_history_batch(histories, gen.config().o_l);
  const nn::Tensor z = gen.sample_noise(b.vehicles, rng);
  const auto next = gen.generate(gen.encode(b), z, 1);
  std::vector<Point2> out;
  for (std::size_t r = 0; r < b.vehicles; ++r) out.push_back({next[0]->value(r, 0), next[0]->value(r, 1)});
  return out;
}

struct GanStepMetrics {
  double loss_g = 0.0;
  double loss_d = 0.0;
  double ade = 0.0;
  double fde = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Generator and discriminator with their optimizers. Iteration i draws its
/// batch and noise from derive_rng(seed, i), so a restored checkpoint
/// continues the exact same run.
class GanTrainer {
 public:
  GanTrainer(const GanConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg.validate();
    nn::Rng init = nn::derive_rng(seed, ~std::uint64_t{0});
    gen = Generator(cfg, init);
    disc = Discriminator(cfg, init);
    adam_g = nn::Adam(gen.parameters(), {cfg.lr_g});
    adam_d = nn::Adam(disc.parameters(), {cfg.lr_d});
  }

  const GanConfig& config() const { return cfg_; }
  long iteration() const { return iteration_; }
  std::uint64_t seed() const { return seed_; }

  /// Binary cross-entropy update of the discriminator on real vs fake
  /// sequences; returns the loss before the update.
  double discriminator_step(const std::vector<nn::Var>& real, const std::vector<nn::Var>& fake) {
    const nn::ParamList params = disc.parameters();
    nn::zero_grad(params);
    const nn::Var loss = nn::add(nn::bce_with_logits(disc.logits(real), 1.0), nn::bce_with_logits(disc.logits(fake), 0.0));
    check_finite("loss_d", loss->value[0]);
    nn::backward(loss);
    nn::clip_grad_norm(params, cfg_.grad_clip);
    adam_d.step(params);
    return loss->value[0];
  }

  GanStepMetrics train_step(const SceneBatch& batch, nn::Rng& rng) {
    GanStepMetrics m;
    const nn::ParamList gp = gen.parameters();
    const Generator::Encoded enc = gen.encode(batch);
    const auto fake = gen.generate(enc, gen.sample_noise(batch.vehicles, rng), cfg_.p_l);
    m.loss_d = discriminator_step(real_sequence(batch), joined_sequence(batch, fake, true));

    nn::zero_grad(gp);
    std::vector<nn::Var> per_sample;
    std::vector<nn::Var> first;
    for (int k = 0; k < cfg_.k_v; ++k) {
      const auto pred = gen.generate(enc, gen.sample_noise(batch.vehicles, rng), cfg_.p_l);
      if (k == 0) first = pred;
      nn::Var err;
      for (std::size_t t = 0; t < pred.size(); ++t) {
        const nn::Var e = nn::row_sum(nn::square(nn::sub(pred[t], nn::constant(batch.future[t]))));
        err = err ? nn::add(err, e) : e;
      }
      per_sample.push_back(nn::scale(err, 1.0 / static_cast<double>(pred.size())));
    }
    const nn::Var all = nn::concat_cols(per_sample);
    std::vector<std::size_t> best(batch.vehicles, 0);
    for (std::size_t r = 0; r < batch.vehicles; ++r) {
      for (std::size_t k = 1; k < per_sample.size(); ++k) {
        if (all->value(r, k) < all->value(r, best[r])) best[r] = k;
      }
    }
    nn::Var loss = nn::mean(nn::pick_cols(all, best));
    if (cfg_.lambda_adv > 0) {
      const nn::Var adv = nn::bce_with_logits(disc.logits(joined_sequence(batch, first, false)), 1.0);
      loss = nn::add(loss, nn::scale(adv, cfg_.lambda_adv));
    }
    check_finite("loss_g", loss->value[0]);
    nn::backward(loss);
    nn::clip_grad_norm(gp, cfg_.grad_clip);
    adam_g.step(gp);
    nn::zero_grad(disc.parameters());
    m.loss_g = loss->value[0];
    const DisplacementErrors de = displacement_errors(values(first), batch.future);
    m.ade = de.ade;
    m.fde = de.fde;
    return m;
  }

  /// Samples batch_size windows with replacement and runs one train_step.
  GanStepMetrics train_iteration(const std::vector<SceneWindow>& data) {
    if (data.empty()) throw std::invalid_argument("train_iteration: no training windows");
    nn::Rng rng = nn::derive_rng(seed_, static_cast<std::uint64_t>(iteration_));
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<const SceneWindow*> batch;
    for (int k = 0; k < cfg_.batch_size; ++k) batch.push_back(&data[pick(rng)]);
    const GanStepMetrics m = train_step(make_scene_batch(batch), rng);
    ++iteration_;
    return m;
  }

  nn::WeightFile checkpoint() const {
    nn::WeightFile f;
    f.add(gen.parameters(), "generator.");
    f.add(disc.parameters(), "discriminator.");
    nn::add_adam_state(f, adam_g, gen.parameters(), "adam_g.");
    nn::add_adam_state(f, adam_d, disc.parameters(), "adam_d.");
    f.metadata["iteration"] = std::to_string(iteration_);
    f.metadata["seed"] = std::to_string(seed_);
    f.metadata["kind"] = "gan_checkpoint";
    return f;
  }

  void restore(const nn::WeightFile& f) {
    nn::load_into(gen.parameters(), f, "generator.");
    nn::load_into(disc.parameters(), f, "discriminator.");
    nn::load_adam_state(f, adam_g, gen.parameters(), "adam_g.");
    nn::load_adam_state(f, adam_d, disc.parameters(), "adam_d.");
    iteration_ = std::stol(f.metadata.at("iteration"));
    seed_ = std::stoull(f.metadata.at("seed"));
  }

  Generator gen;
  Discriminator disc;
  nn::Adam adam_g, adam_d;

 private:
  void check_finite(const char* what, double v) const {
    if (!std::isfinite(v)) {
      throw NonFiniteLoss(std::string(what) + " is not finite at iteration " + std::to_string(iteration_));
    }
  }

  GanConfig cfg_;
  std::uint64_t seed_;
  long iteration_ = 0;
};

/// ADE/FDE of one noise sample per window, evaluated in batches of 64.
inline DisplacementErrors evaluate_generator(const Generator& gen, const std::vector<SceneWindow>& windows,
                                             std::uint64_t seed) {
  if (windows.empty()) throw std::invalid_argument("evaluate_generator: no windows");
  const nn::NoGradGuard no_grad;
  nn::Rng rng(seed);
  double ade = 0.0, fde = 0.0;
  std::size_t vehicles = 0;
  for (std::size_t start = 0; start < windows.size(); start += 64) {
    std::vector<const SceneWindow*> chunk;
    for (std::size_t k = start; k < std::min(windows.size(), start + 64); ++k) chunk.push_back(&windows[k]);
    const SceneBatch b = make_scene_batch(chunk);
    const auto pred = gen.generate(b, gen.sample_noise(b.vehicles, rng));
    const DisplacementErrors de = displacement_errors(values(pred), b.future);
    ade += de.ade * static_cast<double>(b.vehicles);
    fde += de.fde * static_cast<double>(b.vehicles);
    vehicles += b.vehicles;
  }
  return {ade / static_cast<double>(vehicles), fde / static_cast<double>(vehicles)};
}

/// Generator weights for inference, loadable from either a generator file or
/// a full training checkpoint.
inline void load_generator(Generator& gen, const nn::WeightFile& f) { nn::load_into(gen.parameters(), f, "generator."); }

inline nn::WeightFile generator_weights(const Generator& gen) {
  nn::WeightFile f;
  f.add(gen.parameters(), "generator.");
  f.metadata["kind"] = "generator";
  return f;
}

}  // namespace tgsim
