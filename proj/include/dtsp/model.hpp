#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dtsp/core.hpp"
#include "dtsp/dataset.hpp"
#include "dtsp/error.hpp"
#include "dtsp/losses.hpp"
#include "dtsp/nn.hpp"
#include "dtsp/random.hpp"

namespace dtsp {

using nn::Mat;

struct ModelConfig {
  int d_model = 128;
  int n_heads = 8;
  int enc_layers = 2;
  int dec_layers = 2;
  /// Decoder timesteps; equals the instance size N.
  int context_len = 20;
  int ff_mult = 4;
  double dropout = 0.0;
  std::string activation = "gelu";
  double alpha = 0.99;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) fail(ErrorCode::InvalidArg, "d_model must be a positive multiple of n_heads");
    if (enc_layers < 0 || dec_layers < 0 || ff_mult <= 0) fail(ErrorCode::InvalidArg, "layer counts must be >= 0 and ff_mult > 0");
    if (context_len < 3) fail(ErrorCode::InvalidArg, "context_len must be >= 3");
    if (dropout != 0.0) fail(ErrorCode::InvalidArg, "dropout is not supported; use 0.0");
    if (activation != "gelu" && activation != "relu") fail(ErrorCode::InvalidArg, "activation must be gelu or relu");
    require_alpha(alpha);
  }

  nn::Activation activation_fn() const { return activation == "relu" ? nn::Activation::Relu : nn::Activation::Gelu; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},       {"n_heads", c.n_heads}, {"enc_layers", c.enc_layers},
       {"dec_layers", c.dec_layers}, {"context_len", c.context_len}, {"ff_mult", c.ff_mult},
       {"dropout", c.dropout},       {"activation", c.activation},   {"alpha", c.alpha}};
}

/// Overlays the keys present in `j`; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "d_model") c.d_model = value.get<int>();
    else if (key == "n_heads") c.n_heads = value.get<int>();
    else if (key == "enc_layers") c.enc_layers = value.get<int>();
    else if (key == "dec_layers") c.dec_layers = value.get<int>();
    else if (key == "context_len") c.context_len = value.get<int>();
    else if (key == "ff_mult") c.ff_mult = value.get<int>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "activation") c.activation = value.get<std::string>();
    else if (key == "alpha") c.alpha = value.get<double>();
    else fail(ErrorCode::ConfigError, "unknown model key '" + key + "'");
  }
}

enum TokenType { kObsToken = 0, kRtgToken = 1, kActToken = 2 };

template <typename T>
struct ModelParams {
  nn::Linear<T> enc_in;
  std::vector<nn::Block<T>> enc;
  nn::LayerNorm<T> enc_ln;
  Mat<T> type_emb;  // 3 x d
  Mat<T> pos_emb;   // context_len x d
  nn::Linear<T> rtg_in;
  std::vector<nn::Block<T>> dec;
  nn::LayerNorm<T> dec_ln;
  nn::Linear<T> action_head;
  nn::Linear<T> rtg_head;

  static ModelParams zeros(const ModelConfig& cfg) {
    const Eigen::Index d = cfg.d_model;
    const Eigen::Index ff = static_cast<Eigen::Index>(cfg.ff_mult) * d;
    ModelParams p;
    p.enc_in = nn::Linear<T>(2, d);
    p.enc.assign(static_cast<std::size_t>(cfg.enc_layers), nn::Block<T>(d, ff));
    p.enc_ln = nn::LayerNorm<T>(d);
    p.type_emb = Mat<T>::Zero(3, d);
    p.pos_emb = Mat<T>::Zero(cfg.context_len, d);
    p.rtg_in = nn::Linear<T>(1, d);
    p.dec.assign(static_cast<std::size_t>(cfg.dec_layers), nn::Block<T>(d, ff));
    p.dec_ln = nn::LayerNorm<T>(d);
    p.action_head = nn::Linear<T>(d, d);
    p.rtg_head = nn::Linear<T>(d, 1);
    // zeros() doubles as the gradient buffer, so norms start at zero too.
    p.enc_ln.gain.setZero();
    p.dec_ln.gain.setZero();
    for (auto& b : p.enc) b.ln1.gain.setZero(), b.ln2.gain.setZero();
    for (auto& b : p.dec) b.ln1.gain.setZero(), b.ln2.gain.setZero();
    return p;
  }

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const Eigen::Index d = cfg.d_model;
    const Eigen::Index ff = static_cast<Eigen::Index>(cfg.ff_mult) * d;
    Rng rng(seed);
    ModelParams p;
    p.enc_in = nn::Linear<T>(2, d);
    p.enc_in.init(rng);
    for (int i = 0; i < cfg.enc_layers; ++i) {
      p.enc.emplace_back(d, ff);
      p.enc.back().init(rng);
    }
    p.enc_ln = nn::LayerNorm<T>(d);
    p.type_emb = Mat<T>(3, d);
    p.pos_emb = Mat<T>(cfg.context_len, d);
    for (auto* m : {&p.type_emb, &p.pos_emb}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<T>(0.02 * normal01(rng));
    }
    p.rtg_in = nn::Linear<T>(1, d);
    p.rtg_in.init(rng);
    for (int i = 0; i < cfg.dec_layers; ++i) {
      p.dec.emplace_back(d, ff);
      p.dec.back().init(rng);
    }
    p.dec_ln = nn::LayerNorm<T>(d);
    p.action_head = nn::Linear<T>(d, d);
    p.action_head.init(rng);
    p.rtg_head = nn::Linear<T>(d, 1);
    p.rtg_head.init(rng);
    return p;
  }

  /// Named views of every tensor, in a fixed order shared by all instances
  /// built from the same config.
  std::vector<std::pair<std::string, Mat<T>*>> tensors() {
    std::vector<std::pair<std::string, Mat<T>*>> out;
    auto add = [&out](const std::string& name, Mat<T>& m) { out.emplace_back(name, &m); };
    enc_in.visit("enc_in", add);
    for (std::size_t i = 0; i < enc.size(); ++i) enc[i].visit("enc." + std::to_string(i), add);
    enc_ln.visit("enc_ln", add);
    add("type_emb", type_emb);
    add("pos_emb", pos_emb);
    rtg_in.visit("rtg_in", add);
    for (std::size_t i = 0; i < dec.size(); ++i) dec[i].visit("dec." + std::to_string(i), add);
    dec_ln.visit("dec_ln", add);
    action_head.visit("action_head", add);
    rtg_head.visit("rtg_head", add);
    return out;
  }

  std::vector<std::pair<std::string, const Mat<T>*>> tensors() const {
    auto mut = const_cast<ModelParams*>(this)->tensors();
    return {mut.begin(), mut.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, m] : tensors()) {
      if (!m->allFinite()) return false;
    }
    return true;
  }

  template <typename U>
  ModelParams<U> cast(const ModelConfig& cfg) const {
    auto out = ModelParams<U>::zeros(cfg);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    return out;
  }

  void set_zero() {
    for (auto& [name, m] : tensors()) m->setZero();
  }
};

/// Per-record training view: the instance and its teacher-forced trajectory.
struct BatchItem {
  const Instance* instance = nullptr;
  const Trajectory* trajectory = nullptr;
};

struct LossOptions {
  double c = 0.5;
  double alpha = 0.99;
  /// Behaviour cloning: RTG inputs forced to zero and the expectile term dropped.
  bool bc_mode = false;
  /// Include the forced return-to-depot step in the cross-entropy term.
  bool include_final_action = false;
};

struct LossBreakdown {
  double ce = 0.0;
  double expectile = 0.0;
  double total = 0.0;
};

/// Decision Transformer over TSP trajectories: a set encoder over node
/// coordinates, a causal decoder over interleaved (obs, rtg, act) tokens, a
/// pointer head over node embeddings and a scalar RTG head.
template <typename T>
class DecisionTransformer {
 public:
  struct DecoderOutput {
    Mat<T> action_hidden;     // steps x d, read at the rtg token of each step
    std::vector<T> rtg_pred;  // steps, read at the obs token of each step
  };

  DecisionTransformer(ModelConfig cfg, ModelParams<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  /// N x d node embeddings. No positional signal enters, so the map is
  /// permutation-equivariant in the node order.
  Mat<T> encode_nodes(const Instance& instance) const {
    EncoderCache cache;
    return encode({&instance, 1}, cache);
  }

  /// Runs the decoder over `obs.size()` steps. Readouts at step t depend only
  /// on tokens up to that step's rtg token.
  DecoderOutput decode(const Mat<T>& embeddings, std::span<const int> obs, std::span<const double> rtg,
                       std::span<const int> act) const {
    const std::size_t steps = obs.size();
    if (rtg.size() != steps || act.size() != steps) fail(ErrorCode::ShapeError, "obs/rtg/act lengths differ");
    DecoderCache cache;
    std::vector<DecoderRecord> records{{obs, rtg, act}};
    decode_batch(embeddings, embeddings.rows(), records, cache);
    DecoderOutput out;
    out.action_hidden = cache.action_hidden;
    out.rtg_pred.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) out.rtg_pred[t] = cache.rtg_pred(static_cast<Eigen::Index>(t), 0);
    return out;
  }

  /// Pointer distribution for one action-hidden row (scaled dot product, visited masked).
  PointerDistribution pointer(const Mat<T>& embeddings, const Mat<T>& action_hidden, Eigen::Index step,
                              std::span<const char> visited) const {
    const Eigen::Index n = embeddings.rows();
    const Eigen::Index d = embeddings.cols();
    std::vector<double> h(static_cast<std::size_t>(d));
    std::vector<double> emb(static_cast<std::size_t>(n * d));
    for (Eigen::Index k = 0; k < d; ++k) h[static_cast<std::size_t>(k)] = static_cast<double>(action_hidden(step, k));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < d; ++k) emb[static_cast<std::size_t>(i * d + k)] = static_cast<double>(embeddings(i, k));
    }
    return pointer_distribution(h, emb, visited);
  }

  /// Mean combined loss over the batch. When `grads` is non-null the
  /// gradient of that mean is accumulated into it.
  LossBreakdown loss(std::span<const BatchItem> batch, const LossOptions& opt, ModelParams<T>* grads = nullptr) const {
    if (batch.empty()) return {};
    require_alpha(opt.alpha);
    const int n = batch[0].instance->n();
    const auto B = static_cast<Eigen::Index>(batch.size());
    std::vector<const Instance*> instances;
    std::vector<std::vector<double>> rtg_inputs(batch.size());
    std::vector<DecoderRecord> records;
    instances.reserve(batch.size());
    records.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& item = batch[b];
      if (item.instance->n() != n || static_cast<int>(item.trajectory->size()) != n) {
        fail(ErrorCode::ShapeError, "batch records must share N and have full-length trajectories");
      }
      instances.push_back(item.instance);
      const auto& traj = *item.trajectory;
      rtg_inputs[b] = opt.bc_mode ? std::vector<double>(traj.rtg.size(), 0.0) : traj.rtg;
      records.push_back({traj.obs, rtg_inputs[b], traj.act});
    }

    EncoderCache enc_cache;
    const Mat<T> emb = encode_ptrs(instances, enc_cache);
    DecoderCache dec_cache;
    decode_batch(emb, n, records, dec_cache);

    const Eigen::Index S = n;
    const Eigen::Index d = cfg_.d_model;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    const int ce_steps = opt.include_final_action ? n : n - 1;
    const double c_eff = opt.bc_mode ? 0.0 : opt.c;

    LossBreakdown out;
    Mat<T> d_hidden;
    Mat<T> d_emb;
    Mat<T> d_rtg_pred;
    if (grads) {
      d_hidden = Mat<T>::Zero(B * S, d);
      d_emb = Mat<T>::Zero(B * n, d);
      d_rtg_pred = Mat<T>::Zero(B * S, 1);
    }
    Mat<T> logits;
    std::vector<char> visited(static_cast<std::size_t>(n));
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& traj = *batch[static_cast<std::size_t>(b)].trajectory;
      const auto emb_b = emb.block(b * n, 0, n, d);
      const auto hid_b = dec_cache.action_hidden.block(b * S, 0, S, d);
      logits.noalias() = (hid_b * emb_b.transpose()) * scale;
      std::fill(visited.begin(), visited.end(), 0);
      double ce_sum = 0.0;
      for (int t = 0; t < ce_steps; ++t) {
        visited[static_cast<std::size_t>(traj.obs[static_cast<std::size_t>(t)])] = 1;
        if (t == n - 1) visited[0] = 0;  // only the forced return remains
        const int target = traj.act[static_cast<std::size_t>(t)];
        if (visited[static_cast<std::size_t>(target)]) fail(ErrorCode::TargetVisited, "trajectory revisits a node");
        double mx = -1e300;
        for (int i = 0; i < n; ++i) {
          if (!visited[static_cast<std::size_t>(i)]) mx = std::max(mx, static_cast<double>(logits(t, i)));
        }
        double z = 0.0;
        for (int i = 0; i < n; ++i) {
          if (!visited[static_cast<std::size_t>(i)]) z += std::exp(static_cast<double>(logits(t, i)) - mx);
        }
        const double log_z = mx + std::log(z);
        ce_sum += log_z - static_cast<double>(logits(t, target));
        if (grads) {
          const double w = 1.0 / (static_cast<double>(ce_steps) * static_cast<double>(B));
          for (int i = 0; i < n; ++i) {
            if (visited[static_cast<std::size_t>(i)]) {
              logits(t, i) = T(0);
              continue;
            }
            const double p = std::exp(static_cast<double>(logits(t, i)) - log_z);
            logits(t, i) = static_cast<T>(w * (p - (i == target ? 1.0 : 0.0)));
          }
        }
      }
      if (grads) {
        // logits now holds dL/dlogits for the CE rows; the remaining rows carry no loss.
        if (ce_steps < S) logits.bottomRows(S - ce_steps).setZero();
        d_hidden.block(b * S, 0, S, d).noalias() += (logits * emb_b) * scale;
        d_emb.block(b * n, 0, n, d).noalias() += (logits.transpose() * hid_b) * scale;
      }
      double ex_sum = 0.0;
      if (!opt.bc_mode) {
        for (Eigen::Index t = 0; t < S; ++t) {
          const double target = traj.rtg[static_cast<std::size_t>(t)];
          const double pred = static_cast<double>(dec_cache.rtg_pred(b * S + t, 0));
          ex_sum += expectile_loss(target, pred, opt.alpha);
          if (grads) {
            d_rtg_pred(b * S + t, 0) = static_cast<T>(c_eff * expectile_loss_grad(target, pred, opt.alpha) /
                                                      (static_cast<double>(S) * static_cast<double>(B)));
          }
        }
      }
      const double ce = ce_sum / ce_steps;
      const double ex = ex_sum / static_cast<double>(S);
      out.ce += ce;
      out.expectile += ex;
    }
    out.ce /= static_cast<double>(B);
    out.expectile /= static_cast<double>(B);
    out.total = out.ce + c_eff * out.expectile;

    if (grads) {
      backward(enc_cache, dec_cache, records, n, d_hidden, d_rtg_pred, d_emb, *grads);
    }
    return out;
  }

 private:
  struct EncoderCache {
    Mat<T> coords;
    std::vector<typename nn::Block<T>::Cache> blocks;
    typename nn::LayerNorm<T>::Cache ln;
    Eigen::Index batch = 0;
    Eigen::Index n = 0;
  };

  struct DecoderRecord {
    std::span<const int> obs;
    std::span<const double> rtg;
    std::span<const int> act;
  };

  struct DecoderCache {
    std::vector<typename nn::Block<T>::Cache> blocks;
    typename nn::LayerNorm<T>::Cache ln;
    Mat<T> obs_rows;  // final hidden states at obs tokens
    Mat<T> rtg_rows;  // final hidden states at rtg tokens
    Mat<T> action_hidden;
    Mat<T> rtg_pred;
    Eigen::Index batch = 0;
    Eigen::Index steps = 0;
  };

  typename nn::Block<T>::Shape shape(Eigen::Index batch, Eigen::Index seq, bool causal) const {
    return {batch, seq, cfg_.n_heads, causal, cfg_.activation_fn()};
  }

  Mat<T> encode(std::span<const Instance> instances, EncoderCache& cache) const {
    std::vector<const Instance*> ptrs;
    for (const auto& inst : instances) ptrs.push_back(&inst);
    return encode_ptrs(ptrs, cache);
  }

  Mat<T> encode_ptrs(const std::vector<const Instance*>& instances, EncoderCache& cache) const {
    const int n = instances.front()->n();
    if (n > cfg_.context_len) {
      fail(ErrorCode::ShapeError, "instance has " + std::to_string(n) + " nodes but context_len is " + std::to_string(cfg_.context_len));
    }
    cache.batch = static_cast<Eigen::Index>(instances.size());
    cache.n = n;
    cache.coords.resize(cache.batch * n, 2);
    for (Eigen::Index b = 0; b < cache.batch; ++b) {
      const Instance& inst = *instances[static_cast<std::size_t>(b)];
      if (inst.n() != n) fail(ErrorCode::ShapeError, "instances in a batch must share N");
      for (int i = 0; i < n; ++i) {
        cache.coords(b * n + i, 0) = static_cast<T>(inst[i].x);
        cache.coords(b * n + i, 1) = static_cast<T>(inst[i].y);
      }
    }
    Mat<T> x = params_.enc_in.forward(cache.coords);
    cache.blocks.resize(params_.enc.size());
    const auto s = shape(cache.batch, n, false);
    for (std::size_t l = 0; l < params_.enc.size(); ++l) x = params_.enc[l].forward(x, s, cache.blocks[l]);
    return params_.enc_ln.forward(x, cache.ln);
  }

  void decode_batch(const Mat<T>& emb, Eigen::Index n, const std::vector<DecoderRecord>& records, DecoderCache& cache) const {
    const auto B = static_cast<Eigen::Index>(records.size());
    const auto S = static_cast<Eigen::Index>(records.front().obs.size());
    const Eigen::Index d = cfg_.d_model;
    if (S < 1) fail(ErrorCode::ShapeError, "decoder needs at least one step");
    if (S > cfg_.context_len) {
      fail(ErrorCode::ContextOverflow, std::to_string(S) + " steps exceed context_len " + std::to_string(cfg_.context_len));
    }
    cache.batch = B;
    cache.steps = S;
    Mat<T> x(B * 3 * S, d);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& rec = records[static_cast<std::size_t>(b)];
      if (static_cast<Eigen::Index>(rec.obs.size()) != S) fail(ErrorCode::ShapeError, "decoder records must share length");
      for (Eigen::Index t = 0; t < S; ++t) {
        const int o = rec.obs[static_cast<std::size_t>(t)];
        const int a = rec.act[static_cast<std::size_t>(t)];
        if (o < 0 || o >= n || a < 0 || a >= n) fail(ErrorCode::ShapeError, "node index out of range in trajectory");
        const Eigen::Index row = (b * S + t) * 3;
        x.row(row) = emb.row(b * n + o) + params_.type_emb.row(kObsToken) + params_.pos_emb.row(t);
        x.row(row + 1) = static_cast<T>(rec.rtg[static_cast<std::size_t>(t)]) * params_.rtg_in.w.row(0) + params_.rtg_in.b.row(0) +
                         params_.type_emb.row(kRtgToken) + params_.pos_emb.row(t);
        x.row(row + 2) = emb.row(b * n + a) + params_.type_emb.row(kActToken) + params_.pos_emb.row(t);
      }
    }
    cache.blocks.resize(params_.dec.size());
    const auto s = shape(B, 3 * S, true);
    for (std::size_t l = 0; l < params_.dec.size(); ++l) x = params_.dec[l].forward(x, s, cache.blocks[l]);
    const Mat<T> h = params_.dec_ln.forward(x, cache.ln);
    cache.obs_rows.resize(B * S, d);
    cache.rtg_rows.resize(B * S, d);
    for (Eigen::Index i = 0; i < B * S; ++i) {
      cache.obs_rows.row(i) = h.row(3 * i);
      cache.rtg_rows.row(i) = h.row(3 * i + 1);
    }
    cache.action_hidden = params_.action_head.forward(cache.rtg_rows);
    cache.rtg_pred = params_.rtg_head.forward(cache.obs_rows);
  }

  void backward(const EncoderCache& enc_cache, const DecoderCache& dec_cache, const std::vector<DecoderRecord>& records, int n,
                const Mat<T>& d_hidden, const Mat<T>& d_rtg_pred, Mat<T> d_emb, ModelParams<T>& g) const {
    const Eigen::Index B = dec_cache.batch;
    const Eigen::Index S = dec_cache.steps;
    const Eigen::Index d = cfg_.d_model;
    const Mat<T> d_rtg_rows = params_.action_head.backward(dec_cache.rtg_rows, d_hidden, g.action_head);
    const Mat<T> d_obs_rows = params_.rtg_head.backward(dec_cache.obs_rows, d_rtg_pred, g.rtg_head);
    Mat<T> dx = Mat<T>::Zero(B * 3 * S, d);
    for (Eigen::Index i = 0; i < B * S; ++i) {
      dx.row(3 * i) = d_obs_rows.row(i);
      dx.row(3 * i + 1) = d_rtg_rows.row(i);
    }
    dx = params_.dec_ln.backward(dec_cache.ln, dx, g.dec_ln);
    const auto s = shape(B, 3 * S, true);
    for (std::size_t l = params_.dec.size(); l-- > 0;) dx = params_.dec[l].backward(dec_cache.blocks[l], dx, s, g.dec[l]);

    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& rec = records[static_cast<std::size_t>(b)];
      for (Eigen::Index t = 0; t < S; ++t) {
        const Eigen::Index row = (b * S + t) * 3;
        d_emb.row(b * n + rec.obs[static_cast<std::size_t>(t)]) += dx.row(row);
        d_emb.row(b * n + rec.act[static_cast<std::size_t>(t)]) += dx.row(row + 2);
        g.type_emb.row(kObsToken) += dx.row(row);
        g.type_emb.row(kRtgToken) += dx.row(row + 1);
        g.type_emb.row(kActToken) += dx.row(row + 2);
        g.pos_emb.row(t) += dx.row(row) + dx.row(row + 1) + dx.row(row + 2);
        g.rtg_in.w.row(0) += static_cast<T>(rec.rtg[static_cast<std::size_t>(t)]) * dx.row(row + 1);
        g.rtg_in.b.row(0) += dx.row(row + 1);
      }
    }

    Mat<T> de = params_.enc_ln.backward(enc_cache.ln, d_emb, g.enc_ln);
    const auto es = shape(enc_cache.batch, enc_cache.n, false);
    for (std::size_t l = params_.enc.size(); l-- > 0;) de = params_.enc[l].backward(enc_cache.blocks[l], de, es, g.enc[l]);
    params_.enc_in.backward_no_input(enc_cache.coords, de, g.enc_in);
  }

  ModelConfig cfg_;
  ModelParams<T> params_;
};

}  // namespace dtsp
