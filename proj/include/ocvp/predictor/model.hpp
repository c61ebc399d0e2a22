// SPDX-License-Identifier: Apache-2.0
//
// Multi-object latent transformer family. Factored spatial/temporal attention
// with PreNorm blocks; per-class weight sharing across slots; SCAT adds
// inter-instance cross-attention, SNCAT replaces it with a capacity-matched
// per-slot feed-forward, SiS runs one slot at N times the width.
#pragma once

#include <map>

#include "ocvp/core/adam.hpp"
#include "ocvp/core/ops.hpp"
#include "ocvp/oaae/model.hpp"
#include "ocvp/predictor/config.hpp"

namespace ocvp::predictor {

using core::BoundParams;
using core::ParamStore;
using core::Rng;
using core::Tape;
using core::Tensor;
using core::Var;

/// Captures attention probabilities and pre-reduce cross-attention
/// activations for tests and probes.
template <class T>
struct AttnProbe {
  std::vector<std::pair<std::string, Tensor<T>>> records;
  void add(const std::string& label, const Tensor<T>& value) { records.push_back({label, value}); }
};

template <class T>
class PredictorModel {
 public:
  /// `codebooks` come from the frozen autoencoder, one per model class;
  /// they embed tokens and are not trainable.
  PredictorModel(PredictorConfig cfg, synthdata::SceneSchema schema, int vq_dim, int codebook_size,
                 int hp, int wp, std::vector<Tensor<T>> codebooks, uint64_t init_seed)
      : cfg_(cfg),
        schema_(std::move(schema)),
        vq_dim_(vq_dim),
        codebook_size_(codebook_size),
        hp_(hp),
        wp_(wp),
        codebooks_(std::move(codebooks)) {
    cfg_.validate();
    schema_.validate();
    const int n_slots = schema_.total_slots();
    if (cfg_.variant == Variant::SCAT)
      OCVP_CHECK(n_slots >= 2, "predictor: SCAT requires at least two slots");
    if (cfg_.variant == Variant::SiS)
      OCVP_CHECK(n_slots == 1, "predictor: SiS uses exactly one slot");
    OCVP_CHECK(static_cast<int>(codebooks_.size()) == schema_.num_classes(),
               "predictor: expected one codebook per class");
    for (const auto& cb : codebooks_)
      OCVP_CHECK(cb.shape == std::vector<int64_t>({codebook_size_, vq_dim_}),
                 "predictor: codebook shape mismatch");

    dim_ = cfg_.model_dim;
    const int D = dim_;
    OCVP_CHECK(D % cfg_.n_heads == 0, "predictor: model_dim divisible by n_heads");

    // replacement feed-forward width matched to the cross-attention budget
    if (cfg_.variant == Variant::SNCAT) {
      const int64_t cross = 2 * (2 * D + 3 * (static_cast<int64_t>(D) * D + D) +
                                 (static_cast<int64_t>(n_slots - 1) * D * D + D));
      ffr_width_ = static_cast<int>(std::max<int64_t>(1, (cross - 3 * D + D) / (2 * D + 1)));
    }

    Rng rng(init_seed);
    auto lin_init = [&](const std::string& name, int64_t in, int64_t out) {
      add_(name + ".w", core::tensor_normal<T>(rng, {in, out}, 0.02));
      add_(name + ".b", Tensor<T>::zeros({out}));
    };
    auto ln_init = [&](const std::string& name) {
      add_(name + ".g", Tensor<T>::full({D}, T(1)));
      add_(name + ".b", Tensor<T>::zeros({D}));
    };
    auto attn_init = [&](const std::string& name, bool cross) {
      ln_init(name + ".ln");
      lin_init(name + ".wq", D, D);
      lin_init(name + ".wk", D, D);
      lin_init(name + ".wv", D, D);
      if (cross)
        lin_init(name + ".red", static_cast<int64_t>(n_slots - 1) * D, D);
      else
        lin_init(name + ".wo", D, D);
    };

    for (int c = 0; c < schema_.num_classes(); ++c)
      lin_init("inproj." + cls_(c), vq_dim_, D);
    add_("pos.time", core::tensor_normal<T>(rng, {cfg_.max_frames(), D}, 0.01));
    add_("pos.space", core::tensor_normal<T>(rng, {static_cast<int64_t>(hp_) * wp_, D}, 0.01));

    for (int b = 0; b < cfg_.depth; ++b)
      for (int c = 0; c < schema_.num_classes(); ++c) {
        const std::string base = "blk" + std::to_string(b) + "." + cls_(c);
        attn_init(base + ".sas", false);
        attn_init(base + ".sat", false);
        if (cfg_.variant == Variant::SCAT) {
          attn_init(base + ".cas", true);
          attn_init(base + ".cat", true);
        } else if (cfg_.variant == Variant::SNCAT) {
          ln_init(base + ".ffr.ln");
          lin_init(base + ".ffr.w1", D, ffr_width_);
          lin_init(base + ".ffr.w2", ffr_width_, D);
        }
        ln_init(base + ".ff.ln");
        lin_init(base + ".ff.w1", D, static_cast<int64_t>(cfg_.ff_expansion) * D);
        lin_init(base + ".ff.w2", static_cast<int64_t>(cfg_.ff_expansion) * D, D);
      }
    for (int c = 0; c < schema_.num_classes(); ++c) {
      ln_init("final." + cls_(c) + ".ln");
      lin_init("head." + cls_(c), D, codebook_size_);
    }
  }

  const PredictorConfig& config() const { return cfg_; }
  const synthdata::SceneSchema& schema() const { return schema_; }
  int grid_cells() const { return hp_ * wp_; }
  int hp() const { return hp_; }
  int wp() const { return wp_; }
  int vq_dim() const { return vq_dim_; }
  int codebook_size() const { return codebook_size_; }
  int ffr_width() const { return ffr_width_; }
  const std::vector<Tensor<T>>& codebooks() const { return codebooks_; }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  int64_t count_parameters() const { return params_.count(); }

  /// Total size of parameters whose name contains `needle`.
  int64_t count_group(const std::string& needle) const {
    int64_t n = 0;
    for (const auto& p : params_.params())
      if (p.name.find(needle) != std::string::npos) n += p.value.numel();
    return n;
  }

  size_t param_index(const std::string& name) const {
    auto it = index_.find(name);
    OCVP_CHECK(it != index_.end(), "predictor: unknown parameter '" << name << "'");
    return it->second;
  }

  struct Bound {
    using Scalar = T;
    const PredictorModel* model = nullptr;
    Tape<T>* tape = nullptr;
    BoundParams<T> p;
    AttnProbe<T>* probe = nullptr;
    Rng* dropout_rng = nullptr;  // null = eval mode

    Var<T> param(const std::string& name) const { return p[model->param_index(name)]; }

    Var<T> maybe_dropout(Var<T> x) const {
      if (!dropout_rng || model->cfg_.dropout <= 0) return x;
      return core::dropout(x, static_cast<T>(model->cfg_.dropout), *dropout_rng);
    }

    Var<T> split_heads(Var<T> x) const {  // [A,S,D] -> [A*nh,S,dh]
      const auto& s = x.val().shape;
      const int64_t nh = model->cfg_.n_heads, dh = model->dim_ / nh;
      return reshape(permute(reshape(x, {s[0], s[1], nh, dh}), {0, 2, 1, 3}), {s[0] * nh, s[1], dh});
    }

    Var<T> merge_heads(Var<T> x, int64_t A, int64_t S) const {  // [A*nh,S,dh] -> [A,S,D]
      const int64_t nh = model->cfg_.n_heads, dh = model->dim_ / nh;
      return reshape(permute(reshape(x, {A, nh, S, dh}), {0, 2, 1, 3}), {A, S, model->dim_});
    }

    /// Scaled dot-product over the middle axis of [A,S,D] streams.
    Var<T> attend(Var<T> q, Var<T> k, Var<T> v, bool causal, const std::string& label) const {
      const int64_t A = q.val().shape[0] / model->cfg_.n_heads;
      const int64_t S = q.val().shape[1];
      const T att_scale = T(1) / std::sqrt(static_cast<T>(model->dim_ / model->cfg_.n_heads));
      Var<T> att = softmax_last(scale(bmm_nt(q, k), att_scale), causal);
      if (probe) probe->add(label, att.val());
      return merge_heads(bmm_nn(att, v), A, S);
    }

    /// PreNorm self-attention sublayer output (caller adds the residual).
    /// `temporal` attends over the time axis with a strict causal mask.
    Var<T> self_attention(Var<T> x, const std::string& prefix, bool temporal) const {
      Var<T> y = layernorm(x, param(prefix + ".ln.g"), param(prefix + ".ln.b"));
      if (temporal) y = permute(y, {1, 0, 2});
      Var<T> q = split_heads(linear(y, param(prefix + ".wq.w"), param(prefix + ".wq.b")));
      Var<T> k = split_heads(linear(y, param(prefix + ".wk.w"), param(prefix + ".wk.b")));
      Var<T> v = split_heads(linear(y, param(prefix + ".wv.w"), param(prefix + ".wv.b")));
      Var<T> o = attend(q, k, v, temporal, prefix + ".attn");
      o = linear(o, param(prefix + ".wo.w"), param(prefix + ".wo.b"));
      if (temporal) o = permute(o, {1, 0, 2});
      return maybe_dropout(o);
    }

    /// PreNorm feed-forward sublayer output.
    Var<T> feed_forward(Var<T> x, const std::string& prefix) const {
      Var<T> y = layernorm(x, param(prefix + ".ln.g"), param(prefix + ".ln.b"));
      y = linear(gelu(linear(y, param(prefix + ".w1.w"), param(prefix + ".w1.b"))),
                 param(prefix + ".w2.w"), param(prefix + ".w2.b"));
      return maybe_dropout(y);
    }

    /// Cross-attention pass over all slots (residuals applied inside).
    /// Keys/values are produced once per slot with its own class weights;
    /// each slot k attends every other slot, the per-slot results are
    /// concatenated in slot order and reduced back to model width.
    std::vector<Var<T>> cross_attention(const std::vector<Var<T>>& xs, int block, bool temporal) const {
      const auto& schema = model->schema_;
      const int N = static_cast<int>(xs.size());
      const std::string kind = temporal ? ".cat" : ".cas";
      std::vector<Var<T>> y(xs.size()), keys(xs.size()), vals(xs.size());
      for (int i = 0; i < N; ++i) {
        const std::string prefix = "blk" + std::to_string(block) + "." + model->cls_(schema.class_of_slot(i)) + kind;
        y[i] = layernorm(xs[i], param(prefix + ".ln.g"), param(prefix + ".ln.b"));
        if (temporal) y[i] = permute(y[i], {1, 0, 2});
        keys[i] = split_heads(linear(y[i], param(prefix + ".wk.w"), param(prefix + ".wk.b")));
        vals[i] = split_heads(linear(y[i], param(prefix + ".wv.w"), param(prefix + ".wv.b")));
      }
      std::vector<Var<T>> out(xs.size());
      for (int k = 0; k < N; ++k) {
        const std::string prefix = "blk" + std::to_string(block) + "." + model->cls_(schema.class_of_slot(k)) + kind;
        Var<T> q = split_heads(linear(y[k], param(prefix + ".wq.w"), param(prefix + ".wq.b")));
        std::vector<Var<T>> segments;
        for (int i = 0; i < N; ++i) {
          if (i == k) continue;
          segments.push_back(attend(q, keys[i], vals[i], temporal,
                                    prefix + ".attn[" + std::to_string(k) + "<-" + std::to_string(i) + "]"));
        }
        Var<T> cat = segments.size() == 1 ? segments[0] : concat(segments, 2);
        if (probe) probe->add(prefix + ".concat[" + std::to_string(k) + "]", cat.val());
        Var<T> red = linear(cat, param(prefix + ".red.w"), param(prefix + ".red.b"));
        if (temporal) red = permute(red, {1, 0, 2});
        out[k] = add(xs[k], maybe_dropout(red));
      }
      return out;
    }

    /// Tokens of one slot -> embedded stream [t, S, D].
    Var<T> embed_slot(int slot, const std::vector<int64_t>& indices, int t) const {
      const int S = model->grid_cells();
      OCVP_CHECK(static_cast<int>(indices.size()) == t * S,
                 "predictor: slot " << slot << " expects " << t * S << " tokens, got " << indices.size());
      const int c = model->schema_.class_of_slot(slot);
      Var<T> cb = tape->leaf(model->codebooks_[static_cast<size_t>(c)], false);
      Var<T> e = gather_rows(cb, indices);  // [t*S, vq_dim]
      e = linear(e, param("inproj." + model->cls_(c) + ".w"), param("inproj." + model->cls_(c) + ".b"));
      return reshape(e, {t, S, model->dim_});
    }

    /// Learned temporal + spatial positional embeddings, shared across slots.
    Var<T> add_positional(Var<T> x) const {
      const auto& s = x.val().shape;
      OCVP_CHECK(s[0] <= model->cfg_.max_frames(),
                 "predictor: sequence of " << s[0] << " frames exceeds positional table ("
                                           << model->cfg_.max_frames() << ")");
      Var<T> time_rows = slice_lead(param("pos.time"), 0, s[0]);
      x = add_broadcast_mid(x, time_rows);
      return add_broadcast_lead(x, param("pos.space"));
    }

    /// Full forward: per-slot token sequences -> per-slot logits [t, S, K].
    /// Logits at time t parameterize the token distribution of frame t+1.
    std::vector<Var<T>> forward(const std::vector<std::vector<int64_t>>& slot_tokens, int t) const {
      const auto& schema = model->schema_;
      const int N = schema.total_slots();
      OCVP_CHECK(static_cast<int>(slot_tokens.size()) == N, "predictor: expected " << N << " slot streams");
      std::vector<Var<T>> xs(static_cast<size_t>(N));
      for (int k = 0; k < N; ++k)
        xs[static_cast<size_t>(k)] = add_positional(embed_slot(k, slot_tokens[static_cast<size_t>(k)], t));
      for (int b = 0; b < model->cfg_.depth; ++b) {
        for (int k = 0; k < N; ++k) {
          const std::string base = "blk" + std::to_string(b) + "." + model->cls_(schema.class_of_slot(k));
          xs[static_cast<size_t>(k)] = add(xs[static_cast<size_t>(k)], self_attention(xs[static_cast<size_t>(k)], base + ".sas", false));
        }
        for (int k = 0; k < N; ++k) {
          const std::string base = "blk" + std::to_string(b) + "." + model->cls_(schema.class_of_slot(k));
          xs[static_cast<size_t>(k)] = add(xs[static_cast<size_t>(k)], self_attention(xs[static_cast<size_t>(k)], base + ".sat", true));
        }
        if (model->cfg_.variant == Variant::SCAT) {
          xs = cross_attention(xs, b, false);
          xs = cross_attention(xs, b, true);
        } else if (model->cfg_.variant == Variant::SNCAT) {
          for (int k = 0; k < N; ++k) {
            const std::string base = "blk" + std::to_string(b) + "." + model->cls_(schema.class_of_slot(k));
            xs[static_cast<size_t>(k)] = add(xs[static_cast<size_t>(k)], feed_forward(xs[static_cast<size_t>(k)], base + ".ffr"));
          }
        }
        for (int k = 0; k < N; ++k) {
          const std::string base = "blk" + std::to_string(b) + "." + model->cls_(schema.class_of_slot(k));
          xs[static_cast<size_t>(k)] = add(xs[static_cast<size_t>(k)], feed_forward(xs[static_cast<size_t>(k)], base + ".ff"));
        }
      }
      std::vector<Var<T>> logits(static_cast<size_t>(N));
      for (int k = 0; k < N; ++k) {
        const std::string c = model->cls_(schema.class_of_slot(k));
        Var<T> yk = layernorm(xs[static_cast<size_t>(k)], param("final." + c + ".ln.g"), param("final." + c + ".ln.b"));
        logits[static_cast<size_t>(k)] = linear(yk, param("head." + c + ".w"), param("head." + c + ".b"));
      }
      return logits;
    }
  };

  Bound bind(Tape<T>& tape, AttnProbe<T>* probe = nullptr, Rng* dropout_rng = nullptr) const {
    Bound b;
    b.model = this;
    b.tape = &tape;
    b.p = BoundParams<T>::bind(tape, const_cast<ParamStore<T>&>(params_));
    b.probe = probe;
    b.dropout_rng = dropout_rng;
    return b;
  }

 private:
  std::string cls_(int c) const { return schema_.classes[static_cast<size_t>(c)]; }

  void add_(const std::string& name, Tensor<T> init) {
    index_[name] = params_.params().size();
    params_.add(name, std::move(init));
  }

  PredictorConfig cfg_;
  synthdata::SceneSchema schema_;
  int vq_dim_ = 0;
  int codebook_size_ = 0;
  int hp_ = 0, wp_ = 0;
  int dim_ = 0;
  int ffr_width_ = 0;
  std::vector<Tensor<T>> codebooks_;
  ParamStore<T> params_;
  std::map<std::string, size_t> index_;
};

/// Builds a variant against a frozen autoencoder. SCAT/SNCAT share the data
/// schema at per-instance width; SiS collapses to one slot whose model and
/// latent widths are N times larger (capacity-matching rule).
template <class T>
PredictorModel<T> build_variant(Variant variant, const synthdata::SceneSchema& data_schema,
                                const oaae::OaaeModel<T>& ae, const PredictorConfig& pcfg,
                                int frame_h, int frame_w, uint64_t init_seed) {
  PredictorConfig cfg = pcfg;
  cfg.variant = variant;
  const auto& acfg = ae.config();
  const int hp = frame_h / acfg.downsample_factor;
  const int wp = frame_w / acfg.downsample_factor;
  synthdata::SceneSchema model_schema;
  std::vector<Tensor<T>> codebooks;
  if (variant == Variant::SiS) {
    OCVP_CHECK(!acfg.decomposed, "build_variant: SiS needs the non-decomposed autoencoder");
    model_schema = oaae::monolithic_schema();
    cfg.model_dim = pcfg.model_dim * data_schema.total_slots();
  } else {
    OCVP_CHECK(acfg.decomposed, "build_variant: SCAT/SNCAT need the decomposed autoencoder");
    model_schema = data_schema;
  }
  for (int c = 0; c < model_schema.num_classes(); ++c)
    codebooks.push_back(
        ae.params().params()[ae.param_index("cb." + model_schema.classes[static_cast<size_t>(c)])].value);
  return PredictorModel<T>(cfg, model_schema, acfg.embed_dim, acfg.codebook_size, hp, wp,
                           std::move(codebooks), init_seed);
}

}  // namespace ocvp::predictor
