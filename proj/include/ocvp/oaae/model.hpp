// SPDX-License-Identifier: Apache-2.0
//
// Object-aware autoencoder: one encoder and codebook per class (weights
// shared across slots of a class), straight-through vector quantization, and
// a joint decoder with a frequency-complement tap per upsampling stage.
#pragma once

#include <map>

#include "ocvp/core/adam.hpp"
#include "ocvp/core/ffl.hpp"
#include "ocvp/core/ops.hpp"
#include "ocvp/decompose/decompose.hpp"
#include "ocvp/oaae/config.hpp"

namespace ocvp::oaae {

using core::BoundParams;
using core::ParamStore;
using core::Rng;
using core::Tape;
using core::Tensor;
using core::Var;
using core::shape_str;

/// Grid of codebook indices for one instance at one time step.
struct LatentTokenGrid {
  int hp = 0, wp = 0;
  int class_id = 0, slot_id = 0;
  std::vector<int64_t> indices;  // hp*wp, row-major
};

/// Exhaustive nearest-row lookup, squared L2, ties to the lowest index.
template <class T>
std::vector<int64_t> nearest_codebook_indices(const Tensor<T>& rows, const Tensor<T>& codebook) {
  OCVP_CHECK(rows.rank() == 2 && codebook.rank() == 2 && rows.shape[1] == codebook.shape[1],
             "quantize: feature dim " << shape_str(rows.shape) << " vs codebook "
                                      << shape_str(codebook.shape));
  OCVP_CHECK(codebook.shape[0] > 0, "quantize: empty codebook");
  const int64_t P = rows.shape[0], K = codebook.shape[0], d = rows.shape[1];
  std::vector<int64_t> out(static_cast<size_t>(P));
  for (int64_t p = 0; p < P; ++p) {
    const T* f = rows.ptr() + p * d;
    T best = std::numeric_limits<T>::max();
    int64_t bi = 0;
    for (int64_t j = 0; j < K; ++j) {
      const T* e = codebook.ptr() + j * d;
      T acc = T(0);
      for (int64_t c = 0; c < d; ++c) {
        const T diff = f[c] - e[c];
        acc += diff * diff;
      }
      if (acc < best) {
        best = acc;
        bi = j;
      }
    }
    out[static_cast<size_t>(p)] = bi;
  }
  return out;
}

/// Record/replay context for the quantizer's non-differentiable pieces.
/// Recording captures codebook assignments and every detached value; replay
/// substitutes them back, which turns the forward into the exact smooth
/// function the tape differentiates (the straight-through linearization).
/// Finite differences of that function are the oracle for the analytic
/// gradients.
template <class T>
struct QuantFreeze {
  bool recording = true;
  std::vector<std::vector<int64_t>> indices;
  std::vector<Tensor<T>> detached;
  size_t icur = 0, dcur = 0;

  void rewind() {
    recording = false;
    icur = dcur = 0;
  }

  const std::vector<int64_t>& use_indices(std::vector<int64_t>&& fresh) {
    if (recording) {
      indices.push_back(std::move(fresh));
      return indices.back();
    }
    OCVP_CHECK(icur < indices.size(), "quant freeze: index replay exhausted");
    return indices[icur++];
  }

  const Tensor<T>& use_detached(const Tensor<T>& fresh) {
    if (recording) {
      detached.push_back(fresh);
      return detached.back();
    }
    OCVP_CHECK(dcur < detached.size(), "quant freeze: detach replay exhausted");
    return detached[dcur++];
  }
};

template <class T>
Var<T> detach_frozen(Var<T> x, QuantFreeze<T>* freeze) {
  if (!freeze) return detach(x);
  return x.tape->leaf(freeze->use_detached(x.val()), false);
}

/// Straight-through quantization of a [B,d,hp,wp] feature map.
template <class T>
struct SlotQuant {
  std::vector<int64_t> indices;  // B*hp*wp
  Var<T> quantized_nchw;         // [B,d,hp,wp]; value = codebook rows, grad passes to features
  Var<T> pre_rows;               // [P,d] pre-quant features
  Var<T> sel_rows;               // [P,d] selected codebook rows (grads reach the codebook)
};

template <class T>
SlotQuant<T> st_quantize(Var<T> pre_nchw, Var<T> codebook, QuantFreeze<T>* freeze = nullptr) {
  const auto& s = pre_nchw.val().shape;
  OCVP_CHECK(s.size() == 4, "st_quantize: expected [B,d,hp,wp]");
  const int64_t B = s[0], d = s[1], hp = s[2], wp = s[3];
  SlotQuant<T> out;
  Var<T> rows = reshape(permute(pre_nchw, {0, 2, 3, 1}), {B * hp * wp, d});
  out.pre_rows = rows;
  if (freeze && !freeze->recording) {
    out.indices = freeze->use_indices({});
  } else {
    auto fresh = nearest_codebook_indices(rows.val(), codebook.val());
    out.indices = freeze ? freeze->use_indices(std::move(fresh)) : fresh;
  }
  out.sel_rows = gather_rows(codebook, out.indices);
  // value equals the codebook rows; gradient w.r.t. features is the identity
  Var<T> q_rows = add(rows, detach_frozen(sub(out.sel_rows, rows), freeze));
  out.quantized_nchw = permute(reshape(q_rows, {B, hp, wp, d}), {0, 3, 1, 2});
  return out;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <class T>
class OaaeModel {
 public:
  OaaeModel(OAAEConfig config, synthdata::SceneSchema schema, uint64_t init_seed)
      : config_(std::move(config)), schema_(std::move(schema)) {
    schema_.validate();
    const int L = config_.n_stages();
    OCVP_CHECK(L >= 1, "oaae: at least one conv stage required");
    Rng rng(init_seed);

    auto conv_init = [&](const std::string& name, int64_t cout, int64_t cin, int64_t k) {
      const double limit = std::sqrt(6.0 / static_cast<double>(cin * k * k));
      add_(name + ".w", core::tensor_uniform<T>(rng, {cout, cin, k, k}, -limit, limit));
      add_(name + ".b", Tensor<T>::zeros({cout}));
    };

    const auto& hid = config_.conv_hidden_dims;
    for (int c = 0; c < schema_.num_classes(); ++c) {
      const std::string base = "enc." + schema_.classes[static_cast<size_t>(c)];
      int64_t ch = 3;
      for (int l = 0; l < L; ++l) {
        conv_init(base + ".stage" + std::to_string(l), hid[static_cast<size_t>(l)], ch, 3);
        ch = hid[static_cast<size_t>(l)];
      }
      for (int r = 0; r < config_.n_residual_layers; ++r) {
        conv_init(base + ".res" + std::to_string(r) + ".c1", ch, ch, 3);
        conv_init(base + ".res" + std::to_string(r) + ".c2", ch, ch, 1);
      }
      conv_init(base + ".proj", config_.embed_dim, ch, 1);
    }
    for (int c = 0; c < schema_.num_classes(); ++c) {
      const double lim = 1.0 / static_cast<double>(config_.codebook_size);
      add_("cb." + schema_.classes[static_cast<size_t>(c)],
           core::tensor_uniform<T>(rng, {config_.codebook_size, config_.embed_dim}, -lim, lim));
    }
    {
      const int64_t zdim = static_cast<int64_t>(config_.embed_dim) * schema_.total_slots();
      int64_t ch = hid[static_cast<size_t>(L - 1)];
      conv_init("dec.in", ch, zdim, 1);
      for (int r = 0; r < config_.n_residual_layers; ++r) {
        conv_init("dec.res" + std::to_string(r) + ".c1", ch, ch, 3);
        conv_init("dec.res" + std::to_string(r) + ".c2", ch, ch, 1);
      }
      for (int j = 0; j < L; ++j) {
        conv_init("dec.stage" + std::to_string(j) + ".fcm", ch, ch, 3);
        const int64_t next = hid[static_cast<size_t>(std::max(0, L - 2 - j))];
        conv_init("dec.stage" + std::to_string(j) + ".up", next, ch, 3);
        ch = next;
      }
      conv_init("dec.out", 3, ch, 3);
    }
  }

  const OAAEConfig& config() const { return config_; }
  const synthdata::SceneSchema& schema() const { return schema_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  int64_t count_parameters() const { return params_.count(); }

  size_t param_index(const std::string& name) const {
    auto it = index_.find(name);
    OCVP_CHECK(it != index_.end(), "oaae: unknown parameter '" << name << "'");
    return it->second;
  }

  /// Per-tape binding; all forward methods live here.
  struct Bound {
    const OaaeModel* model = nullptr;
    Tape<T>* tape = nullptr;
    BoundParams<T> p;

    Var<T> param(const std::string& name) const { return p[model->param_index(name)]; }

    struct EncodeOut {
      Var<T> pre_quant;          // [B,d,hp,wp]
      std::vector<Var<T>> taps;  // one per stage, post-activation
    };

    EncodeOut encode_class(int class_id, Var<T> x) const {
      const auto& cfg = model->config_;
      const std::string base = "enc." + model->schema_.classes[static_cast<size_t>(class_id)];
      EncodeOut out;
      for (int l = 0; l < cfg.n_stages(); ++l) {
        const std::string s = base + ".stage" + std::to_string(l);
        x = relu(conv2d(x, param(s + ".w"), param(s + ".b"), 2, 1));
        out.taps.push_back(x);
      }
      for (int r = 0; r < cfg.n_residual_layers; ++r) {
        const std::string s = base + ".res" + std::to_string(r);
        Var<T> h = relu(x);
        h = relu(conv2d(h, param(s + ".c1.w"), param(s + ".c1.b"), 1, 1));
        h = conv2d(h, param(s + ".c2.w"), param(s + ".c2.b"), 1, 0);
        x = add(x, h);
      }
      out.pre_quant = conv2d(x, param(base + ".proj.w"), param(base + ".proj.b"), 1, 0);
      return out;
    }

    Var<T> codebook(int class_id) const {
      return param("cb." + model->schema_.classes[static_cast<size_t>(class_id)]);
    }

    struct DecodeOut {
      Var<T> recon;              // [B,3,H,W] in [0,1]
      std::vector<Var<T>> taps;  // FCM outputs, one per upsampling stage
    };

    DecodeOut decode(Var<T> z) const {
      const auto& cfg = model->config_;
      const int L = cfg.n_stages();
      DecodeOut out;
      Var<T> x = conv2d(z, param("dec.in.w"), param("dec.in.b"), 1, 0);
      for (int r = 0; r < cfg.n_residual_layers; ++r) {
        const std::string s = "dec.res" + std::to_string(r);
        Var<T> h = relu(x);
        h = relu(conv2d(h, param(s + ".c1.w"), param(s + ".c1.b"), 1, 1));
        h = conv2d(h, param(s + ".c2.w"), param(s + ".c2.b"), 1, 0);
        x = add(x, h);
      }
      for (int j = 0; j < L; ++j) {
        const std::string s = "dec.stage" + std::to_string(j);
        out.taps.push_back(conv2d(x, param(s + ".fcm.w"), param(s + ".fcm.b"), 1, 1));
        x = upsample_nearest2(x);
        x = relu(conv2d(x, param(s + ".up.w"), param(s + ".up.b"), 1, 1));
      }
      out.recon = sigmoid(conv2d(x, param("dec.out.w"), param("dec.out.b"), 1, 1));
      return out;
    }
  };

  Bound bind(Tape<T>& tape) const {
    Bound b;
    b.model = this;
    b.tape = &tape;
    b.p = BoundParams<T>::bind(tape, const_cast<ParamStore<T>&>(params_));
    return b;
  }

 private:
  void add_(const std::string& name, Tensor<T> init) {
    index_[name] = params_.params().size();
    params_.add(name, std::move(init));
  }

  OAAEConfig config_;
  synthdata::SceneSchema schema_;
  ParamStore<T> params_;
  std::map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// losses (per-batch forward)
// ---------------------------------------------------------------------------

template <class T>
struct OaaeLosses {
  Var<T> recon, feature, vq, commit, total;
};

template <class T>
Var<T> loss_feature(const std::vector<std::pair<Var<T>, Var<T>>>& tap_pairs) {
  OCVP_CHECK(!tap_pairs.empty(), "loss_feature: no tap pairs");
  Var<T> total;
  for (const auto& [enc_tap, dec_tap] : tap_pairs) {
    Var<T> term = core::ffl(enc_tap, dec_tap);
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

template <class T>
Var<T> loss_recon(Var<T> x, Var<T> recon) {
  return add(mse(x, recon), core::ffl(x, recon));
}

template <class T>
Var<T> loss_total(Var<T> recon, Var<T> feature, Var<T> vq, Var<T> commit, double alpha, double beta) {
  return add(add(recon, scale(feature, T(alpha))), add(vq, scale(commit, T(beta))));
}

/// Full training forward for a batch of frames. `slot_batches[k]` holds the
/// masked pixels of slot k for every frame in the batch as [B,3,H,W]
/// (for non-decomposed models: one slot holding the raw frames).
template <class T>
struct OaaeForwardOut {
  OaaeLosses<T> losses;
  Var<T> recon;
  std::vector<std::vector<int64_t>> slot_indices;  // per slot, B*hp*wp
};

template <class T>
OaaeForwardOut<T> oaae_forward(const typename OaaeModel<T>::Bound& bound,
                               const std::vector<Tensor<T>>& slot_batches, const Tensor<T>& frames,
                               QuantFreeze<T>* freeze = nullptr) {
  const OaaeModel<T>& model = *bound.model;
  const auto& schema = model.schema();
  const int n_slots = schema.total_slots();
  OCVP_CHECK(static_cast<int>(slot_batches.size()) == n_slots,
             "oaae_forward: expected " << n_slots << " slot batches, got " << slot_batches.size());
  Tape<T>& tape = *bound.tape;

  const int64_t d = model.config().embed_dim;
  OaaeForwardOut<T> out;
  std::vector<Var<T>> slot_latents;
  std::vector<std::pair<Var<T>, Var<T>>> tap_pairs;
  Var<T> vq_sum, commit_sum;
  std::vector<typename OaaeModel<T>::Bound::EncodeOut> encoded;
  for (int k = 0; k < n_slots; ++k) {
    Var<T> xk = tape.leaf(slot_batches[static_cast<size_t>(k)], false);
    encoded.push_back(bound.encode_class(schema.class_of_slot(k), xk));
  }
  for (int k = 0; k < n_slots; ++k) {
    auto quant = st_quantize(encoded[static_cast<size_t>(k)].pre_quant,
                             bound.codebook(schema.class_of_slot(k)), freeze);
    out.slot_indices.push_back(quant.indices);
    slot_latents.push_back(quant.quantized_nchw);
    Var<T> vq_k = scale(mse(detach_frozen(quant.pre_rows, freeze), quant.sel_rows), T(d));
    Var<T> commit_k = scale(mse(quant.pre_rows, detach_frozen(quant.sel_rows, freeze)), T(d));
    vq_sum = vq_sum.valid() ? add(vq_sum, vq_k) : vq_k;
    commit_sum = commit_sum.valid() ? add(commit_sum, commit_k) : commit_k;
  }
  Var<T> z = n_slots == 1 ? slot_latents[0] : concat(slot_latents, 1);
  auto dec = bound.decode(z);

  const int L = model.config().n_stages();
  for (int k = 0; k < n_slots; ++k)
    for (int l = 0; l < L; ++l)
      tap_pairs.push_back({encoded[static_cast<size_t>(k)].taps[static_cast<size_t>(l)],
                           dec.taps[static_cast<size_t>(L - 1 - l)]});

  Var<T> x_true = tape.leaf(frames, false);
  OaaeLosses<T> losses;
  losses.recon = loss_recon(x_true, dec.recon);
  losses.feature = loss_feature(tap_pairs);
  losses.vq = vq_sum;
  losses.commit = commit_sum;
  losses.total = loss_total(losses.recon, losses.feature, losses.vq, losses.commit,
                            model.config().alpha, model.config().beta);
  out.losses = losses;
  out.recon = dec.recon;
  return out;
}

// ---------------------------------------------------------------------------
// inference helpers (no gradients)
// ---------------------------------------------------------------------------

/// Masked instance pixels as a [1,3,H,W] tensor.
template <class T>
Tensor<T> instance_to_tensor(const decompose::MaskedInstanceFrame& inst) {
  Tensor<T> out({1, 3, inst.h, inst.w});
  for (int y = 0; y < inst.h; ++y)
    for (int x = 0; x < inst.w; ++x)
      for (int c = 0; c < 3; ++c)
        out.data[static_cast<size_t>((c * inst.h + y) * inst.w + x)] =
            static_cast<T>(inst.pixels[(static_cast<size_t>(y) * inst.w + x) * 3 + c]);
  return out;
}

/// Raw frame (floats in [0,1], h*w*3) as [1,3,H,W].
template <class T>
Tensor<T> frame_to_tensor(const std::vector<float>& pixels, int h, int w) {
  Tensor<T> out({1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.data[static_cast<size_t>((c * h + y) * w + x)] =
            static_cast<T>(pixels[(static_cast<size_t>(y) * w + x) * 3 + c]);
  return out;
}

/// Rows [hp*wp, d] of one batch item of a [B,d,hp,wp] map.
template <class T>
Tensor<T> feature_rows(const Tensor<T>& pre_quant, int64_t batch_item) {
  const int64_t d = pre_quant.shape[1], hp = pre_quant.shape[2], wp = pre_quant.shape[3];
  Tensor<T> rows({hp * wp, d});
  for (int64_t c = 0; c < d; ++c)
    for (int64_t p = 0; p < hp * wp; ++p)
      rows.data[static_cast<size_t>(p * d + c)] =
          pre_quant.data[static_cast<size_t>(((batch_item * d + c) * hp * wp) + p)];
  return rows;
}

/// Encode per-slot frame sequences ([t,3,H,W] per slot) to token grids,
/// one grid per slot per time step. Eval path, no gradients.
template <class T>
std::vector<std::vector<LatentTokenGrid>> encode_sequence_tokens(
    const OaaeModel<T>& model, const std::vector<Tensor<T>>& slot_seq_batches) {
  Tape<T> tape;
  tape.grad_enabled = false;
  auto bound = model.bind(tape);
  const auto& schema = model.schema();
  OCVP_CHECK(static_cast<int>(slot_seq_batches.size()) == schema.total_slots(),
             "encode_sequence_tokens: slot count mismatch");
  std::vector<std::vector<LatentTokenGrid>> out(slot_seq_batches.size());
  for (int k = 0; k < schema.total_slots(); ++k) {
    const int class_id = schema.class_of_slot(k);
    auto enc = bound.encode_class(class_id, tape.leaf(slot_seq_batches[static_cast<size_t>(k)], false));
    const auto& s = enc.pre_quant.val().shape;
    const auto& cb =
        model.params().params()[model.param_index("cb." + schema.classes[static_cast<size_t>(class_id)])].value;
    for (int64_t t = 0; t < s[0]; ++t) {
      LatentTokenGrid grid;
      grid.hp = static_cast<int>(s[2]);
      grid.wp = static_cast<int>(s[3]);
      grid.class_id = class_id;
      grid.slot_id = k;
      grid.indices = nearest_codebook_indices(feature_rows(enc.pre_quant.val(), t), cb);
      out[static_cast<size_t>(k)].push_back(std::move(grid));
    }
  }
  return out;
}

/// Decode per-slot token grids back to a frame tensor [1,3,H,W].
template <class T>
Tensor<T> decode_tokens(const OaaeModel<T>& model, const std::vector<LatentTokenGrid>& grids) {
  const auto& schema = model.schema();
  OCVP_CHECK(static_cast<int>(grids.size()) == schema.total_slots(), "decode_tokens: slot count mismatch");
  Tape<T> tape;
  tape.grad_enabled = false;
  auto bound = model.bind(tape);
  const int64_t d = model.config().embed_dim;
  std::vector<Var<T>> slot_latents;
  for (const auto& grid : grids) {
    Var<T> rows = gather_rows(bound.codebook(grid.class_id), grid.indices);
    slot_latents.push_back(permute(reshape(rows, {1, grid.hp, grid.wp, d}), {0, 3, 1, 2}));
  }
  Var<T> z = slot_latents.size() == 1 ? slot_latents[0] : concat(slot_latents, 1);
  return bound.decode(z).recon.val();
}

}  // namespace ocvp::oaae
