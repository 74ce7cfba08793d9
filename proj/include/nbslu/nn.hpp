#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nbslu/graph.hpp"
#include "nbslu/rng.hpp"
#include "nbslu/tensor.hpp"

namespace nbslu {

enum class Init { Xavier, Zeros, Embedding };

// One training-history row shared by every trainer.
struct EpochMetric {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;  // higher is better
};

// Named parameter registry. Owns the tensors; layer structs keep raw pointers
// into it. Creation order is the checkpoint / optimizer order.
class ParamStore {
 public:
  Tensor* create(const std::string& name, std::vector<int> shape, Init init, Rng& rng);
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  std::vector<Tensor*> all();
  // Parameters whose name starts with `prefix`.
  std::vector<Tensor*> matching(const std::string& prefix);
  std::vector<Tensor*> not_matching(const std::string& prefix);
  const std::vector<std::string>& names() const { return names_; }

  void zero_grads();
  size_t total_values() const;

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Tensor>> tensors_;
  std::map<std::string, size_t> index_;
};

// Sectioned text checkpoint: version line, key=value metadata, then one
// `param <name> <rank> <dims...>` line per tensor followed by its row-major
// values (%.17g, so doubles round-trip exactly).
void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& meta,
                     const ParamStore& store);
std::map<std::string, std::string> load_checkpoint(const std::string& path, ParamStore& store);
// Reads only the metadata section (to decide how to build the store).
std::map<std::string, std::string> load_checkpoint_meta(const std::string& path);

// ---- layers ----------------------------------------------------------------

struct Linear {
  Tensor* W = nullptr;  // [in, out]
  Tensor* b = nullptr;  // [out], optional

  Linear() = default;
  Linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in, int out, bool bias = true);
  Val operator()(Tape& t, Val x) const;
};

struct LayerNormAffine {
  Tensor* gain = nullptr;
  Tensor* bias = nullptr;

  LayerNormAffine() = default;
  LayerNormAffine(ParamStore& ps, const std::string& prefix, int dim, Rng& rng);
  Val operator()(Tape& t, Val x) const;
};

struct MultiHeadAttention {
  int heads = 1;
  Linear wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, Rng& rng, const std::string& prefix, int dim, int heads);
  // q_in [Tq,D], kv_in [Tk,D]; mask (optional) additive [Tq,Tk].
  Val operator()(Tape& t, Val q_in, Val kv_in, const Tensor* mask = nullptr) const;
};

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int dim = 64;
  int ffn = 128;
  int max_positions = 128;
  double dropout = 0.0;

  void validate() const;
};

struct TransformerLayer {
  MultiHeadAttention self_attn;
  LayerNormAffine ln1, ln2, ln3;
  Linear ff1, ff2;
  MultiHeadAttention cross_attn;  // decoder layers only
  bool has_cross = false;

  TransformerLayer() = default;
  TransformerLayer(ParamStore& ps, Rng& rng, const std::string& prefix, const EncoderConfig& cfg,
                   bool cross);
  // Post-LN residual block. `self_mask` masks self-attention (causal or
  // padding); `memory`/`memory_mask` feed cross-attention when present.
  Val operator()(Tape& t, Val x, const Tensor* self_mask, const Val* memory,
                 const Tensor* memory_mask, double dropout, Rng* drop_rng) const;
};

// Token + segment + position embeddings into a post-LN transformer stack.
struct TransformerEncoder {
  EncoderConfig cfg;
  Tensor* tok_emb = nullptr;  // [V, D]
  Tensor* seg_emb = nullptr;  // [2, D]
  Tensor* pos_emb = nullptr;  // [P, D]
  LayerNormAffine emb_ln;
  std::vector<TransformerLayer> layers;

  TransformerEncoder() = default;
  TransformerEncoder(ParamStore& ps, Rng& rng, const std::string& prefix, int vocab_size,
                     const EncoderConfig& cfg);
  // attn_mask (optional): additive [T,T]. Returns [T, D].
  Val encode(Tape& t, const std::vector<int>& token_ids, const std::vector<int>& segment_ids,
             const std::vector<int>& position_ids, const Tensor* attn_mask = nullptr,
             Rng* drop_rng = nullptr) const;
};

// Decoder stack over caller-embedded target inputs (cross-attending layers).
struct TransformerDecoder {
  EncoderConfig cfg;
  Tensor* pos_emb = nullptr;  // [P, D]
  LayerNormAffine emb_ln;
  std::vector<TransformerLayer> layers;

  TransformerDecoder() = default;
  TransformerDecoder(ParamStore& ps, Rng& rng, const std::string& prefix, const EncoderConfig& cfg);
  // tgt [T,D] already embedded (position embeddings added here), memory [S,D].
  Val decode(Tape& t, Val tgt, Val memory, const Tensor* self_mask, const Tensor* memory_mask,
             Rng* drop_rng = nullptr) const;
};

// Additive [T,T] causal mask (strict upper triangle at kMaskNegInf).
Tensor causal_mask(int n);
// Additive [rows, mask.size()] matrix, kMaskNegInf where allowed[i] == 0.
Tensor key_padding_mask(int rows, const std::vector<int>& allowed);

}  // namespace nbslu
