#include "nbslu/nn.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nbslu {

Tensor* ParamStore::create(const std::string& name, std::vector<int> shape, Init init, Rng& rng) {
  if (index_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
  auto t = std::make_unique<Tensor>(std::move(shape));
  t->requires_grad = true;
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Xavier: {
      int fan_in = t->rank() == 2 ? t->shape[0] : static_cast<int>(t->size());
      int fan_out = t->rank() == 2 ? t->shape[1] : 1;
      double lim = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t->values) v = rng.uniform(-lim, lim);
      break;
    }
    case Init::Embedding:
      for (double& v : t->values) v = rng.normal(0.0, 0.02);
      break;
  }
  t->ensure_grad();
  Tensor* raw = t.get();
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  return raw;
}

Tensor* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : tensors_[it->second].get();
}

const Tensor* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : tensors_[it->second].get();
}

std::vector<Tensor*> ParamStore::all() {
  std::vector<Tensor*> out;
  out.reserve(tensors_.size());
  for (auto& t : tensors_) out.push_back(t.get());
  return out;
}

std::vector<Tensor*> ParamStore::matching(const std::string& prefix) {
  std::vector<Tensor*> out;
  for (size_t i = 0; i < tensors_.size(); ++i)
    if (names_[i].rfind(prefix, 0) == 0) out.push_back(tensors_[i].get());
  return out;
}

std::vector<Tensor*> ParamStore::not_matching(const std::string& prefix) {
  std::vector<Tensor*> out;
  for (size_t i = 0; i < tensors_.size(); ++i)
    if (names_[i].rfind(prefix, 0) != 0) out.push_back(tensors_[i].get());
  return out;
}

void ParamStore::zero_grads() {
  for (auto& t : tensors_) t->zero_grad();
}

size_t ParamStore::total_values() const {
  size_t n = 0;
  for (auto& t : tensors_) n += t->values.size();
  return n;
}

void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& meta,
                     const ParamStore& store) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << "nbslu-checkpoint v1\n[meta]\n";
  for (const auto& [k, v] : meta) out << k << "=" << v << "\n";
  out << "[params]\n";
  char buf[40];
  for (const std::string& name : store.names()) {
    const Tensor* t = store.find(name);
    out << "param " << name << " " << t->rank();
    for (int d : t->shape) out << " " << d;
    out << "\n";
    for (size_t i = 0; i < t->values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t->values[i]);
      out << buf << (i + 1 == t->values.size() ? "" : " ");
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed for checkpoint " + path);
}

std::map<std::string, std::string> load_checkpoint_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  std::getline(in, line);
  if (line != "nbslu-checkpoint v1") throw std::runtime_error("bad checkpoint header in " + path);
  std::getline(in, line);
  if (line != "[meta]") throw std::runtime_error("missing [meta] section in " + path);
  std::map<std::string, std::string> meta;
  while (std::getline(in, line) && line != "[params]") {
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad meta line in " + path + ": " + line);
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

std::map<std::string, std::string> load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  std::getline(in, line);
  if (line != "nbslu-checkpoint v1") throw std::runtime_error("bad checkpoint header in " + path);
  std::getline(in, line);
  if (line != "[meta]") throw std::runtime_error("missing [meta] section in " + path);
  std::map<std::string, std::string> meta;
  while (std::getline(in, line) && line != "[params]") {
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad meta line in " + path + ": " + line);
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream hdr(line);
    std::string tag, name;
    int rank = 0;
    hdr >> tag >> name >> rank;
    if (tag != "param" || !hdr) throw std::runtime_error("bad param header in " + path + ": " + line);
    std::vector<int> shape(static_cast<size_t>(rank));
    for (int& d : shape) hdr >> d;
    Tensor* t = store.find(name);
    if (!t) throw std::runtime_error("checkpoint " + path + " has unknown parameter " + name);
    if (t->shape != shape)
      throw std::runtime_error("checkpoint " + path + ": shape mismatch for " + name + " (" +
                               shape_str(shape) + " vs " + shape_str(t->shape) + ")");
    if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint " + path);
    std::istringstream vals(line);
    for (double& v : t->values)
      if (!(vals >> v)) throw std::runtime_error("short value row for " + name + " in " + path);
  }
  return meta;
}

Linear::Linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in, int out, bool bias) {
  W = ps.create(prefix + ".W", {in, out}, Init::Xavier, rng);
  if (bias) b = ps.create(prefix + ".b", {out}, Init::Zeros, rng);
}

Val Linear::operator()(Tape& t, Val x) const {
  Val y = matmul(x, t.leaf(W));
  if (b) y = add(y, t.leaf(b));
  return y;
}

LayerNormAffine::LayerNormAffine(ParamStore& ps, const std::string& prefix, int dim, Rng& rng) {
  gain = ps.create(prefix + ".g", {dim}, Init::Zeros, rng);
  std::fill(gain->values.begin(), gain->values.end(), 1.0);
  bias = ps.create(prefix + ".b", {dim}, Init::Zeros, rng);
}

Val LayerNormAffine::operator()(Tape& t, Val x) const {
  return add(mul(layer_norm(x), t.leaf(gain)), t.leaf(bias));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, Rng& rng, const std::string& prefix, int dim,
                                       int heads_)
    : heads(heads_),
      wq(ps, rng, prefix + ".q", dim, dim),
      wk(ps, rng, prefix + ".k", dim, dim),
      wv(ps, rng, prefix + ".v", dim, dim),
      wo(ps, rng, prefix + ".o", dim, dim) {
  if (dim % heads_ != 0) throw std::invalid_argument("attention: dim not divisible by heads");
}

Val MultiHeadAttention::operator()(Tape& t, Val q_in, Val kv_in, const Tensor* mask) const {
  Val q = wq(t, q_in);
  Val k = wk(t, kv_in);
  Val v = wv(t, kv_in);
  int dim = q.cols();
  int dk = dim / heads;
  std::vector<Val> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Val qh = slice_cols(q, h * dk, (h + 1) * dk);
    Val kh = slice_cols(k, h * dk, (h + 1) * dk);
    Val vh = slice_cols(v, h * dk, (h + 1) * dk);
    outs.push_back(scaled_dot_product_attention(qh, kh, vh, mask));
  }
  return wo(t, concat(outs, 1));
}

void EncoderConfig::validate() const {
  if (dim % heads != 0) throw std::invalid_argument("encoder config: dim must be divisible by heads");
  if (layers < 1 || dim < 1 || ffn < 1 || max_positions < 2)
    throw std::invalid_argument("encoder config: sizes must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("encoder config: dropout out of range");
}

TransformerLayer::TransformerLayer(ParamStore& ps, Rng& rng, const std::string& prefix,
                                   const EncoderConfig& cfg, bool cross)
    : self_attn(ps, rng, prefix + ".attn", cfg.dim, cfg.heads),
      ln1(ps, prefix + ".ln1", cfg.dim, rng),
      ln2(ps, prefix + ".ln2", cfg.dim, rng),
      ff1(ps, rng, prefix + ".ff1", cfg.dim, cfg.ffn),
      ff2(ps, rng, prefix + ".ff2", cfg.ffn, cfg.dim),
      has_cross(cross) {
  if (cross) {
    cross_attn = MultiHeadAttention(ps, rng, prefix + ".xattn", cfg.dim, cfg.heads);
    ln3 = LayerNormAffine(ps, prefix + ".ln3", cfg.dim, rng);
  }
}

Val TransformerLayer::operator()(Tape& t, Val x, const Tensor* self_mask, const Val* memory,
                                 const Tensor* memory_mask, double drop, Rng* drop_rng) const {
  auto maybe_drop = [&](Val v) { return (drop > 0.0 && drop_rng) ? dropout(v, drop, *drop_rng) : v; };
  Val a = self_attn(t, x, x, self_mask);
  x = ln1(t, add(x, maybe_drop(a)));
  if (has_cross) {
    Val c = cross_attn(t, x, *memory, memory_mask);
    x = ln3(t, add(x, maybe_drop(c)));
  }
  Val f = ff2(t, gelu(ff1(t, x)));
  return ln2(t, add(x, maybe_drop(f)));
}

TransformerEncoder::TransformerEncoder(ParamStore& ps, Rng& rng, const std::string& prefix,
                                       int vocab_size, const EncoderConfig& cfg_)
    : cfg(cfg_) {
  cfg.validate();
  tok_emb = ps.create(prefix + ".tok_emb", {vocab_size, cfg.dim}, Init::Embedding, rng);
  seg_emb = ps.create(prefix + ".seg_emb", {2, cfg.dim}, Init::Embedding, rng);
  pos_emb = ps.create(prefix + ".pos_emb", {cfg.max_positions, cfg.dim}, Init::Embedding, rng);
  emb_ln = LayerNormAffine(ps, prefix + ".emb_ln", cfg.dim, rng);
  for (int l = 0; l < cfg.layers; ++l)
    layers.emplace_back(ps, rng, prefix + ".layer" + std::to_string(l), cfg, false);
}

Val TransformerEncoder::encode(Tape& t, const std::vector<int>& token_ids,
                               const std::vector<int>& segment_ids,
                               const std::vector<int>& position_ids, const Tensor* attn_mask,
                               Rng* drop_rng) const {
  if (token_ids.empty()) throw std::invalid_argument("encode: empty input");
  if (token_ids.size() != segment_ids.size() || token_ids.size() != position_ids.size())
    throw std::invalid_argument("encode: id row lengths disagree");
  if (static_cast<int>(token_ids.size()) > cfg.max_positions)
    throw std::invalid_argument("encode: sequence exceeds max positions");
  Val x = add(add(embedding_lookup(t.leaf(tok_emb), token_ids),
                  embedding_lookup(t.leaf(seg_emb), segment_ids)),
              embedding_lookup(t.leaf(pos_emb), position_ids));
  x = emb_ln(t, x);
  if (cfg.dropout > 0.0 && drop_rng) x = dropout(x, cfg.dropout, *drop_rng);
  for (const auto& layer : layers) x = layer(t, x, attn_mask, nullptr, nullptr, cfg.dropout, drop_rng);
  return x;
}

TransformerDecoder::TransformerDecoder(ParamStore& ps, Rng& rng, const std::string& prefix,
                                       const EncoderConfig& cfg_)
    : cfg(cfg_) {
  cfg.validate();
  pos_emb = ps.create(prefix + ".pos_emb", {cfg.max_positions, cfg.dim}, Init::Embedding, rng);
  emb_ln = LayerNormAffine(ps, prefix + ".emb_ln", cfg.dim, rng);
  for (int l = 0; l < cfg.layers; ++l)
    layers.emplace_back(ps, rng, prefix + ".layer" + std::to_string(l), cfg, true);
}

Val TransformerDecoder::decode(Tape& t, Val tgt, Val memory, const Tensor* self_mask,
                               const Tensor* memory_mask, Rng* drop_rng) const {
  int T = tgt.rows();
  if (T > cfg.max_positions) throw std::invalid_argument("decode: target exceeds max positions");
  std::vector<int> pos(static_cast<size_t>(T));
  for (int i = 0; i < T; ++i) pos[static_cast<size_t>(i)] = i;
  Val x = add(tgt, embedding_lookup(t.leaf(pos_emb), pos));
  x = emb_ln(t, x);
  if (cfg.dropout > 0.0 && drop_rng) x = dropout(x, cfg.dropout, *drop_rng);
  for (const auto& layer : layers)
    x = layer(t, x, self_mask, &memory, memory_mask, cfg.dropout, drop_rng);
  return x;
}

Tensor causal_mask(int n) {
  Tensor m({n, n});
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) m.at(r, c) = kMaskNegInf;
  return m;
}

Tensor key_padding_mask(int rows, const std::vector<int>& allowed) {
  Tensor m({rows, static_cast<int>(allowed.size())});
  for (int r = 0; r < rows; ++r)
    for (size_t c = 0; c < allowed.size(); ++c)
      if (!allowed[c]) m.at(r, static_cast<int>(c)) = kMaskNegInf;
  return m;
}

}  // namespace nbslu
