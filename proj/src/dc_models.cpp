#include "nbslu/dc_models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nbslu/adam.hpp"
#include "nbslu/metrics.hpp"

namespace nbslu {

std::string dc_variant_name(DCVariant v) {
  switch (v) {
    case DCVariant::kBaseline: return "baseline";
    case DCVariant::kBSumExt: return "bsumext";
    case DCVariant::kBSumExtAbs: return "bsumextabs";
  }
  return "?";
}

DCVariant dc_variant_from(const std::string& name) {
  if (name == "baseline") return DCVariant::kBaseline;
  if (name == "bsumext") return DCVariant::kBSumExt;
  if (name == "bsumextabs") return DCVariant::kBSumExtAbs;
  throw std::invalid_argument("unknown DC variant " + name);
}

DCModel::DCModel(DCVariant variant, std::vector<std::string> domains, const Vocab& vocab,
                 const EncoderConfig& cfg, int max_source_len, uint64_t seed)
    : variant_(variant), domains_(std::move(domains)), vocab_(vocab), cfg_(cfg),
      max_source_len_(max_source_len) {
  if (domains_.empty()) throw std::invalid_argument("dc model: no domains");
  Rng rng(derive_seed(seed, "dc-init"));
  encoder_ = TransformerEncoder(params_, rng, "enc", vocab_.size(), cfg_);
  if (variant_ != DCVariant::kBaseline) {
    ext_score_ = Linear(params_, rng, "ext.score", cfg_.dim, 1);
    sum_query_ = params_.create("sum.query", {1, cfg_.dim}, Init::Embedding, rng);
    sum_attn_ = std::make_unique<MultiHeadAttention>(params_, rng, "sum.attn", cfg_.dim, cfg_.heads);
  }
  if (variant_ == DCVariant::kBSumExtAbs) {
    decoder_ = std::make_unique<TransformerDecoder>(params_, rng, "dec", cfg_);
    dec_out_ = Linear(params_, rng, "dec.out", cfg_.dim, vocab_.size());
  }
  cls_hidden_ = Linear(params_, rng, "cls.hidden", cfg_.dim, cfg_.dim);
  cls_out_ = Linear(params_, rng, "cls.out", cfg_.dim, static_cast<int>(domains_.size()));
}

int DCModel::domain_index(const std::string& domain) const {
  auto it = std::find(domains_.begin(), domains_.end(), domain);
  if (it == domains_.end()) throw std::invalid_argument("dc model: unknown domain " + domain);
  return static_cast<int>(it - domains_.begin());
}

Val DCModel::encode_tokens(Tape& t, const std::vector<std::string>& tokens, Rng* drop_rng) const {
  std::vector<int> ids{Vocab::kCls};
  for (size_t i = 0; i < tokens.size() && static_cast<int>(i) < max_source_len_; ++i)
    ids.push_back(vocab_.id(tokens[i]));
  ids.push_back(Vocab::kSep);
  std::vector<int> segs(ids.size(), 0), pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  return encoder_.encode(t, ids, segs, pos, nullptr, drop_rng);
}

Val DCModel::encode_nbest_cls(Tape& t, const NBestList& nbest, Val* all_states, Rng* drop_rng) const {
  EncodedBatch b = encode_summarizer_input(nbest, vocab_, max_source_len_);
  Val states =
      encoder_.encode(t, b.token_ids[0], b.segment_ids[0], b.position_ids[0], nullptr, drop_rng);
  if (all_states) *all_states = states;
  return gather_rows(states, b.cls_positions);
}

Val DCModel::extractive_row(Tape& t, Val cls_mat) const { return transpose(ext_score_(t, cls_mat)); }

Val DCModel::summary_vector(Tape& t, Val cls_mat, bool hard_select) const {
  if (hard_select) {
    Val scores = extractive_row(t, cls_mat);
    const auto& v = scores.t().values;
    int best = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    return slice_rows(cls_mat, best, best + 1);
  }
  return (*sum_attn_)(t, t.leaf(sum_query_), cls_mat);
}

Val DCModel::classify(Tape& t, Val feature, Rng* drop_rng) const {
  Val h = gelu(cls_hidden_(t, feature));
  if (cfg_.dropout > 0.0 && drop_rng) h = dropout(h, cfg_.dropout, *drop_rng);
  return softmax(cls_out_(t, h), 1);
}

Val DCModel::decoder_states(Tape& t, Val memory, const std::vector<int>& input_word_ids,
                            Rng* drop_rng) const {
  Val emb = embedding_lookup(t.leaf(encoder_.tok_emb), input_word_ids);
  Tensor mask = causal_mask(static_cast<int>(input_word_ids.size()));
  return decoder_->decode(t, emb, memory, &mask, nullptr, drop_rng);
}

Val DCModel::domain_loss_tokens(Tape& t, const std::vector<std::string>& tokens, int domain_idx) const {
  Val states = encode_tokens(t, tokens, nullptr);
  Val probs = classify(t, slice_rows(states, 0, 1), nullptr);
  return cross_entropy(probs, domain_idx);
}

Val DCModel::joint_summarizer_loss(Tape& t, const NBestList& nbest, int domain_idx, int oracle_idx,
                                   double w_ext, bool hard_select,
                                   const std::vector<std::string>* abs_target, Rng* drop_rng) const {
  Val states;
  Val cls_mat = encode_nbest_cls(t, nbest, &states, drop_rng);
  Val feature;
  if (variant_ == DCVariant::kBSumExtAbs) {
    if (!abs_target) throw std::invalid_argument("bsumextabs loss needs the transcription target");
    std::vector<int> input{Vocab::kCls};
    for (size_t i = 0; i < abs_target->size() && static_cast<int>(i) < max_source_len_; ++i)
      input.push_back(vocab_.id((*abs_target)[i]));
    feature = mean_rows(decoder_states(t, states, input, drop_rng));
  } else {
    feature = summary_vector(t, cls_mat, hard_select);
  }
  Val dc_loss = cross_entropy(classify(t, feature, drop_rng), domain_idx);
  Val ext_probs = softmax(extractive_row(t, cls_mat), 1);
  if (oracle_idx >= ext_probs.cols()) oracle_idx = ext_probs.cols() - 1;
  Val ext_loss = cross_entropy(ext_probs, oracle_idx);
  return add(dc_loss, scale(ext_loss, w_ext));
}

Val DCModel::abstractive_loss(Tape& t, const NBestList& nbest,
                              const std::vector<std::string>& transcription, Rng* drop_rng) const {
  if (variant_ != DCVariant::kBSumExtAbs)
    throw std::invalid_argument("abstractive loss requires the bsumextabs variant");
  Val states;
  (void)encode_nbest_cls(t, nbest, &states, drop_rng);
  std::vector<int> input{Vocab::kCls}, target;
  for (size_t i = 0; i < transcription.size() && static_cast<int>(i) < max_source_len_; ++i) {
    int id = vocab_.id(transcription[i]);
    input.push_back(id);
    target.push_back(id);
  }
  target.push_back(Vocab::kEos);
  Val dec = decoder_states(t, states, input, drop_rng);
  Val probs = softmax(dec_out_(t, dec), 1);
  Val total;
  for (size_t i = 0; i < target.size(); ++i) {
    Val li = cross_entropy(slice_rows(probs, static_cast<int>(i), static_cast<int>(i) + 1),
                           target[static_cast<size_t>(i)]);
    total = (i == 0) ? li : add(total, li);
  }
  return scale(total, 1.0 / static_cast<double>(target.size()));
}

double DCModel::abstractive_token_accuracy(const NBestList& nbest,
                                           const std::vector<std::string>& transcription) const {
  Tape t;
  Val states;
  (void)encode_nbest_cls(t, nbest, &states, nullptr);
  std::vector<int> input{Vocab::kCls}, target;
  for (size_t i = 0; i < transcription.size() && static_cast<int>(i) < max_source_len_; ++i) {
    int id = vocab_.id(transcription[i]);
    input.push_back(id);
    target.push_back(id);
  }
  target.push_back(Vocab::kEos);
  Val dec = decoder_states(t, states, input, nullptr);
  Val logits = dec_out_(t, dec);
  int correct = 0;
  for (size_t i = 0; i < target.size(); ++i) {
    const double* row = logits.t().values.data() + i * static_cast<size_t>(logits.cols());
    int arg = static_cast<int>(std::max_element(row, row + logits.cols()) - row);
    if (arg == target[i]) correct++;
  }
  return static_cast<double>(correct) / static_cast<double>(target.size());
}

std::vector<int> DCModel::greedy_summary(const NBestList& nbest, int max_len) const {
  Tape t;
  Val states;
  (void)encode_nbest_cls(t, nbest, &states, nullptr);
  std::vector<int> decoded;
  std::vector<int> input{Vocab::kCls};
  for (int step = 0; step < max_len; ++step) {
    Val dec = decoder_states(t, states, input, nullptr);
    Val logits = dec_out_(t, slice_rows(dec, dec.rows() - 1, dec.rows()));
    const auto& v = logits.t().values;
    int arg = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    if (arg == Vocab::kEos) break;
    decoded.push_back(arg);
    input.push_back(arg);
  }
  return decoded;
}

DCPrediction DCModel::predict_domain(const std::vector<std::string>& tokens) const {
  if (variant_ != DCVariant::kBaseline)
    throw std::invalid_argument("token input requires the baseline variant");
  Tape t;
  Val states = encode_tokens(t, tokens, nullptr);
  Val probs = classify(t, slice_rows(states, 0, 1), nullptr);
  DCPrediction p;
  p.probs = probs.t().values;
  p.argmax = static_cast<int>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
  p.label = domains_[static_cast<size_t>(p.argmax)];
  return p;
}

DCPrediction DCModel::predict_domain(const NBestList& nbest) const {
  if (variant_ == DCVariant::kBaseline)
    throw std::invalid_argument("n-best input requires a summarizer variant");
  Tape t;
  Val states;
  Val cls_mat = encode_nbest_cls(t, nbest, &states, nullptr);
  Val feature;
  if (variant_ == DCVariant::kBSumExtAbs) {
    std::vector<int> decoded = greedy_summary(nbest, max_source_len_);
    Tape t2;
    Val states2;
    (void)encode_nbest_cls(t2, nbest, &states2, nullptr);
    std::vector<int> input{Vocab::kCls};
    input.insert(input.end(), decoded.begin(), decoded.end());
    Val feat2 = mean_rows(decoder_states(t2, states2, input, nullptr));
    Val probs2 = classify(t2, feat2, nullptr);
    DCPrediction p;
    p.probs = probs2.t().values;
    p.argmax = static_cast<int>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
    p.label = domains_[static_cast<size_t>(p.argmax)];
    Val ext = softmax(extractive_row(t, cls_mat), 1);
    p.extractive_weights = ext.t().values;
    return p;
  }
  Val feat = summary_vector(t, cls_mat, hard_select_);
  Val probs = classify(t, feat, nullptr);
  DCPrediction p;
  p.probs = probs.t().values;
  p.argmax = static_cast<int>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
  p.label = domains_[static_cast<size_t>(p.argmax)];
  Val ext = softmax(extractive_row(t, cls_mat), 1);
  p.extractive_weights = ext.t().values;
  return p;
}

void DCModel::save(const std::string& path) const {
  std::map<std::string, std::string> meta;
  meta["model"] = dc_variant_name(variant_);
  std::string doms;
  for (const auto& d : domains_) doms += (doms.empty() ? "" : ",") + d;
  meta["domains"] = doms;
  meta["dim"] = std::to_string(cfg_.dim);
  meta["layers"] = std::to_string(cfg_.layers);
  meta["heads"] = std::to_string(cfg_.heads);
  meta["ffn"] = std::to_string(cfg_.ffn);
  meta["max_positions"] = std::to_string(cfg_.max_positions);
  meta["dropout"] = std::to_string(cfg_.dropout);
  meta["max_source_len"] = std::to_string(max_source_len_);
  meta["vocab_size"] = std::to_string(vocab_.size());
  meta["hard_select"] = hard_select_ ? "1" : "0";
  save_checkpoint(path, meta, params_);
}

DCModel DCModel::load(const std::string& path, const Vocab& vocab) {
  ParamStore probe;
  auto meta = load_checkpoint_meta(path);
  EncoderConfig cfg;
  cfg.dim = std::stoi(meta.at("dim"));
  cfg.layers = std::stoi(meta.at("layers"));
  cfg.heads = std::stoi(meta.at("heads"));
  cfg.ffn = std::stoi(meta.at("ffn"));
  cfg.max_positions = std::stoi(meta.at("max_positions"));
  cfg.dropout = std::stod(meta.at("dropout"));
  std::vector<std::string> domains;
  std::string doms = meta.at("domains");
  size_t p0 = 0;
  while (p0 <= doms.size()) {
    size_t c = doms.find(',', p0);
    if (c == std::string::npos) {
      domains.push_back(doms.substr(p0));
      break;
    }
    domains.push_back(doms.substr(p0, c - p0));
    p0 = c + 1;
  }
  if (std::stoi(meta.at("vocab_size")) != vocab.size())
    throw std::runtime_error("checkpoint " + path + " was trained with a different vocabulary");
  DCModel m(dc_variant_from(meta.at("model")), domains, vocab, cfg,
            std::stoi(meta.at("max_source_len")), 0);
  m.hard_select_ = meta.at("hard_select") == "1";
  load_checkpoint(path, m.params_);
  return m;
}

int oracle_hypothesis_label(const NBestRecord& rec) {
  const auto& hyps = rec.nbest.hypotheses;
  if (hyps.empty()) throw std::invalid_argument("oracle label: record has no hypotheses");
  int best = 0;
  int best_d = token_edit_distance(hyps[0].tokens, rec.gold.tokens);
  for (size_t r = 1; r < hyps.size(); ++r) {
    int d = token_edit_distance(hyps[r].tokens, rec.gold.tokens);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(r);
    }
  }
  return best;
}

std::vector<std::string> collect_domains(const std::vector<NBestRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.gold.annotation.domain);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---- trainers ---------------------------------------------------------------------

namespace {

void require_domain_coverage(const std::vector<NBestRecord>& train,
                             const std::vector<std::string>& domains) {
  for (const auto& d : domains) {
    bool found = false;
    for (const auto& r : train)
      if (r.gold.annotation.domain == d) {
        found = true;
        break;
      }
    if (!found) throw std::runtime_error("config error: domain " + d + " absent from the training set");
  }
}

std::vector<std::vector<double>> snapshot(ParamStore& ps) {
  std::vector<std::vector<double>> out;
  for (Tensor* t : ps.all()) out.push_back(t->values);
  return out;
}

void restore(ParamStore& ps, const std::vector<std::vector<double>>& snap) {
  auto all = ps.all();
  for (size_t i = 0; i < all.size(); ++i) all[i]->values = snap[i];
}

double validation_micro_f1_tokens(const DCModel& m, const std::vector<NBestRecord>& validation) {
  ConfusionTally tally;
  for (const auto& d : m.domains()) tally.add_class(d);
  for (const auto& rec : validation)
    tally.observe(rec.gold.annotation.domain, m.predict_domain(rec.gold.tokens).label);
  return f1_scores(tally).micro;
}

double validation_micro_f1_nbest(const DCModel& m, const std::vector<NBestRecord>& validation) {
  ConfusionTally tally;
  for (const auto& d : m.domains()) tally.add_class(d);
  for (const auto& rec : validation)
    tally.observe(rec.gold.annotation.domain, m.predict_domain(rec.nbest).label);
  return f1_scores(tally).micro;
}

// Shared epoch loop: builds per-record losses, accumulates grads over
// batches, clips, steps every optimizer, tracks the best checkpoint.
template <class LossFn, class EvalFn>
DCTrainResult run_training(DCModel&& model_in, const std::vector<NBestRecord>& train, int max_epochs,
                           const TrainSchedule& schedule, std::vector<Adam>& optimizers,
                           LossFn&& loss_fn, EvalFn&& eval_fn, const char* tag) {
  DCTrainResult res{std::move(model_in), {}, 0, 0.0, 0};
  DCModel& model = res.model;
  std::vector<Tensor*> all_params = model.params().all();
  model.params().zero_grads();
  auto best = snapshot(model.params());
  res.best_metric = -1.0;
  Rng order_rng(derive_seed(schedule.seed, std::string(tag) + ":order"));
  Rng drop_rng(derive_seed(schedule.seed, std::string(tag) + ":dropout"));
  std::vector<size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  int since_best = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    size_t done = 0;
    while (done < idx.size()) {
      size_t batch_end = std::min(done + static_cast<size_t>(schedule.batch_size), idx.size());
      int batch_n = static_cast<int>(batch_end - done);
      for (size_t k = done; k < batch_end; ++k) {
        Tape tape;
        Val loss = loss_fn(model, tape, train[idx[k]], drop_rng);
        loss_sum += loss.t().values[0];
        tape.backward(loss);
      }
      scale_grads(all_params, 1.0 / batch_n);
      clip_global_norm(all_params, schedule.clip_norm);
      for (Adam& opt : optimizers) opt.step();
      model.params().zero_grads();
      done = batch_end;
    }
    double metric = eval_fn(model);
    res.history.push_back({epoch, loss_sum / static_cast<double>(train.size()), metric});
    if (metric > res.best_metric) {
      res.best_metric = metric;
      res.best_epoch = epoch;
      best = snapshot(model.params());
      since_best = 0;
    } else {
      since_best++;
    }
    if (res.best_metric >= 100.0 - 1e-9 || since_best >= schedule.patience) break;
  }
  restore(model.params(), best);
  if (res.best_metric < 0.0) res.best_metric = 0.0;
  return res;
}

}  // namespace

DCTrainResult train_dc_baseline(const std::vector<NBestRecord>& train,
                                const std::vector<NBestRecord>& validation, const Vocab& vocab,
                                const std::vector<std::string>& domains, const EncoderConfig& cfg,
                                const TrainSchedule& schedule) {
  require_domain_coverage(train, domains);
  DCModel model(DCVariant::kBaseline, domains, vocab, cfg, 16, derive_seed(schedule.seed, "baseline"));
  std::vector<Adam> opts;
  opts.emplace_back(model.params().all(), AdamConfig{schedule.lr});
  auto loss = [](DCModel& m, Tape& t, const NBestRecord& rec, Rng&) {
    return m.domain_loss_tokens(t, rec.gold.tokens, m.domain_index(rec.gold.annotation.domain));
  };
  auto eval = [&](const DCModel& m) { return validation_micro_f1_tokens(m, validation); };
  return run_training(std::move(model), train, schedule.max_epochs, schedule, opts, loss, eval,
                      "baseline");
}

DCTrainResult train_bsumext(const std::vector<NBestRecord>& train,
                            const std::vector<NBestRecord>& validation, const Vocab& vocab,
                            const std::vector<std::string>& domains, const EncoderConfig& cfg,
                            const TrainSchedule& schedule) {
  require_domain_coverage(train, domains);
  DCModel model(DCVariant::kBSumExt, domains, vocab, cfg, 16, derive_seed(schedule.seed, "bsumext"));
  model.set_hard_select(schedule.hard_select);
  std::vector<Adam> opts;
  opts.emplace_back(model.params().all(), AdamConfig{schedule.lr});
  double w_ext = schedule.w_ext;
  bool hard = schedule.hard_select;
  auto loss = [w_ext, hard](DCModel& m, Tape& t, const NBestRecord& rec, Rng& drop) {
    return m.joint_summarizer_loss(t, rec.nbest, m.domain_index(rec.gold.annotation.domain),
                                   oracle_hypothesis_label(rec), w_ext, hard, nullptr, &drop);
  };
  auto eval = [&](const DCModel& m) { return validation_micro_f1_nbest(m, validation); };
  return run_training(std::move(model), train, schedule.max_epochs, schedule, opts, loss, eval,
                      "bsumext");
}

DCTrainResult pretrain_abstractive(const std::vector<NBestRecord>& train,
                                   const std::vector<NBestRecord>& validation, const Vocab& vocab,
                                   const std::vector<std::string>& domains, const EncoderConfig& cfg,
                                   const TrainSchedule& schedule) {
  require_domain_coverage(train, domains);
  DCModel model(DCVariant::kBSumExtAbs, domains, vocab, cfg, 16,
                derive_seed(schedule.seed, "bsumextabs"));
  std::vector<Adam> opts;
  opts.emplace_back(model.params().all(), AdamConfig{schedule.lr});
  long long truncated = 0;
  auto loss = [&truncated](DCModel& m, Tape& t, const NBestRecord& rec, Rng& drop) {
    if (static_cast<int>(rec.gold.tokens.size()) > m.max_source_len()) truncated++;
    return m.abstractive_loss(t, rec.nbest, rec.gold.tokens, &drop);
  };
  auto eval = [&](const DCModel& m) {
    double acc = 0.0;
    for (const auto& rec : validation) acc += m.abstractive_token_accuracy(rec.nbest, rec.gold.tokens);
    return validation.empty() ? 0.0 : 100.0 * acc / static_cast<double>(validation.size());
  };
  DCTrainResult res = run_training(std::move(model), train, schedule.abs_epochs, schedule, opts, loss,
                                   eval, "abstractive");
  res.truncated_targets = truncated;
  return res;
}

DCTrainResult train_bsumextabs(const std::vector<NBestRecord>& train,
                               const std::vector<NBestRecord>& validation, DCModel&& pretrained,
                               const TrainSchedule& schedule) {
  if (pretrained.variant() != DCVariant::kBSumExtAbs)
    throw std::invalid_argument("train_bsumextabs: pretrained bsumextabs parameters required");
  require_domain_coverage(train, pretrained.domains());
  pretrained.set_hard_select(schedule.hard_select);
  // Decoupled optimizers: encoder at a low rate, decoder and heads higher.
  std::vector<Adam> opts;
  opts.emplace_back(pretrained.params().matching("enc."), AdamConfig{schedule.encoder_lr});
  opts.emplace_back(pretrained.params().not_matching("enc."), AdamConfig{schedule.head_lr});
  double w_ext = schedule.w_ext;
  bool hard = schedule.hard_select;
  auto loss = [w_ext, hard](DCModel& m, Tape& t, const NBestRecord& rec, Rng& drop) {
    return m.joint_summarizer_loss(t, rec.nbest, m.domain_index(rec.gold.annotation.domain),
                                   oracle_hypothesis_label(rec), w_ext, hard, &rec.gold.tokens, &drop);
  };
  auto eval = [&](const DCModel& m) { return validation_micro_f1_nbest(m, validation); };
  return run_training(std::move(pretrained), train, schedule.max_epochs, schedule, opts, loss, eval,
                      "bsumextabs");
}

}  // namespace nbslu
