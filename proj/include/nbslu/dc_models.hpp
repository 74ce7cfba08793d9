#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nbslu/codec.hpp"
#include "nbslu/corpus.hpp"
#include "nbslu/nn.hpp"

namespace nbslu {

enum class DCVariant { kBaseline, kBSumExt, kBSumExtAbs };

std::string dc_variant_name(DCVariant v);
DCVariant dc_variant_from(const std::string& name);

struct TrainSchedule {
  int max_epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  double encoder_lr = 1e-4;  // decoupled fine-tune: encoder optimizer
  double head_lr = 5e-4;     // decoupled fine-tune: decoder and heads
  double w_ext = 0.5;        // extractive auxiliary loss weight
  bool hard_select = false;  // argmax hypothesis pick instead of soft attention
  int abs_epochs = 20;       // abstractive pretraining epochs
  int max_summary_len = 24;
  double clip_norm = 1.0;
  int patience = 10;  // early stop after this many epochs without improvement
  uint64_t seed = 1;
};

struct DCPrediction {
  std::vector<double> probs;  // over domains, sums to 1
  int argmax = 0;
  std::string label;
  std::vector<double> extractive_weights;  // summarizer variants: per-hypothesis
};

// One architecture with variant-dependent heads: shared transformer encoder,
// per-hypothesis extractive scorer + attention summary head (BSUMEXT /
// BSUMEXTABS), word-vocabulary transformer decoder (BSUMEXTABS only), MLP
// domain classifier.
class DCModel {
 public:
  DCModel(DCVariant variant, std::vector<std::string> domains, const Vocab& vocab,
          const EncoderConfig& cfg, int max_source_len, uint64_t seed);

  DCModel(DCModel&&) = default;
  DCModel& operator=(DCModel&&) = default;

  DCVariant variant() const { return variant_; }
  const std::vector<std::string>& domains() const { return domains_; }
  const Vocab& vocab() const { return vocab_; }
  const EncoderConfig& config() const { return cfg_; }
  int max_source_len() const { return max_source_len_; }
  ParamStore& params() { return params_; }
  bool hard_select() const { return hard_select_; }
  void set_hard_select(bool v) { hard_select_ = v; }

  // Baseline input path. Throws on summarizer variants.
  DCPrediction predict_domain(const std::vector<std::string>& tokens) const;
  // Summarizer input path. Throws on the baseline variant.
  DCPrediction predict_domain(const NBestList& nbest) const;

  // Training-time graph builders (exposed for the trainers below).
  Val domain_loss_tokens(Tape& t, const std::vector<std::string>& tokens, int domain_idx) const;
  Val joint_summarizer_loss(Tape& t, const NBestList& nbest, int domain_idx, int oracle_idx,
                            double w_ext, bool hard_select, const std::vector<std::string>* abs_target,
                            Rng* drop_rng) const;
  // Teacher-forced abstractive loss: decoder regenerates the transcription.
  Val abstractive_loss(Tape& t, const NBestList& nbest, const std::vector<std::string>& transcription,
                       Rng* drop_rng) const;
  // Teacher-forced next-token accuracy of the abstractive decoder.
  double abstractive_token_accuracy(const NBestList& nbest,
                                    const std::vector<std::string>& transcription) const;
  // Greedy abstractive decode (word ids until [EOS] or the cap).
  std::vector<int> greedy_summary(const NBestList& nbest, int max_len) const;

  int domain_index(const std::string& domain) const;

  void save(const std::string& path) const;
  static DCModel load(const std::string& path, const Vocab& vocab);

 private:
  Val encode_tokens(Tape& t, const std::vector<std::string>& tokens, Rng* drop_rng) const;
  Val encode_nbest_cls(Tape& t, const NBestList& nbest, Val* all_states, Rng* drop_rng) const;
  Val classify(Tape& t, Val feature, Rng* drop_rng) const;
  Val extractive_row(Tape& t, Val cls_mat) const;
  Val summary_vector(Tape& t, Val cls_mat, bool hard_select) const;
  Val decoder_states(Tape& t, Val memory, const std::vector<int>& input_word_ids, Rng* drop_rng) const;

  DCVariant variant_;
  std::vector<std::string> domains_;
  Vocab vocab_;
  EncoderConfig cfg_;
  int max_source_len_;
  bool hard_select_ = false;
  ParamStore params_;
  TransformerEncoder encoder_;
  Linear ext_score_;
  Tensor* sum_query_ = nullptr;
  std::unique_ptr<MultiHeadAttention> sum_attn_;
  Linear cls_hidden_, cls_out_;
  std::unique_ptr<TransformerDecoder> decoder_;
  Linear dec_out_;
};

// Rank of the hypothesis with minimal token edit distance to gold, ties to
// the lowest rank.
int oracle_hypothesis_label(const NBestRecord& rec);

struct DCTrainResult {
  DCModel model;
  std::vector<EpochMetric> history;
  int best_epoch = 0;
  double best_metric = 0.0;
  long long truncated_targets = 0;
};

// Trained on transcriptions, validated on transcriptions (micro-F1).
DCTrainResult train_dc_baseline(const std::vector<NBestRecord>& train,
                                const std::vector<NBestRecord>& validation, const Vocab& vocab,
                                const std::vector<std::string>& domains, const EncoderConfig& cfg,
                                const TrainSchedule& schedule);

// Joint DC + extractive objective over n-best input; validated by micro-F1 on
// validation n-best lists.
DCTrainResult train_bsumext(const std::vector<NBestRecord>& train,
                            const std::vector<NBestRecord>& validation, const Vocab& vocab,
                            const std::vector<std::string>& domains, const EncoderConfig& cfg,
                            const TrainSchedule& schedule);

// Stage 1 of BSUMEXTABS: sequence-to-sequence regeneration of the
// transcription from the n-best; checkpoint chosen by validation token
// accuracy.
DCTrainResult pretrain_abstractive(const std::vector<NBestRecord>& train,
                                   const std::vector<NBestRecord>& validation, const Vocab& vocab,
                                   const std::vector<std::string>& domains, const EncoderConfig& cfg,
                                   const TrainSchedule& schedule);

// Stage 2: extractive + classification objective on top of the pretrained
// parameters with decoupled encoder / head optimizers.
DCTrainResult train_bsumextabs(const std::vector<NBestRecord>& train,
                               const std::vector<NBestRecord>& validation, DCModel&& pretrained,
                               const TrainSchedule& schedule);

// Sorted unique domains of a record set.
std::vector<std::string> collect_domains(const std::vector<NBestRecord>& records);

}  // namespace nbslu
