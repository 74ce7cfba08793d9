#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nbslu/adam.hpp"
#include "nbslu/codec.hpp"
#include "nbslu/corpus.hpp"
#include "nbslu/metrics.hpp"
#include "nbslu/nn.hpp"

namespace nbslu {

enum class ICNERVariant {
  kTranscriptionBaseline,  // trained on the transcription, decoded on the 1-best
  kNBest,                  // trained on 5-best + transcription, decoded on the 5-best
};

std::string icner_variant_name(ICNERVariant v);
ICNERVariant icner_variant_from(const std::string& name);

struct DecodeConfig {
  enum class Mode { kGreedy, kBeam };
  Mode mode = Mode::kGreedy;
  int beam_width = 4;
  int max_target_len = 48;
  bool structural_mask = true;

  void validate() const;
};

struct ParseResult {
  std::string intent;
  std::vector<std::string> surface;
  std::vector<SlotSpan> slots;  // spans over surface
  bool flagged = false;         // truncated decode or failed bracket validation
  std::vector<int> target_ids;  // raw decoder output (without [SOS])
};

// Pointer-generator sequence-to-sequence parser for one domain: shared source
// encoder over each hypothesis, concatenated encoder states, transformer
// decoder whose output distribution is one softmax over
// [tag logits ; scaled dot-product logits per source position].
class S2SPtrModel {
 public:
  S2SPtrModel(std::string domain, ICNERVariant variant, TargetVocab tv, const Vocab& vocab,
              const EncoderConfig& cfg, const CodecLimits& limits, uint64_t seed);
  S2SPtrModel(S2SPtrModel&&) = default;
  S2SPtrModel& operator=(S2SPtrModel&&) = default;

  const std::string& domain() const { return domain_; }
  ICNERVariant variant() const { return variant_; }
  const TargetVocab& target_vocab() const { return tv_; }
  const Vocab& vocab() const { return vocab_; }
  const CodecLimits& limits() const { return limits_; }
  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }

  struct EncodedSources {
    Val states;                  // [n_sources * width, dim]
    std::vector<int> allowed;    // 1 where the concat position is attendable
    std::vector<int> boundaries; // true word count per source
    int width = 0;
    int n_sources = 0;
  };

  EncodedSources encode_sources(Tape& t, const std::vector<std::vector<std::string>>& sources,
                                Rng* drop_rng = nullptr) const;

  // Mean teacher-forced cross entropy of `target` (ids without [SOS], ending
  // in [EOS]) given the sources.
  Val sequence_loss(Tape& t, const std::vector<std::vector<std::string>>& sources,
                    const std::vector<int>& target, Rng* drop_rng) const;

  // Joint next-token distribution after `prefix` (ids without [SOS]). The
  // returned vector spans the full target vocabulary; padded and absent
  // source positions carry exactly zero probability.
  std::vector<double> decode_step(Tape& t, const EncodedSources& enc,
                                  const std::vector<int>& prefix) const;

  ParseResult predict_parse(const NBestList& nbest, const DecodeConfig& decode) const;
  // Decode over explicit sources (the baseline feeds [rank-0], tests feed
  // custom rows).
  ParseResult predict_parse_sources(const std::vector<std::vector<std::string>>& sources,
                                    const DecodeConfig& decode) const;

  std::vector<std::vector<std::string>> sources_for(const NBestList& nbest) const;

  void save(const std::string& path) const;
  static S2SPtrModel load(const std::string& path, const Vocab& vocab, const TargetVocab& tv);

 private:
  Val target_input_embedding(Tape& t, const EncodedSources& enc, const std::vector<int>& ids_with_sos) const;
  Val joint_distribution_rows(Tape& t, const EncodedSources& enc, Val dec_states) const;

  std::string domain_;
  ICNERVariant variant_;
  TargetVocab tv_;
  Vocab vocab_;
  EncoderConfig cfg_;
  CodecLimits limits_;
  ParamStore params_;
  TransformerEncoder encoder_;
  std::unique_ptr<TransformerDecoder> decoder_;
  Tensor* tag_emb_ = nullptr;  // decoder-input embeddings for tag ids
  Linear tag_out_;             // decoder state -> tag logits
};

struct ICNERSchedule {
  int max_epochs = 50;
  int batch_size = 8;
  double lr = 1e-3;
  double clip_norm = 1.0;
  int patience = 10;
  PointerPolicy policy = PointerPolicy::kExactThenEditDistance;
  bool six_row_composition = false;  // transcription as an extra source row
                                     // instead of a second instance
  uint64_t seed = 1;
  DecodeConfig validation_decode;
};

struct ICNERTrainResult {
  S2SPtrModel model;
  std::vector<EpochMetric> history;  // val_metric = -overall SemER (higher better)
  int best_epoch = 0;
  double best_val_semer = 0.0;
  long long skipped_records = 0;  // strict-policy resolution failures
};

// Trains one per-domain model. All records must share one domain; targets are
// produced with text-codec linearize under `schedule.policy`. The n-best
// variant trains on two instances per record (transcription sources, n-best
// sources) unless six_row_composition is set.
ICNERTrainResult train_icner(const std::vector<NBestRecord>& domain_records,
                             const std::vector<NBestRecord>& validation, const Vocab& vocab,
                             ICNERVariant variant, const EncoderConfig& cfg,
                             const CodecLimits& limits, const ICNERSchedule& schedule);

// SemER counts of a prediction against the record's gold annotation (flagged
// parses score as all-substitution).
SemERCounts score_parse(const NBestRecord& rec, const ParseResult& parse);
ParseSlots reference_slots(const NBestRecord& rec);
ParseSlots hypothesis_slots(const ParseResult& parse);

}  // namespace nbslu
