#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nbslu/corpus.hpp"

namespace nbslu {

// ---- word vocabulary ---------------------------------------------------------

// Token<->id bijection with fixed reserved ids. Built from training-split
// tokens only; everything unseen maps to [UNK].
struct Vocab {
  static constexpr int kPad = 0, kCls = 1, kSep = 2, kUnk = 3, kEos = 4;
  static constexpr int kReserved = 5;

  std::vector<std::string> id_to_token;
  std::map<std::string, int> token_to_id;

  int id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return id_to_token.at(static_cast<size_t>(id)); }
  int size() const { return static_cast<int>(id_to_token.size()); }
};

// Collects gold and hypothesis tokens of the training records, sorted for a
// deterministic mapping.
Vocab build_vocab(const std::vector<NBestRecord>& train_records);
void save_vocab(const std::string& path, const Vocab& v);
Vocab load_vocab(const std::string& path);

// ---- encoded layouts ----------------------------------------------------------

struct CodecLimits {
  int max_sources = 6;     // 5-best plus an optional transcription row
  int max_source_len = 16; // words per source before truncation
};

// Id matrices for either encoder layout. For the summarizer layout there is a
// single row and cls_positions locates the per-hypothesis [CLS] tokens; for
// the per-source layout each source is its own row and boundaries records the
// true word count per source.
struct EncodedBatch {
  std::vector<std::vector<int>> token_ids;
  std::vector<std::vector<int>> segment_ids;
  std::vector<std::vector<int>> position_ids;
  std::vector<std::vector<int>> attention_mask;  // 1 = real, 0 = padding
  std::vector<int> cls_positions;
  std::vector<int> boundaries;
  int truncated = 0;  // sources that lost tokens to max_source_len
};

// Fig.-2 style layout: [CLS] h_k [SEP] per hypothesis in rank order, segment
// id alternating E_A/E_B (0/1) per hypothesis.
EncodedBatch encode_summarizer_input(const NBestList& nbest, const Vocab& vocab,
                                     int max_source_len = 16);

// One row per source: [CLS] tokens [EOS], padded to a common width.
EncodedBatch encode_s2s_sources(const std::vector<std::vector<std::string>>& sources,
                                const Vocab& vocab, const CodecLimits& limits);

// ---- pointer target vocabulary ---------------------------------------------------

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PointerRangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResolutionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Decoder-side vocabulary: structural tags ([SOS], [EOS], intent and slot
// bracket pairs) followed by @ptr{i}_{j} tokens for every source position.
// Size is |tags| + max_sources * max_source_len, independent of the word
// vocabulary.
struct TargetVocab {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;
  std::vector<std::string> intents;      // open/close pairs exist per entry
  std::vector<std::string> slot_labels;  // likewise
  int n_tags = 0;
  int max_sources = 6;
  int max_source_len = 16;

  int sos() const { return 0; }
  int eos() const { return 1; }
  int size() const { return n_tags + max_sources * max_source_len; }

  int id_of(const std::string& tok) const;
  const std::string& token(int id) const { return tokens.at(static_cast<size_t>(id)); }

  int intent_open(const std::string& intent) const { return id_of(intent + "("); }
  int intent_close(const std::string& intent) const { return id_of(")" + intent); }
  int slot_open(const std::string& label) const { return id_of(label + "("); }
  int slot_close(const std::string& label) const { return id_of(")" + label); }

  bool is_pointer(int id) const { return id >= n_tags && id < size(); }
  // (source index, word position)
  std::pair<int, int> pointer_target(int id) const;
  int pointer_id(int source, int pos) const;

  bool is_open(int id) const;
  bool is_close(int id) const;
  // For an open id, the matching close id (and vice versa).
  int matching_bracket(int id) const;
};

TargetVocab build_target_vocab(const std::vector<std::string>& intents,
                               const std::vector<std::string>& slot_labels,
                               const CodecLimits& limits);
void save_target_vocab(const std::string& path, const TargetVocab& tv);
TargetVocab load_target_vocab(const std::string& path);

// ---- linearization ------------------------------------------------------------------

enum class PointerPolicy {
  kExactThenEditDistance,  // exact match by rank then position, else closest token
  kStrict,                 // exact match required; unresolvable tokens throw
};

// Serializes an annotation over `gold_tokens` into bracket tags and pointer
// tokens resolved against `sources`; ends with [EOS] (no leading [SOS]).
std::vector<int> linearize(const SemanticAnnotation& annotation,
                           const std::vector<std::string>& gold_tokens,
                           const std::vector<std::vector<std::string>>& sources,
                           PointerPolicy policy, const TargetVocab& tv);

struct Delinearized {
  std::string intent;
  std::vector<std::string> surface;  // resolved pointer tokens in order
  std::vector<SlotSpan> slots;       // spans over `surface`
};

// Inverse of linearize: validates bracketing, resolves pointers to source
// token strings, reconstructs intent and slot spans.
Delinearized delinearize(const std::vector<int>& target,
                         const std::vector<std::vector<std::string>>& sources,
                         const TargetVocab& tv);

// Character-level Levenshtein distance (pointer resolution fallback).
int char_edit_distance(const std::string& a, const std::string& b);

}  // namespace nbslu
