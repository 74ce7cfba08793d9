#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nbslu/rng.hpp"

namespace nbslu {

// ---- records ----------------------------------------------------------------

struct SlotSpan {
  std::string label;
  int start = 0;  // half-open [start, end) over gold tokens
  int end = 0;
};

struct SemanticAnnotation {
  std::string domain;
  std::string intent;
  std::vector<SlotSpan> slots;
};

struct GoldUtterance {
  std::vector<std::string> tokens;
  SemanticAnnotation annotation;
};

struct Hypothesis {
  std::vector<std::string> tokens;
  double confidence = 0.0;
};

// 1..5 pairwise-distinct hypotheses, best first, confidence non-increasing.
struct NBestList {
  std::vector<Hypothesis> hypotheses;
};

struct NBestRecord {
  std::string id;
  GoldUtterance gold;
  NBestList nbest;
  bool is_mismatched = false;  // rank-0 tokens != gold tokens

  bool recompute_mismatch() const;
};

// ---- corpus grammar -----------------------------------------------------------

struct IntentSpec {
  std::string name;
  std::vector<std::string> templates;  // tokens and {SlotLabel} placeholders
};

struct DomainSpec {
  std::string name;
  std::vector<IntentSpec> intents;
  std::map<std::string, std::vector<std::string>> lexicon;  // label -> entries (may be multiword)
};

struct CorpusSpec {
  std::vector<DomainSpec> domains;
  int records_per_domain = 150;
  int test_records_per_domain = 150;
  double train_fraction = 0.85;

  const DomainSpec* find_domain(const std::string& name) const;
  void validate() const;
};

// ---- noise channel -------------------------------------------------------------

// Two-stage channel: one "acoustic" corruption pass produces what the
// recognizer heard, then hypothesis sampling perturbs the heard sequence with
// scaled-up probabilities. A hypothesis' edit count is the total number of
// channel edits along its generative path, and
// confidence = exp(-lambda * edits) * (1 + rank noise), exact hypotheses
// pinned at 1.0. The gold sequence re-enters the candidate pool priced at its
// edit distance from the heard sequence, so it can surface at ranks >= 1.
struct NoiseModel {
  double sub_prob = 0.04;
  double del_prob = 0.01;
  double ins_prob = 0.01;
  double lambda = 0.5;
  double rank_noise = 0.05;
  double hyp_scale = 3.0;  // stage-2 probability multiplier
  int max_hypotheses = 5;
  int samples = 12;
  std::vector<std::string> fillers;  // insertion vocabulary
  // Space-joined key of 1 or 2 tokens -> alternatives (each 1+ tokens).
  // Multi-token alternatives model splits, 2-token keys model merges.
  std::map<std::string, std::vector<std::vector<std::string>>> confusion;

  void validate() const;
};

// ---- operations -----------------------------------------------------------------

// Deterministic for fixed (spec, seed); every utterance carries a complete
// annotation and per-domain counts match the spec.
std::vector<GoldUtterance> generate_gold(const CorpusSpec& spec, uint64_t seed);

NBestList corrupt_to_nbest(const GoldUtterance& gold, const NoiseModel& noise, Rng& rng);

// Gold + n-best records for one pool; each record independently seeded from
// (seed, pool_tag, index) so generation order never matters.
std::vector<NBestRecord> generate_records(const CorpusSpec& spec, const NoiseModel& noise,
                                          uint64_t seed, const std::string& pool_tag,
                                          int per_domain);

struct CorpusSplits {
  std::vector<NBestRecord> train;
  std::vector<NBestRecord> validation;
  std::vector<NBestRecord> test_full;
  std::vector<NBestRecord> test_mismatched;
};

// Random train/validation split within each domain of `train_pool` at
// `train_fraction`; the separately generated `test_pool` becomes test_full
// and its mismatched subset test_mismatched.
CorpusSplits build_and_split(const std::vector<NBestRecord>& train_pool,
                             const std::vector<NBestRecord>& test_pool, uint64_t seed,
                             double train_fraction = 0.85);

struct OppCostTable {
  // row n (n = 2..5): 100 * matches at rank n-1 / matches at rank 0.
  std::vector<double> rows;  // size 4
  double total = 0.0;
  long long rank0_matches = 0;
  std::vector<long long> match_counts;  // size 5, exact matches per rank
};

OppCostTable opportunity_cost(const std::vector<NBestRecord>& records);

// ---- file format ------------------------------------------------------------------

// One record per line: {id, domain, intent, slots:[{label,start,end}],
// gold_tokens:[...], nbest:[{tokens:[...], confidence}]}.
void write_jsonl(const std::string& path, const std::vector<NBestRecord>& records);
std::vector<NBestRecord> read_jsonl(const std::string& path);

// Token-level Levenshtein distance.
int token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Built-in desk-scale corpus: three domains with hand-authored near-homophone
// confusions covering substitution, split and merge errors.
CorpusSpec default_corpus_spec();
NoiseModel default_noise_model();

}  // namespace nbslu
