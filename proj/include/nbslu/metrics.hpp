#pragma once

#include <map>
#include <string>
#include <vector>

namespace nbslu {

// ---- classification --------------------------------------------------------

struct ClassCounts {
  long long tp = 0, fp = 0, fn = 0;
};

// Per-class confusion counts for single-label classification. Classes must be
// registered (or observed) before scoring; macro-F1 averages over all of them.
struct ConfusionTally {
  std::map<std::string, ClassCounts> classes;

  void add_class(const std::string& label) { classes.emplace(label, ClassCounts{}); }
  void observe(const std::string& reference, const std::string& predicted);
  long long reference_count() const;
};

struct F1Result {
  double micro = 0.0;  // percentages in [0, 100]
  double macro = 0.0;
};

F1Result f1_scores(const ConfusionTally& tally);

// 100 * ((100 - f1_exp) - (100 - f1_base)) / (100 - f1_base); negative is
// better. Baseline of exactly 100 is undefined and throws.
double delta_err(double f1_experiment, double f1_baseline);

// ---- SemER ------------------------------------------------------------------

struct SlotPair {
  std::string label;
  std::string value;

  bool operator==(const SlotPair&) const = default;
  auto operator<=>(const SlotPair&) const = default;
};

// Intent plus labeled slot values, the unit SemER scores.
struct ParseSlots {
  std::string intent;
  std::vector<SlotPair> slots;
};

struct SemERCounts {
  long long correct = 0, deletions = 0, insertions = 0, substitutions = 0;

  double semer() const;
  void add(const SemERCounts& o);
};

// Greedy label-respecting alignment: intent compared directly (match -> C,
// else S); per label, equal (label,value) pairs pair off as C, remaining
// same-label pairs as S, leftover reference slots as D, leftover hypothesis
// slots as I.
SemERCounts semer_align(const ParseSlots& reference, const ParseSlots& hypothesis);
// A flagged parse failure scores every reference slot (intent included) as a
// substitution with no insertions.
SemERCounts semer_parse_failure(const ParseSlots& reference);

// Exact lowercase comparison after whitespace collapse.
std::string normalize_slot_value(const std::string& v);

// 100 * (semer_exp - semer_base) / semer_base; baseline 0 throws.
double delta_sem(double semer_experiment, double semer_baseline);

// ---- confidence analysis ----------------------------------------------------

struct ScoredRecord {
  double mean_confidence = 0.0;
  bool is_mismatched = false;
};

struct ConfidenceHistogram {
  static constexpr int kBins = 20;
  std::vector<long long> full_bins;        // all records
  std::vector<long long> mismatched_bins;  // mismatched subset
  long long full_count = 0, mismatched_count = 0;
  double full_mean = 0.0, mismatched_mean = 0.0;
  double separation = 0.0;  // full_mean - mismatched_mean
};

ConfidenceHistogram confidence_histogram(const std::vector<ScoredRecord>& records);

struct ThresholdDetector {
  double threshold = 0.0;
  double youden_j = 0.0;
  bool degenerate = false;  // no threshold separates the classes at all

  // Detector rule: mismatched iff mean confidence < threshold.
  bool predicts_mismatched(double score) const { return score < threshold; }
};

// Maximizes Youden's J (sensitivity + specificity - 1) over candidate
// thresholds; ties resolve to the smallest threshold. Throws if all records
// carry the same flag.
ThresholdDetector fit_threshold_detector(const std::vector<ScoredRecord>& validation);

// Area under the ROC of "low score predicts mismatched"; ties count half.
double detector_roc_auc(const std::vector<ScoredRecord>& records);

}  // namespace nbslu
