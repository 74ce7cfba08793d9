#include "nbslu/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace nbslu {

void ConfusionTally::observe(const std::string& reference, const std::string& predicted) {
  if (predicted == reference) {
    classes[reference].tp++;
  } else {
    classes[reference].fn++;
    classes[predicted].fp++;
  }
}

long long ConfusionTally::reference_count() const {
  long long n = 0;
  for (const auto& [_, c] : classes) n += c.tp + c.fn;
  return n;
}

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double f1_from(double p, double r) { return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

F1Result f1_scores(const ConfusionTally& tally) {
  if (tally.classes.empty() || tally.reference_count() == 0)
    throw std::invalid_argument("f1_scores: tally has no reference items");
  long long tp = 0, fp = 0, fn = 0;
  double macro_sum = 0.0;
  for (const auto& [_, c] : tally.classes) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    double pi = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    double ri = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    macro_sum += f1_from(pi, ri);
  }
  double p = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
  double r = safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
  F1Result out;
  out.micro = 100.0 * f1_from(p, r);
  out.macro = 100.0 * macro_sum / static_cast<double>(tally.classes.size());
  return out;
}

double delta_err(double f1_experiment, double f1_baseline) {
  if (f1_experiment < 0.0 || f1_experiment > 100.0 || f1_baseline < 0.0 || f1_baseline > 100.0)
    throw std::invalid_argument("delta_err: F1 values must be percentages in [0, 100]");
  if (f1_baseline == 100.0)
    throw std::invalid_argument("delta_err: undefined for a baseline with zero error");
  return 100.0 * ((100.0 - f1_experiment) - (100.0 - f1_baseline)) / (100.0 - f1_baseline);
}

double SemERCounts::semer() const {
  long long den = correct + deletions + substitutions;
  if (den == 0) throw std::logic_error("semer: empty denominator (no reference slots)");
  return static_cast<double>(deletions + insertions + substitutions) / static_cast<double>(den);
}

void SemERCounts::add(const SemERCounts& o) {
  correct += o.correct;
  deletions += o.deletions;
  insertions += o.insertions;
  substitutions += o.substitutions;
}

std::string normalize_slot_value(const std::string& v) {
  std::string out;
  bool in_space = true;
  for (char ch : v) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

SemERCounts semer_align(const ParseSlots& reference, const ParseSlots& hypothesis) {
  SemERCounts n;
  if (hypothesis.intent == reference.intent)
    n.correct++;
  else
    n.substitutions++;

  // Bucket values per label, normalized.
  std::map<std::string, std::vector<std::string>> ref_by_label, hyp_by_label;
  for (const auto& s : reference.slots) ref_by_label[s.label].push_back(normalize_slot_value(s.value));
  for (const auto& s : hypothesis.slots) hyp_by_label[s.label].push_back(normalize_slot_value(s.value));

  for (auto& [label, refs] : ref_by_label) {
    auto it = hyp_by_label.find(label);
    if (it == hyp_by_label.end()) {
      n.deletions += static_cast<long long>(refs.size());
      continue;
    }
    auto& hyps = it->second;
    // Exact (label, value) pairs match first.
    long long ref_left = 0;
    for (const auto& rv : refs) {
      auto h = std::find(hyps.begin(), hyps.end(), rv);
      if (h != hyps.end()) {
        n.correct++;
        hyps.erase(h);
      } else {
        ref_left++;
      }
    }
    long long hyp_left = static_cast<long long>(hyps.size());
    long long paired = std::min(ref_left, hyp_left);
    n.substitutions += paired;
    n.deletions += ref_left - paired;
    n.insertions += hyp_left - paired;
    hyps.clear();
  }
  for (const auto& [label, hyps] : hyp_by_label)
    if (!ref_by_label.count(label)) n.insertions += static_cast<long long>(hyps.size());
  return n;
}

SemERCounts semer_parse_failure(const ParseSlots& reference) {
  SemERCounts n;
  n.substitutions = 1 + static_cast<long long>(reference.slots.size());
  return n;
}

double delta_sem(double semer_experiment, double semer_baseline) {
  if (semer_baseline <= 0.0)
    throw std::invalid_argument("delta_sem: undefined for a baseline SemER of 0");
  return 100.0 * (semer_experiment - semer_baseline) / semer_baseline;
}

ConfidenceHistogram confidence_histogram(const std::vector<ScoredRecord>& records) {
  ConfidenceHistogram h;
  h.full_bins.assign(ConfidenceHistogram::kBins, 0);
  h.mismatched_bins.assign(ConfidenceHistogram::kBins, 0);
  for (const auto& r : records) {
    int bin = std::min(ConfidenceHistogram::kBins - 1,
                       std::max(0, static_cast<int>(r.mean_confidence * ConfidenceHistogram::kBins)));
    h.full_bins[static_cast<size_t>(bin)]++;
    h.full_count++;
    h.full_mean += r.mean_confidence;
    if (r.is_mismatched) {
      h.mismatched_bins[static_cast<size_t>(bin)]++;
      h.mismatched_count++;
      h.mismatched_mean += r.mean_confidence;
    }
  }
  if (h.full_count) h.full_mean /= static_cast<double>(h.full_count);
  if (h.mismatched_count) h.mismatched_mean /= static_cast<double>(h.mismatched_count);
  h.separation = h.full_mean - h.mismatched_mean;
  return h;
}

ThresholdDetector fit_threshold_detector(const std::vector<ScoredRecord>& validation) {
  long long pos = 0, neg = 0;
  for (const auto& r : validation) (r.is_mismatched ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("fit_threshold_detector: both classes required on validation data");

  std::vector<double> scores;
  scores.reserve(validation.size());
  for (const auto& r : validation) scores.push_back(r.mean_confidence);
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  std::vector<double> candidates;
  candidates.push_back(scores.front() - 1e-9);
  for (size_t i = 0; i + 1 < scores.size(); ++i) candidates.push_back(0.5 * (scores[i] + scores[i + 1]));
  candidates.push_back(scores.back() + 1e-9);

  ThresholdDetector best;
  best.youden_j = -1.0;
  for (double t : candidates) {
    long long tp = 0, tn = 0;
    for (const auto& r : validation) {
      bool said_mismatch = r.mean_confidence < t;
      if (said_mismatch && r.is_mismatched) tp++;
      if (!said_mismatch && !r.is_mismatched) tn++;
    }
    double sens = static_cast<double>(tp) / static_cast<double>(pos);
    double spec = static_cast<double>(tn) / static_cast<double>(neg);
    double j = sens + spec - 1.0;
    if (j > best.youden_j + 1e-12) {
      best.youden_j = j;
      best.threshold = t;
    }
  }
  best.degenerate = best.youden_j <= 1e-12;
  if (best.degenerate) best.youden_j = 0.0;
  return best;
}

double detector_roc_auc(const std::vector<ScoredRecord>& records) {
  // Rank-sum estimate of P(score_mismatched < score_matched), ties half.
  std::vector<ScoredRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredRecord& a, const ScoredRecord& b) { return a.mean_confidence < b.mean_confidence; });
  long long pos = 0, neg = 0;
  for (const auto& r : sorted) (r.is_mismatched ? pos : neg)++;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: both classes required");
  double rank_sum = 0.0;
  size_t i = 0;
  double rank = 1.0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j].mean_confidence == sorted[i].mean_confidence) ++j;
    double avg_rank = rank + static_cast<double>(j - i - 1) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (sorted[k].is_mismatched) rank_sum += avg_rank;
    rank += static_cast<double>(j - i);
    i = j;
  }
  double u_high = rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return 1.0 - u_high / (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace nbslu
