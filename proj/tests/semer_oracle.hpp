#include <functional>
#pragma once

// Exhaustive SemER alignment oracle for small slot multisets: tries every
// label-respecting matching between reference and hypothesis slots, keeping
// the one that minimizes total error (D + I + S) and, among those, maximizes
// correct matches. Test-only; independent of the greedy production path.

#include <vector>

#include "nbslu/metrics.hpp"

namespace nbslu::testing {

inline SemERCounts semer_exhaustive(const ParseSlots& ref, const ParseSlots& hyp) {
  std::vector<SlotPair> refs, hyps;
  for (const auto& s : ref.slots) refs.push_back({s.label, normalize_slot_value(s.value)});
  for (const auto& s : hyp.slots) hyps.push_back({s.label, normalize_slot_value(s.value)});

  SemERCounts best;
  bool have_best = false;
  std::vector<int> assign(refs.size(), -1);
  std::vector<bool> used(hyps.size(), false);

  auto consider = [&]() {
    SemERCounts n;
    if (hyp.intent == ref.intent)
      n.correct++;
    else
      n.substitutions++;
    long long matched_hyp = 0;
    for (size_t i = 0; i < refs.size(); ++i) {
      if (assign[i] < 0) {
        n.deletions++;
      } else {
        matched_hyp++;
        if (refs[i].value == hyps[static_cast<size_t>(assign[i])].value)
          n.correct++;
        else
          n.substitutions++;
      }
    }
    n.insertions = static_cast<long long>(hyps.size()) - matched_hyp;
    long long err = n.deletions + n.insertions + n.substitutions;
    long long best_err = best.deletions + best.insertions + best.substitutions;
    if (!have_best || err < best_err || (err == best_err && n.correct > best.correct)) {
      best = n;
      have_best = true;
    }
  };

  std::function<void(size_t)> rec = [&](size_t i) {
    if (i == refs.size()) {
      consider();
      return;
    }
    assign[i] = -1;
    rec(i + 1);
    for (size_t j = 0; j < hyps.size(); ++j) {
      if (!used[j] && hyps[j].label == refs[i].label) {
        used[j] = true;
        assign[i] = static_cast<int>(j);
        rec(i + 1);
        used[j] = false;
        assign[i] = -1;
      }
    }
  };
  rec(0);
  return best;
}

}  // namespace nbslu::testing
