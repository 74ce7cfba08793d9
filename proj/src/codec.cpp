#include "nbslu/codec.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace nbslu {

Vocab build_vocab(const std::vector<NBestRecord>& train_records) {
  if (train_records.empty()) throw std::invalid_argument("build_vocab: empty training split");
  std::set<std::string> seen;
  for (const auto& rec : train_records) {
    seen.insert(rec.gold.tokens.begin(), rec.gold.tokens.end());
    for (const auto& h : rec.nbest.hypotheses) seen.insert(h.tokens.begin(), h.tokens.end());
  }
  Vocab v;
  v.id_to_token = {"[PAD]", "[CLS]", "[SEP]", "[UNK]", "[EOS]"};
  for (const std::string& tok : seen) v.id_to_token.push_back(tok);
  for (size_t i = 0; i < v.id_to_token.size(); ++i) v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  return v;
}

void save_vocab(const std::string& path, const Vocab& v) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab " + path);
  for (const auto& tok : v.id_to_token) out << tok << "\n";
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) v.id_to_token.push_back(line);
  if (v.id_to_token.size() < Vocab::kReserved || v.id_to_token[0] != "[PAD]" || v.id_to_token[1] != "[CLS]")
    throw std::runtime_error("vocab file " + path + " is malformed");
  for (size_t i = 0; i < v.id_to_token.size(); ++i) v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  return v;
}

EncodedBatch encode_summarizer_input(const NBestList& nbest, const Vocab& vocab, int max_source_len) {
  if (nbest.hypotheses.empty() || nbest.hypotheses.size() > 5)
    throw std::invalid_argument("encode_summarizer_input: need 1..5 hypotheses");
  EncodedBatch b;
  std::vector<int> toks, segs, pos;
  for (size_t k = 0; k < nbest.hypotheses.size(); ++k) {
    int seg = static_cast<int>(k % 2);  // E_A on even ranks, E_B on odd
    b.cls_positions.push_back(static_cast<int>(toks.size()));
    toks.push_back(Vocab::kCls);
    segs.push_back(seg);
    const auto& words = nbest.hypotheses[k].tokens;
    size_t n = words.size();
    if (n > static_cast<size_t>(max_source_len)) {
      n = static_cast<size_t>(max_source_len);
      b.truncated++;
    }
    for (size_t i = 0; i < n; ++i) {
      toks.push_back(vocab.id(words[i]));
      segs.push_back(seg);
    }
    toks.push_back(Vocab::kSep);
    segs.push_back(seg);
  }
  pos.resize(toks.size());
  for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  b.attention_mask.push_back(std::vector<int>(toks.size(), 1));
  b.token_ids.push_back(std::move(toks));
  b.segment_ids.push_back(std::move(segs));
  b.position_ids.push_back(std::move(pos));
  return b;
}

EncodedBatch encode_s2s_sources(const std::vector<std::vector<std::string>>& sources,
                                const Vocab& vocab, const CodecLimits& limits) {
  if (sources.empty()) throw std::invalid_argument("encode_s2s_sources: empty source list");
  if (static_cast<int>(sources.size()) > limits.max_sources)
    throw std::invalid_argument("encode_s2s_sources: too many sources");
  EncodedBatch b;
  int width = 0;
  for (const auto& src : sources) {
    if (src.empty()) throw std::invalid_argument("encode_s2s_sources: empty source");
    int n = std::min<int>(static_cast<int>(src.size()), limits.max_source_len);
    if (n < static_cast<int>(src.size())) b.truncated++;
    b.boundaries.push_back(n);
    width = std::max(width, n + 2);  // [CLS] + words + [EOS]
  }
  for (size_t s = 0; s < sources.size(); ++s) {
    std::vector<int> toks(static_cast<size_t>(width), Vocab::kPad);
    std::vector<int> mask(static_cast<size_t>(width), 0);
    std::vector<int> segs(static_cast<size_t>(width), 0);
    std::vector<int> pos(static_cast<size_t>(width));
    for (int i = 0; i < width; ++i) pos[static_cast<size_t>(i)] = i;
    toks[0] = Vocab::kCls;
    mask[0] = 1;
    int n = b.boundaries[s];
    for (int i = 0; i < n; ++i) {
      toks[static_cast<size_t>(i + 1)] = vocab.id(sources[s][static_cast<size_t>(i)]);
      mask[static_cast<size_t>(i + 1)] = 1;
    }
    toks[static_cast<size_t>(n + 1)] = Vocab::kEos;
    mask[static_cast<size_t>(n + 1)] = 1;
    b.token_ids.push_back(std::move(toks));
    b.segment_ids.push_back(std::move(segs));
    b.position_ids.push_back(std::move(pos));
    b.attention_mask.push_back(std::move(mask));
  }
  return b;
}

// ---- target vocab ------------------------------------------------------------------

int TargetVocab::id_of(const std::string& tok) const {
  auto it = index.find(tok);
  if (it == index.end()) throw std::invalid_argument("target vocab: unknown token " + tok);
  return it->second;
}

std::pair<int, int> TargetVocab::pointer_target(int id) const {
  if (!is_pointer(id)) throw std::invalid_argument("target vocab: not a pointer id");
  int off = id - n_tags;
  return {off / max_source_len, off % max_source_len};
}

int TargetVocab::pointer_id(int source, int pos) const {
  if (source < 0 || source >= max_sources || pos < 0 || pos >= max_source_len)
    throw std::invalid_argument("target vocab: pointer coordinates out of range");
  return n_tags + source * max_source_len + pos;
}

bool TargetVocab::is_open(int id) const {
  if (id < 2 || id >= n_tags) return false;
  const std::string& t = tokens[static_cast<size_t>(id)];
  return t.back() == '(';
}

bool TargetVocab::is_close(int id) const {
  if (id < 2 || id >= n_tags) return false;
  return tokens[static_cast<size_t>(id)].front() == ')';
}

int TargetVocab::matching_bracket(int id) const {
  const std::string& t = tokens.at(static_cast<size_t>(id));
  if (is_open(id)) return id_of(")" + t.substr(0, t.size() - 1));
  if (is_close(id)) return id_of(t.substr(1) + "(");
  throw std::invalid_argument("target vocab: not a bracket token " + t);
}

TargetVocab build_target_vocab(const std::vector<std::string>& intents,
                               const std::vector<std::string>& slot_labels,
                               const CodecLimits& limits) {
  TargetVocab tv;
  tv.max_sources = limits.max_sources;
  tv.max_source_len = limits.max_source_len;
  tv.intents = intents;
  tv.slot_labels = slot_labels;
  std::sort(tv.intents.begin(), tv.intents.end());
  std::sort(tv.slot_labels.begin(), tv.slot_labels.end());
  tv.tokens = {"[SOS]", "[EOS]"};
  for (const auto& in : tv.intents) {
    tv.tokens.push_back(in + "(");
    tv.tokens.push_back(")" + in);
  }
  for (const auto& sl : tv.slot_labels) {
    tv.tokens.push_back(sl + "(");
    tv.tokens.push_back(")" + sl);
  }
  tv.n_tags = static_cast<int>(tv.tokens.size());
  for (int s = 0; s < tv.max_sources; ++s)
    for (int p = 0; p < tv.max_source_len; ++p)
      tv.tokens.push_back("@ptr" + std::to_string(s) + "_" + std::to_string(p));
  for (size_t i = 0; i < tv.tokens.size(); ++i) tv.index[tv.tokens[i]] = static_cast<int>(i);
  return tv;
}

void save_target_vocab(const std::string& path, const TargetVocab& tv) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write target vocab " + path);
  out << "# tags " << tv.n_tags << " max_sources " << tv.max_sources << " max_source_len "
      << tv.max_source_len << "\n";
  out << "# intents";
  for (const auto& i : tv.intents) out << " " << i;
  out << "\n# slots";
  for (const auto& s : tv.slot_labels) out << " " << s;
  out << "\n";
  for (const auto& t : tv.tokens) out << t << "\n";
}

TargetVocab load_target_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open target vocab " + path);
  std::string line, word;
  std::getline(in, line);
  std::istringstream h1(line);
  TargetVocab raw;
  int n_tags = 0;
  h1 >> word >> word >> n_tags >> word >> raw.max_sources >> word >> raw.max_source_len;
  std::vector<std::string> intents, slots;
  std::getline(in, line);
  {
    std::istringstream hs(line);
    hs >> word;  // '#'
    hs >> word;  // 'intents'
    while (hs >> word) intents.push_back(word);
  }
  std::getline(in, line);
  {
    std::istringstream hs(line);
    hs >> word >> word;
    while (hs >> word) slots.push_back(word);
  }
  CodecLimits lim{raw.max_sources, raw.max_source_len};
  TargetVocab tv = build_target_vocab(intents, slots, lim);
  if (tv.n_tags != n_tags) throw std::runtime_error("target vocab " + path + " header disagrees with body");
  // Verify the listed tokens match the reconstruction.
  for (const auto& expect : tv.tokens) {
    if (!std::getline(in, line) || line != expect)
      throw std::runtime_error("target vocab " + path + " is malformed near " + expect);
  }
  return tv;
}

// ---- linearize / delinearize ----------------------------------------------------------

int char_edit_distance(const std::string& a, const std::string& b) {
  size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[m];
}

namespace {

// Lowest rank, then lowest position wins; exact match first, else minimal
// character edit distance.
int resolve_pointer(const std::string& token, const std::vector<std::vector<std::string>>& sources,
                    PointerPolicy policy, const TargetVocab& tv) {
  for (size_t s = 0; s < sources.size(); ++s) {
    int limit = std::min<int>(static_cast<int>(sources[s].size()), tv.max_source_len);
    for (int p = 0; p < limit; ++p)
      if (sources[s][static_cast<size_t>(p)] == token) return tv.pointer_id(static_cast<int>(s), p);
  }
  if (policy == PointerPolicy::kStrict)
    throw ResolutionError("no source token matches \"" + token + "\" under the strict policy");
  int best = -1, best_d = std::numeric_limits<int>::max();
  for (size_t s = 0; s < sources.size(); ++s) {
    int limit = std::min<int>(static_cast<int>(sources[s].size()), tv.max_source_len);
    for (int p = 0; p < limit; ++p) {
      int d = char_edit_distance(sources[s][static_cast<size_t>(p)], token);
      if (d < best_d) {
        best_d = d;
        best = tv.pointer_id(static_cast<int>(s), p);
      }
    }
  }
  if (best < 0) throw ResolutionError("no source token available for \"" + token + "\"");
  return best;
}

}  // namespace

std::vector<int> linearize(const SemanticAnnotation& annotation,
                           const std::vector<std::string>& gold_tokens,
                           const std::vector<std::vector<std::string>>& sources,
                           PointerPolicy policy, const TargetVocab& tv) {
  if (sources.empty()) throw std::invalid_argument("linearize: empty sources");
  if (static_cast<int>(sources.size()) > tv.max_sources)
    throw std::invalid_argument("linearize: more sources than the target vocab supports");
  std::vector<int> out;
  out.push_back(tv.intent_open(annotation.intent));
  std::vector<const SlotSpan*> open_at(gold_tokens.size() + 1, nullptr);
  std::vector<const SlotSpan*> close_after(gold_tokens.size() + 1, nullptr);
  for (const auto& s : annotation.slots) {
    if (s.start < 0 || s.end > static_cast<int>(gold_tokens.size()) || s.start >= s.end)
      throw std::invalid_argument("linearize: slot span out of bounds");
    open_at[static_cast<size_t>(s.start)] = &s;
    close_after[static_cast<size_t>(s.end - 1)] = &s;
  }
  for (size_t i = 0; i < gold_tokens.size(); ++i) {
    if (open_at[i]) out.push_back(tv.slot_open(open_at[i]->label));
    out.push_back(resolve_pointer(gold_tokens[i], sources, policy, tv));
    if (close_after[i]) out.push_back(tv.slot_close(close_after[i]->label));
  }
  out.push_back(tv.intent_close(annotation.intent));
  out.push_back(tv.eos());
  return out;
}

Delinearized delinearize(const std::vector<int>& target,
                         const std::vector<std::vector<std::string>>& sources,
                         const TargetVocab& tv) {
  Delinearized out;
  if (target.empty()) throw ParseError("empty target sequence");
  size_t i = 0;
  auto tok = [&](size_t k) { return target[k]; };

  int open_intent = tok(0);
  if (!tv.is_open(open_intent) ||
      std::find(tv.intents.begin(), tv.intents.end(),
                tv.token(open_intent).substr(0, tv.token(open_intent).size() - 1)) == tv.intents.end())
    throw ParseError("target must start with an intent-open tag");
  out.intent = tv.token(open_intent).substr(0, tv.token(open_intent).size() - 1);
  i = 1;

  bool intent_closed = false;
  while (i < target.size()) {
    int id = tok(i);
    if (id == tv.eos()) break;
    if (intent_closed) throw ParseError("tokens after intent-close");
    if (tv.is_pointer(id)) {
      auto [s, p] = tv.pointer_target(id);
      if (s >= static_cast<int>(sources.size()) || p >= static_cast<int>(sources[static_cast<size_t>(s)].size()))
        throw PointerRangeError("pointer @ptr" + std::to_string(s) + "_" + std::to_string(p) +
                                " is outside the sources");
      out.surface.push_back(sources[static_cast<size_t>(s)][static_cast<size_t>(p)]);
      ++i;
      continue;
    }
    if (id == tv.matching_bracket(open_intent)) {
      intent_closed = true;
      ++i;
      continue;
    }
    if (tv.is_open(id)) {
      std::string label = tv.token(id).substr(0, tv.token(id).size() - 1);
      if (std::find(tv.slot_labels.begin(), tv.slot_labels.end(), label) == tv.slot_labels.end())
        throw ParseError("nested or unknown intent tag " + tv.token(id));
      int start = static_cast<int>(out.surface.size());
      ++i;
      int close_id = tv.matching_bracket(id);
      bool closed = false;
      while (i < target.size()) {
        int sid = tok(i);
        if (tv.is_pointer(sid)) {
          auto [s, p] = tv.pointer_target(sid);
          if (s >= static_cast<int>(sources.size()) ||
              p >= static_cast<int>(sources[static_cast<size_t>(s)].size()))
            throw PointerRangeError("pointer @ptr" + std::to_string(s) + "_" + std::to_string(p) +
                                    " is outside the sources");
          out.surface.push_back(sources[static_cast<size_t>(s)][static_cast<size_t>(p)]);
          ++i;
          continue;
        }
        if (sid == close_id) {
          closed = true;
          ++i;
          break;
        }
        throw ParseError("unexpected token " + tv.token(sid) + " inside slot " + label);
      }
      if (!closed) throw ParseError("slot " + label + " never closes");
      int end = static_cast<int>(out.surface.size());
      if (end == start) throw ParseError("slot " + label + " covers no tokens");
      out.slots.push_back({label, start, end});
      continue;
    }
    throw ParseError("unexpected token " + tv.token(id));
  }
  if (!intent_closed) throw ParseError("intent " + out.intent + " never closes");
  if (i >= target.size() || tok(i) != tv.eos()) throw ParseError("missing [EOS]");
  if (i + 1 != target.size()) throw ParseError("tokens after [EOS]");
  return out;
}

}  // namespace nbslu
