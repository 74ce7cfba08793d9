#include "nbslu/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nbslu {

using ordered_json = nlohmann::ordered_json;

bool NBestRecord::recompute_mismatch() const {
  if (nbest.hypotheses.empty()) return true;
  return nbest.hypotheses[0].tokens != gold.tokens;
}

const DomainSpec* CorpusSpec::find_domain(const std::string& name) const {
  for (const auto& d : domains)
    if (d.name == name) return &d;
  return nullptr;
}

void CorpusSpec::validate() const {
  if (domains.size() < 3) throw std::runtime_error("corpus config: at least 3 domains required");
  for (const auto& d : domains) {
    if (d.intents.size() < 2)
      throw std::runtime_error("corpus config: domain " + d.name + " needs at least 2 intents");
    for (const auto& in : d.intents) {
      if (in.templates.empty())
        throw std::runtime_error("corpus config: intent " + in.name + " has no templates");
    }
  }
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw std::runtime_error("corpus config: train fraction must be in (0,1)");
}

void NoiseModel::validate() const {
  auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in01(sub_prob) || !in01(del_prob) || !in01(ins_prob))
    throw std::runtime_error("noise model: probabilities must lie in [0,1]");
  if (sub_prob + del_prob > 1.0)
    throw std::runtime_error("noise model: sub_prob + del_prob must not exceed 1");
  if (lambda < 0.0) throw std::runtime_error("noise model: lambda must be non-negative");
  if (rank_noise < 0.0 || rank_noise >= 1.0) throw std::runtime_error("noise model: rank noise out of range");
  if (max_hypotheses < 1 || max_hypotheses > 5)
    throw std::runtime_error("noise model: max hypotheses must be 1..5");
  if (samples < 1) throw std::runtime_error("noise model: need at least one sample");
}

// ---- gold generation ---------------------------------------------------------

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

GoldUtterance sample_gold(const DomainSpec& dom, Rng& rng) {
  const IntentSpec& intent = dom.intents[static_cast<size_t>(rng.uniform_int(static_cast<int>(dom.intents.size())))];
  const std::string& tmpl =
      intent.templates[static_cast<size_t>(rng.uniform_int(static_cast<int>(intent.templates.size())))];
  GoldUtterance u;
  u.annotation.domain = dom.name;
  u.annotation.intent = intent.name;
  for (const std::string& part : split_ws(tmpl)) {
    if (part.size() > 2 && part.front() == '{' && part.back() == '}') {
      std::string label = part.substr(1, part.size() - 2);
      auto it = dom.lexicon.find(label);
      if (it == dom.lexicon.end() || it->second.empty())
        throw std::runtime_error("corpus config: empty lexicon for slot " + label + " in domain " + dom.name);
      const std::string& entry =
          it->second[static_cast<size_t>(rng.uniform_int(static_cast<int>(it->second.size())))];
      int start = static_cast<int>(u.tokens.size());
      for (std::string tok : split_ws(entry)) {
        std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
        u.tokens.push_back(tok);
      }
      u.annotation.slots.push_back({label, start, static_cast<int>(u.tokens.size())});
    } else {
      std::string tok = part;
      std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
      u.tokens.push_back(tok);
    }
  }
  if (u.tokens.empty()) throw std::runtime_error("corpus config: template produced no tokens");
  return u;
}

}  // namespace

std::vector<GoldUtterance> generate_gold(const CorpusSpec& spec, uint64_t seed) {
  spec.validate();
  std::vector<GoldUtterance> out;
  for (const auto& dom : spec.domains) {
    for (int i = 0; i < spec.records_per_domain; ++i) {
      Rng rng(derive_seed(seed, "gold:" + dom.name, static_cast<uint64_t>(i)));
      out.push_back(sample_gold(dom, rng));
    }
  }
  return out;
}

// ---- noise channel -------------------------------------------------------------

namespace {

struct CorruptResult {
  std::vector<std::string> tokens;
  int edits = 0;
};

CorruptResult corrupt_once(const std::vector<std::string>& tokens, const NoiseModel& noise, Rng& rng,
                           double scale) {
  auto p = [&](double base) { return std::min(0.9, base * scale); };
  CorruptResult res;
  size_t i = 0;
  while (i < tokens.size()) {
    // Merge / two-token confusions first.
    if (i + 1 < tokens.size()) {
      auto it = noise.confusion.find(tokens[i] + " " + tokens[i + 1]);
      if (it != noise.confusion.end() && rng.bernoulli(p(noise.sub_prob))) {
        const auto& alt = it->second[static_cast<size_t>(rng.uniform_int(static_cast<int>(it->second.size())))];
        res.tokens.insert(res.tokens.end(), alt.begin(), alt.end());
        res.edits++;
        i += 2;
        continue;
      }
    }
    auto it = noise.confusion.find(tokens[i]);
    if (it != noise.confusion.end() && rng.bernoulli(p(noise.sub_prob))) {
      const auto& alt = it->second[static_cast<size_t>(rng.uniform_int(static_cast<int>(it->second.size())))];
      res.tokens.insert(res.tokens.end(), alt.begin(), alt.end());
      res.edits++;
    } else if (rng.bernoulli(p(noise.del_prob)) && !(res.tokens.empty() && i + 1 == tokens.size())) {
      res.edits++;  // dropped
    } else {
      res.tokens.push_back(tokens[i]);
    }
    if (!noise.fillers.empty() && rng.bernoulli(p(noise.ins_prob))) {
      res.tokens.push_back(
          noise.fillers[static_cast<size_t>(rng.uniform_int(static_cast<int>(noise.fillers.size())))]);
      res.edits++;
    }
    ++i;
  }
  if (res.tokens.empty()) {
    res.tokens.push_back(tokens.front());
  }
  return res;
}

double candidate_confidence(int edits, const NoiseModel& noise, Rng& rng) {
  if (edits == 0) return 1.0;
  double c = std::exp(-noise.lambda * edits) * (1.0 + noise.rank_noise * rng.uniform(-1.0, 1.0));
  return std::min(1.0, std::max(1e-9, c));
}

}  // namespace

int token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

NBestList corrupt_to_nbest(const GoldUtterance& gold, const NoiseModel& noise, Rng& rng) {
  noise.validate();
  struct Candidate {
    std::vector<std::string> tokens;
    int edits;
    double confidence;
  };
  std::vector<Candidate> cands;

  CorruptResult heard = corrupt_once(gold.tokens, noise, rng, 1.0);
  cands.push_back({heard.tokens, heard.edits, candidate_confidence(heard.edits, noise, rng)});

  // The gold sequence re-enters the pool priced as a walk back from `heard`.
  if (heard.tokens != gold.tokens) {
    int gedits = heard.edits + token_edit_distance(heard.tokens, gold.tokens);
    cands.push_back({gold.tokens, gedits, candidate_confidence(gedits, noise, rng)});
  }

  for (int s = 0; s < noise.samples; ++s) {
    CorruptResult hyp = corrupt_once(heard.tokens, noise, rng, noise.hyp_scale);
    int edits = heard.edits + hyp.edits;
    cands.push_back({hyp.tokens, edits, candidate_confidence(edits, noise, rng)});
  }

  // Dedup by token sequence, keeping the most confident copy.
  std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
    if (x.tokens != y.tokens) return x.tokens < y.tokens;
    return x.confidence > y.confidence;
  });
  cands.erase(std::unique(cands.begin(), cands.end(),
                          [](const Candidate& x, const Candidate& y) { return x.tokens == y.tokens; }),
              cands.end());
  std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
    if (x.confidence != y.confidence) return x.confidence > y.confidence;
    if (x.edits != y.edits) return x.edits < y.edits;
    return x.tokens < y.tokens;
  });
  if (static_cast<int>(cands.size()) > noise.max_hypotheses) cands.resize(static_cast<size_t>(noise.max_hypotheses));

  NBestList out;
  for (auto& c : cands) out.hypotheses.push_back({std::move(c.tokens), c.confidence});
  return out;
}

std::vector<NBestRecord> generate_records(const CorpusSpec& spec, const NoiseModel& noise,
                                          uint64_t seed, const std::string& pool_tag,
                                          int per_domain) {
  spec.validate();
  noise.validate();
  std::vector<NBestRecord> out;
  char idbuf[128];
  for (const auto& dom : spec.domains) {
    for (int i = 0; i < per_domain; ++i) {
      Rng rng(derive_seed(seed, pool_tag + ":" + dom.name, static_cast<uint64_t>(i)));
      NBestRecord rec;
      std::snprintf(idbuf, sizeof idbuf, "%s-%s-%05d", pool_tag.c_str(), dom.name.c_str(), i);
      rec.id = idbuf;
      rec.gold = sample_gold(dom, rng);
      rec.nbest = corrupt_to_nbest(rec.gold, noise, rng);
      rec.is_mismatched = rec.recompute_mismatch();
      out.push_back(std::move(rec));
    }
  }
  return out;
}

CorpusSplits build_and_split(const std::vector<NBestRecord>& train_pool,
                             const std::vector<NBestRecord>& test_pool, uint64_t seed,
                             double train_fraction) {
  std::map<std::string, std::vector<size_t>> by_domain;
  for (size_t i = 0; i < train_pool.size(); ++i) by_domain[train_pool[i].gold.annotation.domain].push_back(i);

  CorpusSplits out;
  for (auto& [domain, idx] : by_domain) {
    if (idx.size() < 2)
      throw std::runtime_error("split error: domain " + domain + " has fewer than 2 records");
    Rng rng(derive_seed(seed, "split:" + domain));
    std::vector<size_t> order = idx;
    rng.shuffle(order);
    auto n = static_cast<long long>(order.size());
    long long n_train = std::llround(train_fraction * static_cast<double>(n));
    n_train = std::clamp(n_train, 1ll, n - 1);
    std::vector<size_t> tr(order.begin(), order.begin() + n_train);
    std::vector<size_t> va(order.begin() + n_train, order.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    for (size_t i : tr) out.train.push_back(train_pool[i]);
    for (size_t i : va) out.validation.push_back(train_pool[i]);
  }
  out.test_full = test_pool;
  for (const auto& rec : test_pool)
    if (rec.is_mismatched) out.test_mismatched.push_back(rec);

  std::map<std::string, int> seen;
  for (const auto* split : {&out.train, &out.validation, &out.test_full})
    for (const auto& rec : *split)
      if (++seen[rec.id] > 1) throw std::runtime_error("split error: duplicate record id " + rec.id);
  return out;
}

OppCostTable opportunity_cost(const std::vector<NBestRecord>& records) {
  if (records.empty()) throw std::invalid_argument("opportunity_cost: no records");
  OppCostTable t;
  t.match_counts.assign(5, 0);
  for (const auto& rec : records) {
    const auto& hyps = rec.nbest.hypotheses;
    for (size_t r = 0; r < hyps.size() && r < 5; ++r) {
      if (hyps[r].tokens == rec.gold.tokens) {
        t.match_counts[r]++;
        break;  // hypotheses are distinct; at most one rank can match
      }
    }
  }
  t.rank0_matches = t.match_counts[0];
  if (t.rank0_matches == 0)
    throw std::runtime_error(
        "opportunity_cost: zero exact matches at rank 0; the n-vs-1 ratio of the table is undefined");
  t.rows.assign(4, 0.0);
  for (int n = 2; n <= 5; ++n) {
    t.rows[static_cast<size_t>(n - 2)] =
        100.0 * static_cast<double>(t.match_counts[static_cast<size_t>(n - 1)]) /
        static_cast<double>(t.rank0_matches);
    t.total += t.rows[static_cast<size_t>(n - 2)];
  }
  return t;
}

// ---- file format -----------------------------------------------------------------

void write_jsonl(const std::string& path, const std::vector<NBestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file " + path);
  for (const auto& rec : records) {
    ordered_json j;
    j["id"] = rec.id;
    j["domain"] = rec.gold.annotation.domain;
    j["intent"] = rec.gold.annotation.intent;
    ordered_json slots = ordered_json::array();
    for (const auto& s : rec.gold.annotation.slots)
      slots.push_back({{"label", s.label}, {"start", s.start}, {"end", s.end}});
    j["slots"] = std::move(slots);
    j["gold_tokens"] = rec.gold.tokens;
    ordered_json nbest = ordered_json::array();
    for (const auto& h : rec.nbest.hypotheses)
      nbest.push_back({{"tokens", h.tokens}, {"confidence", h.confidence}});
    j["nbest"] = std::move(nbest);
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed for corpus file " + path);
}

std::vector<NBestRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path);
  std::vector<NBestRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad json: " + e.what());
    }
    NBestRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.gold.annotation.domain = j.at("domain").get<std::string>();
    rec.gold.annotation.intent = j.at("intent").get<std::string>();
    for (const auto& s : j.at("slots"))
      rec.gold.annotation.slots.push_back({s.at("label").get<std::string>(), s.at("start").get<int>(),
                                           s.at("end").get<int>()});
    rec.gold.tokens = j.at("gold_tokens").get<std::vector<std::string>>();
    for (const auto& h : j.at("nbest"))
      rec.nbest.hypotheses.push_back(
          {h.at("tokens").get<std::vector<std::string>>(), h.at("confidence").get<double>()});

    // Invariant checks; the mismatch flag is recomputed, never trusted.
    if (rec.gold.tokens.empty())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty gold tokens");
    if (rec.nbest.hypotheses.empty() || rec.nbest.hypotheses.size() > 5)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": hypothesis count out of range");
    for (size_t h = 0; h < rec.nbest.hypotheses.size(); ++h) {
      if (rec.nbest.hypotheses[h].tokens.empty())
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty hypothesis");
      if (h > 0 && rec.nbest.hypotheses[h].confidence > rec.nbest.hypotheses[h - 1].confidence + 1e-12)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": confidences increase with rank");
      for (size_t g = 0; g < h; ++g)
        if (rec.nbest.hypotheses[g].tokens == rec.nbest.hypotheses[h].tokens)
          throw std::runtime_error(path + ":" + std::to_string(line_no) + ": duplicate hypotheses");
    }
    for (const auto& s : rec.gold.annotation.slots)
      if (s.start < 0 || s.end > static_cast<int>(rec.gold.tokens.size()) || s.start >= s.end)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": slot span out of bounds");
    rec.is_mismatched = rec.recompute_mismatch();
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- built-in corpus ---------------------------------------------------------------

CorpusSpec default_corpus_spec() {
  CorpusSpec spec;
  DomainSpec music;
  music.name = "music";
  music.intents = {
      {"PlaySongIntent",
       {"play {ArtistName}", "play {SongName} by {ArtistName}", "play some {GenreName}",
        "put on {SongName}"}},
      {"AddToPlaylistIntent", {"add {SongName} to my playlist", "save {SongName} by {ArtistName}"}},
  };
  music.lexicon = {
      {"ArtistName",
       {"madonna", "queen", "nelson", "adele", "drake", "coldplay", "prince", "shakira", "sting", "muse"}},
      {"SongName", {"thriller", "yesterday", "hello", "believer", "roar", "firework", "royals"}},
      {"GenreName", {"jazz", "rock", "pop", "blues", "metal", "soul"}},
  };

  DomainSpec shopping;
  shopping.name = "shopping";
  shopping.intents = {
      {"BuyItemIntent", {"buy {ItemName}", "order {Quantity} {ItemName}", "add {ItemName} to my cart"}},
      {"TrackOrderIntent", {"track my order", "where is my {ItemName} order"}},
  };
  shopping.lexicon = {
      {"ItemName",
       {"soap", "batteries", "coffee", "towels", "milk", "socks", "candles", "sugar", "spoons", "razors"}},
      {"Quantity", {"two", "three", "four", "five", "six"}},
  };

  DomainSpec weather;
  weather.name = "weather";
  weather.intents = {
      {"GetWeatherIntent",
       {"what is the weather in {CityName}", "will it rain in {CityName}", "how hot is it in {CityName}"}},
      {"GetForecastIntent", {"give me the forecast for {CityName}", "forecast for {CityName} tomorrow"}},
  };
  weather.lexicon = {
      {"CityName", {"berlin", "lisbon", "porto", "hamburg", "munich", "paris", "vienna", "seville"}},
  };

  spec.domains = {music, shopping, weather};
  return spec;
}

NoiseModel default_noise_model() {
  NoiseModel n;
  n.fillers = {"uh", "the", "a", "to", "on"};
  auto alts = [](std::initializer_list<const char*> xs) {
    std::vector<std::vector<std::string>> out;
    for (const char* x : xs) {
      std::istringstream iss(x);
      std::vector<std::string> toks;
      std::string t;
      while (iss >> t) toks.push_back(t);
      out.push_back(std::move(toks));
    }
    return out;
  };
  n.confusion = {
      // carrier verbs / function words
      {"play", alts({"pray", "ply"})},
      {"put", alts({"but"})},
      {"buy", alts({"by", "bye"})},
      {"order", alts({"odor"})},
      {"track", alts({"trick"})},
      {"weather", alts({"whether"})},
      {"rain", alts({"reign", "ray in"})},
      {"forecast", alts({"four cast"})},
      {"save", alts({"shave"})},
      // artists
      {"madonna", alts({"my donna", "madder"})},
      {"queen", alts({"green", "clean"})},
      {"nelson", alts({"my son", "wilson"})},
      {"adele", alts({"a dell"})},
      {"drake", alts({"lake", "brake"})},
      {"coldplay", alts({"cold play"})},
      {"prince", alts({"prints"})},
      {"shakira", alts({"the kira"})},
      {"sting", alts({"string"})},
      {"muse", alts({"news", "mews"})},
      // songs & genres
      {"thriller", alts({"chiller"})},
      {"yesterday", alts({"yes today"})},
      {"hello", alts({"halo"})},
      {"believer", alts({"beaver"})},
      {"roar", alts({"raw"})},
      {"firework", alts({"fire work"})},
      {"royals", alts({"oils"})},
      {"jazz", alts({"has"})},
      {"rock", alts({"rack"})},
      {"pop", alts({"pup"})},
      {"blues", alts({"bruise"})},
      {"metal", alts({"medal"})},
      {"soul", alts({"sole"})},
      // shopping items
      {"soap", alts({"soup"})},
      {"batteries", alts({"but trees"})},
      {"coffee", alts({"toffee"})},
      {"towels", alts({"tiles"})},
      {"milk", alts({"silk"})},
      {"socks", alts({"sacks"})},
      {"candles", alts({"handles"})},
      {"sugar", alts({"shook her"})},
      {"spoons", alts({"spools"})},
      {"razors", alts({"lasers"})},
      // cities
      {"berlin", alts({"burr lin"})},
      {"lisbon", alts({"list bin"})},
      {"porto", alts({"port oh"})},
      {"hamburg", alts({"ham burg"})},
      {"munich", alts({"music", "mu nick"})},
      {"paris", alts({"pears", "bearish"})},
      {"vienna", alts({"sienna"})},
      {"seville", alts({"civil"})},
      // merges over adjacent tokens
      {"is it", alts({"visit"})},
      {"give me", alts({"gimme"})},
      {"what is", alts({"watts"})},
      {"will it", alts({"wilt"})},
      {"to my", alts({"tommy"})},
  };
  return n;
}

}  // namespace nbslu
