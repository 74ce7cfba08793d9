#include <doctest.h>

#include <cstdio>
#include <sstream>

#include "nbslu/codec.hpp"
#include "nbslu/rng.hpp"

using namespace nbslu;

namespace {

NBestRecord record_with_tokens(const std::vector<std::string>& toks) {
  NBestRecord r;
  r.gold.tokens = toks;
  r.nbest.hypotheses.push_back({toks, 1.0});
  return r;
}

TargetVocab toy_target_vocab() {
  return build_target_vocab({"PlaySongIntent", "AddToPlaylistIntent"}, {"ArtistName", "SongName"},
                            CodecLimits{6, 16});
}

}  // namespace

TEST_CASE("build_vocab: counting, [UNK] fallback, determinism") {
  std::vector<NBestRecord> recs{record_with_tokens({"play", "madonna"})};
  Vocab v = build_vocab(recs);
  CHECK(v.size() == 7);  // 5 reserved + 2
  CHECK(v.id("play") >= Vocab::kReserved);
  CHECK(v.id("xylophone") == Vocab::kUnk);
  CHECK(v.token(v.id("madonna")) == "madonna");

  Vocab v2 = build_vocab(recs);
  CHECK(v2.id_to_token == v.id_to_token);

  CHECK_THROWS_AS(build_vocab({}), std::invalid_argument);
}

TEST_CASE("vocab file round trip") {
  std::vector<NBestRecord> recs{record_with_tokens({"alpha", "beta", "gamma"})};
  Vocab v = build_vocab(recs);
  save_vocab("vocab_unit_test.txt", v);
  Vocab w = load_vocab("vocab_unit_test.txt");
  CHECK(w.id_to_token == v.id_to_token);
  std::remove("vocab_unit_test.txt");
}

TEST_CASE("summarizer layout: paper five-hypothesis segment pattern") {
  NBestList nb;
  for (const char* s :
       {"play muse", "play mu chick", "play news", "play mus", "play my sick"}) {
    Hypothesis h;
    std::istringstream iss(s);
    std::string t;
    while (iss >> t) h.tokens.push_back(t);
    h.confidence = 1.0 - 0.1 * static_cast<double>(nb.hypotheses.size());
    nb.hypotheses.push_back(h);
  }
  std::vector<NBestRecord> train{record_with_tokens({"play", "music"})};
  Vocab v = build_vocab(train);
  EncodedBatch b = encode_summarizer_input(nb, v);
  REQUIRE(b.token_ids.size() == 1);
  REQUIRE(b.cls_positions.size() == 5);

  // Segment of every token in hypothesis k is E_A (0) for even k, E_B (1) odd.
  const auto& toks = b.token_ids[0];
  const auto& segs = b.segment_ids[0];
  std::vector<int> per_hyp_seg;
  for (size_t k = 0; k < b.cls_positions.size(); ++k) {
    size_t start = static_cast<size_t>(b.cls_positions[k]);
    size_t end = k + 1 < b.cls_positions.size() ? static_cast<size_t>(b.cls_positions[k + 1]) : toks.size();
    per_hyp_seg.push_back(segs[start]);
    for (size_t i = start; i < end; ++i) CHECK(segs[i] == segs[start]);
    CHECK(toks[start] == Vocab::kCls);
    CHECK(toks[end - 1] == Vocab::kSep);
  }
  CHECK(per_hyp_seg == std::vector<int>{0, 1, 0, 1, 0});
}

TEST_CASE("summarizer layout: single hypothesis and cls_positions invariants") {
  NBestList nb;
  nb.hypotheses.push_back({{"play", "madonna"}, 1.0});
  std::vector<NBestRecord> train{record_with_tokens({"play", "madonna"})};
  Vocab v = build_vocab(train);
  EncodedBatch b = encode_summarizer_input(nb, v);
  CHECK(b.cls_positions == std::vector<int>{0});
  for (int s : b.segment_ids[0]) CHECK(s == 0);
  CHECK(b.token_ids[0].size() == 4);  // [CLS] play madonna [SEP]

  NBestList empty;
  CHECK_THROWS_AS(encode_summarizer_input(empty, v), std::invalid_argument);
}

TEST_CASE("summarizer layout: overlong hypothesis truncates with a warning count") {
  NBestList nb;
  Hypothesis h;
  for (int i = 0; i < 40; ++i) h.tokens.push_back("w" + std::to_string(i));
  h.confidence = 0.9;
  nb.hypotheses.push_back(h);
  std::vector<NBestRecord> train{record_with_tokens({"w0"})};
  Vocab v = build_vocab(train);
  EncodedBatch b = encode_summarizer_input(nb, v, 16);
  CHECK(b.truncated == 1);
  CHECK(b.token_ids[0].size() == 18);  // [CLS] + 16 + [SEP]
}

TEST_CASE("s2s source layout: rows, boundaries, masks") {
  std::vector<NBestRecord> train{record_with_tokens({"ply", "madonna", "play", "mad", "owner"})};
  Vocab v = build_vocab(train);
  EncodedBatch b = encode_s2s_sources({{"ply", "madonna"}, {"play", "mad", "owner"}}, v, CodecLimits{});
  REQUIRE(b.token_ids.size() == 2);
  CHECK(b.boundaries == std::vector<int>{2, 3});
  // Width is the longest row: [CLS] + 3 + [EOS] = 5.
  CHECK(b.token_ids[0].size() == 5);
  CHECK(b.token_ids[0][0] == Vocab::kCls);
  CHECK(b.token_ids[0][3] == Vocab::kEos);
  CHECK(b.attention_mask[0] == std::vector<int>{1, 1, 1, 1, 0});
  CHECK(b.attention_mask[1] == std::vector<int>{1, 1, 1, 1, 1});

  // Round trip through the bijection, ignoring pads and specials.
  for (int i = 0; i < b.boundaries[1]; ++i)
    CHECK(v.token(b.token_ids[1][static_cast<size_t>(i) + 1]) ==
          std::vector<std::string>{"play", "mad", "owner"}[static_cast<size_t>(i)]);

  CHECK_THROWS_AS(encode_s2s_sources({}, v, CodecLimits{}), std::invalid_argument);
}

TEST_CASE("target vocab: disjoint id ranges and economy") {
  TargetVocab tv = toy_target_vocab();
  // 2 structural + 2*2 intents + 2*2 slots = 10 tags, plus 6*16 pointers.
  CHECK(tv.n_tags == 10);
  CHECK(tv.size() == 10 + 6 * 16);
  for (int id = 0; id < tv.n_tags; ++id) CHECK_FALSE(tv.is_pointer(id));
  for (int id = tv.n_tags; id < tv.size(); ++id) CHECK(tv.is_pointer(id));
  auto [s, p] = tv.pointer_target(tv.pointer_id(3, 7));
  CHECK(s == 3);
  CHECK(p == 7);
  CHECK(tv.token(tv.pointer_id(0, 1)) == "@ptr0_1");
  CHECK(tv.matching_bracket(tv.intent_open("PlaySongIntent")) == tv.intent_close("PlaySongIntent"));
}

TEST_CASE("target vocab file round trip") {
  TargetVocab tv = toy_target_vocab();
  save_target_vocab("tvocab_unit_test.txt", tv);
  TargetVocab back = load_target_vocab("tvocab_unit_test.txt");
  CHECK(back.tokens == tv.tokens);
  CHECK(back.n_tags == tv.n_tags);
  CHECK(back.intents == tv.intents);
  std::remove("tvocab_unit_test.txt");
}

TEST_CASE("linearize: paper pointer example") {
  TargetVocab tv = toy_target_vocab();
  SemanticAnnotation ann;
  ann.intent = "PlaySongIntent";
  ann.slots = {{"ArtistName", 1, 2}};
  std::vector<std::string> gold{"play", "madonna"};
  std::vector<std::vector<std::string>> sources{{"ply", "madonna"}, {"play", "mad", "owner"}};
  auto ids = linearize(ann, gold, sources, PointerPolicy::kExactThenEditDistance, tv);
  std::vector<std::string> toks;
  for (int id : ids) toks.push_back(tv.token(id));
  CHECK(toks == std::vector<std::string>{"PlaySongIntent(", "@ptr1_0", "ArtistName(", "@ptr0_1",
                                         ")ArtistName", ")PlaySongIntent", "[EOS]"});
}

TEST_CASE("linearize: identity resolution when sources = [gold]") {
  TargetVocab tv = toy_target_vocab();
  SemanticAnnotation ann;
  ann.intent = "AddToPlaylistIntent";
  std::vector<std::string> gold{"add", "hello", "to", "my", "playlist"};
  ann.slots = {{"SongName", 1, 2}};
  auto ids = linearize(ann, gold, {gold}, PointerPolicy::kExactThenEditDistance, tv);
  int seen = 0;
  for (int id : ids)
    if (tv.is_pointer(id)) {
      auto [s, p] = tv.pointer_target(id);
      CHECK(s == 0);
      CHECK(p == seen);
      seen++;
    }
  CHECK(seen == 5);
}

TEST_CASE("linearize: strict policy raises a resolution error naming the token") {
  TargetVocab tv = toy_target_vocab();
  SemanticAnnotation ann;
  ann.intent = "PlaySongIntent";
  std::vector<std::string> gold{"play", "madonna"};
  std::vector<std::vector<std::string>> sources{{"ply", "mad"}};
  CHECK_THROWS_WITH_AS(linearize(ann, gold, sources, PointerPolicy::kStrict, tv),
                       doctest::Contains("play"), ResolutionError);
  // Lenient policy resolves via closest character edit distance.
  auto ids = linearize(ann, gold, sources, PointerPolicy::kExactThenEditDistance, tv);
  auto [s0, p0] = tv.pointer_target(ids[1]);
  CHECK(s0 == 0);
  CHECK(p0 == 0);  // "ply" is closest to "play"
}

TEST_CASE("delinearize: paper example inverse") {
  TargetVocab tv = toy_target_vocab();
  std::vector<std::vector<std::string>> sources{{"ply", "madonna"}, {"play", "mad", "owner"}};
  std::vector<int> ids{tv.intent_open("PlaySongIntent"), tv.pointer_id(1, 0), tv.slot_open("ArtistName"),
                       tv.pointer_id(0, 1), tv.slot_close("ArtistName"),
                       tv.intent_close("PlaySongIntent"), tv.eos()};
  auto d = delinearize(ids, sources, tv);
  CHECK(d.intent == "PlaySongIntent");
  CHECK(d.surface == std::vector<std::string>{"play", "madonna"});
  REQUIRE(d.slots.size() == 1);
  CHECK(d.slots[0].label == "ArtistName");
  CHECK(d.surface[static_cast<size_t>(d.slots[0].start)] == "madonna");
}

TEST_CASE("delinearize: empty intent and malformed sequences") {
  TargetVocab tv = toy_target_vocab();
  std::vector<std::vector<std::string>> sources{{"play"}};
  auto d = delinearize({tv.intent_open("PlaySongIntent"), tv.intent_close("PlaySongIntent"), tv.eos()},
                       sources, tv);
  CHECK(d.intent == "PlaySongIntent");
  CHECK(d.surface.empty());
  CHECK(d.slots.empty());

  // Missing intent close.
  CHECK_THROWS_AS(delinearize({tv.intent_open("PlaySongIntent"), tv.eos()}, sources, tv), ParseError);
  // Pointer outside the true source length.
  CHECK_THROWS_AS(delinearize({tv.intent_open("PlaySongIntent"), tv.pointer_id(0, 5),
                               tv.intent_close("PlaySongIntent"), tv.eos()},
                              sources, tv),
                  PointerRangeError);
  // Unbalanced slot bracket.
  CHECK_THROWS_AS(delinearize({tv.intent_open("PlaySongIntent"), tv.slot_open("ArtistName"),
                               tv.pointer_id(0, 0), tv.intent_close("PlaySongIntent"), tv.eos()},
                              sources, tv),
                  ParseError);
}

TEST_CASE("round-trip property: delinearize(linearize(a, s), s) is identity") {
  Rng rng(2024);
  TargetVocab tv = build_target_vocab({"I0", "I1", "I2"}, {"A", "B", "C"}, CodecLimits{6, 16});
  std::vector<std::string> pool{"red", "green", "blue", "cyan", "plum", "gray", "teal", "bone"};
  for (int it = 0; it < 4000; ++it) {
    int len = 1 + rng.uniform_int(7);
    std::vector<std::string> gold;
    for (int i = 0; i < len; ++i) gold.push_back(pool[static_cast<size_t>(rng.uniform_int(8))]);
    SemanticAnnotation ann;
    ann.intent = "I" + std::to_string(rng.uniform_int(3));
    int cursor = 0;
    while (cursor < len) {
      if (rng.bernoulli(0.4)) {
        int w = 1 + rng.uniform_int(std::min(3, len - cursor));
        ann.slots.push_back({std::string(1, static_cast<char>('A' + rng.uniform_int(3))), cursor,
                             cursor + w});
        cursor += w;
      }
      cursor += 1 + rng.uniform_int(2);
    }
    // Sources always contain all gold tokens: the gold row plus noise rows.
    std::vector<std::vector<std::string>> sources{gold};
    int extra = rng.uniform_int(3);
    for (int e = 0; e < extra; ++e) {
      std::vector<std::string> noise;
      int nl = 1 + rng.uniform_int(6);
      for (int i = 0; i < nl; ++i) noise.push_back(pool[static_cast<size_t>(rng.uniform_int(8))]);
      sources.push_back(noise);
    }
    if (rng.bernoulli(0.5)) std::swap(sources[0], sources[sources.size() - 1]);

    auto ids = linearize(ann, gold, sources, PointerPolicy::kExactThenEditDistance, tv);
    auto d = delinearize(ids, sources, tv);
    CHECK(d.intent == ann.intent);
    REQUIRE(d.slots.size() == ann.slots.size());
    for (size_t k = 0; k < ann.slots.size(); ++k) {
      CHECK(d.slots[k].label == ann.slots[k].label);
      std::string want, got;
      for (int i = ann.slots[k].start; i < ann.slots[k].end; ++i) want += gold[static_cast<size_t>(i)] + " ";
      for (int i = d.slots[k].start; i < d.slots[k].end; ++i) got += d.surface[static_cast<size_t>(i)] + " ";
      CHECK(got == want);
    }
    CHECK(d.surface == gold);
  }
}

TEST_CASE("linearize output always passes the bracket validator") {
  Rng rng(55);
  TargetVocab tv = toy_target_vocab();
  std::vector<std::string> pool{"play", "madonna", "hello", "queen", "add"};
  for (int it = 0; it < 500; ++it) {
    int len = 1 + rng.uniform_int(5);
    std::vector<std::string> gold;
    for (int i = 0; i < len; ++i) gold.push_back(pool[static_cast<size_t>(rng.uniform_int(5))]);
    SemanticAnnotation ann;
    ann.intent = rng.bernoulli(0.5) ? "PlaySongIntent" : "AddToPlaylistIntent";
    if (len >= 2 && rng.bernoulli(0.7)) ann.slots.push_back({"SongName", 0, 1 + rng.uniform_int(len - 1)});
    auto ids = linearize(ann, gold, {gold}, PointerPolicy::kExactThenEditDistance, tv);
    CHECK_NOTHROW(delinearize(ids, {gold}, tv));
  }
}
