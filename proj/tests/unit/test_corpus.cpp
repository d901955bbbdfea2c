#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gvd/corpus.hpp"
#include "gvd/errors.hpp"

using namespace gvd;

namespace {

const char* kRecord =
    R"({"video_id":"v1","segment_index":0,"total_segments":2,"start_s":0.0,"end_s":4.5,)"
    R"("caption":["A","man","throws","a","ball"],"mentions":[)"
    R"({"np":"A man","tokens":[0,1],"frame":0,"boxes":[[0,0,10,10]],"group":false,"labels":["man"]},)"
    R"({"np":"a ball","tokens":[3,4],"frame":2,"boxes":[[5,5,8,8],[9,9,12,12]],"group":false,"labels":["ball"]}]})";

SegmentAnnotation segment(const std::string& vid, std::vector<std::string> caption,
                          std::vector<EntityMention> mentions = {}) {
  SegmentAnnotation a;
  a.video_id = vid;
  a.end_s = 1;
  a.caption = std::move(caption);
  a.mentions = std::move(mentions);
  return a;
}

EntityMention mention(std::vector<int> span, std::string label, int boxes = 1) {
  EntityMention m;
  m.token_span = std::move(span);
  m.np_text = label;
  m.labels = {label};
  for (int b = 0; b < boxes; ++b) m.boxes.push_back({0, 0, 1.0 + b, 1});
  return m;
}

}  // namespace

TEST(Parse, OneRecordTwoMentions) {
  std::istringstream in(kRecord);
  ParseReport rep;
  const auto c = parse_annotations(in, &rep);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].mentions.size(), 2u);
  EXPECT_EQ(c[0].mentions[1].boxes.size(), 2u);
  EXPECT_EQ(rep.dropped_mentions, 0);
}

TEST(Parse, RoundTripIsStable) {
  std::istringstream in(kRecord);
  const auto c = parse_annotations(in);
  const std::string once = serialize_annotation(c[0]);
  std::istringstream in2(once);
  const auto c2 = parse_annotations(in2);
  EXPECT_EQ(c, c2);
  EXPECT_EQ(serialize_annotation(c2[0]), once);
}

TEST(Parse, SharedTokenDropsSecondMention) {
  std::string rec = kRecord;
  rec.replace(rec.find("\"tokens\":[3,4]"), 14, "\"tokens\":[1,4]");
  std::istringstream in(rec);
  ParseReport rep;
  const auto c = parse_annotations(in, &rep);
  ASSERT_EQ(c[0].mentions.size(), 1u);
  EXPECT_EQ(rep.dropped_mentions, 1);
}

TEST(Parse, EmptyStreamAndErrors) {
  std::istringstream empty("");
  EXPECT_TRUE(parse_annotations(empty).empty());
  std::istringstream bad(std::string(kRecord) + "\n{not json}\n");
  try {
    parse_annotations(bad);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream dup(std::string(kRecord) + "\n" + kRecord + "\n");
  EXPECT_THROW(parse_annotations(dup), DataError);
}

TEST(Parse, InvalidBoxAndSpanDropped) {
  std::string rec = kRecord;
  rec.replace(rec.find("[[0,0,10,10]]"), 13, "[[5,0,5,10]]");
  std::istringstream in(rec);
  ParseReport rep;
  const auto c = parse_annotations(in, &rep);
  EXPECT_EQ(c[0].mentions.size(), 1u);
  EXPECT_EQ(rep.dropped_mentions, 1);
}

TEST(Vocabulary, MinCountAndSpecials) {
  std::vector<SegmentAnnotation> corpus = {
      segment("a", {"a", "a", "a", "b", "c"}), segment("b", {"a", "a", "b", "c", "c"})};
  const Vocabulary v = Vocabulary::build(corpus, 3, 20);
  EXPECT_EQ(v.size(), Vocabulary::kNumSpecial + 2);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_TRUE(v.contains("c"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id("b"), Vocabulary::kUnk);
  EXPECT_EQ(Vocabulary::build({}, 3, 20).size(), Vocabulary::kNumSpecial);
}

TEST(Vocabulary, TruncationAndJsonRoundTrip) {
  std::vector<std::string> cap;
  for (int i = 0; i < 25; ++i) cap.push_back("w" + std::to_string(i));
  std::vector<SegmentAnnotation> corpus = {segment("a", cap)};
  const Vocabulary v = Vocabulary::build(corpus, 1, 20);
  const auto ids = v.encode(cap);
  EXPECT_EQ(ids.size(), 21u);
  EXPECT_EQ(ids.back(), Vocabulary::kEos);
  EXPECT_FALSE(v.contains("w22"));  // truncated before counting
  const Vocabulary w = Vocabulary::from_json(v.to_json());
  EXPECT_EQ(w.hash(), v.hash());
  EXPECT_EQ(w.decode(ids), std::vector<std::string>(cap.begin(), cap.begin() + 20));
}

TEST(ObjectClasses, ThresholdOrderAndMonotone) {
  std::vector<SegmentAnnotation> corpus;
  for (int i = 0; i < 3; ++i) corpus.push_back(segment("d" + std::to_string(i), {"dog"}, {mention({0}, "dog")}));
  corpus.push_back(segment("c", {"cat"}, {mention({0}, "cat")}));
  const auto k2 = ObjectClassSet::derive(corpus, 2, HeuristicTagger{});
  EXPECT_EQ(k2.names(), std::vector<std::string>{"dog"});
  const auto k1 = ObjectClassSet::derive(corpus, 1, HeuristicTagger{});
  EXPECT_EQ(k1.names(), (std::vector<std::string>{"dog", "cat"}));
  EXPECT_THROW(ObjectClassSet::derive(corpus, 0, HeuristicTagger{}), ConfigError);
  int prev = 1 << 30;
  for (int t = 1; t <= 5; ++t) {
    const int k = ObjectClassSet::derive(corpus, t, HeuristicTagger{}).size();
    EXPECT_LE(k, prev);
    prev = k;
  }
  EXPECT_EQ(ObjectClassSet::from_json(k1.to_json()).hash(), k1.hash());
}

TEST(ObjectClasses, LemmaLookup) {
  const auto k = ObjectClassSet::from_names({"man", "box", "baby"});
  EXPECT_EQ(k.class_of("Men"), 0);
  EXPECT_EQ(k.class_of("boxes"), 1);
  EXPECT_EQ(k.class_of("babies"), 2);
  EXPECT_FALSE(k.class_of("runs").has_value());
}

TEST(Tagger, KeepsHeadNounDropsDeterminers) {
  HeuristicTagger t;
  EXPECT_EQ(t.extract("the big dogs"), std::vector<std::string>{"dog"});
  const auto he = t.extract("he");
  EXPECT_EQ(he, std::vector<std::string>{"he"});
}

TEST(EncodeCaption, MaskAndTargets) {
  const auto classes = ObjectClassSet::from_names({"man"});
  std::vector<SegmentAnnotation> corpus = {segment("v", {"a", "man", "runs"}, {mention({1}, "man")})};
  const Vocabulary v = Vocabulary::build(corpus, 1, 20);
  const auto enc = encode_caption(corpus[0], v, classes);
  EXPECT_EQ(enc.groundable, (std::vector<bool>{false, true, false}));
  ASSERT_TRUE(enc.targets[1].has_value());
  EXPECT_EQ(enc.targets[1]->class_id, 0);
  EXPECT_EQ(enc.decoder_inputs().front(), Vocabulary::kBos);
  EXPECT_EQ(enc.decoder_targets().back(), Vocabulary::kEos);

  const auto none = encode_caption(segment("v", {"a", "man"}), v, classes);
  EXPECT_EQ(none.groundable, (std::vector<bool>{false, false}));
  const auto other = ObjectClassSet::from_names({"dog"});
  EXPECT_EQ(encode_caption(corpus[0], v, other).groundable, (std::vector<bool>{false, false, false}));
}

TEST(EncodeCaption, MentionsPastMaxLenDiscarded) {
  const auto classes = ObjectClassSet::from_names({"man"});
  std::vector<SegmentAnnotation> corpus = {segment("v", {"a", "b", "man"}, {mention({2}, "man")})};
  const Vocabulary v = Vocabulary::build(corpus, 1, 2);
  const auto enc = encode_caption(corpus[0], v, classes);
  EXPECT_EQ(enc.length(), 2);
  EXPECT_EQ(enc.groundable, (std::vector<bool>{false, false}));
}

TEST(Stats, HandArithmetic) {
  std::vector<SegmentAnnotation> corpus = {
      segment("a", {"man"}, {mention({0}, "man")}),
      segment("b", {"man", "and", "dog"}, {mention({0}, "man", 2), mention({2}, "dog")}),
      segment("c", {"nothing"})};
  const auto s = corpus_stats(corpus);
  EXPECT_EQ(s.segments, 3u);
  EXPECT_EQ(s.segments_with_mentions, 2u);
  EXPECT_EQ(s.boxes, 4u);
  EXPECT_DOUBLE_EQ(*s.boxes_per_segment_mean, 2.0);
  EXPECT_DOUBLE_EQ(*s.boxes_per_segment_std, 1.0);
  EXPECT_DOUBLE_EQ(*s.multi_instance_fraction, 1.0 / 3.0);
  EXPECT_FALSE(corpus_stats({}).boxes_per_segment_mean.has_value());
}

TEST(Importer, PublicReleaseLayout) {
  const char* raw = R"({"annotations":{"v_b":{"duration":30,"segments":{
    "1":{"tokens":["a","dog","runs"],"timestamps":[10,20],"process_bnd_box":[[1,1,5,5],[6,6,9,9]],
         "frame_ind":[3,3],"process_idx":[[1],[1]],"process_clss":[["dog"],["dog"]],"crowds":[0,0]},
    "0":{"tokens":["the","man"],"timestamps":[0,10],"process_bnd_box":[[0,0,2,2]],
         "frame_ind":[0],"process_idx":[[1]],"process_clss":[["man"]]}}},
    "v_a":{"segments":{"0":{"tokens":["x"],"timestamps":[0,1]}}}}})";
  std::istringstream in(raw);
  const auto c = import_annotations(in, ImporterConfig{});
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].video_id, "v_a");
  EXPECT_EQ(c[1].segment_index, 0);
  EXPECT_EQ(c[2].total_segments, 2);
  ASSERT_EQ(c[2].mentions.size(), 1u);
  EXPECT_EQ(c[2].mentions[0].boxes.size(), 2u);  // one multi-instance mention
  EXPECT_EQ(c[2].mentions[0].frame_index, 3);
  EXPECT_DOUBLE_EQ(c[2].start_s, 10);

  const auto dir = std::filesystem::temp_directory_path() / "gvd_test_import";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "split.json") << R"({"training":["v_b"],"validation":["v_a"]})";
  ImporterConfig cfg;
  cfg.split_file = (dir / "split.json").string();
  cfg.split_key = "training";
  std::istringstream in2(raw);
  EXPECT_EQ(import_annotations(in2, cfg).size(), 2u);

  std::istringstream broken("{\"annotations\":");
  EXPECT_THROW(import_annotations(broken, ImporterConfig{}), DataError);
}

TEST(Importer, ConfigRejectsUnknownKeys) {
  EXPECT_EQ(ImporterConfig::from_json({{"boxes_key", "bnd_box"}}).boxes_key, "bnd_box");
  EXPECT_THROW(ImporterConfig::from_json({{"box_key", "bnd_box"}}), ConfigError);
  EXPECT_THROW(ImporterConfig::from_json({{"boxes_key", 3}}), ConfigError);
  EXPECT_THROW(ImporterConfig::from_json(nlohmann::json::array()), ConfigError);
}
