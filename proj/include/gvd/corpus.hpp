#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gvd/regions.hpp"

namespace gvd {

struct EntityMention {
  std::string np_text;
  std::vector<int> token_span;  // strictly increasing caption indices
  int frame_index = 0;
  std::vector<BoundingBox> boxes;  // >1 means distinct instances of one NP
  bool is_group = false;
  std::vector<std::string> labels;
  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

struct SegmentAnnotation {
  std::string video_id;
  int segment_index = 0;
  int total_segments = 1;
  double start_s = 0, end_s = 0;
  std::vector<std::string> caption;
  std::vector<EntityMention> mentions;
  friend bool operator==(const SegmentAnnotation&, const SegmentAnnotation&) = default;
};

struct ParseReport {
  int dropped_mentions = 0;
  std::vector<std::string> warnings;
};

// Extracts object words (nouns/pronouns) from a noun phrase.
class LabelTagger {
 public:
  virtual ~LabelTagger() = default;
  virtual std::vector<std::string> extract(std::string_view np_text) const = 0;
};

// Stoplist + lemma heuristic: lowercases, drops determiners, adjectives and
// other function words, and keeps the head noun plus any pronouns.
class HeuristicTagger final : public LabelTagger {
 public:
  std::vector<std::string> extract(std::string_view np_text) const override;
};

std::string to_lower(std::string_view s);
// Lowercased singular form (men -> man, boxes -> box, babies -> baby).
std::string lemmatize(std::string_view word);

// ---- canonical JSON Lines ----

// Parses the canonical JSONL format. Mentions violating their invariants are
// dropped and recorded in `report`. Throws DataError naming the line for a
// malformed record or a duplicate (video_id, segment_index).
std::vector<SegmentAnnotation> parse_annotations(std::istream& in, ParseReport* report = nullptr,
                                                 const LabelTagger* tagger = nullptr);
std::vector<SegmentAnnotation> load_annotations(const std::string& path,
                                                ParseReport* report = nullptr);

nlohmann::ordered_json annotation_to_json(const SegmentAnnotation& a);
std::string serialize_annotation(const SegmentAnnotation& a);
void write_annotations(std::ostream& out, std::span<const SegmentAnnotation> corpus);
void save_annotations(const std::string& path, std::span<const SegmentAnnotation> corpus);

// Field mapping for importing a public release laid out as
//   {<root>: {<video>: {<segments>: {"<idx>": {...}}, <duration>: s}}}
// where each segment lists per-box arrays (boxes, frames, token indices,
// labels). Boxes sharing a token span become one multi-instance mention.
struct ImporterConfig {
  std::string root_key = "annotations";
  std::string segments_key = "segments";
  std::string tokens_key = "tokens";
  std::string boxes_key = "process_bnd_box";
  std::string frames_key = "frame_ind";
  std::string token_idx_key = "process_idx";
  std::string labels_key = "process_clss";
  std::string timestamps_key = "timestamps";
  std::string crowds_key = "crowds";
  std::string duration_key = "duration";
  // Optional: only videos listed in <split_file>[<split_key>] are imported.
  std::string split_file;
  std::string split_key;

  static ImporterConfig from_json(const nlohmann::json& j);
};

std::vector<SegmentAnnotation> import_annotations(std::istream& in, const ImporterConfig& config,
                                                  ParseReport* report = nullptr,
                                                  const LabelTagger* tagger = nullptr);

// ---- vocabulary and classes ----

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary();
  // Captions are lowercased and truncated to max_len before counting.
  static Vocabulary build(std::span<const SegmentAnnotation> corpus, int min_count, int max_len);

  int size() const { return static_cast<int>(tokens_.size()); }
  int max_caption_length() const { return max_len_; }
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(id); }
  bool contains(std::string_view token) const;
  // Truncated ids followed by EOS.
  std::vector<int> encode(std::span<const std::string> caption) const;
  // Drops specials; stops at EOS.
  std::vector<std::string> decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int max_len_ = 20;
};

class ObjectClassSet {
 public:
  // classes = {lemma : count over mention labels >= threshold}; mentions with
  // no labels fall back to the tagger. Order: frequency desc, then lexicographic.
  static ObjectClassSet derive(std::span<const SegmentAnnotation> train_val, int freq_threshold,
                               const LabelTagger& tagger);
  static ObjectClassSet from_names(std::vector<std::string> names);

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int k) const { return names_.at(k); }
  // Class of a word after lowercasing and lemmatization.
  std::optional<int> class_of(std::string_view word) const;
  std::optional<int> index_of(std::string_view class_name) const;

  nlohmann::json to_json() const;
  static ObjectClassSet from_json(const nlohmann::json& j);
  std::uint64_t hash() const;

 private:
  std::vector<std::string> names_;
  std::vector<long> counts_;
  std::unordered_map<std::string, int> index_;
};

struct CorpusPreset {
  int min_count;
  int max_len;
  int class_threshold;
};
inline constexpr CorpusPreset kActivityNetPreset{3, 20, 50};
inline constexpr CorpusPreset kFlickrPreset{5, 16, 100};

// ---- caption encoding ----

struct GroundTarget {
  int class_id = -1;
  int frame = 0;
  int mention = -1;
  std::vector<BoundingBox> boxes;
};

struct EncodedCaption {
  std::vector<int> tokens;  // w_1..w_T, truncated, no BOS/EOS
  std::vector<bool> groundable;
  std::vector<std::optional<GroundTarget>> targets;

  int length() const { return static_cast<int>(tokens.size()); }
  // BOS, w_1..w_T
  std::vector<int> decoder_inputs() const;
  // w_1..w_T, EOS
  std::vector<int> decoder_targets() const;
};

EncodedCaption encode_caption(const SegmentAnnotation& annotation, const Vocabulary& vocab,
                              const ObjectClassSet& classes);

// ---- statistics ----

struct CorpusStats {
  std::size_t segments = 0;
  std::size_t segments_with_mentions = 0;
  std::size_t mentions = 0;
  std::size_t boxes = 0;
  std::optional<double> boxes_per_segment_mean;
  std::optional<double> boxes_per_segment_std;  // population
  std::optional<double> labels_per_box_mean;
  std::optional<double> labels_per_box_std;
  std::optional<double> multi_instance_fraction;
  std::map<std::string, std::size_t> label_histogram;

  nlohmann::ordered_json to_json() const;
};

CorpusStats corpus_stats(std::span<const SegmentAnnotation> corpus);

}  // namespace gvd
