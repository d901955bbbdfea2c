#include "gvd/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gvd/errors.hpp"

namespace gvd {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::unordered_set<std::string>& pronouns() {
  static const std::unordered_set<std::string> s = {
      "he",      "she",     "they",   "it",      "him",      "them",     "we",
      "you",     "i",       "me",     "us",      "himself",  "herself",  "themselves",
      "itself",  "someone", "somebody", "everyone", "everybody", "anyone", "nobody",
      "one",     "ones"};
  return s;
}

// Determiners, possessives, numerals, prepositions and other function words.
const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> s = {
      "a",     "an",    "the",     "this",   "that",  "these", "those", "his",   "her",
      "their", "its",   "my",      "your",   "our",   "some",  "any",   "each",  "every",
      "another", "other", "several", "many", "few",   "both",  "all",   "no",    "two",
      "three", "four",  "five",    "six",    "seven", "eight", "nine",  "ten",   "first",
      "second", "third", "last",   "of",     "in",    "on",    "at",    "with",  "to",
      "from",  "by",    "for",     "into",   "onto",  "over",  "under", "near",  "behind",
      "and",   "or",    "'s",      "s",      "'",     "very",  "more",  "most",  "such",
      "what",  "which", "who",     "whose"};
  return s;
}

const std::unordered_set<std::string>& adjectives() {
  static const std::unordered_set<std::string> s = {
      "young", "old",   "little", "small",  "large",  "big",    "tall",   "short", "long",
      "white", "black", "red",    "blue",   "green",  "yellow", "brown",  "gray",  "grey",
      "pink",  "purple", "orange", "dark",  "light",  "new",    "same",   "different",
      "other", "blond", "blonde", "male",   "female", "elderly", "teenage", "huge", "tiny",
      "wooden", "shirtless", "happy", "main", "whole", "entire", "front", "back",  "top",
      "bottom", "left", "right",  "middle", "next",   "own",    "certain", "various",
      "colorful", "bright", "empty", "full", "open",  "closed", "wet",    "dry",   "hot",
      "cold"};
  return s;
}

bool adjective_like(const std::string& w) {
  if (adjectives().count(w)) return true;
  for (const char* suf : {"ful", "ous", "ive", "ish", "ic", "able", "ible"}) {
    const std::string s(suf);
    if (w.size() > s.size() + 2 && w.compare(w.size() - s.size(), s.size(), s) == 0) return true;
  }
  return false;
}

std::string strip_punct(std::string_view w) {
  std::string out;
  for (char c : w)
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '\'') out += c;
  while (!out.empty() && (out.back() == '\'' || out.back() == '-')) out.pop_back();
  return out;
}

bool ends_with(const std::string& s, std::string_view suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

[[noreturn]] void fail_line(int line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

void warn(ParseReport* report, const std::string& msg) {
  if (!report) return;
  ++report->dropped_mentions;
  report->warnings.push_back(msg);
}

// Validates and filters mentions in place; returns the segment.
void validate_mentions(SegmentAnnotation& seg, ParseReport* report, const LabelTagger& tagger,
                       const std::string& where) {
  std::vector<EntityMention> kept;
  std::vector<bool> used(seg.caption.size(), false);
  const int len = static_cast<int>(seg.caption.size());
  for (std::size_t mi = 0; mi < seg.mentions.size(); ++mi) {
    EntityMention m = std::move(seg.mentions[mi]);
    const std::string tag = where + " mention " + std::to_string(mi) + ": ";
    bool ok = !m.token_span.empty();
    for (std::size_t i = 0; ok && i < m.token_span.size(); ++i) {
      const int t = m.token_span[i];
      if (t < 0 || t >= len || (i > 0 && t <= m.token_span[i - 1])) ok = false;
    }
    if (!ok) {
      warn(report, tag + "invalid token span");
      continue;
    }
    if (m.boxes.empty() ||
        std::any_of(m.boxes.begin(), m.boxes.end(), [](const BoundingBox& b) { return !b.valid(); })) {
      warn(report, tag + "missing box or box with non-positive area");
      continue;
    }
    if (m.frame_index < 0) {
      warn(report, tag + "negative frame index");
      continue;
    }
    if (m.labels.empty()) m.labels = tagger.extract(m.np_text);
    if (m.labels.empty()) {
      warn(report, tag + "no object label could be extracted from '" + m.np_text + "'");
      continue;
    }
    if (std::any_of(m.token_span.begin(), m.token_span.end(), [&](int t) { return used[t]; })) {
      warn(report, tag + "shares a caption token with an earlier mention");
      continue;
    }
    for (int t : m.token_span) used[t] = true;
    kept.push_back(std::move(m));
  }
  seg.mentions = std::move(kept);
}

BoundingBox box_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw json::type_error::create(302, "box must have 4 coordinates", &j);
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string lemmatize(std::string_view word) {
  static const std::unordered_map<std::string, std::string> irregular = {
      {"men", "man"},       {"women", "woman"},   {"children", "child"}, {"feet", "foot"},
      {"teeth", "tooth"},   {"mice", "mouse"},    {"geese", "goose"},    {"knives", "knife"},
      {"wives", "wife"},    {"lives", "life"},    {"leaves", "leaf"},    {"wolves", "wolf"},
      {"shelves", "shelf"}, {"halves", "half"},   {"kids", "kid"},       {"people", "people"},
      {"this", "this"},     {"his", "his"},       {"is", "is"},          {"was", "was"},
      {"series", "series"}, {"species", "species"}, {"glasses", "glasses"}, {"pants", "pants"},
      {"shorts", "shorts"}, {"jeans", "jeans"},   {"clothes", "clothes"}, {"scissors", "scissors"}};
  std::string w = to_lower(word);
  if (auto it = irregular.find(w); it != irregular.end()) return it->second;
  if (w.size() <= 3) return w;
  if (ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
  for (std::string_view suf : {"sses", "shes", "ches", "xes", "zes"})
    if (ends_with(w, suf)) return w.substr(0, w.size() - 2);
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
  if (ends_with(w, "s")) return w.substr(0, w.size() - 1);
  return w;
}

std::vector<std::string> HeuristicTagger::extract(std::string_view np_text) const {
  std::vector<std::string> words;
  {
    std::istringstream ss{std::string(np_text)};
    std::string w;
    while (ss >> w) {
      // Split on commas attached to words.
      std::string cur;
      for (char c : w) {
        if (c == ',') {
          if (!cur.empty()) words.push_back(to_lower(strip_punct(cur)));
          words.emplace_back(",");
          cur.clear();
        } else {
          cur += c;
        }
      }
      if (!cur.empty()) words.push_back(to_lower(strip_punct(cur)));
    }
  }
  std::vector<std::string> labels;
  auto add = [&](const std::string& w) {
    const std::string l = lemmatize(w);
    if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
  };
  // Head noun of each conjunct: last content word before a preposition.
  std::string head;
  bool in_pp = false;
  auto flush = [&] {
    if (!head.empty()) add(head);
    head.clear();
    in_pp = false;
  };
  static const std::unordered_set<std::string> preps = {"of", "in", "on", "at", "with", "to",
                                                        "from", "by", "for", "into", "onto",
                                                        "over", "under", "near", "behind"};
  for (const auto& w : words) {
    if (w.empty()) continue;
    if (w == "and" || w == "or" || w == ",") {
      flush();
      continue;
    }
    if (pronouns().count(w)) {
      add(w);
      continue;
    }
    if (preps.count(w)) {
      in_pp = true;
      continue;
    }
    if (in_pp || stopwords().count(w) || adjective_like(w)) continue;
    if (std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      continue;
    head = w;
  }
  flush();
  return labels;
}

// ---- canonical format ----

std::vector<SegmentAnnotation> parse_annotations(std::istream& in, ParseReport* report,
                                                 const LabelTagger* tagger) {
  HeuristicTagger fallback;
  const LabelTagger& tg = tagger ? *tagger : fallback;
  std::vector<SegmentAnnotation> out;
  std::set<std::pair<std::string, int>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
      continue;
    SegmentAnnotation seg;
    try {
      const json j = json::parse(line);
      seg.video_id = j.at("video_id").get<std::string>();
      seg.segment_index = j.at("segment_index").get<int>();
      seg.total_segments = j.at("total_segments").get<int>();
      seg.start_s = j.at("start_s").get<double>();
      seg.end_s = j.at("end_s").get<double>();
      seg.caption = j.at("caption").get<std::vector<std::string>>();
      for (const auto& jm : j.at("mentions")) {
        EntityMention m;
        m.np_text = jm.at("np").get<std::string>();
        m.token_span = jm.at("tokens").get<std::vector<int>>();
        m.frame_index = jm.at("frame").get<int>();
        for (const auto& jb : jm.at("boxes")) m.boxes.push_back(box_from_json(jb));
        m.is_group = jm.value("group", false);
        if (jm.contains("labels")) m.labels = jm.at("labels").get<std::vector<std::string>>();
        seg.mentions.push_back(std::move(m));
      }
    } catch (const json::exception& e) {
      fail_line(lineno, std::string("malformed record: ") + e.what());
    }
    if (seg.total_segments < 1 || seg.segment_index < 0 || seg.segment_index >= seg.total_segments)
      fail_line(lineno, "segment_index must lie in [0, total_segments)");
    if (!(seg.start_s < seg.end_s)) fail_line(lineno, "start_s must be < end_s");
    if (!seen.emplace(seg.video_id, seg.segment_index).second)
      fail_line(lineno, "duplicate segment (" + seg.video_id + ", " +
                            std::to_string(seg.segment_index) + ")");
    validate_mentions(seg, report, tg, "line " + std::to_string(lineno));
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<SegmentAnnotation> load_annotations(const std::string& path, ParseReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return parse_annotations(in, report);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

ordered_json annotation_to_json(const SegmentAnnotation& a) {
  ordered_json j;
  j["video_id"] = a.video_id;
  j["segment_index"] = a.segment_index;
  j["total_segments"] = a.total_segments;
  j["start_s"] = a.start_s;
  j["end_s"] = a.end_s;
  j["caption"] = a.caption;
  ordered_json ms = ordered_json::array();
  for (const auto& m : a.mentions) {
    ordered_json jm;
    jm["np"] = m.np_text;
    jm["tokens"] = m.token_span;
    jm["frame"] = m.frame_index;
    ordered_json boxes = ordered_json::array();
    for (const auto& b : m.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    jm["boxes"] = boxes;
    jm["group"] = m.is_group;
    jm["labels"] = m.labels;
    ms.push_back(jm);
  }
  j["mentions"] = ms;
  return j;
}

std::string serialize_annotation(const SegmentAnnotation& a) { return annotation_to_json(a).dump(); }

void write_annotations(std::ostream& out, std::span<const SegmentAnnotation> corpus) {
  for (const auto& a : corpus) out << serialize_annotation(a) << '\n';
}

void save_annotations(const std::string& path, std::span<const SegmentAnnotation> corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_annotations(out, corpus);
}

// ---- importer ----

ImporterConfig ImporterConfig::from_json(const json& j) {
  static const std::set<std::string> kKeys = {
      "root_key", "segments_key", "tokens_key", "boxes_key", "frames_key", "token_idx_key",
      "labels_key", "timestamps_key", "crowds_key", "duration_key", "split_file", "split_key"};
  if (!j.is_object()) throw ConfigError("importer config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) throw ConfigError("importer config: unknown key '" + k + "'");
  ImporterConfig c;
  auto opt = [&](const char* key, std::string& field) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_string()) throw ConfigError(std::string("importer config: ") + key + " must be a string");
    field = j.at(key).get<std::string>();
  };
  opt("root_key", c.root_key);
  opt("segments_key", c.segments_key);
  opt("tokens_key", c.tokens_key);
  opt("boxes_key", c.boxes_key);
  opt("frames_key", c.frames_key);
  opt("token_idx_key", c.token_idx_key);
  opt("labels_key", c.labels_key);
  opt("timestamps_key", c.timestamps_key);
  opt("crowds_key", c.crowds_key);
  opt("duration_key", c.duration_key);
  opt("split_file", c.split_file);
  opt("split_key", c.split_key);
  return c;
}

std::vector<SegmentAnnotation> import_annotations(std::istream& in, const ImporterConfig& cfg,
                                                  ParseReport* report, const LabelTagger* tagger) {
  HeuristicTagger fallback;
  const LabelTagger& tg = tagger ? *tagger : fallback;
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string("importer: malformed JSON at byte ") + std::to_string(e.id) +
                    ": " + e.what());
  }
  std::optional<std::unordered_set<std::string>> allowed;
  if (!cfg.split_file.empty()) {
    std::ifstream sf(cfg.split_file);
    if (!sf) throw DataError("cannot open split file " + cfg.split_file);
    const json split = json::parse(sf);
    const json& ids = cfg.split_key.empty() ? split : split.at(cfg.split_key);
    allowed.emplace();
    for (const auto& v : ids) allowed->insert(v.get<std::string>());
  }
  const json* videos = &root;
  if (!cfg.root_key.empty()) {
    if (!root.contains(cfg.root_key)) throw DataError("importer: missing root key '" + cfg.root_key + "'");
    videos = &root.at(cfg.root_key);
  }
  std::vector<std::string> vids;
  for (auto it = videos->begin(); it != videos->end(); ++it) vids.push_back(it.key());
  std::sort(vids.begin(), vids.end());

  std::vector<SegmentAnnotation> out;
  for (const auto& vid : vids) {
    if (allowed && !allowed->count(vid)) continue;
    const json& v = videos->at(vid);
    if (!v.contains(cfg.segments_key)) continue;
    const json& segs = v.at(cfg.segments_key);
    std::vector<std::pair<int, const json*>> ordered;
    for (auto it = segs.begin(); it != segs.end(); ++it) {
      try {
        ordered.emplace_back(std::stoi(it.key()), &it.value());
      } catch (const std::exception&) {
        throw DataError("importer: " + vid + ": segment key '" + it.key() + "' is not an index");
      }
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    const int total = static_cast<int>(ordered.size());
    for (const auto& [idx, sp] : ordered) {
      const json& s = *sp;
      const std::string where = "importer: " + vid + " segment " + std::to_string(idx);
      SegmentAnnotation seg;
      seg.video_id = vid;
      seg.segment_index = idx;
      seg.total_segments = std::max(total, idx + 1);
      try {
        seg.caption = s.at(cfg.tokens_key).get<std::vector<std::string>>();
        if (s.contains(cfg.timestamps_key)) {
          const auto ts = s.at(cfg.timestamps_key).get<std::vector<double>>();
          if (ts.size() != 2) throw DataError(where + ": timestamps must have two values");
          seg.start_s = ts[0];
          seg.end_s = ts[1];
        } else {
          seg.start_s = idx;
          seg.end_s = idx + 1;
        }
        if (!(seg.start_s < seg.end_s)) seg.end_s = seg.start_s + 1e-3;
        std::vector<BoundingBox> boxes;
        if (s.contains(cfg.boxes_key))
          for (const auto& jb : s.at(cfg.boxes_key)) boxes.push_back(box_from_json(jb));
        const auto frames = s.contains(cfg.frames_key) ? s.at(cfg.frames_key).get<std::vector<int>>()
                                                       : std::vector<int>(boxes.size(), 0);
        const auto idxs = s.contains(cfg.token_idx_key)
                              ? s.at(cfg.token_idx_key).get<std::vector<std::vector<int>>>()
                              : std::vector<std::vector<int>>(boxes.size());
        const auto labels = s.contains(cfg.labels_key)
                                ? s.at(cfg.labels_key).get<std::vector<std::vector<std::string>>>()
                                : std::vector<std::vector<std::string>>(boxes.size());
        std::vector<bool> crowds(boxes.size(), false);
        if (s.contains(cfg.crowds_key)) {
          const auto c = s.at(cfg.crowds_key).get<std::vector<int>>();
          for (std::size_t i = 0; i < c.size() && i < crowds.size(); ++i) crowds[i] = c[i] != 0;
        }
        if (frames.size() != boxes.size() || idxs.size() != boxes.size() ||
            labels.size() != boxes.size())
          throw DataError(where + ": per-box arrays have different lengths");
        // Group boxes that annotate the same token span on the same frame.
        std::map<std::pair<std::vector<int>, int>, std::size_t> groups;
        for (std::size_t b = 0; b < boxes.size(); ++b) {
          const auto key = std::make_pair(idxs[b], frames[b]);
          auto it = groups.find(key);
          if (it == groups.end()) {
            EntityMention m;
            m.token_span = idxs[b];
            m.frame_index = frames[b];
            std::string np;
            for (int t : idxs[b])
              if (t >= 0 && t < static_cast<int>(seg.caption.size()))
                np += (np.empty() ? "" : " ") + seg.caption[t];
            m.np_text = np;
            m.labels = labels[b];
            groups.emplace(key, seg.mentions.size());
            seg.mentions.push_back(std::move(m));
            it = groups.find(key);
          }
          EntityMention& m = seg.mentions[it->second];
          m.boxes.push_back(boxes[b]);
          m.is_group = m.is_group || crowds[b];
        }
      } catch (const json::exception& e) {
        throw DataError(where + ": " + e.what());
      }
      validate_mentions(seg, report, tg, where);
      out.push_back(std::move(seg));
    }
  }
  return out;
}

// ---- vocabulary ----

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 0; i < kNumSpecial; ++i) index_.emplace(tokens_[i], i);
}

Vocabulary Vocabulary::build(std::span<const SegmentAnnotation> corpus, int min_count, int max_len) {
  if (min_count < 1 || max_len < 1) throw ConfigError("vocabulary needs min_count >= 1 and max_len >= 1");
  std::unordered_map<std::string, long> counts;
  for (const auto& seg : corpus) {
    const int n = std::min<int>(max_len, static_cast<int>(seg.caption.size()));
    for (int t = 0; t < n; ++t) ++counts[to_lower(seg.caption[t])];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [w, c] : counts)
    if (c >= min_count) kept.emplace_back(w, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  v.max_len_ = max_len;
  for (auto& [w, c] : kept) {
    if (v.index_.count(w)) continue;
    v.index_.emplace(w, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(w);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(to_lower(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(to_lower(token)) > 0; }

std::vector<int> Vocabulary::encode(std::span<const std::string> caption) const {
  const int n = std::min<int>(max_len_, static_cast<int>(caption.size()));
  std::vector<int> ids;
  ids.reserve(n + 1);
  for (int t = 0; t < n; ++t) ids.push_back(id(caption[t]));
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(tokens_.at(id));
  }
  return out;
}

json Vocabulary::to_json() const {
  return json{{"max_len", max_len_},
              {"tokens", std::vector<std::string>(tokens_.begin() + kNumSpecial, tokens_.end())}};
}

Vocabulary Vocabulary::from_json(const json& j) {
  Vocabulary v;
  v.max_len_ = j.at("max_len").get<int>();
  for (const auto& w : j.at("tokens").get<std::vector<std::string>>()) {
    if (v.index_.count(w)) throw DataError("vocabulary: duplicate token '" + w + "'");
    v.index_.emplace(w, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(w);
  }
  return v;
}

std::uint64_t Vocabulary::hash() const { return fnv1a(to_json().dump()); }

// ---- object classes ----

ObjectClassSet ObjectClassSet::derive(std::span<const SegmentAnnotation> train_val,
                                      int freq_threshold, const LabelTagger& tagger) {
  if (freq_threshold < 1) throw ConfigError("class frequency threshold must be >= 1");
  std::unordered_map<std::string, long> counts;
  for (const auto& seg : train_val)
    for (const auto& m : seg.mentions) {
      const auto labels = m.labels.empty() ? tagger.extract(m.np_text) : m.labels;
      for (const auto& l : labels) ++counts[lemmatize(l)];
    }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [w, c] : counts)
    if (c >= freq_threshold && !w.empty()) kept.emplace_back(w, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  ObjectClassSet s;
  for (auto& [w, c] : kept) {
    s.index_.emplace(w, static_cast<int>(s.names_.size()));
    s.names_.push_back(w);
    s.counts_.push_back(c);
  }
  return s;
}

ObjectClassSet ObjectClassSet::from_names(std::vector<std::string> names) {
  ObjectClassSet s;
  for (auto& n : names) {
    if (s.index_.count(n)) throw DataError("duplicate class name '" + n + "'");
    s.index_.emplace(n, static_cast<int>(s.names_.size()));
    s.names_.push_back(std::move(n));
    s.counts_.push_back(0);
  }
  return s;
}

std::optional<int> ObjectClassSet::class_of(std::string_view word) const {
  return index_of(lemmatize(word));
}

std::optional<int> ObjectClassSet::index_of(std::string_view class_name) const {
  const auto it = index_.find(std::string(class_name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

json ObjectClassSet::to_json() const {
  json classes = json::array();
  for (std::size_t k = 0; k < names_.size(); ++k)
    classes.push_back({{"name", names_[k]}, {"count", counts_[k]}});
  return json{{"classes", classes}};
}

ObjectClassSet ObjectClassSet::from_json(const json& j) {
  ObjectClassSet s;
  for (const auto& c : j.at("classes")) {
    const auto name = c.at("name").get<std::string>();
    if (s.index_.count(name)) throw DataError("duplicate class name '" + name + "'");
    s.index_.emplace(name, static_cast<int>(s.names_.size()));
    s.names_.push_back(name);
    s.counts_.push_back(c.value("count", 0L));
  }
  return s;
}

std::uint64_t ObjectClassSet::hash() const { return fnv1a(json(names_).dump()); }

// ---- caption encoding ----

std::vector<int> EncodedCaption::decoder_inputs() const {
  std::vector<int> v{Vocabulary::kBos};
  v.insert(v.end(), tokens.begin(), tokens.end());
  return v;
}

std::vector<int> EncodedCaption::decoder_targets() const {
  std::vector<int> v = tokens;
  v.push_back(Vocabulary::kEos);
  return v;
}

EncodedCaption encode_caption(const SegmentAnnotation& annotation, const Vocabulary& vocab,
                              const ObjectClassSet& classes) {
  EncodedCaption enc;
  auto ids = vocab.encode(annotation.caption);
  ids.pop_back();  // EOS
  enc.tokens = std::move(ids);
  const int len = enc.length();
  enc.groundable.assign(len, false);
  enc.targets.assign(len, std::nullopt);
  for (int mi = 0; mi < static_cast<int>(annotation.mentions.size()); ++mi) {
    const auto& m = annotation.mentions[mi];
    if (m.boxes.empty()) continue;
    if (std::any_of(m.token_span.begin(), m.token_span.end(), [&](int t) { return t >= len; }))
      continue;
    for (int t : m.token_span) {
      const auto cls = classes.class_of(annotation.caption[t]);
      if (!cls) continue;
      enc.groundable[t] = true;
      enc.targets[t] = GroundTarget{*cls, m.frame_index, mi, m.boxes};
    }
  }
  return enc;
}

// ---- statistics ----

ordered_json CorpusStats::to_json() const {
  auto opt = [](const std::optional<double>& v) -> ordered_json {
    return v ? ordered_json(*v) : ordered_json(nullptr);
  };
  ordered_json j;
  j["segments"] = segments;
  j["segments_with_mentions"] = segments_with_mentions;
  j["mentions"] = mentions;
  j["boxes"] = boxes;
  j["boxes_per_segment_mean"] = opt(boxes_per_segment_mean);
  j["boxes_per_segment_std"] = opt(boxes_per_segment_std);
  j["labels_per_box_mean"] = opt(labels_per_box_mean);
  j["labels_per_box_std"] = opt(labels_per_box_std);
  j["multi_instance_fraction"] = opt(multi_instance_fraction);
  j["label_histogram"] = label_histogram;
  return j;
}

CorpusStats corpus_stats(std::span<const SegmentAnnotation> corpus) {
  CorpusStats s;
  s.segments = corpus.size();
  std::vector<double> per_segment;
  std::vector<double> labels_per_box;
  std::size_t multi = 0;
  for (const auto& seg : corpus) {
    if (seg.mentions.empty()) continue;
    ++s.segments_with_mentions;
    std::size_t boxes = 0;
    for (const auto& m : seg.mentions) {
      ++s.mentions;
      boxes += m.boxes.size();
      if (m.is_group || m.boxes.size() > 1) ++multi;
      for (std::size_t b = 0; b < m.boxes.size(); ++b)
        labels_per_box.push_back(static_cast<double>(m.labels.size()));
      for (const auto& l : m.labels) ++s.label_histogram[lemmatize(l)];
    }
    s.boxes += boxes;
    per_segment.push_back(static_cast<double>(boxes));
  }
  auto mean_std = [](const std::vector<double>& v) {
    double mu = 0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mu) * (x - mu);
    return std::make_pair(mu, std::sqrt(var / static_cast<double>(v.size())));
  };
  if (!per_segment.empty()) {
    const auto [mu, sd] = mean_std(per_segment);
    s.boxes_per_segment_mean = mu;
    s.boxes_per_segment_std = sd;
  }
  if (!labels_per_box.empty()) {
    const auto [mu, sd] = mean_std(labels_per_box);
    s.labels_per_box_mean = mu;
    s.labels_per_box_std = sd;
  }
  if (s.mentions > 0)
    s.multi_instance_fraction = static_cast<double>(multi) / static_cast<double>(s.mentions);
  return s;
}

}  // namespace gvd
