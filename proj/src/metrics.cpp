#include "gvd/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace gvd {

MacroScore macro_average(std::map<int, Tally> per_class, const char* what) {
  MacroScore s;
  s.per_class = std::move(per_class);
  int classes = 0;
  double sum = 0;
  for (const auto& [c, t] : s.per_class) {
    if (t.total == 0) continue;
    sum += static_cast<double>(t.correct) / t.total;
    ++classes;
  }
  if (classes == 0) {
    s.warning = std::string(what) + ": nothing to score";
    return s;
  }
  s.percent = 100.0 * sum / classes;
  return s;
}

int argmax_over(std::span<const double> weights, std::span<const int> candidates,
                bool candidate_indexed) {
  int best = -1;
  double best_w = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double w = weights[candidate_indexed ? k : static_cast<std::size_t>(candidates[k])];
    if (best < 0 || w > best_w) {
      best = candidates[k];
      best_w = w;
    }
  }
  return best;
}

LocalizationRecord make_record(const RegionSet& regions, int class_id, int predicted,
                               std::span<const BoundingBox> boxes) {
  LocalizationRecord r;
  r.class_id = class_id;
  r.predicted = predicted;
  if (predicted >= 0)
    for (const auto& b : boxes) r.iou = std::max(r.iou, iou(regions.box(predicted), b));
  r.correct = predicted >= 0 && r.iou > 0.5;
  return r;
}

MacroScore gt_localization_accuracy(std::span<const LocalizationRecord> records) {
  std::map<int, Tally> per;
  for (const auto& r : records) {
    auto& t = per[r.class_id];
    ++t.total;
    t.correct += r.correct ? 1 : 0;
  }
  return macro_average(std::move(per), "localization accuracy");
}

std::map<int, F1Tally> f1_counts(std::span<const F1Segment> segments) {
  std::map<int, F1Tally> counts;
  for (const auto& seg : segments) {
    std::map<int, const GeneratedWord*> gen;  // first instance per class
    for (const auto& w : seg.generated)
      if (w.class_id >= 0) gen.emplace(w.class_id, &w);
    std::map<int, const ReferenceObject*> ref;
    for (const auto& r : seg.references) ref.emplace(r.class_id, &r);
    for (const auto& [c, w] : gen) ++counts[c].a;
    for (const auto& [c, r] : ref) {
      F1Tally& t = counts[c];
      ++t.b;
      const auto g = gen.find(c);
      if (g == gen.end()) continue;
      ++t.c;
      ++t.d;
      const auto cand = seg.regions->frame_regions(r->frame);
      const int pred = argmax_over(g->second->alpha, cand, false);
      if (make_record(*seg.regions, c, pred, r->boxes).correct) ++t.e;
    }
  }
  return counts;
}

double harmonic_f1(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

PrecisionRecall generation_f1(const std::map<int, F1Tally>& counts, F1Mode mode) {
  auto ratio = [](int num, int den) { return den > 0 ? static_cast<double>(num) / den : 0.0; };
  double p = 0, r = 0;
  int classes = 0;
  for (const auto& [c, t] : counts) {
    if (t.b == 0) continue;
    ++classes;
    if (mode == F1Mode::kAll) {
      p += ratio(t.e, t.a);
      r += ratio(t.e, t.b);
    } else {
      p += ratio(t.e, t.c);
      r += ratio(t.e, t.d);
    }
  }
  PrecisionRecall out;
  if (classes == 0) return out;
  out.precision = 100.0 * p / classes;
  out.recall = 100.0 * r / classes;
  out.f1 = harmonic_f1(out.precision, out.recall);
  return out;
}

PrecisionRecall generation_f1(std::span<const F1Segment> segments, F1Mode mode) {
  return generation_f1(f1_counts(segments), mode);
}

MacroScore classification_accuracy(std::span<const Matrix> similarities,
                                   std::span<const PositiveMatch> matches) {
  if (similarities.size() != matches.size())
    throw std::invalid_argument("classification_accuracy: size mismatch");
  std::map<int, Tally> per;
  for (std::size_t s = 0; s < matches.size(); ++s) {
    const Matrix& ms = similarities[s];
    for (int i : matches[s].positive_indices()) {
      int best = 0;
      for (int k = 1; k < ms.rows; ++k)
        if (ms(k, i) > ms(best, i)) best = k;
      auto& t = per[matches[s].matched_class[i]];
      ++t.total;
      t.correct += best == matches[s].matched_class[i] ? 1 : 0;
    }
  }
  return macro_average(std::move(per), "classification accuracy");
}

MacroScore localization_upper_bound(std::span<const CoverageItem> items) {
  std::map<int, Tally> per;
  for (const auto& item : items) {
    for (const auto& obj : item.objects) {
      bool covered = false;
      for (int i : item.regions->frame_regions(obj.frame))
        for (const auto& b : obj.boxes) covered = covered || iou(item.regions->box(i), b) > 0.5;
      auto& t = per[obj.class_id];
      ++t.total;
      t.correct += covered ? 1 : 0;
    }
  }
  return macro_average(std::move(per), "localization upper bound");
}

// ---- language metrics ----

namespace {

using Ngram = std::vector<std::string>;

struct NgramHash {
  std::size_t operator()(const Ngram& g) const {
    std::size_t h = g.size();
    for (const auto& w : g) h = h * 1000003u ^ std::hash<std::string>{}(w);
    return h;
  }
};

using NgramCounts = std::unordered_map<Ngram, int, NgramHash>;

std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

NgramCounts ngram_counts(const std::vector<std::string>& words, int n) {
  NgramCounts counts;
  for (int k = 1; k <= n; ++k)
    for (int i = 0; i + k <= static_cast<int>(words.size()); ++i)
      ++counts[Ngram(words.begin() + i, words.begin() + i + k)];
  return counts;
}

void check_maps(const CaptionMap& cand, const CaptionMap& refs) {
  if (cand.size() != refs.size())
    throw std::invalid_argument("candidate and reference id sets differ");
  for (const auto& [id, c] : cand) {
    const auto r = refs.find(id);
    if (r == refs.end()) throw std::invalid_argument("no references for id " + id);
    if (c.size() != 1) throw std::invalid_argument("expected one candidate for id " + id);
    if (r->second.empty()) throw std::invalid_argument("empty reference list for id " + id);
  }
}

}  // namespace

double bleu(const CaptionMap& candidates, const CaptionMap& references, int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu order must be in [1, 4]");
  check_maps(candidates, references);
  constexpr int kMax = 4;
  constexpr double kTiny = 1e-15, kSmall = 1e-9;
  long long testlen = 0, reflen = 0;
  std::vector<long long> guess(kMax, 0), correct(kMax, 0);
  for (const auto& [id, cand] : candidates) {
    NgramCounts maxcounts;
    std::vector<int> lens;
    for (const auto& ref : references.at(id)) {
      const auto words = split(ref);
      lens.push_back(static_cast<int>(words.size()));
      for (const auto& [g, c] : ngram_counts(words, kMax)) {
        int& m = maxcounts[g];
        m = std::max(m, c);
      }
    }
    const auto words = split(cand[0]);
    const int tl = static_cast<int>(words.size());
    // closest reference length, shorter on ties
    int best = lens[0];
    for (int l : lens)
      if (std::abs(l - tl) < std::abs(best - tl) || (std::abs(l - tl) == std::abs(best - tl) && l < best))
        best = l;
    testlen += tl;
    reflen += best;
    for (int k = 1; k <= kMax; ++k) guess[k - 1] += std::max(0, tl - k + 1);
    for (const auto& [g, c] : ngram_counts(words, kMax)) {
      const auto it = maxcounts.find(g);
      correct[g.size() - 1] += std::min(it == maxcounts.end() ? 0 : it->second, c);
    }
  }
  double prod = 1.0;
  for (int k = 0; k < n; ++k)
    prod *= (static_cast<double>(correct[k]) + kTiny) / (static_cast<double>(guess[k]) + kSmall);
  double score = std::pow(prod, 1.0 / n);
  const double ratio = (static_cast<double>(testlen) + kTiny) / (static_cast<double>(reflen) + kSmall);
  if (ratio < 1) score *= std::exp(1.0 - 1.0 / ratio);
  return score;
}

double cider(const CaptionMap& candidates, const CaptionMap& references,
             std::vector<double>* per_segment, std::optional<std::string>* warning) {
  check_maps(candidates, references);
  constexpr int kN = 4;
  constexpr double kSigma = 6.0;
  if (warning) warning->reset();
  if (references.size() < 2 && warning) *warning = "cider: fewer than two segments, idf degenerate";

  std::unordered_map<Ngram, double, NgramHash> df;
  std::map<std::string, std::vector<NgramCounts>> ref_counts;
  for (const auto& [id, refs] : references) {
    if (!candidates.count(id)) continue;
    auto& rc = ref_counts[id];
    std::set<Ngram> seen;
    for (const auto& r : refs) {
      rc.push_back(ngram_counts(split(r), kN));
      for (const auto& [g, c] : rc.back()) seen.insert(g);
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double ref_len = std::log(static_cast<double>(ref_counts.size()));

  struct Vec {
    std::array<std::unordered_map<Ngram, double, NgramHash>, kN> v;
    std::array<double, kN> norm{};
    int length = 0;
  };
  auto to_vec = [&](const NgramCounts& counts) {
    Vec out;
    for (const auto& [g, tf] : counts) {
      const auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const int k = static_cast<int>(g.size()) - 1;
      const double w = tf * (ref_len - d);
      out.v[k][g] = w;
      out.norm[k] += w * w;
      if (k == 1) out.length += tf;  // bigram count, as in the reference scorer
    }
    for (double& x : out.norm) x = std::sqrt(x);
    return out;
  };

  double total = 0;
  if (per_segment) per_segment->clear();
  for (const auto& [id, cand] : candidates) {
    const Vec hyp = to_vec(ngram_counts(split(cand[0]), kN));
    std::array<double, kN> score{};
    const auto& rcs = ref_counts.at(id);
    for (const auto& rc : rcs) {
      const Vec ref = to_vec(rc);
      const double delta = static_cast<double>(hyp.length - ref.length);
      for (int k = 0; k < kN; ++k) {
        double val = 0;
        for (const auto& [g, w] : hyp.v[k]) {
          const auto it = ref.v[k].find(g);
          const double rw = it == ref.v[k].end() ? 0.0 : it->second;
          val += std::min(w, rw) * rw;
        }
        if (hyp.norm[k] != 0 && ref.norm[k] != 0) val /= hyp.norm[k] * ref.norm[k];
        val *= std::exp(-(delta * delta) / (2 * kSigma * kSigma));
        score[k] += val;
      }
    }
    double avg = 0;
    for (double s : score) avg += s;
    avg /= kN;
    avg /= static_cast<double>(rcs.size());
    avg *= 10.0;
    if (per_segment) per_segment->push_back(avg);
    total += avg;
  }
  return candidates.empty() ? 0.0 : total / static_cast<double>(candidates.size());
}

// ---- report ----

namespace {

std::string class_label(const std::vector<std::string>& names, int c) {
  return c >= 0 && c < static_cast<int>(names.size()) ? names[c] : std::to_string(c);
}

nlohmann::ordered_json tallies_json(const MacroScore& s, const std::vector<std::string>& names) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [c, t] : s.per_class)
    j[class_label(names, c)] = {{"correct", t.correct},
                                {"total", t.total},
                                {"percent", t.total ? 100.0 * t.correct / t.total : 0.0}};
  return j;
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << v;
  return o.str();
}

}  // namespace

nlohmann::ordered_json MetricReport::to_json(bool per_class) const {
  nlohmann::ordered_json j;
  auto macro = [&](const char* key, const std::optional<MacroScore>& s) {
    if (!s) return;
    j[key] = s->percent;
    if (per_class) j["per_class"][key] = tallies_json(*s, class_names);
  };
  macro("attn", attention);
  macro("grd", grounding);
  if (f1_all) j["f1_all"] = {{"precision", f1_all->precision}, {"recall", f1_all->recall}, {"f1", f1_all->f1}};
  if (f1_loc) j["f1_loc"] = {{"precision", f1_loc->precision}, {"recall", f1_loc->recall}, {"f1", f1_loc->f1}};
  macro("cls", classification);
  macro("upper_bound", upper_bound);
  if (bleu1) j["bleu1"] = *bleu1;
  if (bleu4) j["bleu4"] = *bleu4;
  if (cider) j["cider"] = *cider;
  if (bleu1 || cider) {
    j["meteor"] = "n/a";
    j["spice"] = "n/a";
  }
  if (!warnings.empty()) j["warnings"] = warnings;
  return j;
}

std::string MetricReport::to_table(bool per_class) const {
  std::vector<std::pair<std::string, std::string>> rows;
  auto add = [&](const std::string& k, const std::string& v) { rows.emplace_back(k, v); };
  if (bleu1) add("Bleu@1", fmt(100.0 * *bleu1));
  if (bleu4) add("Bleu@4", fmt(100.0 * *bleu4));
  if (bleu1 || cider) add("METEOR", "n/a");
  if (cider) add("CIDEr", fmt(100.0 * *cider));
  if (bleu1 || cider) add("SPICE", "n/a");
  if (attention) add("Attn.", fmt(attention->percent));
  if (grounding) add("Grd.", fmt(grounding->percent));
  if (f1_all) add("F1_all", fmt(f1_all->f1) + "  (P " + fmt(f1_all->precision) + ", R " + fmt(f1_all->recall) + ")");
  if (f1_loc) add("F1_loc", fmt(f1_loc->f1) + "  (P " + fmt(f1_loc->precision) + ", R " + fmt(f1_loc->recall) + ")");
  if (classification) add("Cls.", fmt(classification->percent));
  if (upper_bound) add("Upper bound", fmt(upper_bound->percent));
  std::size_t w = 0;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  std::ostringstream out;
  for (const auto& [k, v] : rows) out << std::left << std::setw(static_cast<int>(w) + 2) << k << v << "\n";
  if (per_class) {
    auto block = [&](const char* title, const std::optional<MacroScore>& s) {
      if (!s || s->per_class.empty()) return;
      out << "\n" << title << " per class\n";
      std::size_t cw = 5;
      for (const auto& [c, t] : s->per_class) cw = std::max(cw, class_label(class_names, c).size());
      out << std::left << std::setw(static_cast<int>(cw) + 2) << "class" << std::right << std::setw(8)
          << "correct" << std::setw(8) << "total" << std::setw(9) << "%" << "\n";
      for (const auto& [c, t] : s->per_class)
        out << std::left << std::setw(static_cast<int>(cw) + 2) << class_label(class_names, c)
            << std::right << std::setw(8) << t.correct << std::setw(8) << t.total << std::setw(9)
            << fmt(t.total ? 100.0 * t.correct / t.total : 0.0) << "\n";
    };
    block("Attn.", attention);
    block("Grd.", grounding);
    block("Cls.", classification);
    block("Upper bound", upper_bound);
  }
  for (const auto& w2 : warnings) out << "warning: " << w2 << "\n";
  return out.str();
}

}  // namespace gvd
