#pragma once

// Grounding, classification and language metrics. Localization scores are
// macro-averaged over object classes and reported as percentages.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gvd/regions.hpp"

namespace gvd {

struct Tally {
  int correct = 0;
  int total = 0;
};

struct MacroScore {
  double percent = 0;
  std::map<int, Tally> per_class;
  std::optional<std::string> warning;
};

// Mean over classes of correct/total, in percent. Empty -> 0 with a warning.
MacroScore macro_average(std::map<int, Tally> per_class, const char* what);

struct LocalizationRecord {
  int class_id = -1;
  int predicted = -1;  // flattened region index, -1 if the frame has no regions
  double iou = 0;
  bool correct = false;
};

// Argmax of `weights` over `candidates` (first on ties); weights may be
// indexed either by flattened region (size N) or by candidate position.
int argmax_over(std::span<const double> weights, std::span<const int> candidates,
                bool candidate_indexed);
// Max IoU between region `i` and any of `boxes`; strictly above 0.5 is correct.
LocalizationRecord make_record(const RegionSet& regions, int class_id, int predicted,
                               std::span<const BoundingBox> boxes);

MacroScore gt_localization_accuracy(std::span<const LocalizationRecord> records);

// One annotated object in a reference sentence (first instance of its class).
struct ReferenceObject {
  int class_id = -1;
  int frame = 0;
  std::vector<BoundingBox> boxes;
};

struct GeneratedWord {
  int class_id = -1;  // -1 for non-object words
  std::vector<double> alpha;  // attention over all regions
};

struct F1Segment {
  const RegionSet* regions = nullptr;
  std::vector<GeneratedWord> generated;
  std::vector<ReferenceObject> references;
};

struct F1Tally {
  int a = 0;  // generated
  int b = 0;  // in reference
  int c = 0;  // correctly predicted, generated side
  int d = 0;  // correctly predicted, reference side
  int e = 0;  // correctly predicted and localized
};

std::map<int, F1Tally> f1_counts(std::span<const F1Segment> segments);

enum class F1Mode { kAll, kLoc };

struct PrecisionRecall {
  double precision = 0;  // percent
  double recall = 0;
  double f1 = 0;
};

double harmonic_f1(double precision, double recall);
// Macro P/R over classes present in the references; F1 = harmonic mean of them.
PrecisionRecall generation_f1(const std::map<int, F1Tally>& counts, F1Mode mode);
PrecisionRecall generation_f1(std::span<const F1Segment> segments, F1Mode mode);

// Argmax class of each positive region's column of M_s vs its matched class.
MacroScore classification_accuracy(std::span<const Matrix> similarities,
                                   std::span<const PositiveMatch> matches);

struct CoverageItem {
  const RegionSet* regions = nullptr;
  std::vector<ReferenceObject> objects;
};
MacroScore localization_upper_bound(std::span<const CoverageItem> items);

// Whitespace-tokenized sentences keyed by segment id.
using CaptionMap = std::map<std::string, std::vector<std::string>>;

// Corpus BLEU with "closest" reference length; n in [1, 4].
double bleu(const CaptionMap& candidates, const CaptionMap& references, int n);
// CIDEr-D (sigma 6, clipped tf-idf, x10), mean over segments.
double cider(const CaptionMap& candidates, const CaptionMap& references,
             std::vector<double>* per_segment = nullptr,
             std::optional<std::string>* warning = nullptr);

struct MetricReport {
  std::optional<MacroScore> attention, grounding, classification, upper_bound;
  std::optional<PrecisionRecall> f1_all, f1_loc;
  std::optional<double> bleu1, bleu4, cider;
  std::vector<std::string> class_names;
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json(bool per_class) const;
  std::string to_table(bool per_class) const;
};

}  // namespace gvd
