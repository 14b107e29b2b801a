#pragma once
// Evaluation harness: greedy IoU detection matching, P/R/F1, geometric error
// statistics, entity-level metrics and Hit@k, aggregated into a metric
// report.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"
#include "tunnelkit/entity.hpp"
#include "tunnelkit/knowledge.hpp"

namespace tk::eval {

struct RecordEntity {
    std::string location;
    std::optional<double> length_mm;
    std::optional<double> width_mm;
    std::optional<double> area_mm2;
    std::string severity_level;
    bool complete = false;
};

// One prediction or ground-truth detection; GT records ignore confidence.
struct DetectionRecord {
    std::string image;
    std::string cls;
    Box box;
    double confidence = 0.0;
    std::string mask_path;
    std::optional<RecordEntity> entity;
};

std::vector<DetectionRecord> load_records_jsonl(const std::string& path);
std::string record_to_json(const DetectionRecord& r);

struct ClassCounts {
    std::size_t tp = 0, fp = 0, fn = 0;
};

struct MatchResult {
    std::map<std::string, ClassCounts> per_class;
    // (pred index, gt index) pairs into the caller's record vectors.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    ClassCounts totals() const;
};

// Greedy matching in descending prediction-confidence order (ties by input
// order); a match needs the same image, same class and box IoU >= threshold;
// each GT matches at most once. Among eligible GTs the highest-IoU one wins,
// ties by GT input order.
MatchResult match_detections(const std::vector<DetectionRecord>& preds,
                             const std::vector<DetectionRecord>& gts,
                             double iou_thresh = 0.5);

struct Prf1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// 0/0 is defined as 0 throughout.
Prf1 prf1(std::size_t tp, std::size_t fp, std::size_t fn);

// Harmonic mean straight from already-computed precision and recall (used to
// reproduce published F1 cells from their published P/R values).
double f1_from_pr(double precision, double recall);

struct GeometricErrors {
    std::optional<double> lmae_cm;
    std::optional<double> wmae_mm;
    std::optional<double> are_percent;
    std::size_t are_excluded = 0; // pairs dropped for zero ground-truth area
};

// Errors over matched pairs where both sides define the attribute; lengths
// arrive in mm and are reported as cm.
GeometricErrors geometric_errors(const std::vector<DetectionRecord>& preds,
                                 const std::vector<DetectionRecord>& gts,
                                 const MatchResult& matches);

struct EntityMetrics {
    std::optional<double> loc_acc_percent;
    std::optional<double> severity_macro_f1;
    double entity_completeness_percent = 0.0;
};

EntityMetrics entity_metrics(const std::vector<DetectionRecord>& preds,
                             const std::vector<DetectionRecord>& gts,
                             const MatchResult& matches);

// 1 iff any relevant id appears within the first k entries.
int hit_at_k(const knowledge::EvidenceSet& evidence,
             const std::vector<std::string>& relevant_ids, int k);

struct MetricReport {
    std::map<std::string, Prf1> per_class;
    Prf1 aggregate;
    std::optional<double> mean_mask_iou;
    GeometricErrors geometric;
    EntityMetrics entities;
    std::optional<double> hit_at_k_percent;

    std::string to_json() const; // deterministic key order
};

MetricReport evaluate(const std::vector<DetectionRecord>& preds,
                      const std::vector<DetectionRecord>& gts, double iou_thresh = 0.5);

} // namespace tk::eval
