#include "tunnelkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tunnelkit/mask.hpp"
#include "tunnelkit/recalibrate.hpp"

namespace tk::eval {

namespace {

using nlohmann::json;

RecordEntity entity_from_json(const json& j) {
    RecordEntity e;
    e.location = j.value("location", "");
    if (j.contains("geometry") && j["geometry"].is_object()) {
        const auto& g = j["geometry"];
        if (g.contains("length_mm")) e.length_mm = g["length_mm"].get<double>();
        if (g.contains("width_mm")) e.width_mm = g["width_mm"].get<double>();
        if (g.contains("area_mm2")) e.area_mm2 = g["area_mm2"].get<double>();
    }
    if (j.contains("severity") && j["severity"].is_object())
        e.severity_level = j["severity"].value("level", "");

    // Full entity JSON carries enough to recompute completeness; otherwise a
    // record may state it directly.
    if (j.contains("complete")) {
        e.complete = j["complete"].get<bool>();
    } else {
        const bool has_geometry = e.length_mm || e.width_mm || e.area_mm2;
        bool has_context = false;
        if (j.contains("context") && j["context"].is_object()) {
            const auto& c = j["context"];
            has_context = (c.contains("confidence") && !c["confidence"].is_null()) ||
                          !c.value("section_id", std::string()).empty() ||
                          !c.value("time", std::string()).empty();
        }
        e.complete = !e.location.empty() && has_geometry && !e.severity_level.empty() &&
                     has_context;
    }
    return e;
}

} // namespace

std::vector<DetectionRecord> load_records_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io error", "cannot open " + path);
    std::vector<DetectionRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("class") || !j.contains("box"))
            throw Error("invalid record", "bad JSONL line");
        DetectionRecord r;
        r.image = j.value("image", "");
        r.cls = j["class"].get<std::string>();
        const auto& b = j["box"];
        r.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                    b[3].get<double>()};
        r.confidence = j.value("confidence", 0.0);
        r.mask_path = j.value("mask", "");
        if (j.contains("entity") && j["entity"].is_object())
            r.entity = entity_from_json(j["entity"]);
        out.push_back(std::move(r));
    }
    return out;
}

std::string record_to_json(const DetectionRecord& r) {
    nlohmann::ordered_json j;
    j["image"] = r.image;
    j["class"] = r.cls;
    j["box"] = {r.box.x1, r.box.y1, r.box.x2, r.box.y2};
    j["confidence"] = quantize3(r.confidence);
    if (!r.mask_path.empty()) j["mask"] = r.mask_path;
    if (r.entity) {
        nlohmann::ordered_json e;
        e["location"] = r.entity->location;
        nlohmann::ordered_json g = nlohmann::ordered_json::object();
        if (r.entity->length_mm) g["length_mm"] = quantize3(*r.entity->length_mm);
        if (r.entity->width_mm) g["width_mm"] = quantize3(*r.entity->width_mm);
        if (r.entity->area_mm2) g["area_mm2"] = quantize3(*r.entity->area_mm2);
        e["geometry"] = std::move(g);
        if (!r.entity->severity_level.empty())
            e["severity"] = {{"level", r.entity->severity_level}};
        e["complete"] = r.entity->complete;
        j["entity"] = std::move(e);
    }
    return j.dump();
}

ClassCounts MatchResult::totals() const {
    ClassCounts t;
    for (const auto& [cls, c] : per_class) {
        t.tp += c.tp;
        t.fp += c.fp;
        t.fn += c.fn;
    }
    return t;
}

MatchResult match_detections(const std::vector<DetectionRecord>& preds,
                             const std::vector<DetectionRecord>& gts, double iou_thresh) {
    MatchResult result;
    for (const auto& g : gts) result.per_class[g.cls]; // ensure classes appear
    for (const auto& p : preds) result.per_class[p.cls];

    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].confidence > preds[b].confidence;
    });

    std::vector<bool> gt_used(gts.size(), false);
    for (std::size_t pi : order) {
        const DetectionRecord& p = preds[pi];
        double best_iou = 0.0;
        std::size_t best_gt = gts.size();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_used[gi]) continue;
            if (gts[gi].image != p.image || gts[gi].cls != p.cls) continue;
            const double v = recal::iou(p.box, gts[gi].box);
            if (v >= iou_thresh && v > best_iou) {
                best_iou = v;
                best_gt = gi;
            }
        }
        if (best_gt < gts.size()) {
            gt_used[best_gt] = true;
            result.per_class[p.cls].tp += 1;
            result.pairs.push_back({pi, best_gt});
        } else {
            result.per_class[p.cls].fp += 1;
        }
    }
    for (std::size_t gi = 0; gi < gts.size(); ++gi)
        if (!gt_used[gi]) result.per_class[gts[gi].cls].fn += 1;
    return result;
}

Prf1 prf1(std::size_t tp, std::size_t fp, std::size_t fn) {
    Prf1 r;
    r.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    r.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.f1 = f1_from_pr(r.precision, r.recall);
    return r;
}

double f1_from_pr(double precision, double recall) {
    return (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall)
                                      : 0.0;
}

GeometricErrors geometric_errors(const std::vector<DetectionRecord>& preds,
                                 const std::vector<DetectionRecord>& gts,
                                 const MatchResult& matches) {
    GeometricErrors out;
    double lsum = 0.0, wsum = 0.0, asum = 0.0;
    std::size_t ln = 0, wn = 0, an = 0;
    for (const auto& [pi, gi] : matches.pairs) {
        const auto& pe = preds[pi].entity;
        const auto& ge = gts[gi].entity;
        if (!pe || !ge) continue;
        if (pe->length_mm && ge->length_mm) {
            lsum += std::abs(*pe->length_mm - *ge->length_mm) / 10.0; // mm -> cm
            ++ln;
        }
        if (pe->width_mm && ge->width_mm) {
            wsum += std::abs(*pe->width_mm - *ge->width_mm);
            ++wn;
        }
        if (pe->area_mm2 && ge->area_mm2) {
            if (*ge->area_mm2 == 0.0) {
                ++out.are_excluded;
            } else {
                asum += std::abs(*pe->area_mm2 - *ge->area_mm2) / *ge->area_mm2 * 100.0;
                ++an;
            }
        }
    }
    if (ln) out.lmae_cm = lsum / static_cast<double>(ln);
    if (wn) out.wmae_mm = wsum / static_cast<double>(wn);
    if (an) out.are_percent = asum / static_cast<double>(an);
    return out;
}

EntityMetrics entity_metrics(const std::vector<DetectionRecord>& preds,
                             const std::vector<DetectionRecord>& gts,
                             const MatchResult& matches) {
    EntityMetrics out;

    std::size_t loc_total = 0, loc_hit = 0;
    for (const auto& [pi, gi] : matches.pairs) {
        const auto& pe = preds[pi].entity;
        const auto& ge = gts[gi].entity;
        if (!pe || !ge || pe->location.empty() || ge->location.empty()) continue;
        ++loc_total;
        loc_hit += (pe->location == ge->location);
    }
    if (loc_total)
        out.loc_acc_percent =
            100.0 * static_cast<double>(loc_hit) / static_cast<double>(loc_total);

    // Severity macro-F1 over the union of levels seen in matched pairs.
    std::set<std::string> levels;
    std::vector<std::pair<std::string, std::string>> level_pairs; // (pred, gt)
    for (const auto& [pi, gi] : matches.pairs) {
        const auto& pe = preds[pi].entity;
        const auto& ge = gts[gi].entity;
        if (!pe || !ge || pe->severity_level.empty() || ge->severity_level.empty())
            continue;
        levels.insert(pe->severity_level);
        levels.insert(ge->severity_level);
        level_pairs.push_back({pe->severity_level, ge->severity_level});
    }
    if (!level_pairs.empty()) {
        double f1_sum = 0.0;
        for (const std::string& level : levels) {
            std::size_t tp = 0, fp = 0, fn = 0;
            for (const auto& [pl, gl] : level_pairs) {
                if (pl == level && gl == level) ++tp;
                else if (pl == level) ++fp;
                else if (gl == level) ++fn;
            }
            f1_sum += prf1(tp, fp, fn).f1;
        }
        out.severity_macro_f1 = f1_sum / static_cast<double>(levels.size());
    }

    if (!preds.empty()) {
        std::size_t complete = 0;
        for (const auto& p : preds) complete += (p.entity && p.entity->complete);
        out.entity_completeness_percent =
            100.0 * static_cast<double>(complete) / static_cast<double>(preds.size());
    }
    return out;
}

int hit_at_k(const knowledge::EvidenceSet& evidence,
             const std::vector<std::string>& relevant_ids, int k) {
    if (k < 1) throw std::invalid_argument("hit_at_k: k must be >= 1");
    const std::size_t limit = std::min<std::size_t>(evidence.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i)
        for (const auto& id : relevant_ids)
            if (evidence[i].fragment_id == id) return 1;
    return 0;
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    auto prf_json = [](const Prf1& p) {
        nlohmann::ordered_json o;
        o["precision"] = quantize3(p.precision);
        o["recall"] = quantize3(p.recall);
        o["f1"] = quantize3(p.f1);
        return o;
    };
    j["per_class"] = nlohmann::ordered_json::object();
    for (const auto& [cls, p] : per_class) j["per_class"][cls] = prf_json(p);
    j["aggregate"] = prf_json(aggregate);
    j["mean_mask_iou"] = mean_mask_iou ? json(quantize3(*mean_mask_iou)) : json(nullptr);
    j["lmae_cm"] = geometric.lmae_cm ? json(quantize3(*geometric.lmae_cm)) : json(nullptr);
    j["wmae_mm"] = geometric.wmae_mm ? json(quantize3(*geometric.wmae_mm)) : json(nullptr);
    j["are_percent"] =
        geometric.are_percent ? json(quantize3(*geometric.are_percent)) : json(nullptr);
    j["are_excluded"] = geometric.are_excluded;
    j["loc_acc_percent"] = entities.loc_acc_percent
                               ? json(quantize3(*entities.loc_acc_percent))
                               : json(nullptr);
    j["severity_macro_f1"] = entities.severity_macro_f1
                                 ? json(quantize3(*entities.severity_macro_f1))
                                 : json(nullptr);
    j["entity_completeness_percent"] = quantize3(entities.entity_completeness_percent);
    j["hit_at_k_percent"] =
        hit_at_k_percent ? json(quantize3(*hit_at_k_percent)) : json(nullptr);
    return j.dump(2);
}

MetricReport evaluate(const std::vector<DetectionRecord>& preds,
                      const std::vector<DetectionRecord>& gts, double iou_thresh) {
    MetricReport report;
    const MatchResult matches = match_detections(preds, gts, iou_thresh);
    for (const auto& [cls, counts] : matches.per_class)
        report.per_class[cls] = prf1(counts.tp, counts.fp, counts.fn);
    const ClassCounts t = matches.totals();
    report.aggregate = prf1(t.tp, t.fp, t.fn);

    // Mask IoU over matched pairs where both sides reference a mask file.
    double iou_sum = 0.0;
    std::size_t iou_n = 0;
    for (const auto& [pi, gi] : matches.pairs) {
        if (preds[pi].mask_path.empty() || gts[gi].mask_path.empty()) continue;
        const maskseg::Mask pm = maskseg::read_mask_file(preds[pi].mask_path);
        const maskseg::Mask gm = maskseg::read_mask_file(gts[gi].mask_path);
        if (pm.width != gm.width || pm.height != gm.height) continue;
        iou_sum += maskseg::mask_iou(pm, gm);
        ++iou_n;
    }
    if (iou_n) report.mean_mask_iou = iou_sum / static_cast<double>(iou_n);

    report.geometric = geometric_errors(preds, gts, matches);
    report.entities = entity_metrics(preds, gts, matches);
    return report;
}

} // namespace tk::eval
