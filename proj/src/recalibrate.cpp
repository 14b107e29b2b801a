#include "tunnelkit/recalibrate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace tk::recal {

namespace {

using nlohmann::json;

double dot(const float* a, const float* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double norm(const float* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

} // namespace

void RecalConfig::validate() const {
    if (K < 1) throw std::invalid_argument("K must be >= 1");
    if (r < 1 || r % 2 == 0) throw std::invalid_argument("r must be odd and >= 1");
    if (tau < -1.0 || tau > 1.0) throw std::invalid_argument("tau must be in [-1,1]");
    if (top_m < 1) throw std::invalid_argument("top_m must be >= 1");
    if (neg_count < 0) throw std::invalid_argument("neg_count must be >= 0");
    if (!(nms_iou > 0.0) || nms_iou > 1.0)
        throw std::invalid_argument("nms_iou must be in (0,1]");
}

RecalConfig recal_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error("invalid config", e.what());
    }
    RecalConfig cfg;
    cfg.K = j.value("K", cfg.K);
    cfg.r = j.value("r", cfg.r);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.top_m = j.value("top_m", cfg.top_m);
    cfg.neg_count = j.value("neg_count", cfg.neg_count);
    cfg.nms_iou = j.value("nms_iou", cfg.nms_iou);
    cfg.validate();
    return cfg;
}

std::string recal_config_to_json(const RecalConfig& cfg) {
    nlohmann::ordered_json j;
    j["K"] = cfg.K;
    j["r"] = cfg.r;
    j["tau"] = cfg.tau;
    j["top_m"] = cfg.top_m;
    j["neg_count"] = cfg.neg_count;
    j["nms_iou"] = cfg.nms_iou;
    return j.dump();
}

std::vector<float> build_prototype(const grid::KeyPatchField& field,
                                   const grid::CellIndex& cell, int r) {
    if (r < 1 || r % 2 == 0) throw std::invalid_argument("build_prototype: r must be odd");
    const int half = r / 2;
    const int m0 = std::max(1, cell.m - half);
    const int m1 = std::min(field.K, cell.m + half);
    const int n0 = std::max(1, cell.n - half);
    const int n1 = std::min(field.K, cell.n + half);

    std::vector<double> acc(field.dim, 0.0);
    int count = 0;
    for (int m = m0; m <= m1; ++m) {
        for (int n = n0; n <= n1; ++n) {
            const float* v = field.at(grid::CellIndex{m, n});
            for (std::uint32_t d = 0; d < field.dim; ++d) acc[d] += v[d];
            ++count;
        }
    }
    std::vector<float> out(field.dim);
    for (std::uint32_t d = 0; d < field.dim; ++d)
        out[d] = static_cast<float>(acc[d] / count);
    return out;
}

SimilarityField similarity_field(const std::vector<float>& query,
                                 const grid::KeyPatchField& field) {
    if (query.size() != field.dim)
        throw std::invalid_argument("similarity_field: dimension mismatch");
    SimilarityField sim;
    sim.K = field.K;
    sim.scores.resize(static_cast<std::size_t>(field.K) * field.K, 0.0);
    const double qn = norm(query.data(), query.size());
    for (int m = 1; m <= field.K; ++m) {
        for (int n = 1; n <= field.K; ++n) {
            const float* k = field.at(grid::CellIndex{m, n});
            const double kn = norm(k, field.dim);
            double s = 0.0;
            if (qn > 0.0 && kn > 0.0) {
                s = dot(query.data(), k, field.dim) / (qn * kn);
                s = std::clamp(s, -1.0, 1.0);
            }
            sim.scores[static_cast<std::size_t>(m - 1) * field.K + (n - 1)] = s;
        }
    }
    return sim;
}

SupportSet select_support(const SimilarityField& sim, double tau, int top_m) {
    SupportSet support;
    for (int m = 1; m <= sim.K; ++m)
        for (int n = 1; n <= sim.K; ++n) {
            grid::CellIndex c{m, n};
            const double s = sim.at(c);
            if (s >= tau) support.push_back({c, s});
        }
    // Descending score; ties keep row-major order (input order is row-major).
    std::stable_sort(support.begin(), support.end(),
                     [](const SupportEntry& a, const SupportEntry& b) {
                         return a.score > b.score;
                     });
    if (static_cast<int>(support.size()) > top_m)
        support.resize(static_cast<std::size_t>(top_m));
    return support;
}

PromptBundle make_prompts(const SupportSet& support, const grid::KeyPatchField& field,
                          const SimilarityField& sim, const intake::Proposal& proposal,
                          const RecalConfig& cfg) {
    PromptBundle b;
    b.cls = proposal.cls;
    b.box = proposal.box;
    if (support.empty()) return b; // empty-bundle signal: box-only downstream

    double conf = 0.0;
    for (const auto& e : support) {
        b.pos.push_back(field.center(e.cell));
        conf += e.score;
    }
    b.confidence = conf / static_cast<double>(support.size());

    // Negatives: lowest-similarity cells, excluding support cells and cells
    // whose centers fall inside the proposal box; fewer candidates than
    // neg_count means take all of them.
    std::vector<SupportEntry> candidates;
    for (int m = 1; m <= sim.K; ++m) {
        for (int n = 1; n <= sim.K; ++n) {
            grid::CellIndex c{m, n};
            const bool in_support =
                std::any_of(support.begin(), support.end(),
                            [&](const SupportEntry& e) { return e.cell == c; });
            if (in_support) continue;
            if (proposal.box.contains(field.center(c))) continue;
            candidates.push_back({c, sim.at(c)});
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const SupportEntry& a, const SupportEntry& b2) {
                         return a.score < b2.score;
                     });
    const std::size_t take =
        std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(cfg.neg_count));
    for (std::size_t i = 0; i < take; ++i)
        b.neg.push_back(field.center(candidates[i].cell));
    return b;
}

Box recalibrated_box(const SupportSet& support, const grid::KeyPatchField& field,
                     const Box& fallback) {
    if (support.empty()) return fallback;
    Box out = field.cell_region(support.front().cell);
    for (std::size_t i = 1; i < support.size(); ++i) {
        const Box r = field.cell_region(support[i].cell);
        out.x1 = std::min(out.x1, r.x1);
        out.y1 = std::min(out.y1, r.y1);
        out.x2 = std::max(out.x2, r.x2);
        out.y2 = std::max(out.y2, r.y2);
    }
    out.x1 = std::max(out.x1, 0.0);
    out.y1 = std::max(out.y1, 0.0);
    out.x2 = std::min(out.x2, field.image_w);
    out.y2 = std::min(out.y2, field.image_h);
    return out;
}

double iou(const Box& a, const Box& b) {
    const double ix1 = std::max(a.x1, b.x1);
    const double iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2);
    const double iy2 = std::min(a.y2, b.y2);
    const double iw = std::max(0.0, ix2 - ix1);
    const double ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<PromptBundle> nms(const std::vector<PromptBundle>& bundles,
                              double iou_thresh) {
    std::vector<std::size_t> order(bundles.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return bundles[a].confidence > bundles[b].confidence;
    });
    std::vector<PromptBundle> kept;
    for (std::size_t idx : order) {
        const bool suppressed =
            std::any_of(kept.begin(), kept.end(), [&](const PromptBundle& k) {
                return iou(k.box, bundles[idx].box) >= iou_thresh;
            });
        if (!suppressed) kept.push_back(bundles[idx]);
    }
    return kept;
}

PromptBundle recalibrate_proposal(const intake::Proposal& proposal,
                                  const grid::KeyPatchField& field,
                                  const RecalConfig& cfg) {
    const grid::Anchor anchor = grid::anchor_of(proposal);
    const grid::CellIndex cell =
        grid::locate_cell(anchor, field.image_w, field.image_h, cfg.K);
    const std::vector<float> proto = build_prototype(field, cell, cfg.r);
    const SimilarityField sim = similarity_field(proto, field);
    const SupportSet support = select_support(sim, cfg.tau, cfg.top_m);
    PromptBundle bundle = make_prompts(support, field, sim, proposal, cfg);
    bundle.prototype = proto;
    bundle.box = recalibrated_box(support, field, proposal.box);
    return bundle;
}

namespace {

nlohmann::ordered_json bundle_to_ojson(const PromptBundle& b) {
    nlohmann::ordered_json j;
    j["class"] = b.cls;
    j["pos"] = nlohmann::ordered_json::array();
    for (const auto& p : b.pos) j["pos"].push_back({p.x, p.y});
    j["neg"] = nlohmann::ordered_json::array();
    for (const auto& p : b.neg) j["neg"].push_back({p.x, p.y});
    j["box"] = {b.box.x1, b.box.y1, b.box.x2, b.box.y2};
    j["confidence"] = b.confidence;
    return j;
}

PromptBundle bundle_from_ojson(const json& j) {
    if (!j.is_object() || !j.contains("class") || !j.contains("box"))
        throw Error("invalid bundle", "missing class or box");
    PromptBundle b;
    b.cls = j["class"].get<std::string>();
    for (const auto& p : j.value("pos", json::array()))
        b.pos.push_back({p[0].get<double>(), p[1].get<double>()});
    for (const auto& p : j.value("neg", json::array()))
        b.neg.push_back({p[0].get<double>(), p[1].get<double>()});
    const auto& bx = j["box"];
    b.box = Box{bx[0].get<double>(), bx[1].get<double>(), bx[2].get<double>(),
                bx[3].get<double>()};
    b.confidence = j.value("confidence", 0.0);
    return b;
}

} // namespace

std::string bundle_to_json(const PromptBundle& b) { return bundle_to_ojson(b).dump(); }

std::string bundles_to_json(const std::vector<PromptBundle>& bs) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& b : bs) arr.push_back(bundle_to_ojson(b));
    return arr.dump();
}

PromptBundle bundle_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error("invalid bundle", "not JSON");
    return bundle_from_ojson(j);
}

std::vector<PromptBundle> bundles_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw Error("invalid bundle", "not a JSON array");
    std::vector<PromptBundle> out;
    for (const auto& item : j) out.push_back(bundle_from_ojson(item));
    return out;
}

} // namespace tk::recal
