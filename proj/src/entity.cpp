#include "tunnelkit/entity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tk::entity {

namespace {

using nlohmann::json;

std::string slurp(const std::string& path, const char* err_code) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(err_code, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

void ZoneMap::validate() const {
    if (zones.empty()) throw Error("invalid zone map", "no zones");
    const bool has_catch_all = std::any_of(zones.begin(), zones.end(), [](const Zone& z) {
        return z.rect.x1 <= 0.0 && z.rect.y1 <= 0.0 && z.rect.x2 >= 1.0 &&
               z.rect.y2 >= 1.0;
    });
    if (!has_catch_all)
        throw Error("invalid zone map", "a catch-all zone covering [0,1]^2 is required");
}

ZoneMap load_zone_map(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("zones") || !j["zones"].is_array())
        throw Error("invalid zone map", "expected {\"zones\":[...]}");
    ZoneMap zm;
    for (const auto& z : j["zones"]) {
        if (!z.contains("label") || !z.contains("rect") || z["rect"].size() != 4)
            throw Error("invalid zone map", "zone needs label and 4-element rect");
        Zone zone;
        zone.label = z["label"].get<std::string>();
        zone.rect = Box{z["rect"][0].get<double>(), z["rect"][1].get<double>(),
                        z["rect"][2].get<double>(), z["rect"][3].get<double>()};
        zm.zones.push_back(std::move(zone));
    }
    zm.validate();
    return zm;
}

ZoneMap load_zone_map_file(const std::string& path) {
    return load_zone_map(slurp(path, "invalid zone map"));
}

void SeverityRuleSet::validate() const {
    for (const auto& [cls, rule] : by_class) {
        if (rule.indicator != "length_mm" && rule.indicator != "width_mm" &&
            rule.indicator != "area_mm2")
            throw Error("invalid rule set", cls + ": unknown indicator " + rule.indicator);
        if (rule.levels.empty())
            throw Error("invalid rule set", cls + ": at least one level required");
        if (rule.levels.size() != rule.thresholds.size() + 1)
            throw Error("invalid rule set", cls + ": need thresholds+1 level labels");
        for (std::size_t i = 1; i < rule.thresholds.size(); ++i)
            if (!(rule.thresholds[i - 1] < rule.thresholds[i]))
                throw Error("invalid rule set", cls + ": thresholds must strictly increase");
    }
}

SeverityRuleSet load_rule_set(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("rules") || !j["rules"].is_array())
        throw Error("invalid rule set", "expected {\"rules\":[...]}");
    SeverityRuleSet rs;
    for (const auto& r : j["rules"]) {
        if (!r.contains("class") || !r.contains("indicator") || !r.contains("thresholds") ||
            !r.contains("levels"))
            throw Error("invalid rule set", "rule needs class/indicator/thresholds/levels");
        SeverityRule rule;
        rule.indicator = r["indicator"].get<std::string>();
        for (const auto& t : r["thresholds"]) rule.thresholds.push_back(t.get<double>());
        for (const auto& l : r["levels"]) rule.levels.push_back(l.get<std::string>());
        if (r.contains("epsilon")) rule.epsilon = r["epsilon"].get<double>();
        rs.by_class[r["class"].get<std::string>()] = std::move(rule);
    }
    rs.validate();
    return rs;
}

SeverityRuleSet load_rule_set_file(const std::string& path) {
    return load_rule_set(slurp(path, "invalid rule set"));
}

std::string assign_location(const Point& centroid, double image_w, double image_h,
                            const ZoneMap& zones) {
    zones.validate();
    const Point p{centroid.x / image_w, centroid.y / image_h};
    for (const auto& z : zones.zones)
        if (z.rect.contains(p)) return z.label;
    return zones.zones.back().label; // unreachable once validate() passed
}

Point mask_centroid(const maskseg::Mask& mask) {
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (std::uint32_t y = 0; y < mask.height; ++y)
        for (std::uint32_t x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx += x + 0.5;
                sy += y + 0.5;
                ++n;
            }
    if (n == 0) throw Error("empty region", "mask_centroid");
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

Severity grade_severity(const std::string& cls, const geometry::GeometryAttrs& attrs,
                        const SeverityRuleSet& rules) {
    const auto it = rules.by_class.find(cls);
    if (it == rules.by_class.end())
        throw Error("ungradable", "no rule for class " + cls);
    const SeverityRule& rule = it->second;

    std::optional<double> value;
    if (rule.indicator == "length_mm") value = attrs.length_mm;
    else if (rule.indicator == "width_mm") value = attrs.width_mm;
    else value = attrs.area_mm2;
    if (!value)
        throw Error("ungradable", "indicator " + rule.indicator + " missing");

    std::size_t level = 0;
    for (std::size_t i = 0; i < rule.thresholds.size(); ++i)
        if (*value >= rule.thresholds[i]) level = i + 1;

    bool near = false;
    for (double t : rule.thresholds) {
        const double eps = rule.epsilon ? *rule.epsilon : 0.05 * t;
        if (std::abs(*value - t) <= eps) near = true;
    }
    return Severity{rule.levels[level], near};
}

namespace {

geometry::GeometryAttrs quantize_attrs(const geometry::GeometryAttrs& a) {
    geometry::GeometryAttrs q;
    if (a.length_mm) q.length_mm = quantize3(*a.length_mm);
    if (a.width_mm) q.width_mm = quantize3(*a.width_mm);
    for (double w : a.width_profile_mm) q.width_profile_mm.push_back(quantize3(w));
    if (a.area_mm2) q.area_mm2 = quantize3(*a.area_mm2);
    if (a.max_diameter_mm) q.max_diameter_mm = quantize3(*a.max_diameter_mm);
    if (a.compactness) q.compactness = quantize3(*a.compactness);
    return q;
}

} // namespace

DefectEntity build_entity(const std::string& cls, const std::string& zone,
                          std::optional<geometry::GeometryAttrs> attrs,
                          std::optional<Severity> severity, Context context) {
    DefectEntity e;
    e.type = cls;
    e.location = zone;
    if (attrs) e.geometry = quantize_attrs(*attrs);
    e.severity = std::move(severity);
    e.context = std::move(context);
    if (e.context.confidence) e.context.confidence = quantize3(*e.context.confidence);
    return e;
}

std::string serialize_entity(const DefectEntity& e) {
    std::string out = "{";
    out += "\"type\":" + json(e.type).dump();
    out += ",\"location\":" + json(e.location).dump();
    out += ",\"geometry\":";
    out += e.geometry ? geometry::attrs_to_json(*e.geometry) : "null";
    out += ",\"severity\":";
    if (e.severity) {
        out += "{\"level\":" + json(e.severity->level).dump() +
               ",\"near_threshold\":" + (e.severity->near_threshold ? "true" : "false") +
               "}";
    } else {
        out += "null";
    }
    out += ",\"context\":{";
    out += "\"confidence\":";
    out += e.context.confidence ? format_fixed3(quantize3(*e.context.confidence)) : "null";
    out += ",\"section_id\":" + json(e.context.section_id).dump();
    out += ",\"time\":" + json(e.context.time).dump();
    out += ",\"providers\":";
    {
        json prov = json::array();
        for (const auto& p : e.context.providers) prov.push_back(p);
        out += prov.dump();
    }
    out += ",\"extra\":";
    out += e.context.extra_json.empty() ? "{}" : e.context.extra_json;
    out += "}}";
    return out;
}

DefectEntity parse_entity(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw Error("invalid entity", "not a JSON object");
    if (!j.contains("type") || !j["type"].is_string())
        throw Error("invalid entity", "missing type");

    DefectEntity e;
    e.type = j["type"].get<std::string>();
    e.location = j.value("location", "");

    if (j.contains("geometry") && !j["geometry"].is_null())
        e.geometry = geometry::attrs_from_json(j["geometry"].dump());

    if (j.contains("severity") && !j["severity"].is_null()) {
        const auto& s = j["severity"];
        if (!s.contains("level")) throw Error("invalid entity", "severity without level");
        e.severity = Severity{s["level"].get<std::string>(), s.value("near_threshold", false)};
    }

    json extra = json::object();
    if (j.contains("context") && j["context"].is_object()) {
        const auto& c = j["context"];
        if (c.contains("confidence") && !c["confidence"].is_null())
            e.context.confidence = c["confidence"].get<double>();
        e.context.section_id = c.value("section_id", "");
        e.context.time = c.value("time", "");
        if (c.contains("providers"))
            for (const auto& p : c["providers"])
                e.context.providers.push_back(p.get<std::string>());
        if (c.contains("extra") && c["extra"].is_object()) extra = c["extra"];
        for (auto it = c.begin(); it != c.end(); ++it) {
            if (it.key() == "confidence" || it.key() == "section_id" ||
                it.key() == "time" || it.key() == "providers" || it.key() == "extra")
                continue;
            extra[it.key()] = it.value();
        }
    }
    // Unknown top-level keys are preserved under context.extra.
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "type" || it.key() == "location" || it.key() == "geometry" ||
            it.key() == "severity" || it.key() == "context")
            continue;
        extra[it.key()] = it.value();
    }
    if (!extra.empty()) e.context.extra_json = extra.dump();
    return e;
}

} // namespace tk::entity
