#pragma once
// Structured defect entities: zone-map location assignment, rule-based
// severity grading with near-threshold flagging, and a canonical JSON
// serialization (fixed key order, three-decimal numbers) whose round trips
// are byte exact.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"
#include "tunnelkit/geometry.hpp"

namespace tk::entity {

struct Zone {
    std::string label;
    Box rect; // normalized [0,1]^2, evaluated in order, first hit wins
};

struct ZoneMap {
    std::vector<Zone> zones;

    // A catch-all zone covering [0,1]^2 must exist so assignment is total.
    void validate() const;
};

ZoneMap load_zone_map(const std::string& json_text);
ZoneMap load_zone_map_file(const std::string& path);

struct SeverityRule {
    std::string indicator;              // length_mm | width_mm | area_mm2
    std::vector<double> thresholds;     // strictly increasing
    std::vector<std::string> levels;    // thresholds.size() + 1 labels
    std::optional<double> epsilon;      // absent: 5% of the nearest threshold
};

struct SeverityRuleSet {
    std::map<std::string, SeverityRule> by_class;

    void validate() const;
};

SeverityRuleSet load_rule_set(const std::string& json_text);
SeverityRuleSet load_rule_set_file(const std::string& path);

struct Severity {
    std::string level;
    bool near_threshold = false;
};

struct Context {
    std::optional<double> confidence;
    std::string section_id;
    std::string time;
    std::vector<std::string> providers;
    std::string extra_json; // canonical dump of preserved unknown keys

    bool populated() const {
        return confidence.has_value() || !section_id.empty() || !time.empty();
    }
};

struct DefectEntity {
    std::string type;
    std::string location;
    std::optional<geometry::GeometryAttrs> geometry;
    std::optional<Severity> severity;
    Context context;

    bool complete() const {
        return !type.empty() && !location.empty() && geometry.has_value() &&
               severity.has_value() && context.populated();
    }
};

// Mask centroid preferred over box center; normalized point matched against
// the zones in order.
std::string assign_location(const Point& centroid, double image_w, double image_h,
                            const ZoneMap& zones);
Point mask_centroid(const maskseg::Mask& mask);

// Level = highest label whose lower threshold <= indicator (left-closed
// intervals); near_threshold iff the indicator is within epsilon of any
// threshold. Throws Error("ungradable") when the class has no rule or the
// indicator value is absent.
Severity grade_severity(const std::string& cls, const geometry::GeometryAttrs& attrs,
                        const SeverityRuleSet& rules);

// Assembles the record; geometry values are quantized to the serialized
// three-decimal precision first so stored severity is exactly re-derivable
// from the serialized entity.
DefectEntity build_entity(const std::string& cls, const std::string& zone,
                          std::optional<geometry::GeometryAttrs> attrs,
                          std::optional<Severity> severity, Context context);

std::string serialize_entity(const DefectEntity& e);
DefectEntity parse_entity(const std::string& text);

} // namespace tk::entity
