#include "tunnelkit/intake.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tk::intake {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

void ClassRegistry::validate() const {
    std::set<std::string> canon;
    for (const auto& c : classes) {
        if (!canon.insert(lower(trim(c.name))).second)
            throw Error("invalid registry", "duplicate canonical name '" + c.name + "'");
    }
    std::set<std::string> alias_seen;
    for (const auto& c : classes) {
        for (const auto& a : c.aliases) {
            std::string key = lower(trim(a));
            if (canon.count(key) && key != lower(trim(c.name)))
                throw Error("invalid registry", "alias '" + a + "' shadows a canonical name");
            if (!alias_seen.insert(key).second)
                throw Error("invalid registry", "alias '" + a + "' maps to more than one class");
        }
    }
}

const ClassEntry* ClassRegistry::find(const std::string& canonical) const {
    for (const auto& c : classes)
        if (c.name == canonical) return &c;
    return nullptr;
}

ClassRegistry load_registry(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error("invalid registry", e.what());
    }
    if (!j.is_object() || !j.contains("classes") || !j["classes"].is_array())
        throw Error("invalid registry", "expected object with a 'classes' array");
    ClassRegistry reg;
    reg.task_id = j.value("task", "");
    for (const auto& c : j["classes"]) {
        if (!c.is_object() || !c.contains("name") || !c["name"].is_string())
            throw Error("invalid registry", "class entry without a name");
        ClassEntry e;
        e.name = c["name"].get<std::string>();
        for (const auto& a : c.value("aliases", json::array()))
            e.aliases.push_back(a.get<std::string>());
        for (const auto& s : c.value("synonyms_for_retry", json::array()))
            e.synonyms_for_retry.push_back(s.get<std::string>());
        std::string kind = c.value("kind", "region_like");
        if (kind == "crack_like")
            e.kind = ClassKind::CrackLike;
        else if (kind == "region_like")
            e.kind = ClassKind::RegionLike;
        else
            throw Error("invalid registry", "unknown kind '" + kind + "'");
        reg.classes.push_back(std::move(e));
    }
    reg.validate();
    return reg;
}

ClassRegistry load_registry_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("invalid registry", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_registry(ss.str());
}

std::vector<const Proposal*> ProposalSet::for_class(const std::string& cls) const {
    std::vector<const Proposal*> out;
    for (const auto& p : items)
        if (p.cls == cls) out.push_back(&p);
    return out;
}

std::size_t ProposalSet::count_for(const std::string& cls) const {
    return for_class(cls).size();
}

std::optional<Box> clip_box(const Box& box, double image_w, double image_h) {
    Box b;
    b.x1 = std::clamp(box.x1, 0.0, image_w);
    b.y1 = std::clamp(box.y1, 0.0, image_h);
    b.x2 = std::clamp(box.x2, 0.0, image_w);
    b.y2 = std::clamp(box.y2, 0.0, image_h);
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) return std::nullopt;
    return b;
}

std::optional<std::string> normalize_class(const std::string& label,
                                           const ClassRegistry& registry) {
    const std::string key = lower(trim(label));
    if (key.empty()) return std::nullopt;
    for (const auto& c : registry.classes)
        if (lower(trim(c.name)) == key) return c.name;
    for (const auto& c : registry.classes)
        for (const auto& a : c.aliases)
            if (lower(trim(a)) == key) return c.name;
    return std::nullopt;
}

IntakeOutcome parse_proposals(const std::string& raw, const ClassRegistry& registry,
                              double image_w, double image_h,
                              const std::string& queried_class, int attempt) {
    if (!(image_w > 0.0) || !(image_h > 0.0))
        throw Error("invalid argument", "image dims must be positive");

    IntakeOutcome out;
    out.queried_class = queried_class;

    json j = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object() || !j.contains("result") ||
        !j["result"].is_array()) {
        out.retry_needed = true;
        return out;
    }

    for (const auto& item : j["result"]) {
        const std::string raw_item = item.dump();
        if (!item.is_object() || !item.contains("class") || !item["class"].is_string() ||
            !item.contains("bbox")) {
            out.rejections.push_back({raw_item, "bad item"});
            continue;
        }
        auto canonical = normalize_class(item["class"].get<std::string>(), registry);
        if (!canonical) {
            out.rejections.push_back({raw_item, "unknown class"});
            continue;
        }
        const auto& bb = item["bbox"];
        if (!bb.is_array() || bb.size() != 4 ||
            !std::all_of(bb.begin(), bb.end(), [](const json& v) { return v.is_number(); })) {
            out.rejections.push_back({raw_item, "bad bbox"});
            continue;
        }
        Box box{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                bb[3].get<double>()};
        if (!std::isfinite(box.x1) || !std::isfinite(box.y1) || !std::isfinite(box.x2) ||
            !std::isfinite(box.y2)) {
            out.rejections.push_back({raw_item, "bad bbox"});
            continue;
        }
        // Trivial repairs only: swap reversed coordinates, then clip.
        if (box.x1 > box.x2) std::swap(box.x1, box.x2);
        if (box.y1 > box.y2) std::swap(box.y1, box.y2);
        auto clipped = clip_box(box, image_w, image_h);
        if (!clipped) {
            out.rejections.push_back({raw_item, "empty box"});
            continue;
        }
        out.accepted.items.push_back({*canonical, *clipped, attempt});
    }
    return out;
}

std::optional<RetryDirective> plan_retry(const IntakeOutcome& outcome,
                                         const ClassRegistry& registry, int attempt) {
    if (!outcome.retry_needed || attempt != 0) return std::nullopt;
    auto canonical = normalize_class(outcome.queried_class, registry);
    if (!canonical) return std::nullopt;
    const ClassEntry* entry = registry.find(*canonical);
    if (!entry || entry->synonyms_for_retry.empty()) return std::nullopt;
    return RetryDirective{entry->synonyms_for_retry.front()};
}

std::string proposal_set_to_json(const ProposalSet& set,
                                 const std::vector<Rejection>& rejections) {
    nlohmann::ordered_json j;
    j["result"] = nlohmann::ordered_json::array();
    for (const auto& p : set.items) {
        nlohmann::ordered_json item;
        item["class"] = p.cls;
        item["bbox"] = {p.box.x1, p.box.y1, p.box.x2, p.box.y2};
        j["result"].push_back(std::move(item));
    }
    j["rejections"] = nlohmann::ordered_json::array();
    for (const auto& r : rejections) {
        nlohmann::ordered_json item;
        item["item"] = r.raw;
        item["reason"] = r.reason;
        j["rejections"].push_back(std::move(item));
    }
    return j.dump();
}

} // namespace tk::intake
