#pragma once
// Proposal intake: parse/validate/repair the language provider's JSON
// output into class-conditional proposal sets, with single-retry planning.
//
// Accepted envelope: {"result":[{"class": <text>, "bbox":[x1,y1,x2,y2]}, ...]}
// Repairs are limited to coordinate swap (x1>x2 or y1>y2) and clipping to the
// image; anything else rejects the item with a reason. Parsing is total: bad
// input never throws, it lands in the outcome record.

#include <optional>
#include <string>
#include <vector>

#include "tunnelkit/core.hpp"

namespace tk::intake {

enum class ClassKind { CrackLike, RegionLike };

struct ClassEntry {
    std::string name; // canonical
    std::vector<std::string> aliases;
    std::vector<std::string> synonyms_for_retry;
    ClassKind kind = ClassKind::RegionLike;
};

struct ClassRegistry {
    std::string task_id;
    std::vector<ClassEntry> classes;

    // Throws Error("invalid registry") on duplicate canonical names or on an
    // alias that maps to more than one canonical name.
    void validate() const;
    const ClassEntry* find(const std::string& canonical) const;
};

ClassRegistry load_registry(const std::string& json_text);
ClassRegistry load_registry_file(const std::string& path);

struct Proposal {
    std::string cls; // canonical class name
    Box box;
    int attempt = 0;
};

struct ProposalSet {
    std::vector<Proposal> items; // arrival order (the union B)

    std::vector<const Proposal*> for_class(const std::string& cls) const;
    std::size_t count_for(const std::string& cls) const;
};

struct Rejection {
    std::string raw;    // offending item, re-serialized
    std::string reason; // "unknown class" | "empty box" | "bad bbox" | "bad item"
};

struct IntakeOutcome {
    ProposalSet accepted;
    std::vector<Rejection> rejections;
    bool retry_needed = false;
    std::string queried_class; // class phrase the failed query asked about
};

// Clamp to [0,W]x[0,H]; nullopt when the clipped box is degenerate.
std::optional<Box> clip_box(const Box& box, double image_w, double image_h);

// Case-insensitive, whitespace-trimmed match against canonical names then
// aliases; nullopt when the label is unknown.
std::optional<std::string> normalize_class(const std::string& label,
                                           const ClassRegistry& registry);

// Total parse of a raw provider response. `queried_class` is carried into the
// outcome so a failed parse can be retried for the right class phrase.
IntakeOutcome parse_proposals(const std::string& raw, const ClassRegistry& registry,
                              double image_w, double image_h,
                              const std::string& queried_class = "", int attempt = 0);

struct RetryDirective {
    std::string class_phrase; // synonym to substitute into the next query
};

// At most one retry: a directive is produced only when the outcome asked for
// one, this is attempt 0, and the registry has a synonym for the class.
std::optional<RetryDirective> plan_retry(const IntakeOutcome& outcome,
                                         const ClassRegistry& registry, int attempt);

// ProposalSet JSON mirrors the accepted envelope plus a "rejections" array.
std::string proposal_set_to_json(const ProposalSet& set,
                                 const std::vector<Rejection>& rejections = {});

} // namespace tk::intake
