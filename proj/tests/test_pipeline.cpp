#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "scene.hpp"
#include "tunnelkit/feature_grid.hpp"
#include "tunnelkit/mask.hpp"
#include "tunnelkit/pipeline.hpp"

using namespace tk;
using namespace tk::pipeline;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path dir;

    explicit Workspace(const std::string& name) {
        dir = fs::temp_directory_path() / name;
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }

    std::string file(const std::string& rel, const std::string& content) const {
        const fs::path p = dir / rel;
        fs::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        return p.string();
    }
    std::string slurp(const std::string& rel) const {
        std::ifstream in(dir / rel, std::ios::binary);
        REQUIRE(in.good());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
};

std::string registry_json() {
    return R"({"task":"synthetic","classes":[
      {"name":"spalling","aliases":["scaling"],"synonyms_for_retry":["surface scaling"],
       "kind":"region_like"},
      {"name":"crack","aliases":["fissure"],"synonyms_for_retry":["fissure"],
       "kind":"crack_like"}
    ]})";
}

std::string zones_json() {
    return R"({"zones":[
      {"label":"left wall","rect":[0,0,0.3333,1]},
      {"label":"crown","rect":[0,0,1,0.25]},
      {"label":"right wall","rect":[0.6667,0,1,1]},
      {"label":"road surface","rect":[0,0,1,1]}
    ]})";
}

std::string rules_json() {
    return R"({"rules":[
      {"class":"spalling","indicator":"area_mm2","thresholds":[10000,50000],
       "levels":["minor","moderate","severe"]},
      {"class":"crack","indicator":"width_mm","thresholds":[2,5],
       "levels":["minor","moderate","severe"],"epsilon":0.2}
    ]})";
}

PipelineConfig make_config(const Workspace& ws, const scene::Scene& sc) {
    grid::save_feature_map_file(sc.fmap, (ws.dir / "scene.dfm").string());
    ws.file("registry.json", registry_json());
    ws.file("zones.json", zones_json());
    ws.file("rules.json", rules_json());
    PipelineConfig cfg;
    cfg.registry_path = (ws.dir / "registry.json").string();
    cfg.zone_map_path = (ws.dir / "zones.json").string();
    cfg.rule_set_path = (ws.dir / "rules.json").string();
    return cfg;
}

std::string proposal_json(const Box& b) {
    std::ostringstream ss;
    ss << R"({"result":[{"class":"spalling","bbox":[)" << b.x1 << "," << b.y1 << ","
       << b.x2 << "," << b.y2 << "]}]}";
    return ss.str();
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("planted-block scene yields one entity with an exact-area mask") {
    Workspace ws("tk_pipeline_block");
    const scene::Scene sc = scene::make_scene(101, 1.5, 1.0);
    PipelineConfig cfg = make_config(ws, sc);

    ws.file("proposals.json", proposal_json(sc.proposal_box));
    std::vector<PipelineInput> inputs{{"scene", (ws.dir / "scene.dfm").string(),
                                       (ws.dir / "proposals.json").string(), "", "S-1",
                                       "2026-01-15T09:00:00Z"}};

    const RunSummary sum = run_pipeline(inputs, cfg, (ws.dir / "out").string());
    CHECK(sum.entities == 1);
    CHECK(sum.errors.empty());

    const maskseg::Mask mask = maskseg::read_mask_file((ws.dir / "out/masks/scene_000.pgm").string());
    CHECK(maskseg::mask_iou(mask, sc.truth) >= 0.9);
    CHECK(mask.foreground_count() == sc.truth.foreground_count());

    const std::string entity_json = ws.slurp("out/entities/scene_000.json");
    const entity::DefectEntity e = entity::parse_entity(entity_json);
    CHECK(e.type == "spalling");
    CHECK(*e.geometry->area_mm2 ==
          doctest::Approx(static_cast<double>(sc.truth.foreground_count())));
    CHECK(e.complete());
    CHECK(e.context.section_id == "S-1");
}

TEST_CASE("zero proposals produce zero entities and a success status") {
    Workspace ws("tk_pipeline_empty");
    const scene::Scene sc = scene::make_scene(102, 0.0, 0.0);
    PipelineConfig cfg = make_config(ws, sc);
    ws.file("proposals.json", R"({"result":[]})");
    std::vector<PipelineInput> inputs{
        {"scene", (ws.dir / "scene.dfm").string(), (ws.dir / "proposals.json").string(),
         "", "", ""}};
    const RunSummary sum = run_pipeline(inputs, cfg, (ws.dir / "out").string());
    CHECK(sum.entities == 0);
    CHECK(sum.errors.empty());
    CHECK(ws.slurp("out/detections.jsonl").empty());
}

TEST_CASE("empty support falls back to box prompting and flags the context") {
    Workspace ws("tk_pipeline_fallback");
    const scene::Scene sc = scene::make_scene(103, 0.0, 0.0);
    PipelineConfig cfg = make_config(ws, sc);
    // Raise tau so nothing passes the threshold: cosine to a mixed prototype
    // stays below 0.999 everywhere, forcing the empty-support path.
    cfg.recal.tau = 0.9999;
    cfg.tau_seg = 0.5;

    ws.file("proposals.json", proposal_json(sc.proposal_box));
    std::vector<PipelineInput> inputs{
        {"scene", (ws.dir / "scene.dfm").string(), (ws.dir / "proposals.json").string(),
         "", "S-2", "2026-01-15T10:00:00Z"}};
    const RunSummary sum = run_pipeline(inputs, cfg, (ws.dir / "out").string());
    CHECK(sum.entities == 1);
    const entity::DefectEntity e =
        entity::parse_entity(ws.slurp("out/entities/scene_000.json"));
    CHECK(e.context.extra_json.find("box_fallback") != std::string::npos);
    // Box-fallback mask is the proposal box region.
    const maskseg::Mask mask =
        maskseg::read_mask_file((ws.dir / "out/masks/scene_000.pgm").string());
    CHECK(mask.foreground_count() > 0);
}

TEST_CASE("unreadable input files produce per-image error records") {
    Workspace ws("tk_pipeline_badfile");
    const scene::Scene sc = scene::make_scene(104, 0.0, 0.0);
    PipelineConfig cfg = make_config(ws, sc);
    std::vector<PipelineInput> inputs{
        {"missing", (ws.dir / "nope.dfm").string(), (ws.dir / "nope.json").string(), "",
         "", ""},
        {"scene", (ws.dir / "scene.dfm").string(),
         ws.file("proposals.json", proposal_json(sc.proposal_box)), "", "", ""}};
    const RunSummary sum = run_pipeline(inputs, cfg, (ws.dir / "out").string());
    CHECK(sum.images == 2);
    CHECK(sum.entities == 1); // the good image still went through
    REQUIRE_FALSE(sum.errors.empty());
    CHECK(sum.errors[0].image == "missing");
    CHECK(sum.errors[0].stage == "intake");
}

TEST_CASE("a retry response file replaces the failed first parse") {
    Workspace ws("tk_pipeline_retry");
    const scene::Scene sc = scene::make_scene(105, 0.5, 0.5);
    PipelineConfig cfg = make_config(ws, sc);
    ws.file("bad.json", "model said something unparsable");
    ws.file("retry.json", proposal_json(sc.proposal_box));
    std::vector<PipelineInput> inputs{
        {"scene", (ws.dir / "scene.dfm").string(), (ws.dir / "bad.json").string(),
         (ws.dir / "retry.json").string(), "", ""}};
    const RunSummary sum = run_pipeline(inputs, cfg, (ws.dir / "out").string());
    CHECK(sum.retries_planned >= 1);
    CHECK(sum.entities == 1);
    const std::string intake_json = ws.slurp("out/intake/scene.json");
    CHECK(intake_json.find("\"retry_needed\": true") != std::string::npos);
}

TEST_CASE("two runs on identical inputs are byte-identical") {
    Workspace ws("tk_pipeline_determinism");
    const scene::Scene sc = scene::make_scene(106, 1.0, -0.5);
    PipelineConfig cfg = make_config(ws, sc);
    ws.file("proposals.json", proposal_json(sc.proposal_box));
    std::vector<PipelineInput> inputs{
        {"scene", (ws.dir / "scene.dfm").string(), (ws.dir / "proposals.json").string(),
         "", "S-9", "2026-02-02T02:02:02Z"}};
    run_pipeline(inputs, cfg, (ws.dir / "a").string());
    run_pipeline(inputs, cfg, (ws.dir / "b").string());
    for (const char* rel :
         {"entities/scene_000.json", "detections.jsonl", "run_summary.json",
          "bundles/scene.json", "requests/scene_000.json"}) {
        CHECK(ws.slurp(std::string("a/") + rel) == ws.slurp(std::string("b/") + rel));
    }
}

TEST_CASE("knowledge base wiring produces evidence-grounded requests") {
    Workspace ws("tk_pipeline_kb");
    const scene::Scene sc = scene::make_scene(107, 0.5, 0.0);
    PipelineConfig cfg = make_config(ws, sc);

    knowledge::FragmentStore store;
    const knowledge::HashEmbedder emb(64);
    store.ingest("spalling areas above ten thousand square millimetres call for review",
                 {"spalling", "wall", "manual"}, emb);
    store.ingest("crack width near two millimetres is a grading boundary",
                 {"crack", "wall", "manual"}, emb);
    store.save_file((ws.dir / "kb.jsonl").string());
    cfg.knowledge_base_path = (ws.dir / "kb.jsonl").string();
    ws.file("template.txt",
            "‹type› at ‹location›, severity ‹severity›");
    cfg.template_path = (ws.dir / "template.txt").string();

    ws.file("proposals.json", proposal_json(sc.proposal_box));
    std::vector<PipelineInput> inputs{
        {"scene", (ws.dir / "scene.dfm").string(), (ws.dir / "proposals.json").string(),
         "", "", ""}};
    const RunSummary sum = run_pipeline(inputs, cfg, (ws.dir / "out").string());
    CHECK(sum.entities == 1);
    CHECK(sum.fallback_requests == 0);
    const std::string req = ws.slurp("out/requests/scene_000.json");
    CHECK(req.find("[F1]") != std::string::npos);
    CHECK(req.find("constraints") != std::string::npos);
}

} // TEST_SUITE
