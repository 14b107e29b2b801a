// Drives every tm subcommand over a generated fixture, stage by stage:
// intake -> recal -> segment -> measure -> entity -> kb ingest/query ->
// report assemble/check -> overlay -> run -> eval. Verifies exit codes and
// the key artifacts of each stage.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "scene.hpp"
#include "tunnelkit/entity.hpp"
#include "tunnelkit/feature_grid.hpp"
#include "tunnelkit/knowledge.hpp"
#include "tunnelkit/mask.hpp"
#include "tunnelkit/recalibrate.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_tm;
fs::path g_dir;
int g_failures = 0;

void expect(bool ok, const std::string& what) {
    std::printf("  [%s] %s\n", ok ? "ok" : "FAIL", what.c_str());
    if (!ok) ++g_failures;
}

int run_tm(const std::string& args) {
    const std::string cmd =
        g_tm + " " + args + " > " + (g_dir / "stdout.txt").string() + " 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

} // namespace

int main(int argc, char** argv) {
    g_tm = argc > 1 ? argv[1] : "./tools/tm";
    g_dir = fs::current_path() / "cli_smoke_work";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);

    const scene::Scene sc = scene::make_scene(31337, 1.0, 0.5);
    tk::grid::save_feature_map_file(sc.fmap, (g_dir / "scene.dfm").string());
    {
        std::ostringstream ss;
        ss << R"({"result":[{"class":"Spalling","bbox":[)" << sc.proposal_box.x1 << ","
           << sc.proposal_box.y1 << "," << sc.proposal_box.x2 << ","
           << sc.proposal_box.y2 << R"(]},{"class":"rust","bbox":[0,0,10,10]}]})";
        spit(g_dir / "raw.txt", ss.str());
    }
    spit(g_dir / "registry.json", R"({"task":"demo","classes":[
      {"name":"spalling","aliases":["scaling"],"synonyms_for_retry":["surface scaling"],
       "kind":"region_like"}]})");
    spit(g_dir / "zones.json", R"({"zones":[
      {"label":"left wall","rect":[0,0,0.3333,1]},
      {"label":"road surface","rect":[0,0,1,1]}]})");
    spit(g_dir / "rules.json", R"({"rules":[
      {"class":"spalling","indicator":"area_mm2","thresholds":[10000,50000],
       "levels":["minor","moderate","severe"]}]})");
    spit(g_dir / "config.json", R"({"K":24,"r":5,"tau":0.6,"top_m":5,"neg_count":5,
      "nms_iou":0.5,"tau_seg":0.6,"mm_per_pixel":1.0,
      "registry":")" + (g_dir / "registry.json").string() + R"(",
      "zone_map":")" + (g_dir / "zones.json").string() + R"(",
      "rule_set":")" + (g_dir / "rules.json").string() + R"("})");

    std::printf("intake\n");
    expect(run_tm("intake --registry " + (g_dir / "registry.json").string() + " --in " +
              (g_dir / "raw.txt").string() + " --width 768 --height 768 --out " +
              (g_dir / "proposals.json").string()) == 0,
           "exit code 0");
    {
        const std::string text = slurp(g_dir / "proposals.json");
        expect(text.find("\"spalling\"") != std::string::npos, "canonical class accepted");
        expect(text.find("unknown class") != std::string::npos, "unknown class rejected");
    }

    std::printf("recal\n");
    expect(run_tm("--config " + (g_dir / "config.json").string() + " recal --features " +
              (g_dir / "scene.dfm").string() + " --proposals " +
              (g_dir / "proposals.json").string() + " --out " +
              (g_dir / "bundles.json").string()) == 0,
           "exit code 0");
    {
        const auto bundles = tk::recal::bundles_from_json(slurp(g_dir / "bundles.json"));
        expect(bundles.size() == 1, "one bundle after NMS");
        expect(!bundles.empty() && !bundles[0].pos.empty(), "positive prompts present");
    }

    std::printf("segment (reference)\n");
    expect(run_tm("--config " + (g_dir / "config.json").string() +
              " segment --provider reference --tau-seg 0.6 --features " +
              (g_dir / "scene.dfm").string() + " --bundles " +
              (g_dir / "bundles.json").string() + " --out " +
              (g_dir / "mask.pgm").string()) == 0,
           "exit code 0");
    {
        const auto mask = tk::maskseg::read_mask_file((g_dir / "mask.pgm").string());
        expect(tk::maskseg::mask_iou(mask, sc.truth) >= 0.9, "mask recovers the block");
    }

    std::printf("segment (external, staged response)\n");
    {
        fs::create_directories(g_dir / "exchange");
        // First call fails (no response), writes the request file.
        expect(run_tm("--config " + (g_dir / "config.json").string() +
                  " segment --provider external --exchange-dir " +
                  (g_dir / "exchange").string() + " --features " +
                  (g_dir / "scene.dfm").string() + " --bundles " +
                  (g_dir / "bundles.json").string() + " --out " +
                  (g_dir / "mask_ext.pgm").string()) != 0,
               "missing response is a typed failure");
        std::string digest;
        for (const auto& e : fs::directory_iterator(g_dir / "exchange")) {
            const std::string name = e.path().filename().string();
            if (name.size() > 13 && name.substr(16) == ".request.json")
                digest = name.substr(0, 16);
        }
        expect(!digest.empty(), "request file was written");
        if (!digest.empty()) {
            tk::maskseg::write_mask_file(
                sc.truth, (g_dir / "exchange" / (digest + ".response.pgm")).string());
            expect(run_tm("--config " + (g_dir / "config.json").string() +
                      " segment --provider external --exchange-dir " +
                      (g_dir / "exchange").string() + " --features " +
                      (g_dir / "scene.dfm").string() + " --bundles " +
                      (g_dir / "bundles.json").string() + " --out " +
                      (g_dir / "mask_ext.pgm").string()) == 0,
                   "staged response accepted");
        }
    }

    std::printf("measure\n");
    expect(run_tm("measure --mask " + (g_dir / "mask.pgm").string() +
              " --mm-per-pixel 1.0 --out " + (g_dir / "attrs.json").string()) == 0,
           "exit code 0");
    expect(slurp(g_dir / "attrs.json").find("area_mm2") != std::string::npos,
           "area present");

    std::printf("entity\n");
    expect(run_tm("entity --class spalling --attrs " + (g_dir / "attrs.json").string() +
              " --zones " + (g_dir / "zones.json").string() + " --rules " +
              (g_dir / "rules.json").string() + " --mask " + (g_dir / "mask.pgm").string() +
              " --width 768 --height 768 --confidence 0.9 --section S-1 " +
              "--time 2026-03-01T08:00:00Z --out " + (g_dir / "entity.json").string()) == 0,
           "exit code 0");
    {
        const auto e = tk::entity::parse_entity(slurp(g_dir / "entity.json"));
        expect(e.complete(), "entity complete");
        expect(e.severity.has_value(), "severity graded");
    }

    std::printf("kb ingest / query\n");
    expect(run_tm("kb ingest --store " + (g_dir / "kb.jsonl").string() +
              " --text \"spalling above the moderate area threshold needs repair "
              "planning\" --category spalling --part wall --source manual --dim 64") == 0,
           "ingest text");
    spit(g_dir / "doc.txt",
         "crack widths near grading thresholds warrant reinspection and careful "
         "monitoring over time. seepage near joints is commonly re-inspected.");
    expect(run_tm("kb ingest --store " + (g_dir / "kb.jsonl").string() + " --file " +
              (g_dir / "doc.txt").string() +
              " --chunk-size 80 --overlap 16 --category crack --part wall --source "
              "manual") == 0,
           "ingest chunked file");
    expect(run_tm("kb query --store " + (g_dir / "kb.jsonl").string() +
              " --text \"spalling area repair\" --k 2 --out " +
              (g_dir / "evidence.json").string()) == 0,
           "query");
    expect(slurp(g_dir / "evidence.json").find("\"id\"") != std::string::npos,
           "evidence returned");

    std::printf("report assemble / check\n");
    expect(run_tm("report assemble --entity " + (g_dir / "entity.json").string() +
              " --evidence " + (g_dir / "evidence.json").string() + " --store " +
              (g_dir / "kb.jsonl").string() + " --out " +
              (g_dir / "request.json").string()) == 0,
           "assemble");
    expect(slurp(g_dir / "request.json").find("[F1]") != std::string::npos,
           "citation tokens present");
    spit(g_dir / "report.txt",
         "Per [F1], repair planning is one option; findings remain uncertain pending "
         "reinspection.");
    expect(run_tm("report check --report " + (g_dir / "report.txt").string() +
              " --evidence " + (g_dir / "evidence.json").string() + " --store " +
              (g_dir / "kb.jsonl").string() + " --entity " +
              (g_dir / "entity.json").string() + " --out " +
              (g_dir / "verdict.json").string()) == 0,
           "check");
    expect(slurp(g_dir / "verdict.json").find("\"overall\":true") != std::string::npos,
           "verdict passes");

    std::printf("overlay\n");
    expect(run_tm("overlay --features " + (g_dir / "scene.dfm").string() + " --bundles " +
              (g_dir / "bundles.json").string() + " --mask " +
              (g_dir / "mask.pgm").string() + " --out " +
              (g_dir / "overlay.ppm").string()) == 0,
           "exit code 0");
    expect(slurp(g_dir / "overlay.ppm").substr(0, 2) == "P6", "PPM written");

    std::printf("run + eval\n");
    {
        std::ostringstream man;
        man << R"({"id":"scene","features":")" << (g_dir / "scene.dfm").string()
            << R"(","proposals":")" << (g_dir / "proposals.json").string()
            << R"(","section_id":"S-1","time":"2026-03-01T08:00:00Z"})" << "\n";
        spit(g_dir / "manifest.jsonl", man.str());
    }
    expect(run_tm("--config " + (g_dir / "config.json").string() + " run --manifest " +
              (g_dir / "manifest.jsonl").string() + " --out " +
              (g_dir / "run").string()) == 0,
           "run");
    tk::maskseg::write_mask_file(sc.truth, (g_dir / "truth.pgm").string());
    {
        std::ostringstream gt;
        gt << R"({"image":"scene","class":"spalling","box":[)" << sc.block_px.x1 << ","
           << sc.block_px.y1 << "," << sc.block_px.x2 << "," << sc.block_px.y2
           << R"(],"mask":"truth.pgm","entity":{"location":"road surface",)"
           << R"("geometry":{"area_mm2":)" << sc.truth.foreground_count()
           << R"(},"severity":{"level":"moderate"},"complete":true}})" << "\n";
        spit(g_dir / "gt.jsonl", gt.str());
    }
    expect(run_tm("eval --pred " + (g_dir / "run" / "detections.jsonl").string() + " --gt " +
              (g_dir / "gt.jsonl").string() + " --out " +
              (g_dir / "metrics.json").string()) == 0,
           "eval");
    {
        const std::string metrics = slurp(g_dir / "metrics.json");
        expect(metrics.find("\"f1\": 1.0") != std::string::npos, "perfect F1 on fixture");
        expect(metrics.find("\"mean_mask_iou\": 1.0") != std::string::npos,
               "mask IoU computed");
    }

    std::printf("%s\n", g_failures == 0 ? "CLI smoke: all stages OK"
                                        : "CLI smoke: FAILURES present");
    return g_failures == 0 ? 0 : 1;
}
