#include "tunnelkit/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tk::maskseg {

std::string request_to_json(const SegmentRequest& req) {
    nlohmann::ordered_json j;
    j["image"] = req.image_ref;
    j["bundle"] = nlohmann::ordered_json::parse(recal::bundle_to_json(req.bundle));
    return j.dump();
}

std::string request_digest(const SegmentRequest& req) {
    return fnv1a64_hex(request_to_json(req));
}

Mask segment(const SegmentRequest& req, SegmenterProvider& provider) {
    if (!req.valid())
        throw std::invalid_argument("segment: need positive points or a valid box");
    Mask mask = provider.run(req);
    if (mask.width != req.image_w || mask.height != req.image_h)
        throw Error("provider contract violation",
                    "mask dims " + std::to_string(mask.width) + "x" +
                        std::to_string(mask.height) + " vs request " +
                        std::to_string(req.image_w) + "x" + std::to_string(req.image_h));
    mask.provenance = {provider.id(), request_digest(req)};
    return mask;
}

namespace {

// Rasterize a set of kept cells into a pixel mask; each cell fills its
// half-open pixel region.
Mask rasterize_cells(const grid::KeyPatchField& field,
                     const std::vector<std::uint8_t>& keep) {
    const auto w = static_cast<std::uint32_t>(std::lround(field.image_w));
    const auto h = static_cast<std::uint32_t>(std::lround(field.image_h));
    Mask out = make_mask(w, h);
    for (std::uint32_t y = 0; y < h; ++y) {
        const int m = std::clamp(
            static_cast<int>(std::floor((y + 0.5) / field.image_h * field.K)) + 1, 1,
            field.K);
        for (std::uint32_t x = 0; x < w; ++x) {
            const int n = std::clamp(
                static_cast<int>(std::floor((x + 0.5) / field.image_w * field.K)) + 1, 1,
                field.K);
            const std::size_t cell =
                static_cast<std::size_t>(m - 1) * field.K + (n - 1);
            if (keep[cell]) out.set(x, y, 1);
        }
    }
    return out;
}

grid::CellIndex cell_of_point(const grid::KeyPatchField& field, const Point& p) {
    return grid::locate_cell(grid::Anchor{p}, field.image_w, field.image_h, field.K);
}

} // namespace

Mask reference_segment(const grid::KeyPatchField& field,
                       const recal::PromptBundle& bundle, double tau_seg) {
    if (bundle.pos.empty())
        throw std::invalid_argument("reference_segment: positive prompts required");

    // Query vector: the bundle prototype when carried in-process, otherwise
    // the mean of the positive-prompt cells (the bundle JSON schema does not
    // serialize prototypes).
    std::vector<float> query = bundle.prototype;
    if (query.empty()) {
        std::vector<double> acc(field.dim, 0.0);
        for (const Point& p : bundle.pos) {
            const float* v = field.at(cell_of_point(field, p));
            for (std::uint32_t d = 0; d < field.dim; ++d) acc[d] += v[d];
        }
        query.resize(field.dim);
        for (std::uint32_t d = 0; d < field.dim; ++d)
            query[d] = static_cast<float>(acc[d] / static_cast<double>(bundle.pos.size()));
    }

    const recal::SimilarityField sim = recal::similarity_field(query, field);
    const std::size_t cells = static_cast<std::size_t>(field.K) * field.K;
    std::vector<std::uint8_t> above(cells, 0);
    for (int m = 1; m <= field.K; ++m)
        for (int n = 1; n <= field.K; ++n)
            above[static_cast<std::size_t>(m - 1) * field.K + (n - 1)] =
                sim.at(grid::CellIndex{m, n}) >= tau_seg;

    // Flood the 4-connected above-threshold region around each positive cell.
    std::vector<std::uint8_t> keep(cells, 0);
    std::deque<grid::CellIndex> work;
    auto idx = [&](const grid::CellIndex& c) {
        return static_cast<std::size_t>(c.m - 1) * field.K + (c.n - 1);
    };
    for (const Point& p : bundle.pos) {
        const grid::CellIndex c = cell_of_point(field, p);
        if (above[idx(c)] && !keep[idx(c)]) {
            keep[idx(c)] = 1;
            work.push_back(c);
        }
        while (!work.empty()) {
            const grid::CellIndex cur = work.front();
            work.pop_front();
            const grid::CellIndex nbrs[4] = {{cur.m - 1, cur.n},
                                             {cur.m + 1, cur.n},
                                             {cur.m, cur.n - 1},
                                             {cur.m, cur.n + 1}};
            for (const auto& nb : nbrs) {
                if (nb.m < 1 || nb.m > field.K || nb.n < 1 || nb.n > field.K) continue;
                if (above[idx(nb)] && !keep[idx(nb)]) {
                    keep[idx(nb)] = 1;
                    work.push_back(nb);
                }
            }
        }
    }

    // Negative veto: any kept region containing a negative-prompt cell is
    // removed as a whole.
    for (const Point& p : bundle.neg) {
        const grid::CellIndex c = cell_of_point(field, p);
        if (!keep[idx(c)]) continue;
        std::deque<grid::CellIndex> erase{c};
        keep[idx(c)] = 0;
        while (!erase.empty()) {
            const grid::CellIndex cur = erase.front();
            erase.pop_front();
            const grid::CellIndex nbrs[4] = {{cur.m - 1, cur.n},
                                             {cur.m + 1, cur.n},
                                             {cur.m, cur.n - 1},
                                             {cur.m, cur.n + 1}};
            for (const auto& nb : nbrs) {
                if (nb.m < 1 || nb.m > field.K || nb.n < 1 || nb.n > field.K) continue;
                if (keep[idx(nb)]) {
                    keep[idx(nb)] = 0;
                    erase.push_back(nb);
                }
            }
        }
    }

    return rasterize_cells(field, keep);
}

Mask ReferenceSegmenter::run(const SegmentRequest& req) {
    if (req.bundle.pos.empty()) {
        // Box-only prompting: the box region is the mask.
        Mask out = make_mask(req.image_w, req.image_h);
        const auto x1 = static_cast<std::int64_t>(std::floor(req.bundle.box.x1));
        const auto y1 = static_cast<std::int64_t>(std::floor(req.bundle.box.y1));
        const auto x2 = static_cast<std::int64_t>(std::ceil(req.bundle.box.x2));
        const auto y2 = static_cast<std::int64_t>(std::ceil(req.bundle.box.y2));
        for (std::int64_t y = std::max<std::int64_t>(0, y1);
             y < std::min<std::int64_t>(req.image_h, y2); ++y)
            for (std::int64_t x = std::max<std::int64_t>(0, x1);
                 x < std::min<std::int64_t>(req.image_w, x2); ++x)
                out.set(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), 1);
        return out;
    }
    return reference_segment(*field_, req.bundle, tau_seg_);
}

Mask FileExchangeSegmenter::run(const SegmentRequest& req) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir_, ec))
        throw Error("provider unavailable", "exchange dir missing: " + dir_);
    const std::string digest = request_digest(req);
    const fs::path req_path = fs::path(dir_) / (digest + ".request.json");
    {
        std::ofstream out(req_path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("provider unavailable", "cannot write request file");
        const std::string text = request_to_json(req);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
    }
    const fs::path resp_path = fs::path(dir_) / (digest + ".response.pgm");
    if (!fs::exists(resp_path, ec))
        throw Error("provider unavailable", "no response at " + resp_path.string());
    try {
        return read_mask_file(resp_path.string());
    } catch (const Error& e) {
        throw Error("provider contract violation", e.what());
    }
}

} // namespace tk::maskseg
