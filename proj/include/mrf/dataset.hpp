// Dataset synthesis and manifests.
//
// A dataset directory holds moving/, fixed/ and field_gt/ subdirectories
// with one entry per sample id, plus manifest.txt: a key=value header
// followed by one id per line. Per-sample randomness comes from splitting
// the root seed (root + index), so generation is reproducible and
// parallelizable.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "io.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "tensor.hpp"

namespace mrf {

// Procedural grayscale scene: a low-frequency base with soft blobs and
// hard-edged rectangles, giving both smooth regions and strong gradients.
inline Tensor procedural_scene(int h, int w, Rng& rng) {
    Tensor img(h, w, 1);
    // Low-frequency base from a bilinear 5x5 lattice.
    double lattice[5][5];
    for (auto& row : lattice)
        for (auto& v : row) v = rng.uniform(0.15, 0.7);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fy = h > 1 ? 4.0 * y / (h - 1) : 0.0;
            const double fx = w > 1 ? 4.0 * x / (w - 1) : 0.0;
            const int y0 = std::min(3, static_cast<int>(fy)), x0 = std::min(3, static_cast<int>(fx));
            const double wy = fy - y0, wx = fx - x0;
            img.at(y, x, 0) = (1 - wy) * ((1 - wx) * lattice[y0][x0] + wx * lattice[y0][x0 + 1]) +
                              wy * ((1 - wx) * lattice[y0 + 1][x0] + wx * lattice[y0 + 1][x0 + 1]);
        }
    const int blobs = rng.uniform_int(4, 7);
    for (int b = 0; b < blobs; ++b) {
        const double cy = rng.uniform(0.1, 0.9) * h, cx = rng.uniform(0.1, 0.9) * w;
        const double r = rng.uniform(0.08, 0.25) * std::min(h, w);
        const double amp = rng.uniform(0.2, 0.5) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                img.at(y, x, 0) += amp * std::exp(-d2 / (2 * r * r));
            }
    }
    // Rectangles with a ~2.5 px smoothstep falloff: strong edge contrast
    // that is still band-limited enough for bilinear resampling to be
    // nearly exact (a hard unit step would alias under sub-pixel warps).
    const int rects = rng.uniform_int(2, 4);
    for (int rct = 0; rct < rects; ++rct) {
        const double y0 = rng.uniform_int(0, h - 2), x0 = rng.uniform_int(0, w - 2);
        const double y1 = std::min<double>(h - 1, y0 + rng.uniform_int(h / 8, h / 3));
        const double x1 = std::min<double>(w - 1, x0 + rng.uniform_int(w / 8, w / 3));
        const double amp = rng.uniform(0.15, 0.4) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
        auto sstep = [](double t) {
            t = std::clamp(t, 0.0, 1.0);
            return t * t * (3.0 - 2.0 * t);
        };
        const double s = 2.5;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double m = sstep((y - y0) / s) * sstep((y1 - y) / s) *
                                 sstep((x - x0) / s) * sstep((x1 - x) / s);
                if (m > 0.0) img.at(y, x, 0) += amp * m;
            }
    }
    for (auto& v : img.value()) v = std::clamp(v, 0.02, 0.98);
    return img;
}

struct DatasetManifest {
    std::string root;
    std::vector<std::string> ids;
    std::string regime;
    std::uint64_t seed = 0;
    int image_size = 0;
    std::string modality = "mono";

    std::string moving_path(const std::string& id) const { return root + "/moving/" + id + ".png"; }
    std::string fixed_path(const std::string& id) const { return root + "/fixed/" + id + ".png"; }
    std::string field_path(const std::string& id) const { return root + "/field_gt/" + id + ".bin"; }

    void save() const {
        std::ofstream out(root + "/manifest.txt");
        if (!out) throw data_error("cannot write manifest in " + root);
        out << "count=" << ids.size() << "\n";
        out << "regime=" << regime << "\n";
        out << "seed=" << seed << "\n";
        out << "image_size=" << image_size << "\n";
        out << "modality=" << modality << "\n";
        for (const auto& id : ids) out << id << "\n";
    }

    static DatasetManifest load(const std::string& path) {
        namespace fs = std::filesystem;
        std::string manifest_file = path;
        if (fs::is_directory(path)) manifest_file = path + "/manifest.txt";
        std::ifstream in(manifest_file);
        if (!in) throw data_error("cannot open manifest: " + manifest_file);
        DatasetManifest m;
        m.root = fs::path(manifest_file).parent_path().string();
        if (m.root.empty()) m.root = ".";
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq != std::string::npos) {
                const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
                if (k == "regime") m.regime = v;
                else if (k == "seed") m.seed = std::stoull(v);
                else if (k == "image_size") m.image_size = std::stoi(v);
                else if (k == "modality") m.modality = v;
                // count is implied by the id list
            } else {
                m.ids.push_back(line);
            }
        }
        m.validate();
        return m;
    }

    void validate() const {
        namespace fs = std::filesystem;
        if (ids.empty()) throw data_error("manifest lists no samples: " + root);
        for (const auto& id : ids) {
            if (!fs::exists(moving_path(id))) throw data_error("missing " + moving_path(id));
            if (!fs::exists(fixed_path(id))) throw data_error("missing " + fixed_path(id));
            if (!fs::exists(field_path(id))) throw data_error("missing " + field_path(id));
        }
    }
};

struct SynthOptions {
    std::string regime = "slight";
    std::uint64_t seed = 7;
    int count = 10;
    std::string in_dir;  // optional: source PNGs; procedural scenes otherwise
    std::string out_dir;
    int image_size = 64;
    std::string modality = "mono";  // mono | inverted
};

// Generates count (moving, fixed, field_gt) triples. The fixed image is the
// scene itself; the moving image is the (optionally intensity-inverted)
// scene pushed through the sampled hybrid deformation.
inline DatasetManifest synthesize_dataset(const SynthOptions& opt) {
    namespace fs = std::filesystem;
    check(opt.count > 0, "synth: count must be positive");
    const DeformationRegime regime = DeformationRegime::by_name(opt.regime);
    check(opt.modality == "mono" || opt.modality == "inverted",
          "synth: modality must be mono or inverted");

    std::vector<std::string> sources;
    if (!opt.in_dir.empty()) {
        for (const auto& e : fs::directory_iterator(opt.in_dir))
            if (e.path().extension() == ".png") sources.push_back(e.path().string());
        std::sort(sources.begin(), sources.end());
        if (sources.empty()) throw data_error("no .png files in " + opt.in_dir);
    }

    fs::create_directories(opt.out_dir + "/moving");
    fs::create_directories(opt.out_dir + "/fixed");
    fs::create_directories(opt.out_dir + "/field_gt");

    DatasetManifest m;
    m.root = opt.out_dir;
    m.regime = opt.regime;
    m.seed = opt.seed;
    m.image_size = opt.image_size;
    m.modality = opt.modality;

    for (int i = 0; i < opt.count; ++i) {
        Rng rng = Rng::split(opt.seed, static_cast<std::uint64_t>(i));
        Tensor scene;
        if (sources.empty()) {
            scene = procedural_scene(opt.image_size, opt.image_size, rng);
        } else {
            Tensor full = load_png(sources[i % sources.size()]);
            check(full.height() >= opt.image_size && full.width() >= opt.image_size,
                  "synth: source image smaller than requested size");
            scene = Tensor(opt.image_size, opt.image_size, 1);
            for (int y = 0; y < opt.image_size; ++y)
                for (int x = 0; x < opt.image_size; ++x) scene.at(y, x, 0) = full.at(y, x, 0);
        }
        Tensor source = scene;
        if (opt.modality == "inverted") {
            source = Tensor(scene.shape());
            for (int j = 0; j < scene.size(); ++j) source.value()[j] = 1.0 - scene.value()[j];
        }
        const MisalignedSample sample = synthesize_misaligned(source, regime, rng);

        char id[16];
        std::snprintf(id, sizeof id, "%05d", i);
        m.ids.emplace_back(id);
        save_png(m.moving_path(id), sample.image);
        save_png(m.fixed_path(id), scene);
        save_field(m.field_path(id), sample.total_field);
    }
    m.save();
    return m;
}

struct Pair {
    Tensor moving, fixed, field_gt;
};

inline std::vector<Pair> load_pairs(const DatasetManifest& m) {
    std::vector<Pair> out;
    out.reserve(m.ids.size());
    for (const auto& id : m.ids) {
        Pair p{load_png(m.moving_path(id)), load_png(m.fixed_path(id)), load_field(m.field_path(id))};
        check(p.moving.shape() == p.fixed.shape(), "dataset: moving/fixed shape mismatch for " + id);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace mrf
