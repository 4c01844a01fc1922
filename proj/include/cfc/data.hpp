#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "tensor.hpp"

// Dataset plumbing: PGM image I/O, the on-disk layout
// root/{images,masks}/name.pgm + splits.json, the synthetic phantom
// generator, geometric augmentation, and labeled/unlabeled batch streams.
// Images are normalized to [0, 1] at load; masks stay class indices.
namespace cfc::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- PGM I/O

struct GrayImage {
    int h = 0, w = 0;
    int maxval = 255;
    std::vector<std::uint16_t> pix;  // row-major
};

namespace detail {
inline int pgm_token(std::istream& in, const std::string& path) {
    // skips whitespace and '#' comments between header tokens
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw DataError("pgm: malformed header in " + path);
    return v;
}
}  // namespace detail

inline GrayImage read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("pgm: cannot open " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5") throw DataError("pgm: not a P5 file: " + path.string());
    GrayImage img;
    img.w = detail::pgm_token(in, path.string());
    img.h = detail::pgm_token(in, path.string());
    img.maxval = detail::pgm_token(in, path.string());
    if (img.w < 1 || img.h < 1 || img.maxval < 1 || img.maxval > 65535)
        throw DataError("pgm: bad dimensions in " + path.string());
    in.get();  // single whitespace after maxval
    const std::size_t n = static_cast<std::size_t>(img.h) * img.w;
    img.pix.resize(n);
    if (img.maxval > 255) {
        std::vector<std::uint8_t> raw(n * 2);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!in) throw DataError("pgm: truncated pixel data in " + path.string());
        for (std::size_t i = 0; i < n; ++i)
            img.pix[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    } else {
        std::vector<std::uint8_t> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!in) throw DataError("pgm: truncated pixel data in " + path.string());
        for (std::size_t i = 0; i < n; ++i) img.pix[i] = raw[i];
    }
    return img;
}

inline void write_pgm(const fs::path& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("pgm: cannot write " + path.string());
    out << "P5\n" << img.w << " " << img.h << "\n" << img.maxval << "\n";
    const std::size_t n = static_cast<std::size_t>(img.h) * img.w;
    if (img.maxval > 255) {
        std::vector<std::uint8_t> raw(n * 2);
        for (std::size_t i = 0; i < n; ++i) {
            raw[2 * i] = static_cast<std::uint8_t>(img.pix[i] >> 8);
            raw[2 * i + 1] = static_cast<std::uint8_t>(img.pix[i] & 0xff);
        }
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    } else {
        std::vector<std::uint8_t> raw(n);
        for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<std::uint8_t>(img.pix[i]);
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    }
    if (!out) throw DataError("pgm: write failed for " + path.string());
}

// ---------------------------------------------------------------- dataset spec

struct DatasetItem {
    std::string name;
    fs::path image;
    fs::path mask;  // empty for unlabeled entries
};

struct DatasetSpec {
    fs::path root;
    std::vector<DatasetItem> labeled, unlabeled, test;
    int height = 256, width = 256;  // training resolution (resize target)
    int num_classes = 2;
};

inline fs::path find_image(const fs::path& dir, const std::string& name) {
    const fs::path p = dir / (name + ".pgm");
    if (fs::exists(p)) return p;
    return {};
}

// Parses splits.json ({"labeled": [...], "unlabeled": [...], "test": [...]})
// and validates every referenced file: labeled/test entries need a mask of
// identical size with class indices < num_classes.
inline DatasetSpec load_dataset(const fs::path& root, int height, int width, int num_classes) {
    if (!fs::exists(root / "splits.json"))
        throw DataError("dataset: missing splits.json under " + root.string());
    nlohmann::json j;
    {
        std::ifstream in(root / "splits.json");
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("dataset: unparsable splits.json: " + std::string(e.what()));
        }
    }
    DatasetSpec spec;
    spec.root = root;
    spec.height = height;
    spec.width = width;
    spec.num_classes = num_classes;

    auto load_split = [&](const char* key, bool with_mask, std::vector<DatasetItem>& out) {
        if (!j.contains(key)) return;
        for (const auto& e : j.at(key)) {
            DatasetItem item;
            item.name = e.get<std::string>();
            item.image = find_image(root / "images", item.name);
            if (item.image.empty())
                throw DataError("dataset: missing image for '" + item.name + "'");
            const GrayImage img = read_pgm(item.image);
            if (with_mask) {
                item.mask = find_image(root / "masks", item.name);
                if (item.mask.empty())
                    throw DataError("dataset: missing mask for '" + item.name + "'");
                const GrayImage m = read_pgm(item.mask);
                if (m.h != img.h || m.w != img.w)
                    throw DataError("dataset: image/mask size mismatch for '" + item.name + "'");
                for (auto v : m.pix)
                    if (v >= num_classes)
                        throw DataError("dataset: class index " + std::to_string(int(v)) +
                                        " >= num_classes in mask '" + item.name + "'");
            }
            out.push_back(std::move(item));
        }
    };
    load_split("labeled", true, spec.labeled);
    load_split("unlabeled", false, spec.unlabeled);
    load_split("test", true, spec.test);
    return spec;
}

// ---------------------------------------------------------------- in-memory samples

struct Sample {
    std::string name;
    int h = 0, w = 0;
    std::vector<float> image;        // [0, 1]
    std::vector<std::uint8_t> mask;  // empty for unlabeled
};

inline Sample load_sample(const DatasetItem& item) {
    Sample s;
    s.name = item.name;
    const GrayImage img = read_pgm(item.image);
    s.h = img.h;
    s.w = img.w;
    s.image.resize(img.pix.size());
    const float inv = 1.0f / static_cast<float>(img.maxval);
    for (std::size_t i = 0; i < img.pix.size(); ++i) s.image[i] = img.pix[i] * inv;
    if (!item.mask.empty()) {
        const GrayImage m = read_pgm(item.mask);
        s.mask.assign(m.pix.begin(), m.pix.end());
    }
    return s;
}

// ---------------------------------------------------------------- augmentation

struct AugmentParams {
    bool flip_h = false, flip_v = false;
    double angle_deg = 0.0;
};

struct AugmentConfig {
    bool enabled = true;
    double max_angle_deg = 25.0;
};

inline AugmentParams sample_augment(std::mt19937& rng, const AugmentConfig& cfg) {
    AugmentParams p;
    if (!cfg.enabled) return p;
    p.flip_h = std::uniform_int_distribution<int>(0, 1)(rng) != 0;
    p.flip_v = std::uniform_int_distribution<int>(0, 1)(rng) != 0;
    p.angle_deg =
        std::uniform_real_distribution<double>(-cfg.max_angle_deg, cfg.max_angle_deg)(rng);
    return p;
}

namespace detail {
// Samples (sy, sx) in source coordinates; out-of-bounds clamps to the edge.
inline float bilinear_at(const std::vector<float>& img, int h, int w, double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = sy - y0, fx = sx - x0;
    const double v = img[static_cast<std::size_t>(y0) * w + x0] * (1 - fy) * (1 - fx) +
                     img[static_cast<std::size_t>(y0) * w + x1] * (1 - fy) * fx +
                     img[static_cast<std::size_t>(y1) * w + x0] * fy * (1 - fx) +
                     img[static_cast<std::size_t>(y1) * w + x1] * fy * fx;
    return static_cast<float>(v);
}

inline std::uint8_t nearest_at(const std::vector<std::uint8_t>& m, int h, int w, double sy,
                               double sx) {
    const int y = std::clamp(static_cast<int>(std::lround(sy)), 0, h - 1);
    const int x = std::clamp(static_cast<int>(std::lround(sx)), 0, w - 1);
    return m[static_cast<std::size_t>(y) * w + x];
}
}  // namespace detail

// Flip + rotate about the center + resize, one resampling pass. The inverse
// map goes target pixel -> rotated source -> flipped source, so image and
// mask see the exact same geometry (bilinear vs nearest respectively).
inline Sample augment(const Sample& in, const AugmentParams& p, int target_h, int target_w) {
    Sample out;
    out.name = in.name;
    out.h = target_h;
    out.w = target_w;
    out.image.resize(static_cast<std::size_t>(target_h) * target_w);
    if (!in.mask.empty()) out.mask.resize(out.image.size());

    const double rad = p.angle_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy_t = (target_h - 1) / 2.0, cx_t = (target_w - 1) / 2.0;
    const double cy_s = (in.h - 1) / 2.0, cx_s = (in.w - 1) / 2.0;
    const double sy_scale = static_cast<double>(in.h) / target_h;
    const double sx_scale = static_cast<double>(in.w) / target_w;

    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) {
            // resize-relative offset from center, rotated backwards
            const double dy = (y - cy_t) * sy_scale, dx = (x - cx_t) * sx_scale;
            double sy = c * dy - s * dx + cy_s;
            double sx = s * dy + c * dx + cx_s;
            if (p.flip_v) sy = (in.h - 1) - sy;
            if (p.flip_h) sx = (in.w - 1) - sx;
            const std::size_t o = static_cast<std::size_t>(y) * target_w + x;
            out.image[o] = detail::bilinear_at(in.image, in.h, in.w, sy, sx);
            if (!in.mask.empty()) out.mask[o] = detail::nearest_at(in.mask, in.h, in.w, sy, sx);
        }
    return out;
}

// ---------------------------------------------------------------- batch streams

struct BatchPlan {
    int labeled_per_batch = 6;
    int unlabeled_per_batch = 6;

    void validate() const {
        if (labeled_per_batch < 1 || unlabeled_per_batch < 1)
            throw ConfigError("BatchPlan: batch sizes must be >= 1");
    }
};

struct LabeledBatch {
    TensorF images;  // (B, 1, H, W)
    MaskT masks;     // (B, H, W)
};

// Without-replacement sampler: reshuffles at each epoch boundary; a split
// shorter than the batch stream simply cycles through fresh epochs.
class EpochSampler {
public:
    EpochSampler() = default;
    EpochSampler(std::size_t n, std::uint32_t seed) : rng_(seed), order_(n) {
        if (n == 0) throw DataError("EpochSampler: empty split");
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    std::size_t next() {
        if (pos_ == order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    std::mt19937 rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

// Owns the decoded samples plus the two independent sampling streams.
class BatchStream {
public:
    BatchStream(const DatasetSpec& spec, const BatchPlan& plan, const AugmentConfig& aug,
                std::uint32_t seed)
        : spec_(spec), plan_(plan), aug_(aug), aug_rng_(seed ^ 0x9e3779b9u) {
        plan.validate();
        if (spec.labeled.empty()) throw DataError("dataset: labeled split is empty");
        for (const auto& it : spec.labeled) labeled_.push_back(load_sample(it));
        for (const auto& it : spec.unlabeled) unlabeled_.push_back(load_sample(it));
        lab_sampler_ = EpochSampler(labeled_.size(), seed);
        // supervised-only runs may legitimately have no unlabeled data
        if (!unlabeled_.empty()) unlab_sampler_ = EpochSampler(unlabeled_.size(), seed + 1);
    }

    std::size_t labeled_count() const { return labeled_.size(); }
    std::size_t unlabeled_count() const { return unlabeled_.size(); }

    LabeledBatch next_labeled() {
        LabeledBatch b;
        b.images = TensorF({plan_.labeled_per_batch, 1, spec_.height, spec_.width});
        b.masks = MaskT({plan_.labeled_per_batch, spec_.height, spec_.width});
        for (int i = 0; i < plan_.labeled_per_batch; ++i) {
            const Sample s = augment(labeled_[lab_sampler_.next()],
                                     sample_augment(aug_rng_, aug_), spec_.height, spec_.width);
            std::copy(s.image.begin(), s.image.end(), &b.images.at4(i, 0, 0, 0));
            std::copy(s.mask.begin(), s.mask.end(), &b.masks.at3(i, 0, 0));
        }
        return b;
    }

    TensorF next_unlabeled() {
        if (unlabeled_.empty()) throw DataError("dataset: unlabeled split is empty");
        TensorF imgs({plan_.unlabeled_per_batch, 1, spec_.height, spec_.width});
        for (int i = 0; i < plan_.unlabeled_per_batch; ++i) {
            const Sample s = augment(unlabeled_[unlab_sampler_.next()],
                                     sample_augment(aug_rng_, aug_), spec_.height, spec_.width);
            std::copy(s.image.begin(), s.image.end(), &imgs.at4(i, 0, 0, 0));
        }
        return imgs;
    }

private:
    DatasetSpec spec_;
    BatchPlan plan_;
    AugmentConfig aug_;
    std::vector<Sample> labeled_, unlabeled_;
    EpochSampler lab_sampler_, unlab_sampler_;
    std::mt19937 aug_rng_;
};

// ---------------------------------------------------------------- phantom generator

struct PhantomConfig {
    int train_count = 200;
    int test_count = 50;
    double labeled_fraction = 0.1;
    int height = 64, width = 64;
    std::uint32_t seed = 7;
    double contrast = 0.45;     // curve brightness over background
    double noise_sigma = 0.05;  // fraction of dynamic range
    double max_fg_fraction = 0.12;

    void validate() const {
        if (train_count < 1 || test_count < 0) throw ConfigError("phantoms: counts must be positive");
        if (labeled_fraction <= 0.0 || labeled_fraction > 1.0)
            throw ConfigError("phantoms: labeled_fraction must be in (0, 1]");
        if (height < 8 || width < 8) throw ConfigError("phantoms: size too small");
    }
};

namespace detail {
// One phantom: smooth low-frequency background + 1-4 thin branching random
// walks (width 1-4 px) + Gaussian noise. The per-image rng makes each file a
// pure function of (cfg.seed, index).
inline void render_phantom(const PhantomConfig& cfg, std::uint32_t index, std::vector<float>& img,
                           std::vector<std::uint8_t>& mask) {
    const int h = cfg.height, w = cfg.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::mt19937 rng(cfg.seed * 0x01000193u + index * 0x9e3779b9u + 1u);
    img.assign(n, 0.0f);
    mask.assign(n, 0);

    // background: two low-frequency sinusoids
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double fy1 = 0.5 + unit(rng), fx1 = 0.5 + unit(rng), ph1 = unit(rng) * 6.283185;
    const double fy2 = 0.5 + unit(rng), fx2 = 0.5 + unit(rng), ph2 = unit(rng) * 6.283185;
    const double a1 = 0.06 + 0.06 * unit(rng), a2 = 0.04 + 0.04 * unit(rng);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / w, v = static_cast<double>(y) / h;
            img[static_cast<std::size_t>(y) * w + x] = static_cast<float>(
                0.35 + a1 * std::sin(6.283185 * (fy1 * v + fx1 * u) + ph1) +
                a2 * std::sin(6.283185 * (fy2 * v - fx2 * u) + ph2));
        }

    const std::size_t fg_cap = static_cast<std::size_t>(cfg.max_fg_fraction * n);
    std::size_t fg = 0;
    auto stamp = [&](double cy, double cx, int width_px) {
        const double r = width_px / 2.0;
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r)));
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dy = y - cy, dx = x - cx;
                if (dy * dy + dx * dx <= r * r + 0.25) {
                    const std::size_t o = static_cast<std::size_t>(y) * w + x;
                    if (!mask[o]) {
                        mask[o] = 1;
                        ++fg;
                    }
                }
            }
    };

    struct Walk {
        double y, x, dir;
        int width_px, steps;
    };
    std::vector<Walk> walks;
    const int num_curves = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int i = 0; i < num_curves; ++i) {
        Walk wk;
        wk.y = (0.15 + 0.7 * unit(rng)) * h;
        wk.x = (0.15 + 0.7 * unit(rng)) * w;
        wk.dir = unit(rng) * 6.283185;
        wk.width_px = std::uniform_int_distribution<int>(1, 4)(rng);
        wk.steps = static_cast<int>((0.4 + 0.6 * unit(rng)) * h);
        walks.push_back(wk);
    }
    std::normal_distribution<double> turn(0.0, 0.25);
    while (!walks.empty() && fg < fg_cap) {
        // advance walks breadth-first so the cap truncates all of them evenly
        std::vector<Walk> next;
        for (auto wk : walks) {
            if (wk.steps <= 0 || fg >= fg_cap) continue;
            stamp(wk.y, wk.x, wk.width_px);
            wk.dir += turn(rng);
            wk.y += std::sin(wk.dir);
            wk.x += std::cos(wk.dir);
            wk.y = std::clamp(wk.y, 1.0, h - 2.0);
            wk.x = std::clamp(wk.x, 1.0, w - 2.0);
            --wk.steps;
            // occasional branch, inheriting position with a new heading
            if (unit(rng) < 0.02 && wk.steps > 8) {
                Walk br = wk;
                br.dir += (unit(rng) < 0.5 ? 1.0 : -1.0) * (0.8 + 0.8 * unit(rng));
                br.steps = wk.steps / 2;
                br.width_px = std::max(1, wk.width_px - 1);
                next.push_back(br);
            }
            next.push_back(wk);
        }
        walks = std::move(next);
    }
    if (fg == 0) stamp(h / 2.0, w / 2.0, 2);  // never emit an empty mask

    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (std::size_t i = 0; i < n; ++i) {
        double v = img[i] + (mask[i] ? cfg.contrast : 0.0) + noise(rng);
        img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}
}  // namespace detail

inline std::string phantom_name(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, i);
    return buf;
}

// Writes root/{images,masks}/*.pgm and splits.json. The first
// ceil(labeled_fraction * train_count) train images form the labeled split.
// Masks are written for every image; the split decides whether they are used.
inline DatasetSpec generate_phantom_dataset(const fs::path& root, const PhantomConfig& cfg) {
    cfg.validate();
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");

    nlohmann::json splits;
    splits["labeled"] = nlohmann::json::array();
    splits["unlabeled"] = nlohmann::json::array();
    splits["test"] = nlohmann::json::array();

    const int labeled_count =
        std::max(1, static_cast<int>(std::ceil(cfg.labeled_fraction * cfg.train_count)));
    std::vector<float> img;
    std::vector<std::uint8_t> mask;
    auto emit = [&](const std::string& name, std::uint32_t index) {
        detail::render_phantom(cfg, index, img, mask);
        GrayImage gi;
        gi.h = cfg.height;
        gi.w = cfg.width;
        gi.maxval = 255;
        gi.pix.resize(img.size());
        for (std::size_t i = 0; i < img.size(); ++i)
            gi.pix[i] = static_cast<std::uint16_t>(std::lround(img[i] * 255.0f));
        write_pgm(root / "images" / (name + ".pgm"), gi);
        GrayImage gm = gi;
        for (std::size_t i = 0; i < mask.size(); ++i) gm.pix[i] = mask[i];
        write_pgm(root / "masks" / (name + ".pgm"), gm);
    };

    for (int i = 0; i < cfg.train_count; ++i) {
        const std::string name = phantom_name("train", i);
        emit(name, static_cast<std::uint32_t>(i));
        splits[i < labeled_count ? "labeled" : "unlabeled"].push_back(name);
    }
    for (int i = 0; i < cfg.test_count; ++i) {
        const std::string name = phantom_name("test", i);
        emit(name, static_cast<std::uint32_t>(1u << 20) + static_cast<std::uint32_t>(i));
        splits["test"].push_back(name);
    }
    {
        std::ofstream out(root / "splits.json");
        out << splits.dump(2) << "\n";
        if (!out) throw DataError("phantoms: cannot write splits.json");
    }
    return load_dataset(root, cfg.height, cfg.width, 2);
}

}  // namespace cfc::data
