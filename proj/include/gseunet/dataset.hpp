#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gseunet/errors.hpp"
#include "gseunet/image.hpp"
#include "gseunet/png_io.hpp"
#include "gseunet/rng.hpp"
#include "gseunet/train.hpp"

namespace gseunet {

struct SamplePair {
    std::string id;  // shared basename
    GrayImage image;
    GrayImage mask;
};

namespace detail {

// stem -> path for every .png in dir, ordered by stem. On a stem collision
// (a.png vs a.PNG) the lexicographically smaller path wins, keeping the result
// independent of directory enumeration order.
inline std::map<std::string, std::filesystem::path> list_pngs(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext != ".png") continue;
        auto [it, inserted] = out.emplace(entry.path().stem().string(), entry.path());
        if (!inserted && entry.path().string() < it->second.string()) {
            it->second = entry.path();
        }
    }
    return out;
}

}  // namespace detail

// Pairs images with masks by basename. Unmatched files are skipped with a
// warning; a dimension mismatch inside a matched pair is an error, because
// training on a silently misaligned mask would be worse than stopping.
inline std::vector<SamplePair> pair_dataset(const std::string& images_dir,
                                            const std::string& masks_dir,
                                            std::vector<std::string>* warnings = nullptr) {
    const auto images = detail::list_pngs(images_dir);
    const auto masks = detail::list_pngs(masks_dir);
    std::vector<SamplePair> pairs;
    for (const auto& [id, image_path] : images) {
        const auto it = masks.find(id);
        if (it == masks.end()) {
            if (warnings) warnings->push_back("image '" + id + "' has no mask, skipped");
            continue;
        }
        GrayImage image = load_image(image_path.string());
        GrayImage mask = load_image(it->second.string());
        if (image.width != mask.width || image.height != mask.height) {
            throw DataError("pair '" + id + "': image is " + std::to_string(image.width) + "x" +
                            std::to_string(image.height) + " but mask is " +
                            std::to_string(mask.width) + "x" + std::to_string(mask.height));
        }
        pairs.push_back({id, std::move(image), std::move(mask)});
    }
    for (const auto& [id, mask_path] : masks) {
        if (!images.contains(id) && warnings) {
            warnings->push_back("mask '" + id + "' has no image, skipped");
        }
    }
    if (pairs.empty()) {
        throw DataError("no matched image/mask pairs between " + images_dir + " and " + masks_dir);
    }
    return pairs;
}

// Dark noisy background, one to three bright ellipses, mask = exact ellipse
// interiors. Each sample draws from its own (seed, index) stream, so any
// subset regenerates identically.
//
// The intensity margin is strict by construction: the uniform draws behind
// the Box-Muller transform have 24 bits, capping |z| at about 5.8, so every
// foreground pixel is at least 200 - 8*5.8 > 150 and every background pixel
// at most 40 + 8*5.8 < 90.
inline std::vector<SamplePair> generate_synthetic_dataset(int n, int size, std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample count must be positive, got " + std::to_string(n));
    if (size < 16) {
        throw ConfigError("synthetic image size must be at least 16, got " + std::to_string(size));
    }
    const std::size_t id_width = std::max<std::size_t>(4, std::to_string(n - 1).size());

    std::vector<SamplePair> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int index = 0; index < n; ++index) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
        GrayImage mask = make_gray(size, size);

        // Placement rarely needs a second attempt; the retry keeps the
        // foreground fraction inside (0, 0.5) even for adversarial sizes.
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 1000) {
                throw ConfigError("could not place ellipses at size " + std::to_string(size));
            }
            struct Ellipse {
                double cx, cy, ax, ay;
            };
            std::vector<Ellipse> blobs;
            const int count = 1 + static_cast<int>(rng.below(3));
            for (int e = 0; e < count; ++e) {
                Ellipse b;
                b.cx = rng.uniform(0.2 * size, 0.8 * size);
                b.cy = rng.uniform(0.2 * size, 0.8 * size);
                b.ax = rng.uniform(0.08 * size, 0.18 * size);
                b.ay = rng.uniform(0.08 * size, 0.18 * size);
                blobs.push_back(b);
            }
            std::size_t foreground = 0;
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    bool inside = false;
                    for (const auto& b : blobs) {
                        const double dx = (x - b.cx) / b.ax;
                        const double dy = (y - b.cy) / b.ay;
                        if (dx * dx + dy * dy <= 1.0) {
                            inside = true;
                            break;
                        }
                    }
                    mask.pixels[static_cast<std::size_t>(y) * size + x] = inside ? 255 : 0;
                    if (inside) ++foreground;
                }
            }
            const double fraction =
                static_cast<double>(foreground) / (static_cast<double>(size) * size);
            if (fraction > 0.0 && fraction < 0.5) break;
        }

        GrayImage image = make_gray(size, size);
        for (std::size_t i = 0; i < image.pixels.size(); ++i) {
            const bool inside = mask.pixels[i] != 0;
            const double value = (inside ? 200.0 : 40.0) + 8.0 * rng.gaussian();
            image.pixels[i] = static_cast<std::uint8_t>(
                std::clamp<long>(std::lround(value), 0, 255));
        }

        std::string id = std::to_string(index);
        id.insert(0, id_width - id.size(), '0');
        out.push_back({std::move(id), std::move(image), std::move(mask)});
    }
    return out;
}

namespace detail {

// [1,1,H,W] intensities in [0,1] plus [1,H,W] class ids; mask pixels >= 128
// count as foreground.
inline Sample pair_to_sample(const GrayImage& image, const GrayImage& mask) {
    Tensor input = Tensor::zeros({1, 1, image.height, image.width});
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        input.data()[i] = static_cast<float>(image.pixels[i]) / 255.0f;
    }
    Tensor target = Tensor::zeros({1, mask.height, mask.width});
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
        target.data()[i] = mask.pixels[i] >= 128 ? 1.0f : 0.0f;
    }
    return {std::move(input), std::move(target)};
}

}  // namespace detail

// Training tolerates any source resolution by nearest-neighbour resizing both
// image and mask to the model's input size.
inline std::vector<Sample> load_training_samples(const std::vector<SamplePair>& pairs,
                                                 int input_size) {
    std::vector<Sample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.image.width == input_size && p.image.height == input_size) {
            out.push_back(detail::pair_to_sample(p.image, p.mask));
        } else {
            out.push_back(detail::pair_to_sample(resize_nearest(p.image, input_size, input_size),
                                                 resize_nearest(p.mask, input_size, input_size)));
        }
    }
    return out;
}

// Evaluation refuses to resize: a size mismatch against the checkpoint is a
// data problem the caller should see, not silently paper over.
inline std::vector<Sample> load_eval_samples(const std::vector<SamplePair>& pairs,
                                             int input_size) {
    std::vector<Sample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.image.width != input_size || p.image.height != input_size) {
            throw DataError("pair '" + p.id + "' is " + std::to_string(p.image.width) + "x" +
                            std::to_string(p.image.height) + " but the checkpoint expects " +
                            std::to_string(input_size) + "x" + std::to_string(input_size) +
                            " input");
        }
        out.push_back(detail::pair_to_sample(p.image, p.mask));
    }
    return out;
}

}  // namespace gseunet
