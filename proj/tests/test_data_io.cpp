#include <gtest/gtest.h>
#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gseunet/checkpoint.hpp"
#include "gseunet/csv.hpp"
#include "gseunet/dataset.hpp"
#include "gseunet/png_io.hpp"
#include "gseunet/rng.hpp"

using namespace gseunet;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test, removed afterwards.
class TmpDir {
  public:
    TmpDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root_ = fs::temp_directory_path() /
                (std::string("gseunet_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    ~TmpDir() { fs::remove_all(root_); }
    std::string operator/(const std::string& name) const { return (root_ / name).string(); }
    std::string str() const { return root_.string(); }

  private:
    fs::path root_;
};

GrayImage random_gray(int w, int h, std::uint64_t seed) {
    GrayImage img = make_gray(w, h);
    Rng rng(seed);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    EXPECT_TRUE(f.good()) << path;
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Writes PNGs the loader should reject; the simplified libpng API keeps the
// fixtures honest (real encoder, real files).
void write_16bit_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = 4;
    img.height = 4;
    img.format = PNG_FORMAT_LINEAR_Y;
    std::vector<std::uint16_t> px(16, 1000);
    ASSERT_TRUE(png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr));
}

void write_gray_alpha_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = 4;
    img.height = 4;
    img.format = PNG_FORMAT_GA;
    std::vector<std::uint8_t> px(32, 100);
    ASSERT_TRUE(png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr));
}

void write_rgb_png(const std::string& path, const RgbImage& rgb) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(rgb.width);
    img.height = static_cast<png_uint_32>(rgb.height);
    img.format = PNG_FORMAT_RGB;
    ASSERT_TRUE(png_image_write_to_file(&img, path.c_str(), 0, rgb.pixels.data(), 0, nullptr));
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.variant = Variant::improved;
    cfg.input_size = 16;
    cfg.depth = 1;
    cfg.base_channels = 4;
    cfg.groups = 2;
    cfg.eca_k = 3;
    return cfg;
}

Tensor random_input(int n, int size, std::uint64_t seed) {
    Tensor x = Tensor::zeros({n, 1, size, size});
    Rng rng(seed);
    for (auto& v : x.data()) v = rng.uniform_f(0.0f, 1.0f);
    return x;
}

void expect_bitwise_equal(const Tensor& a, const Tensor& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(std::bit_cast<std::uint32_t>(a.data()[i]),
                  std::bit_cast<std::uint32_t>(b.data()[i]))
            << "element " << i;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// png round trips and rejections

TEST(PngIo, SaveThenLoadReturnsIdenticalPixels) {
    TmpDir tmp;
    const GrayImage img = random_gray(16, 16, 11);
    save_image(img, tmp / "a.png");
    const GrayImage back = load_image(tmp / "a.png");
    EXPECT_EQ(back.width, 16);
    EXPECT_EQ(back.height, 16);
    EXPECT_EQ(back.pixels, img.pixels);
}

TEST(PngIo, MissingFileIsAnIoError) {
    EXPECT_THROW(load_image("/no/such/file.png"), IoError);
    EXPECT_THROW(load_rgb("/no/such/file.png"), IoError);
}

TEST(PngIo, SixteenBitDepthIsRejectedNamingTheDepth) {
    TmpDir tmp;
    write_16bit_png(tmp / "deep.png");
    try {
        load_image(tmp / "deep.png");
        FAIL() << "16-bit PNG should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("16"), std::string::npos) << e.what();
    }
}

TEST(PngIo, GrayAlphaColorTypeIsRejected) {
    TmpDir tmp;
    write_gray_alpha_png(tmp / "ga.png");
    try {
        load_image(tmp / "ga.png");
        FAIL() << "gray+alpha PNG should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("color type"), std::string::npos) << e.what();
    }
}

TEST(PngIo, RgbInputLoadsThroughTheSharedGrayscaleConversion) {
    TmpDir tmp;
    RgbImage rgb{2, 2, {255, 0, 0, 0, 255, 0, 0, 0, 255, 90, 90, 90}};
    write_rgb_png(tmp / "c.png", rgb);
    const GrayImage direct = load_image(tmp / "c.png");
    const GrayImage via_rgb = to_grayscale(load_rgb(tmp / "c.png"));
    EXPECT_EQ(direct.pixels, via_rgb.pixels);
    EXPECT_EQ(direct.pixels[3], 90);
}

TEST(PngIo, LoadRgbOnGrayscaleReplicatesChannels) {
    TmpDir tmp;
    const GrayImage img = random_gray(4, 4, 5);
    save_image(img, tmp / "g.png");
    const RgbImage rgb = load_rgb(tmp / "g.png");
    ASSERT_EQ(rgb.pixels.size(), img.pixels.size() * 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        EXPECT_EQ(rgb.pixels[3 * i], img.pixels[i]);
        EXPECT_EQ(rgb.pixels[3 * i + 1], img.pixels[i]);
        EXPECT_EQ(rgb.pixels[3 * i + 2], img.pixels[i]);
    }
}

TEST(PngIo, NonPngBytesAreRejected) {
    TmpDir tmp;
    write_file(tmp / "fake.png", "this is not a portable network graphic");
    EXPECT_THROW(load_image(tmp / "fake.png"), FormatError);
}

TEST(PngIo, TruncatedFileFailsDecodeCleanly) {
    TmpDir tmp;
    save_image(random_gray(32, 32, 3), tmp / "t.png");
    const std::string whole = read_file(tmp / "t.png");
    write_file(tmp / "t.png", whole.substr(0, 40));
    EXPECT_THROW(load_image(tmp / "t.png"), FormatError);
}

TEST(PngIo, UnwritableTargetIsAnIoError) {
    EXPECT_THROW(save_image(random_gray(4, 4, 1), "/no/such/dir/out.png"), IoError);
}

TEST(PngIo, EmptyImageIsRefused) {
    TmpDir tmp;
    EXPECT_THROW(save_image(GrayImage{}, tmp / "e.png"), UsageError);
}

// ---------------------------------------------------------------------------
// dataset pairing

TEST(PairDataset, PairsComeBackSortedById) {
    TmpDir tmp;
    fs::create_directories(tmp / "images");
    fs::create_directories(tmp / "masks");
    for (const char* id : {"zebra", "apple", "mango"}) {
        save_image(random_gray(8, 8, 1), tmp / ("images/" + std::string(id) + ".png"));
        save_image(random_gray(8, 8, 2), tmp / ("masks/" + std::string(id) + ".png"));
    }
    const auto pairs = pair_dataset(tmp / "images", tmp / "masks");
    ASSERT_EQ(pairs.size(), 3u);
    EXPECT_EQ(pairs[0].id, "apple");
    EXPECT_EQ(pairs[1].id, "mango");
    EXPECT_EQ(pairs[2].id, "zebra");
}

TEST(PairDataset, UnmatchedFilesWarnAndAreSkipped) {
    TmpDir tmp;
    fs::create_directories(tmp / "images");
    fs::create_directories(tmp / "masks");
    save_image(random_gray(8, 8, 1), tmp / "images/a.png");
    save_image(random_gray(8, 8, 1), tmp / "images/b.png");
    save_image(random_gray(8, 8, 2), tmp / "masks/a.png");
    save_image(random_gray(8, 8, 2), tmp / "masks/c.png");
    std::vector<std::string> warnings;
    const auto pairs = pair_dataset(tmp / "images", tmp / "masks", &warnings);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].id, "a");
    ASSERT_EQ(warnings.size(), 2u);
    EXPECT_NE(warnings[0].find("'b'"), std::string::npos);
    EXPECT_NE(warnings[1].find("'c'"), std::string::npos);
}

TEST(PairDataset, DimensionMismatchIsAnError) {
    TmpDir tmp;
    fs::create_directories(tmp / "images");
    fs::create_directories(tmp / "masks");
    save_image(random_gray(8, 8, 1), tmp / "images/a.png");
    save_image(random_gray(4, 4, 2), tmp / "masks/a.png");
    try {
        pair_dataset(tmp / "images", tmp / "masks");
        FAIL() << "mismatched pair should not load";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("8x8"), std::string::npos) << msg;
        EXPECT_NE(msg.find("4x4"), std::string::npos) << msg;
    }
}

TEST(PairDataset, ZeroMatchesIsAnError) {
    TmpDir tmp;
    fs::create_directories(tmp / "images");
    fs::create_directories(tmp / "masks");
    EXPECT_THROW(pair_dataset(tmp / "images", tmp / "masks"), DataError);
}

TEST(PairDataset, MissingDirectoryIsAnIoError) {
    TmpDir tmp;
    fs::create_directories(tmp / "images");
    EXPECT_THROW(pair_dataset(tmp / "images", tmp / "masks"), IoError);
    EXPECT_THROW(pair_dataset(tmp / "nowhere", tmp / "images"), IoError);
}

TEST(PairDataset, NonPngFilesAreIgnored) {
    TmpDir tmp;
    fs::create_directories(tmp / "images");
    fs::create_directories(tmp / "masks");
    save_image(random_gray(8, 8, 1), tmp / "images/a.png");
    save_image(random_gray(8, 8, 2), tmp / "masks/a.png");
    write_file(tmp / "images/readme.txt", "not an image");
    write_file(tmp / "masks/notes.md", "also not an image");
    std::vector<std::string> warnings;
    const auto pairs = pair_dataset(tmp / "images", tmp / "masks", &warnings);
    EXPECT_EQ(pairs.size(), 1u);
    EXPECT_TRUE(warnings.empty());
}

// ---------------------------------------------------------------------------
// checkpoints

TEST(Checkpoint, RoundTripForwardIsBitIdentical) {
    TmpDir tmp;
    const Model model = build_model(tiny_config(), 3);
    save_checkpoint(model, tmp / "m.ckpt");
    const Model back = load_checkpoint(tmp / "m.ckpt");
    const Tensor x = random_input(2, 16, 7);
    expect_bitwise_equal(model_forward(model, x), model_forward(back, x));
}

TEST(Checkpoint, SaveLoadSaveReproducesTheBytes) {
    TmpDir tmp;
    const Model model = build_model(tiny_config(), 9);
    save_checkpoint(model, tmp / "a.ckpt");
    save_checkpoint(load_checkpoint(tmp / "a.ckpt"), tmp / "b.ckpt");
    EXPECT_EQ(read_file(tmp / "a.ckpt"), read_file(tmp / "b.ckpt"));
}

TEST(Checkpoint, ConfigSurvivesTheRoundTrip) {
    TmpDir tmp;
    ModelConfig cfg = tiny_config();
    cfg.shift = 1;
    cfg.recombine = Recombine::add;
    save_checkpoint(build_model(cfg, 0), tmp / "c.ckpt");
    const ModelConfig& got = load_checkpoint(tmp / "c.ckpt").config;
    EXPECT_EQ(got.variant, cfg.variant);
    EXPECT_EQ(got.input_size, cfg.input_size);
    EXPECT_EQ(got.depth, cfg.depth);
    EXPECT_EQ(got.base_channels, cfg.base_channels);
    EXPECT_EQ(got.classes, cfg.classes);
    EXPECT_EQ(got.groups, cfg.groups);
    EXPECT_EQ(got.eca_k, cfg.eca_k);
    EXPECT_EQ(got.shift, cfg.shift);
    EXPECT_EQ(got.recombine, cfg.recombine);
}

TEST(Checkpoint, BaselineVariantRoundTripsToo) {
    TmpDir tmp;
    ModelConfig cfg = tiny_config();
    cfg.variant = Variant::baseline;
    const Model model = build_model(cfg, 4);
    save_checkpoint(model, tmp / "b.ckpt");
    const Model back = load_checkpoint(tmp / "b.ckpt");
    const Tensor x = random_input(1, 16, 8);
    expect_bitwise_equal(model_forward(model, x), model_forward(back, x));
}

// Byte offsets below follow the layout comment in checkpoint.hpp: magic at 0,
// version at 4, config fields at 8..44, entry count at 44, first name at 52.

TEST(Checkpoint, BadMagicIsRejected) {
    TmpDir tmp;
    save_checkpoint(build_model(tiny_config(), 0), tmp / "m.ckpt");
    std::string bytes = read_file(tmp / "m.ckpt");
    bytes.replace(0, 4, "XXXX");
    write_file(tmp / "m.ckpt", bytes);
    try {
        load_checkpoint(tmp / "m.ckpt");
        FAIL() << "bad magic should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, UnsupportedVersionIsRejected) {
    TmpDir tmp;
    save_checkpoint(build_model(tiny_config(), 0), tmp / "m.ckpt");
    std::string bytes = read_file(tmp / "m.ckpt");
    bytes[4] = 99;
    write_file(tmp / "m.ckpt", bytes);
    try {
        load_checkpoint(tmp / "m.ckpt");
        FAIL() << "future version should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, TruncationIsRejectedNotACrash) {
    TmpDir tmp;
    save_checkpoint(build_model(tiny_config(), 0), tmp / "m.ckpt");
    const std::string bytes = read_file(tmp / "m.ckpt");
    for (const std::size_t keep : {bytes.size() / 2, std::size_t(50), std::size_t(10)}) {
        write_file(tmp / "cut.ckpt", bytes.substr(0, keep));
        EXPECT_THROW(load_checkpoint(tmp / "cut.ckpt"), FormatError) << "kept " << keep;
    }
}

TEST(Checkpoint, TrailingBytesAreRejected) {
    TmpDir tmp;
    save_checkpoint(build_model(tiny_config(), 0), tmp / "m.ckpt");
    write_file(tmp / "m.ckpt", read_file(tmp / "m.ckpt") + "zz");
    try {
        load_checkpoint(tmp / "m.ckpt");
        FAIL() << "trailing bytes should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, RenamedEntryIsRejected) {
    TmpDir tmp;
    save_checkpoint(build_model(tiny_config(), 0), tmp / "m.ckpt");
    std::string bytes = read_file(tmp / "m.ckpt");
    bytes[52] = 'q';  // first character of the first entry's name
    write_file(tmp / "m.ckpt", bytes);
    try {
        load_checkpoint(tmp / "m.ckpt");
        FAIL() << "renamed entry should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("expected"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, WrongEntryCountIsRejected) {
    TmpDir tmp;
    save_checkpoint(build_model(tiny_config(), 0), tmp / "m.ckpt");
    std::string bytes = read_file(tmp / "m.ckpt");
    bytes[44] = static_cast<char>(bytes[44] + 1);
    write_file(tmp / "m.ckpt", bytes);
    try {
        load_checkpoint(tmp / "m.ckpt");
        FAIL() << "wrong entry count should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("entries"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, InconsistentConfigIsRejected) {
    TmpDir tmp;
    save_checkpoint(build_model(tiny_config(), 0), tmp / "m.ckpt");
    std::string bytes = read_file(tmp / "m.ckpt");
    bytes[16] = 0;  // depth field -> 0, which no valid model allows
    write_file(tmp / "m.ckpt", bytes);
    try {
        load_checkpoint(tmp / "m.ckpt");
        FAIL() << "depth 0 should not load";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("config"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, MissingFileIsAnIoError) {
    EXPECT_THROW(load_checkpoint("/no/such/model.ckpt"), IoError);
}

TEST(Checkpoint, UnwritableTargetIsAnIoError) {
    EXPECT_THROW(save_checkpoint(build_model(tiny_config(), 0), "/no/such/dir/m.ckpt"), IoError);
}

// ---------------------------------------------------------------------------
// metrics csv

TEST(MetricsCsv, SingleRecordFormatsExactly) {
    const std::vector<MetricRecord> records = {{1, 0.5, 0.6, 0.3}};
    EXPECT_EQ(format_metrics_csv(records),
              "epoch,train_loss,val_loss,val_miou\n1,0.500000,0.600000,0.300000\n");
}

TEST(MetricsCsv, FiftyRecordsMakeFiftyOneLines) {
    std::vector<MetricRecord> records;
    for (int e = 1; e <= 50; ++e) records.push_back({e, 1.0 / e, 1.1 / e, 0.01 * e});
    const std::string text = format_metrics_csv(records);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 51);
    EXPECT_EQ(text.back(), '\n');
}

TEST(MetricsCsv, RewriteIsByteIdentical) {
    TmpDir tmp;
    std::vector<MetricRecord> records;
    Rng rng(21);
    for (int e = 1; e <= 12; ++e) {
        records.push_back({e, rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 1)});
    }
    write_metrics_csv(records, tmp / "a.csv");
    write_metrics_csv(records, tmp / "b.csv");
    EXPECT_EQ(read_file(tmp / "a.csv"), read_file(tmp / "b.csv"));
}

TEST(MetricsCsv, RowsParseBackAtSixDecimals) {
    std::vector<MetricRecord> records;
    Rng rng(33);
    for (int e = 1; e <= 20; ++e) {
        records.push_back({e, rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 1)});
    }
    const std::string text = format_metrics_csv(records);
    std::size_t at = text.find('\n') + 1;
    for (const auto& r : records) {
        int epoch = 0;
        double tl = 0, vl = 0, vm = 0;
        ASSERT_EQ(std::sscanf(text.c_str() + at, "%d,%lf,%lf,%lf", &epoch, &tl, &vl, &vm), 4);
        EXPECT_EQ(epoch, r.epoch);
        EXPECT_NEAR(tl, r.train_loss, 5e-7);
        EXPECT_NEAR(vl, r.val_loss, 5e-7);
        EXPECT_NEAR(vm, r.val_miou, 5e-7);
        at = text.find('\n', at) + 1;
    }
    EXPECT_EQ(at, text.size());
}

TEST(MetricsCsv, EmptyRecordListIsRefused) {
    EXPECT_THROW(format_metrics_csv({}), UsageError);
}

TEST(MetricsCsv, UnwritablePathIsAnIoError) {
    EXPECT_THROW(write_metrics_csv({{1, 0.5, 0.6, 0.3}}, "/no/such/dir/m.csv"), IoError);
}

// ---------------------------------------------------------------------------
// synthetic dataset

TEST(Synthetic, SameSeedReproducesTheDataset) {
    const auto a = generate_synthetic_dataset(6, 32, 5);
    const auto b = generate_synthetic_dataset(6, 32, 5);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
        EXPECT_EQ(a[i].mask.pixels, b[i].mask.pixels);
    }
}

TEST(Synthetic, DifferentSeedsProduceDifferentImages) {
    const auto a = generate_synthetic_dataset(3, 32, 5);
    const auto b = generate_synthetic_dataset(3, 32, 6);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        any_difference = any_difference || a[i].image.pixels != b[i].image.pixels;
    }
    EXPECT_TRUE(any_difference);
}

TEST(Synthetic, ForegroundFractionStaysInsideTheOpenInterval) {
    for (const int size : {16, 64}) {
        for (const auto& p : generate_synthetic_dataset(40, size, 0)) {
            std::size_t fg = 0;
            for (const auto px : p.mask.pixels) fg += px != 0 ? 1 : 0;
            EXPECT_GT(fg, 0u) << p.id << " at size " << size;
            EXPECT_LT(fg, p.mask.pixels.size() / 2) << p.id << " at size " << size;
        }
    }
}

TEST(Synthetic, ForegroundIsBrighterThanBackground) {
    for (const auto& p : generate_synthetic_dataset(20, 64, 1)) {
        double in_sum = 0, out_sum = 0;
        std::size_t in_n = 0, out_n = 0;
        int in_min = 255, out_max = 0;
        for (std::size_t i = 0; i < p.mask.pixels.size(); ++i) {
            const int v = p.image.pixels[i];
            if (p.mask.pixels[i] != 0) {
                in_sum += v;
                ++in_n;
                in_min = std::min(in_min, v);
            } else {
                out_sum += v;
                ++out_n;
                out_max = std::max(out_max, v);
            }
        }
        ASSERT_GT(in_n, 0u);
        ASSERT_GT(out_n, 0u);
        EXPECT_GT(in_sum / in_n, out_sum / out_n) << p.id;
        // the 24-bit Box-Muller tail caps excursions well inside this gap
        EXPECT_GE(in_min, 150) << p.id;
        EXPECT_LE(out_max, 90) << p.id;
    }
}

TEST(Synthetic, MasksAreStrictlyBinary) {
    for (const auto& p : generate_synthetic_dataset(10, 32, 2)) {
        for (const auto px : p.mask.pixels) {
            ASSERT_TRUE(px == 0 || px == 255) << p.id << " has " << int(px);
        }
    }
}

TEST(Synthetic, IdsAreZeroPaddedAndOrdered) {
    const auto pairs = generate_synthetic_dataset(12, 16, 0);
    ASSERT_EQ(pairs.size(), 12u);
    EXPECT_EQ(pairs.front().id, "0000");
    EXPECT_EQ(pairs.back().id, "0011");
    for (std::size_t i = 1; i < pairs.size(); ++i) EXPECT_LT(pairs[i - 1].id, pairs[i].id);
}

TEST(Synthetic, BadArgumentsAreRejected) {
    EXPECT_THROW(generate_synthetic_dataset(0, 32, 0), ConfigError);
    EXPECT_THROW(generate_synthetic_dataset(5, 8, 0), ConfigError);
}

TEST(Synthetic, RoundTripsThroughPngPairing) {
    TmpDir tmp;
    fs::create_directories(tmp / "images");
    fs::create_directories(tmp / "masks");
    const auto made = generate_synthetic_dataset(4, 32, 9);
    for (const auto& p : made) {
        save_image(p.image, tmp / ("images/" + p.id + ".png"));
        save_image(p.mask, tmp / ("masks/" + p.id + ".png"));
    }
    std::vector<std::string> warnings;
    const auto pairs = pair_dataset(tmp / "images", tmp / "masks", &warnings);
    EXPECT_TRUE(warnings.empty());
    ASSERT_EQ(pairs.size(), made.size());
    for (std::size_t i = 0; i < made.size(); ++i) {
        EXPECT_EQ(pairs[i].id, made[i].id);
        EXPECT_EQ(pairs[i].image.pixels, made[i].image.pixels);
        EXPECT_EQ(pairs[i].mask.pixels, made[i].mask.pixels);
    }
}

// ---------------------------------------------------------------------------
// tensor loaders

TEST(Loaders, TrainingSamplesResizeAndScale) {
    const auto pairs = generate_synthetic_dataset(3, 32, 4);
    const auto samples = load_training_samples(pairs, 16);
    ASSERT_EQ(samples.size(), 3u);
    for (const auto& s : samples) {
        EXPECT_EQ(s.input.shape(), (std::vector<int>{1, 1, 16, 16}));
        EXPECT_EQ(s.target.shape(), (std::vector<int>{1, 16, 16}));
        for (const float v : s.input.data()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        for (const float v : s.target.data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
    }
}

TEST(Loaders, NativeResolutionSkipsTheResize) {
    const auto pairs = generate_synthetic_dataset(2, 32, 4);
    const auto samples = load_training_samples(pairs, 32);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        for (std::size_t j = 0; j < pairs[i].image.pixels.size(); ++j) {
            EXPECT_FLOAT_EQ(samples[i].input.data()[j], pairs[i].image.pixels[j] / 255.0f);
            EXPECT_EQ(samples[i].target.data()[j], pairs[i].mask.pixels[j] >= 128 ? 1.0f : 0.0f);
        }
    }
}

TEST(Loaders, EvalRefusesMismatchedSizesNamingTheExpectation) {
    const auto pairs = generate_synthetic_dataset(2, 32, 4);
    EXPECT_EQ(load_eval_samples(pairs, 32).size(), 2u);
    try {
        load_eval_samples(pairs, 16);
        FAIL() << "size mismatch should not load";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("16x16"), std::string::npos) << e.what();
    }
}
