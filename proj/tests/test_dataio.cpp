#include <doctest.h>

#include <bit>
#include <cstring>
#include <thread>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "trilite/checkpoint.hpp"
#include "trilite/dataset.hpp"
#include "trilite/error.hpp"

using namespace trilite;

namespace {

DatasetHeader small_header(bool bbox, bool mask) {
    DatasetHeader h;
    h.feature_dim = 5;
    h.token_dim = 3;
    h.grid_w = 4;
    h.grid_h = 3;
    h.classes = 7;
    h.image_h = 42;
    h.image_w = 56;
    h.has_bbox = bbox;
    h.has_mask = mask;
    h.metadata = "model=test; mean=0.485,0.456,0.406";
    return h;
}

FeatureSample random_sample(const DatasetHeader& h, Rng& rng) {
    FeatureSample s;
    s.patch_features = Tensor({h.feature_dim, h.grid_h, h.grid_w});
    for (auto& v : s.patch_features.data()) v = static_cast<float>(rng.normal());
    s.class_token = Tensor({h.token_dim});
    for (auto& v : s.class_token.data()) v = static_cast<float>(rng.normal());
    s.label = rng.below(h.classes);
    if (h.has_bbox) {
        const std::size_t n = 1 + rng.below(3);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x0 = rng.between(0, static_cast<std::int64_t>(h.image_w) - 2);
            const auto y0 = rng.between(0, static_cast<std::int64_t>(h.image_h) - 2);
            s.bbox_gt.push_back({x0, y0, rng.between(x0 + 1, static_cast<std::int64_t>(h.image_w)),
                                 rng.between(y0 + 1, static_cast<std::int64_t>(h.image_h))});
        }
    }
    if (h.has_mask) {
        std::vector<std::uint8_t> m(h.image_h * h.image_w);
        for (auto& v : m) v = rng.bernoulli(0.3);
        s.mask_gt = std::move(m);
    }
    return s;
}

std::vector<FeatureSample> random_samples(const DatasetHeader& h, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<FeatureSample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_sample(h, rng));
    return out;
}

// Little-endian packer written independently of the library, following the
// documented container layout.
struct Packer {
    std::vector<unsigned char> b;
    void u8(unsigned v) { b.push_back(static_cast<unsigned char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8((v >> (8 * i)) & 0xff);
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8((v >> (8 * i)) & 0xff);
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) { b.insert(b.end(), s.begin(), s.end()); }
    void pad(std::size_t align) {
        while (b.size() % align) u8(0);
    }
};

} // namespace

TEST_SUITE("dataset container") {
    TEST_CASE("empty dataset") {
        TempDir dir;
        const DatasetHeader h = small_header(true, false);
        write_dataset(dir / "empty.tfd", h, {});
        const Dataset d = read_dataset(dir / "empty.tfd");
        CHECK(d.size() == 0);
        CHECK(d.header.sample_count == 0);
        CHECK(d.header.metadata == h.metadata);
        CHECK(d.header.classes == 7);
    }

    TEST_CASE("round trip is bit exact") {
        TempDir dir;
        for (bool bbox : {false, true})
            for (bool mask : {false, true}) {
                const DatasetHeader h = small_header(bbox, mask);
                const auto samples = random_samples(h, 9, 17);
                write_dataset(dir / "d.tfd", h, samples);
                const Dataset d = read_dataset(dir / "d.tfd");
                DatasetHeader expect = h;
                expect.sample_count = 9;
                CHECK(d.header == expect);
                REQUIRE(d.size() == 9);
                for (std::size_t i = 0; i < 9; ++i) CHECK(d.samples[i] == samples[i]);
            }
    }

    TEST_CASE("values are stored as 32-bit floats") {
        TempDir dir;
        const DatasetHeader h = small_header(false, false);
        auto samples = random_samples(h, 1, 3);
        samples[0].patch_features[0] = 0.1;
        write_dataset(dir / "d.tfd", h, samples);
        CHECK(read_dataset(dir / "d.tfd").samples[0].patch_features[0] == static_cast<double>(0.1f));
        round_to_storage_precision(samples[0]);
        CHECK(read_dataset(dir / "d.tfd").samples[0] == samples[0]);
    }

    TEST_CASE("random access matches sequential reading") {
        TempDir dir;
        const DatasetHeader h = small_header(true, false);
        const auto samples = random_samples(h, 1000, 5);
        write_dataset(dir / "big.tfd", h, samples);
        const Dataset all = read_dataset(dir / "big.tfd");
        DatasetReader reader(dir / "big.tfd");
        CHECK(reader.size() == 1000);
        CHECK(reader.sample(977) == all.samples[977]);
        CHECK(reader.sample(977) == samples[977]);
        CHECK(reader.sample(3) == samples[3]);
        CHECK_THROWS_AS(reader.sample(1000), DataError);
    }

    TEST_CASE("concurrent readers") {
        TempDir dir;
        const DatasetHeader h = small_header(true, true);
        const auto samples = random_samples(h, 64, 6);
        write_dataset(dir / "d.tfd", h, samples);
        DatasetReader reader(dir / "d.tfd");
        std::vector<int> ok(4, 1);
        std::vector<std::thread> threads;
        for (int t = 0; t < 4; ++t)
            threads.emplace_back([&, t] {
                for (std::size_t i = static_cast<std::size_t>(t); i < 64; i += 3)
                    if (!(reader.sample(i) == samples[i])) ok[static_cast<std::size_t>(t)] = 0;
            });
        for (auto& th : threads) th.join();
        CHECK(ok == std::vector<int>(4, 1));
    }

    TEST_CASE("writer rejects inconsistent samples") {
        TempDir dir;
        const DatasetHeader h = small_header(true, false);
        auto samples = random_samples(h, 2, 7);
        samples[1].label = 7;
        CHECK_THROWS_AS(write_dataset(dir / "x.tfd", h, samples), DataError);
        samples = random_samples(h, 2, 7);
        samples[0].patch_features = Tensor({5, 4, 3});
        CHECK_THROWS_AS(write_dataset(dir / "x.tfd", h, samples), DataError);
        samples = random_samples(h, 2, 7);
        samples[0].bbox_gt[0] = {0, 0, 57, 10};
        CHECK_THROWS_AS(write_dataset(dir / "x.tfd", h, samples), DataError);
        samples = random_samples(h, 2, 7);
        samples[0].mask_gt = std::vector<std::uint8_t>(42 * 56);
        CHECK_THROWS_AS(write_dataset(dir / "x.tfd", h, samples), DataError);
    }

    TEST_CASE("independently packed file is read correctly") {
        // Two samples, D=2, Dt=3, 2x2 grid, C=4, 28x28 image, boxes and masks.
        TempDir dir;
        Packer p;
        const std::string meta = "exporter=reference";
        p.str("TRILFEAT");
        for (std::uint32_t v : {1u, 0x01020304u, 2u, 3u, 2u, 2u, 4u, 28u, 28u, 14u, 3u})
            p.u32(v);
        p.u32(static_cast<std::uint32_t>(meta.size()));
        p.u64(2);
        const std::size_t feature_floats = 2 * 2 * 2;
        const std::size_t block = 8 + 4 * feature_floats + 4 * 3 + 16 + 28 * 28; // 852 -> 896
        const std::size_t data_start = 192;
        const std::size_t block_padded = 896;
        p.u64(data_start + 2 * block_padded);
        p.pad(128);
        CHECK(p.b.size() == 128);
        p.str(meta);
        p.pad(64);
        CHECK(p.b.size() == data_start);
        for (std::uint32_t s = 0; s < 2; ++s) {
            p.u32(s + 1);
            p.u32(1);
            for (std::size_t i = 0; i < feature_floats; ++i) p.f32(static_cast<float>(s) + 0.25f * static_cast<float>(i));
            for (int i = 0; i < 3; ++i) p.f32(-1.5f * static_cast<float>(i + s));
            for (std::uint32_t v : {1u + s, 2u, 20u, 27u}) p.u32(v);
            for (int i = 0; i < 28 * 28; ++i) p.u8((i / 28 >= 2 && i / 28 < 27 && i % 28 >= 1 + static_cast<int>(s) && i % 28 < 20) ? 1 : 0);
            CHECK(p.b.size() - data_start - s * block_padded == block);
            p.pad(64);
        }
        p.u64(data_start);
        p.u64(data_start + block_padded);
        write_bytes(dir / "ref.tfd", p.b);

        const Dataset d = read_dataset(dir / "ref.tfd");
        CHECK(d.header.feature_dim == 2);
        CHECK(d.header.token_dim == 3);
        CHECK(d.header.grid_w == 2);
        CHECK(d.header.grid_h == 2);
        CHECK(d.header.classes == 4);
        CHECK(d.header.image_h == 28);
        CHECK(d.header.patch_size == 14);
        CHECK(d.header.has_bbox);
        CHECK(d.header.has_mask);
        CHECK(d.header.metadata == meta);
        REQUIRE(d.size() == 2);
        CHECK(d.samples[1].label == 2);
        CHECK(d.samples[1].patch_features[5] == 1.0 + 0.25 * 5);
        CHECK(d.samples[1].class_token[2] == -4.5);
        CHECK(d.samples[1].bbox_gt == std::vector<Box>{{2, 2, 20, 27}});
        CHECK((*d.samples[0].mask_gt)[2 * 28 + 1] == 1);
        CHECK((*d.samples[0].mask_gt)[1 * 28 + 1] == 0);

        // The library writer produces the same bytes for the same content.
        write_dataset(dir / "again.tfd", d);
        CHECK(read_bytes(dir / "again.tfd") == p.b);
    }

    TEST_CASE("format errors carry byte offsets") {
        TempDir dir;
        const DatasetHeader h = small_header(true, false);
        write_dataset(dir / "good.tfd", h, random_samples(h, 3, 8));
        const auto good = read_bytes(dir / "good.tfd");

        auto expect_offset = [&](std::vector<unsigned char> bytes, std::uint64_t offset) {
            write_bytes(dir / "bad.tfd", bytes);
            try {
                read_dataset(dir / "bad.tfd");
                FAIL("expected FormatError");
            } catch (const FormatError& e) {
                CHECK(e.offset() == offset);
                CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
            }
        };

        auto bad_magic = good;
        bad_magic[0] = 'X';
        expect_offset(bad_magic, 0);

        auto bad_version = good;
        bad_version[8] = 2;
        expect_offset(bad_version, 8);

        auto swapped = good;
        std::swap(swapped[12], swapped[15]);
        std::swap(swapped[13], swapped[14]);
        expect_offset(swapped, 12);

        auto truncated = good;
        truncated.resize(good.size() - 5);
        expect_offset(truncated, good.size() - 24);

        expect_offset(std::vector<unsigned char>(good.begin(), good.begin() + 100), 100);

        // Label 200 in the first sample block.
        const std::size_t first_block = 192;
        auto bad_label = good;
        bad_label[first_block] = 200;
        expect_offset(bad_label, first_block);

        // Box x1 beyond the image width.
        auto bad_box = good;
        const std::size_t box_at = first_block + 8 + 4 * (5 * 3 * 4) + 4 * 3;
        bad_box[box_at + 8] = 250;
        expect_offset(bad_box, box_at);
    }

    TEST_CASE("missing file") {
        CHECK_THROWS_AS(read_dataset("/nonexistent/x.tfd"), ConfigError);
    }
}

TEST_SUITE("checkpoint container") {
    TEST_CASE("round trip is bit exact") {
        TempDir dir;
        for (HeadMode mode : {HeadMode::binary, HeadMode::three_channel})
            for (std::size_t k : {1u, 3u}) {
                const HeadConfig cfg{.feature_dim = 6, .token_dim = 5, .classes = 4, .kernel_size = k, .mode = mode};
                HeadParams p = HeadParams::initialized(cfg, 11);
                Rng rng(k);
                for (auto& v : p.bn.running_mean) v = rng.normal();
                for (auto& v : p.bn.running_var) v = rng.uniform(0.1, 3.0) / 3.0;
                save_checkpoint(dir / "c.tck", p, "seed=11");
                const Checkpoint c = load_checkpoint(dir / "c.tck");
                CHECK(c.params == p);
                CHECK(c.metadata == "seed=11");
            }
    }

    TEST_CASE("header fields") {
        TempDir dir;
        const HeadConfig cfg{.feature_dim = 384, .token_dim = 384, .classes = 1000, .kernel_size = 3};
        save_checkpoint(dir / "c.tck", HeadParams::zeros(cfg));
        const auto bytes = read_bytes(dir / "c.tck");
        CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "TRILCKPT");
        std::uint64_t count = 0;
        std::memcpy(&count, bytes.data() + 40, 8);
        CHECK(count == 780377);
        CHECK(channel_order_tag(HeadMode::three_channel) == "am,fg,bg");
        CHECK(channel_order_tag(HeadMode::binary) == "fg,bg");
        const std::string text(bytes.begin(), bytes.begin() + 200);
        CHECK(text.find("am,fg,bg") != std::string::npos);
    }

    TEST_CASE("corruption is reported") {
        TempDir dir;
        const HeadConfig cfg{.feature_dim = 4, .token_dim = 4, .classes = 3};
        save_checkpoint(dir / "c.tck", HeadParams::initialized(cfg, 1));
        auto bytes = read_bytes(dir / "c.tck");
        auto bad = bytes;
        bad[3] = 'x';
        write_bytes(dir / "bad.tck", bad);
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.tck"), FormatError);
        bad = bytes;
        bad.resize(bytes.size() - 8);
        write_bytes(dir / "bad.tck", bad);
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.tck"), FormatError);
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.tck"), ConfigError);
    }
}
