#include <doctest.h>

#include <cmath>

#include "trilite/error.hpp"
#include "trilite/pipeline.hpp"
#include "trilite/synth.hpp"

using namespace trilite;

namespace {

SynthSpec spec() {
    SynthSpec s;
    s.classes = 4;
    s.grid_w = 8;
    s.grid_h = 6;
    s.feature_dim = 10;
    s.samples = 12;
    s.patch_size = 7;
    return s;
}

HeadConfig head(HeadMode mode = HeadMode::three_channel) { return {10, 10, 4, 3, mode}; }

} // namespace

TEST_CASE("compatibility checks") {
    const auto data = synth_generate(spec(), 1);
    CHECK_NOTHROW(check_compatible(data.dataset.header, head()));
    HeadConfig bad = head();
    bad.classes = 5;
    CHECK_THROWS_AS(check_compatible(data.dataset.header, bad), ConfigError);
    bad = head();
    bad.token_dim = 3;
    CHECK_THROWS_AS(check_compatible(data.dataset.header, bad), ConfigError);
}

TEST_CASE("batches gather the requested samples") {
    const auto data = synth_generate(spec(), 1);
    const std::vector<std::size_t> idx{3, 0, 11};
    const Batch b = make_batch(data.dataset, idx);
    CHECK(b.features.shape() == std::vector<std::size_t>{3, 10, 6, 8});
    CHECK(b.tokens.shape() == std::vector<std::size_t>{3, 10});
    CHECK(b.labels == std::vector<std::size_t>{data.dataset.samples[3].label, data.dataset.samples[0].label,
                                               data.dataset.samples[11].label});
    CHECK(b.features[480] == data.dataset.samples[0].patch_features[0]);
    CHECK(b.tokens[20 + 9] == data.dataset.samples[11].class_token[9]);
}

TEST_CASE("records carry the upsampled foreground map and a ranking") {
    const auto data = synth_generate(spec(), 2);
    const HeadParams p = HeadParams::initialized(head(), 3);
    const auto records = predict_records(p, data.dataset, 0.4, 5);
    REQUIRE(records.size() == 12);
    const TriMaps maps = predict_maps(p, data.dataset, 0, 12);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        CHECK(r.score_map.shape() == std::vector<std::size_t>{42, 56});
        CHECK(r.label == data.dataset.samples[i].label);
        CHECK(r.bbox_gt == data.dataset.samples[i].bbox_gt);
        CHECK(r.mask_gt == data.dataset.samples[i].mask_gt);
        CHECK(r.class_ranking.size() == 4);
        const Tensor fg = maps.channel(1);
        Tensor grid({6, 8});
        std::copy_n(fg.data().begin() + static_cast<long>(i * 48), 48, grid.data().begin());
        CHECK(r.score_map == upsample_bilinear(grid, 42, 56));
        EvalRecord again = r;
        assign_boxes(again, 0.4);
        CHECK(again.largest_box == r.largest_box);
        CHECK(again.merged_box == r.merged_box);
    }
}

TEST_CASE("binary heads localize with their foreground channel") {
    const auto data = synth_generate(spec(), 2);
    const HeadParams p = HeadParams::initialized(head(HeadMode::binary), 3);
    const auto records = predict_records(p, data.dataset, 0.5);
    const TriMaps maps = predict_maps(p, data.dataset, 0, 1);
    Tensor grid({6, 8});
    const Tensor fg = maps.channel(0);
    std::copy_n(fg.data().begin(), 48, grid.data().begin());
    CHECK(records[0].score_map == upsample_bilinear(grid, 42, 56));
}

TEST_CASE("range checks") {
    const auto data = synth_generate(spec(), 2);
    const HeadParams p = HeadParams::initialized(head(), 3);
    CHECK_THROWS_AS(predict_maps(p, data.dataset, 10, 5), DataError);
    const std::vector<std::size_t> idx{12};
    CHECK_THROWS_AS(make_batch(data.dataset, idx), DataError);
}
