#include <doctest.h>

#include <omp.h>

#include "oracles.hpp"
#include "trilite/eval.hpp"
#include "trilite/numerics.hpp"
#include "trilite/pipeline.hpp"
#include "trilite/serial.hpp"
#include "trilite/synth.hpp"

using namespace trilite;
using oracle::random_tensor;

namespace {

struct Threads {
    int saved;
    explicit Threads(int n) : saved(omp_get_max_threads()) { omp_set_num_threads(n); }
    ~Threads() { omp_set_num_threads(saved); }
};

} // namespace

TEST_CASE("conv2d forward and backward are bitwise serial-equal") {
    Threads t(4);
    for (std::size_t k : {1u, 3u}) {
        Rng rng(k);
        const Tensor in = random_tensor({5, 16, 9, 11}, rng);
        const Tensor ker = random_tensor({3, 16, k, k}, rng);
        const Tensor bias = random_tensor({3}, rng);
        const Tensor r = random_tensor({5, 3, 9, 11}, rng);
        CHECK(conv2d(in, ker, bias, k / 2) == serial::conv2d(in, ker, bias, k / 2));
        const Conv2dGrads p = conv2d_backward(in, ker, r, k / 2);
        const Conv2dGrads s = serial::conv2d_backward(in, ker, r, k / 2);
        CHECK(p.input == s.input);
        CHECK(p.kernel == s.kernel);
        CHECK(p.bias == s.bias);
    }
}

TEST_CASE("batchnorm is bitwise serial-equal") {
    Threads t(4);
    Rng rng(2);
    const Tensor in = random_tensor({7, 3, 12, 12}, rng, -4, 4);
    for (Mode mode : {Mode::train, Mode::eval}) {
        BatchNormState a(3), b(3);
        a.gamma = b.gamma = {0.5, 1.5, -1.0};
        a.running_var = b.running_var = {2.0, 0.5, 1.0};
        BatchNormCache ca, cb;
        CHECK(batchnorm(in, a, mode, &ca) == serial::batchnorm(in, b, mode, &cb));
        CHECK(a == b);
        CHECK(ca.normalized == cb.normalized);
        CHECK(ca.inv_std == cb.inv_std);
    }
}

TEST_CASE("upsampling is bitwise serial-equal") {
    Threads t(4);
    Rng rng(3);
    const Tensor m = random_tensor({16, 16}, rng, 0, 1);
    CHECK(upsample_bilinear(m, 224, 224) == serial::upsample_bilinear(m, 224, 224));
    CHECK(upsample_bilinear(m, 97, 131) == serial::upsample_bilinear(m, 97, 131));
}

TEST_CASE("prediction does not depend on the thread count") {
    SynthSpec spec;
    spec.samples = 40;
    spec.distractor_rate = 0.5;
    const SynthDataset data = synth_generate(spec, 1);
    const HeadParams params =
        HeadParams::initialized({spec.feature_dim, spec.feature_dim, spec.classes, 3, HeadMode::three_channel}, 2);
    std::vector<EvalRecord> one, four;
    {
        Threads t(1);
        one = predict_records(params, data.dataset, 0.5, 7);
    }
    {
        Threads t(4);
        four = predict_records(params, data.dataset, 0.5, 64);
    }
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
        CHECK(one[i].score_map == four[i].score_map);
        CHECK(one[i].largest_box == four[i].largest_box);
        CHECK(one[i].class_ranking == four[i].class_ranking);
    }
    Threads t(4);
    CHECK(gt_known_at(one, 0.4, BoxMode::merged) == gt_known_at(four, 0.4, BoxMode::merged));
}
