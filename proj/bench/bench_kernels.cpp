// Times the OpenMP kernels against their serial references and checks that
// both produce identical bits.
//
//   bench_kernels [repeats]

#include <chrono>
#include <cstdlib>
#include <functional>

#include <fmt/format.h>
#include <omp.h>

#include "trilite/eval.hpp"
#include "trilite/numerics.hpp"
#include "trilite/rng.hpp"
#include "trilite/serial.hpp"

using namespace trilite;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

double best_of(int repeats, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

void row(const char* name, double serial_ms, double parallel_ms, bool same) {
    fmt::print("{:<28} {:>10.2f} {:>10.2f} {:>8.2f}x  {}\n", name, serial_ms, parallel_ms, serial_ms / parallel_ms,
               same ? "identical" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
    Rng rng(1);
    // One training batch at the synthetic scale and one at ViT-S/14 scale.
    const Tensor small = random_tensor({128, 64, 16, 16}, rng);
    const Tensor large = random_tensor({32, 384, 16, 16}, rng);
    const Tensor k_small = random_tensor({3, 64, 3, 3}, rng);
    const Tensor k_large = random_tensor({3, 384, 3, 3}, rng);
    const Tensor bias = random_tensor({3}, rng);

    fmt::print("threads: {}  repeats: {}\n", omp_get_max_threads(), repeats);
    fmt::print("{:<28} {:>10} {:>10} {:>9}\n", "kernel", "serial ms", "omp ms", "speedup");
    bool all_same = true;

    for (auto [name, in, ker] : {std::tuple{"conv2d 128x64x16x16", &small, &k_small},
                                 std::tuple{"conv2d 32x384x16x16", &large, &k_large}}) {
        Tensor a, b;
        const double s = best_of(repeats, [&] { a = serial::conv2d(*in, *ker, bias, 1); });
        const double p = best_of(repeats, [&] { b = conv2d(*in, *ker, bias, 1); });
        row(name, s, p, a == b);
        all_same = all_same && a == b;

        const Tensor grad = random_tensor(a.shape(), rng);
        Conv2dGrads ga, gb;
        const double sb = best_of(repeats, [&] { ga = serial::conv2d_backward(*in, *ker, grad, 1, false); });
        const double pb = best_of(repeats, [&] { gb = conv2d_backward(*in, *ker, grad, 1, false); });
        const bool same = ga.kernel == gb.kernel && ga.bias == gb.bias;
        row(fmt::format("{} backward", name).c_str(), sb, pb, same);
        all_same = all_same && same;
    }

    {
        const Tensor pre = random_tensor({128, 3, 16, 16}, rng);
        BatchNormState sa(3), sb(3);
        Tensor a, b;
        const double s = best_of(repeats, [&] { a = serial::batchnorm(pre, sa, Mode::train); });
        const double p = best_of(repeats, [&] { b = batchnorm(pre, sb, Mode::train); });
        row("batchnorm 128x3x16x16", s, p, a == b && sa == sb);
        all_same = all_same && a == b && sa == sb;
    }

    {
        const Tensor map = random_tensor({16, 16}, rng);
        Tensor a, b;
        const double s = best_of(repeats, [&] { a = serial::upsample_bilinear(map, 224, 224); });
        const double p = best_of(repeats, [&] { b = upsample_bilinear(map, 224, 224); });
        row("upsample 16x16 -> 224x224", s, p, a == b);
        all_same = all_same && a == b;
    }
    return all_same ? 0 : 1;
}
