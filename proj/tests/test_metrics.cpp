#include <doctest.h>

#include <cmath>

#include "diffprune/metrics.hpp"
#include "diffprune/models.hpp"

using namespace diffprune;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(scale * rng.normal());
    return t;
}

}  // namespace

TEST_CASE("ssim identity, symmetry, hand value") {
    Rng rng(1);
    auto x = random_tensor<float>({16, 16}, rng);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-6));

    // constant 0 vs constant 1 at L=1: variance terms vanish, value is C1/(1+C1)
    Tensor<float> zero({16, 16}, 0.0f);
    Tensor<float> one({16, 16}, 1.0f);
    double c1 = 1e-4;
    CHECK(ssim(zero, one) == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-6));
    CHECK(ssim(zero, one) == doctest::Approx(9.999e-5).epsilon(1e-3));

    auto y = random_tensor<float>({16, 16}, rng);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));

    // perturbed image is strictly below 1
    auto xp = x.deep_copy();
    xp[40] += 0.5f;
    CHECK(ssim(x, xp) < 1.0 - 1e-6);
}

TEST_CASE("ssim stays within [-1, 1] on random pairs and handles wrappers") {
    Rng rng(2);
    for (int rep = 0; rep < 25; ++rep) {
        auto a = random_tensor<float>({12, 12}, rng, 2.0);
        auto b = random_tensor<float>({12, 12}, rng, 2.0);
        double v = ssim(a, b);
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }

    // leading singleton dims are accepted; channel > 1 is not
    auto img = random_tensor<float>({1, 1, 16, 16}, rng);
    CHECK(ssim(img, img) == doctest::Approx(1.0));
    auto multi = random_tensor<float>({2, 16, 16}, rng);
    CHECK_THROWS(ssim(multi, multi));

    auto small = random_tensor<float>({4, 4}, rng);
    CHECK_THROWS(ssim(small, small));  // window larger than image
    auto other = random_tensor<float>({16, 12}, rng);
    CHECK_THROWS(ssim(img, other));
    CHECK_THROWS(ssim(img, img, SsimConfig{4, 1.0}));
}

TEST_CASE("consistency_eval: identical models score exactly 1") {
    Rng rng(3);
    auto m = MlpDenoiser<float>::create({8, 8}, 4, rng);
    init::fan_in_uniform(m.out.weight, m.out.in_features(), rng);
    auto s = make_linear_schedule(10, 1e-3, 0.05);

    auto report = consistency_eval(m, m, s, 4, SamplerKind::ddim, 10, 16, 7);
    CHECK(report.n_seeds == 4);
    CHECK(report.mean == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(report.stddev == doctest::Approx(0.0).epsilon(1e-9));

    auto u = TinyUnet<float>::create(4, 8, 8, rng);
    init::fan_in_uniform(u.head.weight, u.head.in_channels() * 9, rng);
    auto ur = consistency_eval(u, u, s, 2, SamplerKind::ddim, 10, 2, 7);
    CHECK(ur.mean == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("consistency_eval: unrelated models score below 1, deterministically") {
    Rng rng(4);
    auto a = MlpDenoiser<float>::create({8, 8}, 4, rng);
    auto b = MlpDenoiser<float>::create({8, 8}, 4, rng);
    init::fan_in_uniform(a.out.weight, a.out.in_features(), rng);
    init::fan_in_uniform(b.out.weight, b.out.in_features(), rng);
    auto s = make_linear_schedule(10, 1e-3, 0.05);

    auto r1 = consistency_eval(a, b, s, 4, SamplerKind::ddim, 10, 16, 9);
    CHECK(r1.mean < 1.0);
    for (double v : r1.values) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
    auto r2 = consistency_eval(a, b, s, 4, SamplerKind::ddim, 10, 16, 9);
    CHECK(r1.values == r2.values);

    // ddpm path shares the z sequence between the two models
    auto r3 = consistency_eval(a, b, s, 2, SamplerKind::ddpm, 10, 8, 9);
    CHECK(r3.mean < 1.0);
    auto r4 = consistency_eval(a, a, s, 2, SamplerKind::ddpm, 10, 8, 9);
    CHECK(r4.mean == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("mmd_2d: identical sets, separation, symmetry") {
    Rng rng(5);
    auto a = random_tensor<float>({1000, 2}, rng);
    CHECK(mmd_2d(a, a) < 1e-3);

    // disjoint far-apart clusters produce a large value
    Tensor<float> left({200, 2}), right({200, 2});
    Rng r2(6);
    for (int64_t i = 0; i < 200; ++i) {
        left[i * 2] = static_cast<float>(-10.0 + 0.1 * r2.normal());
        left[i * 2 + 1] = static_cast<float>(0.1 * r2.normal());
        right[i * 2] = static_cast<float>(10.0 + 0.1 * r2.normal());
        right[i * 2 + 1] = static_cast<float>(0.1 * r2.normal());
    }
    double far = mmd_2d(left, right);
    CHECK(far > 1.0);
    CHECK(mmd_2d(left, right) == doctest::Approx(mmd_2d(right, left)).epsilon(1e-12));

    CHECK_THROWS(mmd_2d(random_tensor<float>({50, 2}, rng), a));  // too few samples
    CHECK_THROWS(mmd_2d(random_tensor<float>({200, 3}, rng), a));
}

TEST_CASE("mmd_2d converges toward 0 with sample count for a shared distribution") {
    Rng rng(7);
    auto draw = [&](int64_t n) {
        Tensor<float> t({n, 2});
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
        return t;
    };
    double m100 = mmd_2d(draw(100), draw(100));
    double m1000 = mmd_2d(draw(1000), draw(1000));
    CHECK(m1000 <= m100 + 5e-3);
    CHECK(m1000 < 5e-3);
}
