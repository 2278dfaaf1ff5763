#include <doctest.h>

#include <vector>

#include "diffprune/autodiff.hpp"
#include "diffprune/rng.hpp"

#include "fd_oracle.hpp"

using namespace diffprune;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(scale * rng.normal());
    return t;
}

}  // namespace

TEST_CASE("matmul against hand values") {
    Tape<float> tape(false);

    // identity case
    Tensor<float> I({2, 2}, std::vector<float>{1, 0, 0, 1});
    Tensor<float> M({2, 2}, std::vector<float>{3, -1, 2, 5});
    auto IM = tape.matmul(I, M);
    for (int64_t i = 0; i < 4; ++i) CHECK(IM[i] == M[i]);

    // [[1,2]] . [[3],[4]] = [[11]]
    Tensor<float> a({1, 2}, std::vector<float>{1, 2});
    Tensor<float> b({2, 1}, std::vector<float>{3, 4});
    CHECK(tape.matmul(a, b).item() == doctest::Approx(11.0f));

    CHECK_THROWS(tape.matmul(a, a));  // inner dims differ
}

TEST_CASE("matmul backward of sum(A*B) equals column sums of B broadcast to rows") {
    Rng rng(11);
    auto A = random_tensor<double>({3, 4}, rng);
    auto B = random_tensor<double>({4, 5}, rng);
    A.set_requires_grad(true);

    Tape<double> tape;
    tape.backward(tape.sum(tape.matmul(A, B)));

    // d sum(A.B) / dA[i,p] = sum_j B[p,j], identical for every row i.
    for (int64_t p = 0; p < 4; ++p) {
        double colsum = 0;
        for (int64_t j = 0; j < 5; ++j) colsum += B[p * 5 + j];
        for (int64_t i = 0; i < 3; ++i) CHECK(A.grad()[i * 4 + p] == doctest::Approx(colsum).epsilon(1e-12));
    }
}

TEST_CASE("conv2d special kernels") {
    Tape<float> tape(false);
    Rng rng(5);
    auto x = random_tensor<float>({2, 3, 4, 4}, rng);

    // 1x1 kernel = per-pixel linear map over channels
    auto w = random_tensor<float>({2, 3, 1, 1}, rng);
    Tensor<float> b({2}, std::vector<float>{0.5f, -1.f});
    auto y = tape.conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{2, 2, 4, 4});
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t p = 0; p < 16; ++p) {
                float want = b[c];
                for (int64_t ci = 0; ci < 3; ++ci) want += w[c * 3 + ci] * x[(n * 3 + ci) * 16 + p];
                CHECK(y[(n * 2 + c) * 16 + p] == doctest::Approx(want).epsilon(1e-5));
            }

    // all-zero weights, bias c -> constant output
    Tensor<float> wz({2, 3, 3, 3});
    Tensor<float> bc({2}, std::vector<float>{2.5f, -0.5f});
    auto yz = tape.conv2d(x, wz, bc, 1, 1);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t p = 0; p < 16; ++p) CHECK(yz[(n * 2 + c) * 16 + p] == bc[c]);

    // stride/pad output dim contract
    CHECK_THROWS(tape.conv2d(x, wz, bc, 3, 0));  // (4-3)%3 != 0
}

TEST_CASE("elementwise op values") {
    Tape<float> tape(false);
    Tensor<float> x({3}, std::vector<float>{0.f, 1.f, -1.f});
    auto y = tape.silu(x);
    CHECK(y[0] == 0.0f);  // silu(0) = 0
    CHECK(y[1] == doctest::Approx(0.731058584f));
    CHECK(y[2] == doctest::Approx(-0.268941432f));

    CHECK(tape.mse_loss(x, x).item() == 0.0f);
    Tensor<float> a({2}, std::vector<float>{0, 0}), b({2}, std::vector<float>{1, 1});
    CHECK(tape.mse_loss(a, b).item() == doctest::Approx(1.0f));
    CHECK_THROWS(tape.mse_loss(a, x));
}

TEST_CASE("backward basics") {
    // d(x^2)/dx at x=3 is 6
    Tensor<float> x = Tensor<float>::scalar(3.0f).set_requires_grad(true);
    Tape<float> tape;
    tape.backward(tape.mul(x, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0f));

    // gradient of a constant w.r.t. an unused input stays zero
    Tensor<float> unused = Tensor<float>::scalar(1.0f).set_requires_grad(true);
    Tensor<float> c = Tensor<float>::scalar(5.0f).set_requires_grad(true);
    Tape<float> t2;
    t2.backward(t2.scale(c, 2.0f));
    CHECK(!unused.has_grad());

    // two backward calls on separate tapes accumulate additively
    Tensor<float> w = Tensor<float>::scalar(2.0f).set_requires_grad(true);
    for (int i = 0; i < 2; ++i) {
        Tape<float> t;
        t.backward(t.mul(w, w));
    }
    CHECK(w.grad()[0] == doctest::Approx(8.0f));  // 2 * (2w)

    // error paths
    Tape<float> t3;
    Tensor<float> v({2}, std::vector<float>{1, 2});
    v.set_requires_grad(true);
    auto y = t3.scale(v, 1.0f);
    CHECK_THROWS(t3.backward(y));  // non-scalar
    Tape<float> t4;
    auto s = t4.sum(t3.scale(v, 1.0f));
    t4.backward(s);
    CHECK_THROWS(t4.backward(s));  // consumed tape
    Tape<float> t5(false);
    CHECK_THROWS(t5.backward(t5.sum(v)));  // non-recording tape
}

TEST_CASE("grad_check: exactly linear function is exact to machine precision") {
    Rng rng(21);
    auto coeff = random_tensor<double>({6}, rng);
    auto x = random_tensor<double>({6}, rng);
    double err = grad_check(
        [&](Tape<double>& t, const Tensor<double>& v) { return t.sum(t.mul(v, coeff)); }, x, 1e-6);
    CHECK(err < 1e-9);
}

TEST_CASE("grad_check: random 2-layer mlp path stays under 1e-4 in f32") {
    Rng rng(23);
    auto b1 = oracle::Dual::random({5}, rng, 0.1);
    auto w2 = oracle::Dual::random({1, 5}, rng, 0.5);
    auto b2 = oracle::Dual::random({1}, rng, 0.1);
    auto x = oracle::Dual::random({4, 3}, rng);
    Rng wr(123);
    Tensor<double> w1({5, 3});
    for (int64_t i = 0; i < w1.numel(); ++i) w1[i] = 0.5 * wr.normal();

    auto f = [&]<typename T>(Tape<T>& t, const Tensor<T>& w) {
        auto h = t.silu(t.linear(x.get<T>(), w, b1.get<T>()));
        return t.sum(t.linear(h, w2.get<T>(), b2.get<T>()));
    };
    CHECK(oracle::f32_grad_err_vs_f64_fd(f, w1) < 1e-4);
}

TEST_CASE("grad_check: random conv stack with norm and upsample stays under 1e-4 in f32") {
    Rng rng(23);
    auto x = oracle::Dual::random({2, 2, 5, 5}, rng);
    auto b1 = oracle::Dual::random({4}, rng, 0.1);
    Tensor<double> gamma_d({4});
    for (int64_t i = 0; i < 4; ++i) gamma_d[i] = 1.0 + 0.3 * rng.normal();
    auto gamma = oracle::Dual::of(gamma_d);
    auto beta = oracle::Dual::random({4}, rng, 0.1);
    auto w2 = oracle::Dual::random({1, 4, 3, 3}, rng, 0.4);
    auto b2 = oracle::Dual::random({1}, rng, 0.1);
    Rng wr(123);
    Tensor<double> w1({4, 2, 3, 3});
    for (int64_t i = 0; i < w1.numel(); ++i) w1[i] = 0.4 * wr.normal();

    auto f = [&]<typename T>(Tape<T>& t, const Tensor<T>& w) {
        auto h = t.silu(t.group_norm(t.conv2d(x.get<T>(), w, b1.get<T>(), 2, 1), 2, gamma.get<T>(), beta.get<T>()));
        auto u = t.upsample_nearest2x(h);
        return t.mean(t.conv2d(u, w2.get<T>(), b2.get<T>(), 1, 1));
    };
    CHECK(oracle::f32_grad_err_vs_f64_fd(f, w1) < 1e-4);
}

TEST_CASE("gradient accumulation is deterministic and additive across passes") {
    Rng rng(31);
    auto x = random_tensor<float>({8, 3, 8, 8}, rng);
    auto w = random_tensor<float>({5, 3, 3, 3}, rng, 0.3).set_requires_grad(true);
    auto b = random_tensor<float>({5}, rng, 0.1).set_requires_grad(true);

    auto run = [&]() {
        w.zero_grad();
        b.zero_grad();
        Tape<float> t;
        t.backward(t.mean(t.conv2d(x, w, b, 1, 1)));
        return std::vector<float>(w.grad().begin(), w.grad().end());
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1 == g2);  // bit-identical across runs

    // one pass with grads kept equals two zeroed passes summed
    w.zero_grad();
    b.zero_grad();
    for (int i = 0; i < 2; ++i) {
        Tape<float> t;
        t.backward(t.mean(t.conv2d(x, w, b, 1, 1)));
    }
    for (size_t i = 0; i < g1.size(); ++i)
        CHECK(w.grad()[i] == doctest::Approx(2.0f * g1[i]).epsilon(1e-6));
}

TEST_CASE("ops do not mutate input values") {
    Rng rng(33);
    auto x = random_tensor<float>({2, 2, 4, 4}, rng);
    auto w = random_tensor<float>({3, 2, 3, 3}, rng).set_requires_grad(true);
    auto b = random_tensor<float>({3}, rng).set_requires_grad(true);
    auto x_before = x.deep_copy();
    auto w_before = w.deep_copy();

    Tape<float> t;
    auto y = t.silu(t.conv2d(x, w, b, 1, 1));
    t.backward(t.mean(y));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x[i] == x_before[i]);
    for (int64_t i = 0; i < w.numel(); ++i) CHECK(w[i] == w_before[i]);
}

TEST_CASE("concat_channels and add_channels round out the op set") {
    Rng rng(35);
    auto a = random_tensor<float>({2, 2, 3, 3}, rng).set_requires_grad(true);
    auto b = random_tensor<float>({2, 1, 3, 3}, rng).set_requires_grad(true);
    Tape<float> t;
    auto cat = t.concat_channels(a, b);
    CHECK(cat.shape() == Shape{2, 3, 3, 3});
    CHECK(cat[0] == a[0]);
    CHECK(cat[2 * 9] == b[0]);

    auto emb = random_tensor<float>({2, 3}, rng).set_requires_grad(true);
    auto y = t.add_channels(cat, emb);
    CHECK(y[0] == doctest::Approx(a[0] + emb[0]));
    t.backward(t.sum(y));
    // every element of the concat input receives gradient 1; channel vector gets H*W
    for (auto g : a.grad()) CHECK(g == doctest::Approx(1.0f));
    for (auto g : emb.grad()) CHECK(g == doctest::Approx(9.0f));
}

TEST_CASE("property: grad_check over random small instances of every primitive") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor<double>({2, 3}, rng);
        auto w = random_tensor<double>({4, 3}, rng);
        auto b = random_tensor<double>({4}, rng);
        double err = grad_check(
            [&](Tape<double>& t, const Tensor<double>& v) {
                auto h = t.silu(t.linear(x, v, b));
                Tensor<double> target(h.shape(), std::vector<double>(h.numel(), 0.25));
                return t.mse_loss(h, target);
            },
            w, 1e-5);
        CHECK(err < 1e-7);
    }
}
