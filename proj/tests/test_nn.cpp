#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "sarcx/error.hpp"
#include "sarcx/nn.hpp"

using namespace sarcx;

TEST_CASE("softmax rows are normalized and order-preserving") {
    Matrix scores(2, 3);
    scores << 1.0, 2.0, 3.0, -1.0, -1.0, -1.0;
    const Matrix p = nn::softmax_rows(scores);

    CHECK(p.row(0).sum() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p(0, 0) < p(0, 1));
    CHECK(p(0, 1) < p(0, 2));
    // Equal finite scores give the uniform distribution exactly.
    CHECK((p.row(1) - Eigen::RowVector3d::Constant(1.0 / 3.0)).cwiseAbs().maxCoeff() < 1e-15);

    // Hand value: softmax(1,2,3)_2 = e^3 / (e^1 + e^2 + e^3).
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(p(0, 2) == doctest::Approx(std::exp(3.0) / denom).epsilon(1e-14));
}

TEST_CASE("softmax shift invariance keeps huge scores finite") {
    Matrix scores(1, 3);
    scores << 1000.0, 1001.0, 1002.0;
    const Matrix big = nn::softmax_rows(scores);
    Matrix small(1, 3);
    small << 0.0, 1.0, 2.0;
    CHECK((big - nn::softmax_rows(small)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(big.allFinite());
}

TEST_CASE("fully masked softmax rows fall back to uniform") {
    const double ninf = -std::numeric_limits<double>::infinity();
    Matrix scores(2, 4);
    scores << ninf, ninf, ninf, ninf, 0.0, ninf, 0.0, ninf;
    const Matrix p = nn::softmax_rows(scores);
    CHECK(p.row(0) == Eigen::RowVector4d::Constant(0.25));
    // A partially masked row is a softmax over the surviving entries.
    CHECK(p(1, 0) == doctest::Approx(0.5));
    CHECK(p(1, 1) == 0.0);
    CHECK(p(1, 3) == 0.0);
}

TEST_CASE("softmax backward matches finite differences") {
    Rng rng(220);
    Matrix scores(3, 4);
    Matrix upstream(3, 4);
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        scores(i) = rng.normal();
        upstream(i) = rng.normal();
    }
    auto loss = [&] { return (nn::softmax_rows(scores).array() * upstream.array()).sum(); };
    const Matrix analytic = nn::softmax_rows_backward(nn::softmax_rows(scores), upstream);
    const auto fd = testutil::finite_difference(loss, {nn::view("scores", scores)});
    CHECK(testutil::max_rel_error(analytic, fd[0]) < 1e-6);
}

TEST_CASE("sigmoid hand values and saturation") {
    Matrix x(1, 4);
    x << 0.0, 2.0, 40.0, -40.0;
    const Matrix s = nn::sigmoid(x);
    CHECK(s(0, 0) == 0.5);
    CHECK(s(0, 1) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
    CHECK(s(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s(0, 3) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.allFinite());
}

TEST_CASE("tensor views alias matrix, vector, and scalar storage") {
    Matrix m = Matrix::Zero(2, 3);
    Vector v = Vector::Zero(4);
    double s = 0.0;

    auto mv = nn::view("m", m);
    auto vv = nn::view("v", v);
    auto sv = nn::view("s", s);
    CHECK(mv.rows == 2);
    CHECK(mv.cols == 3);
    CHECK(mv.size() == 6);
    CHECK(vv.rows == 4);
    CHECK(vv.cols == 1);
    CHECK(sv.size() == 1);

    mv.data[0] = 7.0; // column-major: (0,0)
    CHECK(m(0, 0) == 7.0);
    vv.data[2] = 3.0;
    CHECK(v(2) == 3.0);
    sv.data[0] = 1.5;
    CHECK(s == 1.5);
}

TEST_CASE("first optimizer step matches the closed-form update") {
    // At t=1 bias correction cancels exactly: m-hat = g, v-hat = g^2, so
    // theta' = theta - lr*(g/(|g| + eps) + wd*theta).
    double theta = 1.0;
    double grad = 1.0;
    nn::AdamW opt(0.9, 0.999, 1e-8, 0.01);
    opt.step({{{nn::view("theta", theta)}, {nn::view("theta", grad)}, 0.1}});
    const double expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.01 * 1.0);
    CHECK(theta == doctest::Approx(expected).epsilon(1e-15));
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("constant gradients advance roughly lr per bias-corrected step") {
    // With g identical every step, m-hat = g and v-hat = g^2 at every t, so
    // without weight decay each step subtracts lr*g/(|g| + eps).
    double theta = 1.0;
    nn::AdamW opt(0.9, 0.999, 1e-8, 0.0);
    for (int i = 0; i < 5; ++i) {
        double grad = 2.0;
        opt.step({{{nn::view("theta", theta)}, {nn::view("theta", grad)}, 0.1}});
    }
    CHECK(theta == doctest::Approx(1.0 - 5 * 0.1).epsilon(1e-7));
    CHECK(opt.steps_taken() == 5);
}

TEST_CASE("groups in one call share the step counter but not learning rates") {
    double a = 1.0, b = 1.0;
    double ga = 1.0, gb = 1.0;
    nn::AdamW opt(0.9, 0.999, 1e-8, 0.0);
    opt.step({{{nn::view("a", a)}, {nn::view("a", ga)}, 0.1},
              {{nn::view("b", b)}, {nn::view("b", gb)}, 0.2}});
    CHECK(opt.steps_taken() == 1);
    CHECK(a == doctest::Approx(1.0 - 0.1).epsilon(1e-7));
    CHECK(b == doctest::Approx(1.0 - 0.2).epsilon(1e-7));
}

TEST_CASE("moment state is keyed by tensor name") {
    // Stepping "x" twice must accumulate momentum even when the views are
    // rebuilt between calls (fresh storage, same name).
    double x1 = 1.0, g = 1.0;
    nn::AdamW opt(0.9, 0.999, 1e-8, 0.0);
    opt.step({{{nn::view("x", x1)}, {nn::view("x", g)}, 0.1}});

    double x2 = x1; // new storage continues under the same name
    double g2 = 1.0;
    opt.step({{{nn::view("x", x2)}, {nn::view("x", g2)}, 0.1}});
    CHECK(x2 == doctest::Approx(1.0 - 0.2).epsilon(1e-7));

    // A different name starts from zero moments at t=2: biased correction
    // still yields the same effective step for constant gradients.
    double y = 1.0, gy = 1.0;
    nn::AdamW fresh(0.9, 0.999, 1e-8, 0.0);
    fresh.step({{{}, {}, 0.1}}); // empty group advances t only
    fresh.step({{{nn::view("y", y)}, {nn::view("y", gy)}, 0.1}});
    CHECK(fresh.steps_taken() == 2);
    CHECK(y < 1.0);
}

TEST_CASE("mismatched views are rejected") {
    double x = 0.0, g = 0.0;
    Matrix gm = Matrix::Zero(2, 2);
    nn::AdamW opt;
    CHECK_THROWS_AS(opt.step({{{nn::view("x", x)}, {}, 0.1}}), UsageError);
    CHECK_THROWS_AS(opt.step({{{nn::view("x", x)}, {nn::view("x", gm)}, 0.1}}), UsageError);
    CHECK_NOTHROW(opt.step({{{nn::view("x", x)}, {nn::view("x", g)}, 0.1}}));
}
