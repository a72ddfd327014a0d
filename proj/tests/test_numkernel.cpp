#include <doctest.h>

#include <cmath>
#include <string>

#include "helpers.hpp"
#include "seca/errors.hpp"
#include "seca/numkernel.hpp"

using seca::derive_seed;
using seca::Error;
using seca::ErrorCode;
using seca::Rng;
namespace test = seca::test;
namespace num = seca::num;
using namespace seca::num;

namespace {

template <typename T>
struct real_of;
template <typename R>
struct real_of<Tape<R>> {
    using type = R;
};

// Runs grad_check at 64-bit (tol 1e-6) and 32-bit (tol 1e-4) on 100 random
// instances. `build` maps the parameter leaves to a Var; vector outputs are
// contracted with fixed random coefficients.
template <typename Build>
void check_op(const std::string& name, const std::vector<Shape>& shapes, Build build, double shift = 0.0) {
    for (std::uint64_t inst = 0; inst < 100; ++inst) {
        Rng rng(derive_seed(99, name, inst));
        std::vector<Tensor<double>> init;
        for (const auto& s : shapes) {
            Tensor<double> t(s);
            for (double& v : t.span()) v = rng.normal() + shift;
            init.push_back(std::move(t));
        }
        const auto coeffs = test::random_vec(64, rng);
        auto loss = [&](auto& tape, auto params) {
            using R = typename real_of<std::decay_t<decltype(tape)>>::type;
            std::vector<Var<R>> vars;
            for (auto& p : params) vars.push_back(tape.param(p));
            Var<R> out = build(tape, vars);
            if (out.size() == 1) return out;
            std::vector<R> c(out.size());
            for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<R>(coeffs[i]);
            return dot(out, tape.constant(Tensor<R>(out.value().shape(), c)));
        };
        std::vector<Parameter<double>> p64;
        std::vector<Parameter<float>> p32;
        for (const auto& t : init) {
            p64.emplace_back(t);
            p32.emplace_back(t.cast<float>());
        }
        const auto r64 = grad_check<double>(loss, std::span<Parameter<double>>(p64), 1e-6);
        const auto r32 = grad_check<float>(loss, std::span<Parameter<float>>(p32), 1e-4);
        INFO(name << " instance " << inst << " worst64 " << r64.worst << " worst32 " << r32.worst << " "
                  << r64.diagnostic << r32.diagnostic);
        REQUIRE(r64.passed);
        REQUIRE(r32.passed);
    }
}

}  // namespace

TEST_CASE("layernorm examples") {
    const auto a = layernorm_value<double>(std::vector<double>{1, 1, 1, 1});
    for (double v : a.span()) CHECK(v == 0.0);
    const auto b = layernorm_value<double>(std::vector<double>{1, -1});
    // var = 1, so the stabilizer shifts the result by 1/sqrt(1 + 1e-5)
    CHECK(b[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-15));

    // oracle: direct long-double formula
    const std::vector<long double> v = {2, 0, 0, 0};
    long double mean = 0, var = 0;
    for (auto x : v) mean += x;
    mean /= 4;
    for (auto x : v) var += (x - mean) * (x - mean);
    var /= 4;
    const auto c = layernorm_value<double>(std::vector<double>{2, 0, 0, 0});
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(c[i] == doctest::Approx(static_cast<double>((v[i] - mean) / std::sqrt(var + 1e-5L))).epsilon(1e-14));

    CHECK_THROWS_AS(layernorm_value<double>(std::vector<double>{1.0}), Error);
}

TEST_CASE("layernorm moments on random inputs") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto x = test::random_vec(3 + i % 20, rng, 3.0);
        const auto y = layernorm_value<double>(x);
        double m = 0, var = 0;
        for (double v : y.span()) m += v;
        m /= static_cast<double>(y.size());
        for (double v : y.span()) var += (v - m) * (v - m);
        var /= static_cast<double>(y.size());
        CHECK(std::abs(m) < 1e-9);
        double in_m = 0, in_var = 0;
        for (double v : x) in_m += v;
        in_m /= static_cast<double>(x.size());
        for (double v : x) in_var += (v - in_m) * (v - in_m);
        in_var /= static_cast<double>(x.size());
        CHECK(std::abs(var - in_var / (in_var + 1e-5)) < 1e-9);
    }
}

TEST_CASE("softmax_temp examples") {
    const auto u = softmax_values<double>(std::vector<double>{0, 0, 0}, 0.3);
    for (double p : u) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const auto a = softmax_values<double>(std::vector<double>{std::log(2.0), 0.0}, 1.0);
    CHECK(a[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(a[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // oracle: long-double evaluation of softmax(0.05, 0)
    const long double e = std::exp(0.05L);
    const auto b = softmax_values<double>(std::vector<double>{1.0, 0.0}, 20.0);
    CHECK(b[0] == doctest::Approx(static_cast<double>(e / (e + 1))).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(static_cast<double>(1 / (e + 1))).epsilon(1e-15));
    CHECK_THROWS_AS(softmax_values<double>(std::vector<double>{1.0}, 0.0), Error);
    try {
        softmax_values<double>(std::vector<double>{1.0}, -1.0);
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::kInvalidConfig);
    }
}

TEST_CASE("softmax sums to one and ignores shifts") {
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        auto x = test::random_vec(2 + i % 30, rng, 20.0);
        const double tau = 0.01 + rng.uniform() * 5;
        const auto p = softmax_values<double>(x, tau);
        CHECK(ProbVector::is_valid(p));
        for (double& v : x) v += 123.0;
        const auto q = softmax_values<double>(x, tau);
        for (std::size_t j = 0; j < p.size(); ++j) CHECK(std::abs(p[j] - q[j]) < 1e-12);
    }
}

TEST_CASE("cosine examples") {
    CHECK(cosine_value<double>(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == doctest::Approx(1.0));
    CHECK(cosine_value<double>(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    CHECK(cosine_value<double>(std::vector<double>{3, 4}, std::vector<double>{4, 3}) == doctest::Approx(24.0 / 25.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_value<double>(std::vector<double>{0, 0}, std::vector<double>{1, 0}), Error);
}

TEST_CASE("cross_entropy and kl_div examples") {
    Tape<double> t;
    CHECK(cross_entropy(t.constant(Tensor<double>::vector({0.0, 1.0})), 1).item() == doctest::Approx(0.0).epsilon(1e-11));
    CHECK(cross_entropy(t.constant(Tensor<double>::vector({0.25, 0.25, 0.25, 0.25})), 2).item() ==
          doctest::Approx(-std::log(0.25 + 1e-12)).epsilon(1e-14));
    CHECK(cross_entropy(t.constant(Tensor<double>::vector({0.7, 0.3})), 1).item() ==
          doctest::Approx(-std::log(0.3 + 1e-12)).epsilon(1e-14));
    CHECK_THROWS_AS(cross_entropy(t.constant(Tensor<double>::vector({0.7, 0.3})), 2), Error);

    auto p = t.constant(Tensor<double>::vector({0.2, 0.3, 0.5}));
    CHECK(std::abs(kl_div(p, p, 1e-8).item()) < 1e-9);
    CHECK(kl_div(t.constant(Tensor<double>::vector({1.0, 0.0})), t.constant(Tensor<double>::vector({0.5, 0.5})), 0.0)
              .item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(kl_div(t.constant(Tensor<double>::vector({1.0, 0.0})), t.constant(Tensor<double>::vector({0.5, 0.5})), 1e-8)
              .item() == doctest::Approx(std::log(2.0)).epsilon(1e-7));
    CHECK_THROWS_AS(kl_div(p, t.constant(Tensor<double>::vector({0.5, 0.5})), 1e-8), Error);

    // oracle: independent summation on random 5-dim pairs
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        const auto a = softmax_values<double>(test::random_vec(5, rng), 1.0);
        const auto b = softmax_values<double>(test::random_vec(5, rng), 1.0);
        long double ref = 0;
        for (int j = 0; j < 5; ++j) ref += a[j] * std::log((a[j] + 1e-8L) / (b[j] + 1e-8L));
        const double got = kl_div(t.constant(Tensor<double>::vector(a)), t.constant(Tensor<double>::vector(b)), 1e-8).item();
        CHECK(got == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
    }
}

TEST_CASE("kl_div lower bound with stabilizer") {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        const std::size_t n = 2 + rng.below(1023);
        const auto a = softmax_values<double>(test::random_vec(n, rng, 3.0), 1.0);
        const auto b = softmax_values<double>(test::random_vec(n, rng, 3.0), 1.0);
        Tape<double> t;
        CHECK(kl_div(t.constant(Tensor<double>::vector(a)), t.constant(Tensor<double>::vector(b)), 1e-8).item() >= -1e-6);
        CHECK(kl_div(t.constant(Tensor<double>::vector(a)), t.constant(Tensor<double>::vector(a)), 1e-8).item() >= -1e-6);
    }
}

TEST_CASE("kl_div lower bound on peaked and sparse pairs") {
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const std::size_t n = 1024;
        // student concentrated on a few entries, teacher spread, plus the reverse
        auto a = softmax_values<double>(test::random_vec(n, rng, 40.0), 1.0);
        auto b = softmax_values<double>(test::random_vec(n, rng, 0.1), 1.0);
        Tape<double> t;
        CHECK(kl_div(t.constant(Tensor<double>::vector(a)), t.constant(Tensor<double>::vector(b)), 1e-8).item() >= -1e-6);
        CHECK(kl_div(t.constant(Tensor<double>::vector(b)), t.constant(Tensor<double>::vector(a)), 1e-8).item() >= -1e-6);
        // nearly equal pair
        auto c = a;
        for (double& v : c) v *= 1.0 + 1e-9 * rng.normal();
        double total = 0;
        for (double v : c) total += v;
        for (double& v : c) v /= total;
        CHECK(kl_div(t.constant(Tensor<double>::vector(a)), t.constant(Tensor<double>::vector(c)), 1e-8).item() >= -1e-6);
    }
}

TEST_CASE("detach blocks the gradient") {
    Parameter<double> p(Tensor<double>::vector({0.5, -1.5}));
    Tape<double> t;
    auto v = t.param(p);
    auto l = add(dot(detach(v), v), sum_elements(v));
    t.backward(l);
    // d/dv [c . v + sum v] with c = v held fixed
    CHECK(p.grad[0] == doctest::Approx(1.5));
    CHECK(p.grad[1] == doctest::Approx(-0.5));
}

TEST_CASE("kl_div teacher receives no gradient") {
    Parameter<double> teacher(Tensor<double>::vector({0.3, -0.2, 0.5}));
    Parameter<double> student(Tensor<double>::vector({-0.1, 0.4, 0.2}));
    Tape<double> t;
    auto l = kl_div(softmax_temp(t.param(teacher), 1.0), softmax_temp(t.param(student), 1.0), 1e-8);
    t.backward(l);
    for (double g : teacher.grad.span()) CHECK(g == 0.0);
    double s = 0;
    for (double g : student.grad.span()) s += std::abs(g);
    CHECK(s > 0);
}

TEST_CASE("non-finite values are errors") {
    Tape<double> t;
    CHECK_THROWS_AS(t.constant(Tensor<double>::vector({1.0, NAN})), Error);
    auto big = t.constant(Tensor<double>::vector({1000.0}));
    try {
        num::exp(big);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kNumericDivergence);
    }
}

TEST_CASE("value kernels and tape ops agree bitwise") {
    Rng rng(10);
    for (int i = 0; i < 20; ++i) {
        const auto x = test::random_vec(7, rng);
        Tape<double> t;
        const auto ln_tape = layernorm(t.constant(Tensor<double>::vector(x))).value();
        CHECK(ln_tape == layernorm_value<double>(x));
        const auto sm_tape = softmax_temp(t.constant(Tensor<double>::vector(x)), 0.7).value();
        CHECK(sm_tape.data() == softmax_values<double>(x, 0.7));
    }
}

TEST_CASE("grad_check quadratic example") {
    std::vector<Parameter<double>> p;
    p.emplace_back(Tensor<double>::vector({1.0, 2.0}));
    auto loss = [](auto& tape, auto params) {
        using R = typename real_of<std::decay_t<decltype(tape)>>::type;
        return scale(squared_norm(tape.param(params[0])), R(0.5));
    };
    const auto r = grad_check<double>(loss, std::span<Parameter<double>>(p), 1e-9);
    CHECK(r.passed);
    CHECK(p[0].grad[0] == doctest::Approx(1.0));
    CHECK(p[0].grad[1] == doctest::Approx(2.0));
    CHECK(r.worst < 1e-9);
}

TEST_CASE("grad_check reports non-finite losses") {
    std::vector<Parameter<double>> p;
    p.emplace_back(Tensor<double>::vector({1.0}));
    auto loss = [](auto& tape, auto params) {
        using R = typename real_of<std::decay_t<decltype(tape)>>::type;
        auto v = tape.param(params[0]);
        return scale(v, std::numeric_limits<R>::infinity());
    };
    GradCheckReport r;
    try {
        r = grad_check<double>(loss, std::span<Parameter<double>>(p), 1e-6);
    } catch (const Error& e) {
        r.diagnostic = e.what();
    }
    CHECK_FALSE(r.passed);
    CHECK_FALSE(r.diagnostic.empty());
}

TEST_CASE("every differentiable op passes grad_check") {
    using S = Shape;
    check_op("add", {S{5}, S{5}}, [](auto&, auto& v) { return add(v[0], v[1]); });
    check_op("sub", {S{5}, S{5}}, [](auto&, auto& v) { return sub(v[0], v[1]); });
    check_op("mul", {S{5}, S{5}}, [](auto&, auto& v) { return mul(v[0], v[1]); });
    check_op("scale", {S{5}}, [](auto&, auto& v) {
        using R = typename std::decay_t<decltype(v[0].value())>::value_type;
        return scale(v[0], R(1.7));
    });
    check_op("scale_by", {S{5}, S{}}, [](auto&, auto& v) { return scale_by(v[0], v[1]); });
    check_op("vecmat", {S{4}, S{4, 3}}, [](auto&, auto& v) { return vecmat(v[0], v[1]); });
    check_op("tanh", {S{6}}, [](auto&, auto& v) { return num::tanh(v[0]); });
    check_op("exp", {S{6}}, [](auto&, auto& v) { return num::exp(v[0]); });
    check_op("dot", {S{6}, S{6}}, [](auto&, auto& v) { return dot(v[0], v[1]); });
    check_op("squared_norm", {S{6}}, [](auto&, auto& v) { return squared_norm(v[0]); });
    check_op("l2_normalize", {S{6}}, [](auto&, auto& v) { return l2_normalize(v[0]); });
    check_op("layernorm", {S{6}}, [](auto&, auto& v) { return layernorm(v[0]); });
    check_op("cosine_sim", {S{6}, S{6}}, [](auto&, auto& v) { return cosine_sim(v[0], v[1]); });
    check_op("stack", {S{}, S{}, S{}}, [](auto&, auto& v) { return stack<typename std::decay_t<decltype(v[0].value())>::value_type>(v); });
    check_op("concat", {S{2}, S{3}}, [](auto&, auto& v) { return concat<typename std::decay_t<decltype(v[0].value())>::value_type>(v); });
    check_op("index", {S{4}}, [](auto&, auto& v) { return index(v[0], 2); });
    check_op("mean", {S{4}, S{4}, S{4}}, [](auto&, auto& v) { return mean<typename std::decay_t<decltype(v[0].value())>::value_type>(v); });
    check_op("sum", {S{}, S{}}, [](auto&, auto& v) { return sum<typename std::decay_t<decltype(v[0].value())>::value_type>(v); });
    check_op("sum_elements", {S{5}}, [](auto&, auto& v) { return sum_elements(v[0]); });
    check_op("normalize_sum", {S{5}}, [](auto&, auto& v) { return normalize_sum(num::exp(v[0])); });
    check_op("weighted_sum", {S{3}, S{4}, S{4}, S{4}}, [](auto&, auto& v) {
        using R = typename std::decay_t<decltype(v[0].value())>::value_type;
        std::vector<Var<R>> vs(v.begin() + 1, v.end());
        return weighted_sum(softmax_temp(v[0], R(1)), std::span<const Var<R>>(vs));
    });
    check_op("softmax_temp", {S{5}}, [](auto&, auto& v) {
        using R = typename std::decay_t<decltype(v[0].value())>::value_type;
        return softmax_temp(v[0], R(0.7));
    });
    check_op("cross_entropy", {S{5}}, [](auto&, auto& v) {
        using R = typename std::decay_t<decltype(v[0].value())>::value_type;
        return cross_entropy(softmax_temp(v[0], R(1.3)), 3);
    });
    check_op("kl_div_student", {S{5}}, [](auto& tape, auto& v) {
        using R = typename std::decay_t<decltype(v[0].value())>::value_type;
        auto teacher = tape.constant(Tensor<R>::vector(std::vector<R>{R(0.1), R(0.2), R(0.3), R(0.15), R(0.25)}));
        return kl_div(teacher, softmax_temp(v[0], R(1)), R(1e-8));
    });
    check_op("mean_rows_with", {S{3, 4}, S{4}}, [](auto&, auto& v) { return mean_rows_with(v[0], v[1]); });
}

TEST_CASE("parameters freeze and accumulate") {
    Parameter<double> p(Tensor<double>::vector({1.0, 2.0}));
    p.trainable = false;
    Tape<double> t;
    auto v = t.param(p);
    CHECK_FALSE(v.requires_grad());
    auto l = squared_norm(v);
    t.backward(l);
    CHECK(p.grad[0] == 0.0);

    Parameter<double> q(Tensor<double>::vector({1.0, 2.0}));
    for (int rep = 0; rep < 2; ++rep) {
        Tape<double> t2;
        t2.backward(squared_norm(t2.param(q)));
    }
    CHECK(q.grad[0] == doctest::Approx(4.0));
    q.zero_grad();
    CHECK(q.grad[0] == 0.0);
}
