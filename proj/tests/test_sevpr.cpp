#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "seca/errors.hpp"
#include "seca/sevpr.hpp"

using namespace seca;
using namespace seca::sevpr;

namespace {

std::vector<Var> consts(Tape& tape, const std::vector<Tensor>& ts) {
    std::vector<Var> out;
    for (const auto& t : ts) out.push_back(tape.constant(t));
    return out;
}

std::vector<Tensor> random_vectors(std::size_t n, std::size_t d, Rng& rng) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(Tensor::vector(test::random_vec(d, rng)));
    return out;
}

Eigen::VectorXd ln_oracle(const Tensor& t) {
    Eigen::VectorXd v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v(i) = t[i];
    const double m = v.mean();
    const double var = (v.array() - m).square().mean();
    return (v.array() - m) / std::sqrt(var + 1e-5);
}

Eigen::MatrixXd affinity_oracle(const std::vector<Tensor>& z, const Tensor& h, double gamma) {
    Eigen::MatrixXd H(h.rows(), h.cols());
    for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < h.cols(); ++c) H(r, c) = h(r, c);
    const std::size_t k = z.size();
    Eigen::MatrixXd M(k, k);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
            Eigen::RowVectorXd d = ln_oracle(z[a]).transpose() * H - ln_oracle(z[b]).transpose() * H;
            M(a, b) = std::exp(-gamma * d.squaredNorm());
        }
    return M;
}

Eigen::MatrixXd rows_to_matrix(const std::vector<Var>& rows) {
    Eigen::MatrixXd M(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) M(r, c) = rows[r].value()[c];
    return M;
}

}  // namespace

TEST_CASE("raw_prototypes examples and mean oracle") {
    const auto cfg = test::small_encoder(8);
    const Encoder enc = test::make_test_encoder(cfg, 4);
    Rng rng(1);
    SUBCASE("one sample per class") {
        PrototypeBank bank;
        std::vector<std::vector<double>> xs = {test::random_vec(8, rng), test::random_vec(8, rng)};
        std::vector<std::size_t> ys = {0, 1}, cls = {0, 1};
        raw_prototypes(bank, enc, xs, ys, cls);
        CHECK(bank.raw(0) == enc.visual_forward(xs[0], nullptr));
        CHECK(bank.raw(1) == enc.visual_forward(xs[1], nullptr));
        CHECK(bank.count(0) == 1);
    }
    SUBCASE("duplicates do not change the mean") {
        const auto x = test::random_vec(8, rng);
        PrototypeBank a, b;
        std::vector<std::vector<double>> one = {x}, many = {x, x, x, x};
        std::vector<std::size_t> y1 = {2}, y4 = {2, 2, 2, 2}, cls = {2};
        raw_prototypes(a, enc, one, y1, cls);
        raw_prototypes(b, enc, many, y4, cls);
        for (std::size_t j = 0; j < 8; ++j) CHECK(a.raw(2)[j] == doctest::Approx(b.raw(2)[j]).epsilon(1e-15));
    }
    SUBCASE("per-class mean oracle") {
        PrototypeBank bank;
        std::vector<std::vector<double>> xs;
        std::vector<std::size_t> ys;
        for (std::size_t k = 0; k < 3; ++k)
            for (int i = 0; i < 10; ++i) {
                xs.push_back(test::random_vec(8, rng));
                ys.push_back(k);
            }
        // shuffle order so the oracle cannot rely on grouping
        std::vector<std::size_t> order(xs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order.begin(), order.end());
        std::vector<std::vector<double>> xs2;
        std::vector<std::size_t> ys2;
        for (auto i : order) {
            xs2.push_back(xs[i]);
            ys2.push_back(ys[i]);
        }
        std::vector<std::size_t> cls = {0, 1, 2};
        raw_prototypes(bank, enc, xs2, ys2, cls);
        for (std::size_t k = 0; k < 3; ++k) {
            Eigen::VectorXd m = Eigen::VectorXd::Zero(8);
            for (std::size_t i = 0; i < xs.size(); ++i)
                if (ys[i] == k) {
                    const Tensor f = enc.visual_forward(xs[i], nullptr);
                    for (int j = 0; j < 8; ++j) m(j) += f[j];
                }
            m /= 10.0;
            for (int j = 0; j < 8; ++j) CHECK(bank.raw(k)[j] == doctest::Approx(m(j)).epsilon(1e-12));
            CHECK(bank.count(k) == 10);
        }
    }
    SUBCASE("errors") {
        PrototypeBank bank;
        std::vector<std::vector<double>> xs = {test::random_vec(8, rng)};
        std::vector<std::size_t> ys = {0}, cls = {0, 1};
        try {
            raw_prototypes(bank, enc, xs, ys, cls);
            FAIL("expected missing class");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::kMissingClass);
        }
        std::vector<std::size_t> c0 = {0};
        PrototypeBank b2;
        raw_prototypes(b2, enc, xs, ys, c0);
        const auto sum = b2.raw_checksum();
        CHECK_THROWS_AS(raw_prototypes(b2, enc, xs, ys, c0), Error);
        CHECK(b2.raw_checksum() == sum);
    }
}

TEST_CASE("affinity_matrix examples and properties") {
    Rng rng(2);
    const std::size_t d = 6;
    for (int inst = 0; inst < 40; ++inst) {
        const std::size_t k = 1 + inst % 5;
        const auto z = random_vectors(k, d, rng);
        const Tensor h = test::random_tensor({d, d}, rng, 0.3);
        const double gamma = 0.1 + rng.uniform() * 2;
        Tape tape;
        const auto rows = affinity_matrix(consts(tape, z), tape.constant(h), gamma);
        const auto M = rows_to_matrix(rows);
        const auto want = affinity_oracle(z, h, gamma);
        for (std::size_t a = 0; a < k; ++a) {
            CHECK(M(a, a) == 1.0);
            for (std::size_t b = 0; b < k; ++b) {
                CHECK(M(a, b) == M(b, a));
                CHECK(M(a, b) > 0.0);
                CHECK(M(a, b) <= 1.0);
                CHECK(M(a, b) == doctest::Approx(want(a, b)).epsilon(1e-10));
            }
        }
        const auto ones = rows_to_matrix(affinity_matrix(consts(tape, z), tape.constant(h), 0.0));
        CHECK((ones.array() == 1.0).all());
    }
    // formula instantiation: two classes at projected distance d
    Tape tape;
    std::vector<Tensor> z = {Tensor::vector({1, -1}), Tensor::vector({-1, 1})};
    Tensor id({2, 2});
    id(0, 0) = id(1, 1) = 1.0;
    const auto M = rows_to_matrix(affinity_matrix(consts(tape, z), tape.constant(id), 0.5));
    // layernorm maps [1,-1] to +-1/sqrt(1+1e-5); distance^2 = 8/(1+1e-5)
    CHECK(M(0, 1) == doctest::Approx(std::exp(-0.5 * 8.0 / (1.0 + 1e-5))).epsilon(1e-13));
    CHECK_THROWS_AS(affinity_matrix(consts(tape, z), tape.constant(id), -1.0), Error);
    CHECK_THROWS_AS(affinity_matrix(std::span<const Var>(), tape.constant(id), 1.0), Error);
}

TEST_CASE("refine_prototypes examples and matmul oracle") {
    Rng rng(3);
    Tape tape;
    const auto raw = random_vectors(4, 5, rng);
    auto c = consts(tape, raw);
    std::vector<Var> identity, ones;
    for (std::size_t k = 0; k < 4; ++k) {
        Tensor r({4});
        r[k] = 1.0;
        identity.push_back(tape.constant(r));
        ones.push_back(tape.constant(Tensor({4}, 1.0)));
    }
    const auto same = refine_prototypes(identity, c);
    for (std::size_t k = 0; k < 4; ++k) CHECK(same[k].value() == raw[k]);
    const auto glob = refine_prototypes(ones, c);
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t j = 0; j < 5; ++j) {
            const double m = (raw[0][j] + raw[1][j] + raw[2][j] + raw[3][j]) / 4.0;
            CHECK(glob[k].value()[j] == doctest::Approx(m).epsilon(1e-13));
        }

    for (int inst = 0; inst < 30; ++inst) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Random(4, 4).cwiseAbs().array() + 0.01;
        Eigen::MatrixXd C(4, 5);
        for (int k = 0; k < 4; ++k)
            for (int j = 0; j < 5; ++j) C(k, j) = raw[k][j];
        Eigen::MatrixXd want = (M.array().colwise() / M.rowwise().sum().array()).matrix() * C;
        std::vector<Var> rows;
        for (int k = 0; k < 4; ++k) {
            Tensor r({4});
            for (int j = 0; j < 4; ++j) r[j] = M(k, j);
            rows.push_back(tape.constant(r));
        }
        const auto got = refine_prototypes(rows, c);
        for (int k = 0; k < 4; ++k)
            for (int j = 0; j < 5; ++j) {
                CHECK(got[k].value()[j] == doctest::Approx(want(k, j)).epsilon(1e-12));
                CHECK(got[k].value()[j] >= C.col(j).minCoeff() - 1e-12);
                CHECK(got[k].value()[j] <= C.col(j).maxCoeff() + 1e-12);
            }
    }
    std::vector<Var> bad = {tape.constant(Tensor({3}, 1.0))};
    CHECK_THROWS_AS(refine_prototypes(bad, c), Error);
}

TEST_CASE("row stochastic mixing from a real affinity") {
    Rng rng(4);
    for (int inst = 0; inst < 30; ++inst) {
        const auto z = random_vectors(5, 6, rng);
        Tape tape;
        auto rows = affinity_matrix(consts(tape, z), tape.constant(test::random_tensor({6, 6}, rng, 0.2)), 1.0);
        for (const auto& r : rows) {
            const auto w = num::normalize_sum(r).value();
            double s = 0;
            for (double v : w.span()) s += v;
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("visual_prob examples and composition oracle") {
    Tape tape;
    std::vector<Tensor> one = {Tensor::vector({0.3, 0.4})};
    CHECK(visual_prob(tape.constant(Tensor::vector({1, 2})), consts(tape, one), 0.01).value()[0] == 1.0);
    std::vector<Tensor> two = {Tensor::vector({1, 0}), Tensor::vector({0, 1})};
    const auto p = visual_prob(tape.constant(Tensor::vector({2, 0})), consts(tape, two), 0.01).value();
    CHECK(std::abs(p[0] - 1.0) < 1e-4);
    CHECK(p[1] < 1e-4);
    CHECK_THROWS_AS(visual_prob(tape.constant(Tensor::vector({1, 0})), std::span<const Var>(), 0.01), Error);
    std::vector<Tensor> zero = {Tensor::vector({0, 0})};
    CHECK_THROWS_AS(visual_prob(std::vector<double>{1, 0}, zero, 0.01), Error);

    Rng rng(5);
    for (int inst = 0; inst < 30; ++inst) {
        const auto protos = random_vectors(3, 6, rng);
        const auto f = test::random_vec(6, rng);
        const double tau = 0.05 + rng.uniform();
        std::vector<long double> z;
        for (const auto& c : protos) {
            long double d = 0, na = 0, nb = 0;
            for (int j = 0; j < 6; ++j) {
                d += f[j] * c[j];
                na += f[j] * f[j];
                nb += c[j] * c[j];
            }
            z.push_back(std::exp(d / std::sqrt(na * nb) / tau));
        }
        const long double tot = z[0] + z[1] + z[2];
        const auto got = visual_prob(f, protos, tau);
        const auto got_tape = visual_prob(tape.constant(Tensor::vector(f)), consts(tape, protos), tau).value();
        for (int k = 0; k < 3; ++k) {
            CHECK(got[k] == doctest::Approx(static_cast<double>(z[k] / tot)).epsilon(1e-12));
            CHECK(got_tape[k] == got[k]);
        }
    }
}

TEST_CASE("loss_ce_v examples") {
    Tape tape;
    std::vector<Tensor> two = {Tensor::vector({1, 0}), Tensor::vector({0, 1})};
    CHECK(loss_ce_v(tape.constant(Tensor::vector({0, 3})), consts(tape, two), 1, 0.001).item() < 1e-10);
    std::vector<Tensor> three = {Tensor::vector({1, 0, 0, 0}), Tensor::vector({0, 1, 0, 0}), Tensor::vector({0, 0, 1, 0})};
    CHECK(loss_ce_v(tape.constant(Tensor::vector({0, 0, 0, 1})), consts(tape, three), 2, 0.01).item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-11));
    CHECK_THROWS_AS(loss_ce_v(tape.constant(Tensor::vector({0, 1})), consts(tape, two), 2, 0.01), Error);
}

TEST_CASE("loss_reg examples") {
    Tape tape;
    std::vector<Tensor> snap = {Tensor::vector({1, 2, 3}), Tensor::vector({0, 1, 0})};
    CHECK(loss_reg(tape, consts(tape, snap), snap).item() == 0.0);
    std::vector<Tensor> cur = {Tensor::vector({2, 2, 3})};
    std::vector<Tensor> s1 = {Tensor::vector({1, 2, 3})};
    CHECK(loss_reg(tape, consts(tape, cur), s1).item() == 1.0);
    CHECK(loss_reg(tape, std::span<const Var>(), std::span<const Tensor>()).item() == 0.0);
    try {
        loss_reg(tape, consts(tape, cur), snap);
        FAIL("expected missing class");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kMissingClass);
    }
    // two classes: mean of squared distances
    std::vector<Tensor> c2 = {Tensor::vector({1, 2, 5}), Tensor::vector({0, 1, 1})};
    CHECK(loss_reg(tape, consts(tape, c2), snap).item() == doctest::Approx((4.0 + 1.0) / 2.0));
}

TEST_CASE("snapshots are deep copies") {
    PrototypeBank bank;
    std::map<std::size_t, Tensor> refined = {{0, Tensor::vector({1, 2})}, {1, Tensor::vector({3, 4})}};
    bank.set_refined(refined);
    bank.snapshot();
    const auto sum = bank.snapshot_checksum();
    refined[0][0] = 42.0;
    bank.set_refined(refined);
    CHECK(bank.snapshot_checksum() == sum);
    CHECK(bank.refined_snapshot().at(0)[0] == 1.0);
    PrototypeBank twice;
    twice.set_refined(refined);
    twice.snapshot();
    const auto s1 = twice.snapshot_checksum();
    twice.snapshot();
    CHECK(twice.snapshot_checksum() == s1);
}

TEST_CASE("refinement pipeline passes grad_check wrt H_proj") {
    const auto cfg = test::small_encoder(5);
    const Encoder enc = test::make_test_encoder(cfg, 4);
    Rng rng(6);
    for (int inst = 0; inst < 25; ++inst) {
        const auto raw = random_vectors(3, 5, rng);
        std::vector<Tensor> snap;
        for (const auto& r : raw) {
            Tensor s = r;
            for (double& v : s.span()) v += 0.1 * rng.normal();
            snap.push_back(s);
        }
        const auto f = test::random_vec(5, rng);
        std::vector<Parameter> ps;
        ps.emplace_back(test::random_tensor({5, 5}, rng, 0.3));
        ps.emplace_back(enc.init_prompt(inst));
        const std::size_t y = inst % 3;
        auto loss = [&](auto& tape, auto params) {
            Var p = tape.param(params[1]);
            std::vector<Var> z;
            for (std::size_t k = 0; k < 3; ++k) z.push_back(enc.text_forward(tape, k, p));
            auto rows = affinity_matrix(z, tape.param(params[0]), 0.7);
            std::vector<Var> c;
            for (const auto& r : raw) c.push_back(tape.constant(r));
            auto refined = refine_prototypes(rows, c);
            auto ce = loss_ce_v(tape.constant(Tensor::vector(f)), refined, y, 0.2);
            std::vector<Var> old(refined.begin(), refined.begin() + 2);
            std::vector<Tensor> snap_old(snap.begin(), snap.begin() + 2);
            return num::add(ce, loss_reg(tape, old, snap_old));
        };
        const auto r = num::grad_check<double>(loss, std::span<Parameter>(ps), 1e-6);
        INFO("instance " << inst << " worst " << r.worst);
        CHECK(r.passed);
    }
}

TEST_CASE("classifier variants and linear head") {
    for (auto k : all_classifier_kinds()) CHECK(parse_classifier_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_classifier_kind("knn"), Error);

    LinearHead head;
    head.grow(4, 2);
    head.grow(4, 3);
    CHECK(head.num_classes() == 5);
    const auto logits = head.logits(std::vector<double>{1, 2, 3, 4});
    const auto p = num::softmax_values<double>(logits, 1.0);
    for (double v : p) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

    Rng rng(7);
    for (auto& b : head.blocks) {
        for (double& v : b.weight.value.span()) v = rng.normal();
        for (double& v : b.bias.value.span()) v = rng.normal();
    }
    const std::vector<double> f = {0.5, -1, 2, 0.1};
    const auto l = head.logits(f);
    Tape tape;
    std::vector<Parameter*> bound;
    const auto lt = head.logits(tape, tape.constant(Tensor::vector(f)), &bound).value();
    CHECK(bound.size() == 4);
    for (std::size_t j = 0; j < 5; ++j) {
        const auto& blk = head.blocks[j < 2 ? 0 : 1];
        const std::size_t c = j < 2 ? j : j - 2;
        double want = blk.bias.value[c];
        for (std::size_t i = 0; i < 4; ++i) want += f[i] * blk.weight.value(i, c);
        CHECK(l[j] == doctest::Approx(want).epsilon(1e-14));
        CHECK(lt[j] == l[j]);
    }
    LinearHead empty;
    CHECK_THROWS_AS(empty.logits(tape, tape.constant(Tensor::vector(f))), Error);
}

TEST_CASE("se_vpr with identity affinity equals the raw centroid branch") {
    Rng rng(8);
    const auto raw = random_vectors(4, 6, rng);
    Tape tape;
    std::vector<Var> identity;
    for (std::size_t k = 0; k < 4; ++k) {
        Tensor r({4});
        r[k] = 1.0;
        identity.push_back(tape.constant(r));
    }
    const auto refined = refine_prototypes(identity, consts(tape, raw));
    const auto f = test::random_vec(6, rng);
    std::vector<Tensor> rt;
    for (const auto& r : refined) rt.push_back(r.value());
    CHECK(visual_prob(f, rt, 0.01) == visual_prob(f, raw, 0.01));
}
