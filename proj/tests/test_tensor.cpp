#include <cmath>
#include <vector>

#include "doctest.h"
#include "storm/core/rng.hpp"
#include "storm/tensor/gradcheck.hpp"
#include "storm/tensor/ops.hpp"
#include "storm/tensor/optim.hpp"
#include "test_util.hpp"

using namespace storm;
namespace o = storm::ops;

TEST_CASE("matmul identity and projector") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(test::values(o::matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});

  Tensor proj({2, 2}, {1, 0, 0, 0});
  Tensor col({2, 1}, {5, 7});
  CHECK(test::values(o::matmul(proj, col)) == std::vector<double>{5, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    o::matmul(a, b);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient against central differences") {
  Rng rng(11);
  Tensor a = test::randn(rng, {4, 3});
  Tensor b = test::randn(rng, {3, 2});
  Tensor w = test::randn(rng, {4, 2});
  auto r = check_gradient([&] { return o::sum_all(o::mul(o::matmul(a, b), w)); }, {a, b});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("softmax rows") {
  Tensor u({1, 4}, {0, 0, 0, 0});
  for (double v : test::values(o::softmax_rows(u))) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Tensor big({1, 2}, {1000, 0});
  const auto s = test::values(o::softmax_rows(big));
  CHECK(std::abs(s[0] - 1.0) < 1e-6);
  CHECK(std::abs(s[1]) < 1e-6);

  // Independent long-double evaluation.
  Tensor x({1, 3}, {1, 2, 3});
  const auto y = test::values(o::softmax_rows(x));
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int j = 0; j < 3; ++j)
    CHECK(std::abs(y[j] - static_cast<double>(std::exp(static_cast<long double>(j + 1)) / z)) < 1e-15);
}

TEST_CASE("softmax rows sum to one on random input") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = test::randn(rng, {7, 13}, 5.0);
    const auto y = test::values(o::softmax_rows(x));
    for (int r = 0; r < 7; ++r) {
      double sum = 0;
      for (int j = 0; j < 13; ++j) {
        const double v = y[r * 13 + j];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax of an all -inf row is zero") {
  Tensor x({2, 2}, {o::kNegInf, o::kNegInf, 0, 1});
  const auto y = test::values(o::softmax_rows(x));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] + y[3] == doctest::Approx(1.0));
}

TEST_CASE("layernorm of a constant vector is zero before affine") {
  Tensor x({1, 5}, {3, 3, 3, 3, 3});
  Tensor g = Tensor::full({5}, 1);
  Tensor b = Tensor::zeros({5});
  for (double v : test::values(o::layernorm(x, g, b))) CHECK(v == 0.0);
}

TEST_CASE("permute and inverse permute are a bitwise identity") {
  Rng rng(3);
  Tensor x = test::randn(rng, {2, 3, 4, 5});
  Tensor p = o::permute(x, {2, 0, 3, 1});
  CHECK(p.shape() == Shape{4, 2, 5, 3});
  // inverse of {2,0,3,1} is {1,3,0,2}
  Tensor back = o::permute(p, {1, 3, 0, 2});
  CHECK(test::bitwise_equal(x, back));
  Tensor r = o::reshape(o::reshape(x, {6, 20}), {2, 3, 4, 5});
  CHECK(test::bitwise_equal(x, r));
}

TEST_CASE("check_gradient on a quadratic is exact") {
  Tensor x({2}, {1, 2});
  Tensor captured_grad;
  auto r = check_gradient([&] { return o::sum_all(o::mul(x, x)); }, x);
  CHECK(r.max_rel_error < 1e-8);
  // analytic gradient [2, 4]
  Tape tape;
  {
    TapeScope scope(tape);
    x.set_requires_grad(true);
    tape.backward(o::sum_all(o::mul(x, x)));
  }
  CHECK(test::grads(x) == std::vector<double>{2, 4});
}

TEST_CASE("check_gradient rejects non-scalar functions") {
  Tensor x({2}, {1, 2});
  CHECK_THROWS_AS(check_gradient([&] { return o::mul(x, x); }, x), Error);
}

// Each op is checked on three shapes with a random linear read-out so no
// output coordinate is privileged.
static void check_unary_op(const char* name, Tensor (*op)(const Tensor&)) {
  Rng rng(std::hash<std::string>{}(name));
  for (const Shape& s : {Shape{5}, Shape{3, 4}, Shape{2, 3, 4}}) {
    Tensor x = test::randn(rng, s);
    Tensor w = test::randn(rng, s);
    auto r = check_gradient([&] { return o::sum_all(o::mul(op(x), w)); }, x);
    INFO(name, " shape ", shape_str(s));
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("elementwise ops pass finite-difference checks") {
  check_unary_op("gelu", &o::gelu);
  check_unary_op("silu", &o::silu);
  check_unary_op("softplus", &o::softplus);
  check_unary_op("softmax_rows", &o::softmax_rows);
  check_unary_op("log_softmax_rows", &o::log_softmax_rows);
}

TEST_CASE("structural ops pass finite-difference checks") {
  Rng rng(21);
  for (const Shape& s : {Shape{4, 3}, Shape{6, 5}, Shape{3, 2, 4}}) {
    INFO("shape ", shape_str(s));
    Tensor a = test::randn(rng, s);
    Tensor b = test::randn(rng, s);
    Tensor w = test::randn(rng, s);
    const std::size_t c = s.back();
    Tensor gamma = test::randn(rng, {c});
    Tensor beta = test::randn(rng, {c});
    auto lin = [&](const Tensor& t) { return o::sum_all(o::mul(t, w)); };
    CHECK(check_gradient([&] { return lin(o::add(a, b)); }, {a, b}).max_rel_error < 1e-4);
    CHECK(check_gradient([&] { return lin(o::sub(a, b)); }, {a, b}).max_rel_error < 1e-4);
    CHECK(check_gradient([&] { return lin(o::mul(a, b)); }, {a, b}).max_rel_error < 1e-4);
    CHECK(check_gradient([&] { return lin(o::scale(a, 0.7)); }, a).max_rel_error < 1e-4);
    CHECK(check_gradient([&] { return lin(o::add_bias(a, beta)); }, {a, beta}).max_rel_error < 1e-4);
    CHECK(check_gradient([&] { return lin(o::layernorm(a, gamma, beta)); }, {a, gamma, beta})
              .max_rel_error < 1e-4);
    CHECK(check_gradient([&] { return o::mean_all(o::mul(a, a)); }, a).max_rel_error < 1e-4);

    Tensor wr = test::randn(rng, Shape(s.begin() + 1, s.end()));
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::mean_rows(a), wr)); }, a)
              .max_rel_error < 1e-4);

    std::vector<std::size_t> perm(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
    Tensor pw = o::permute(w, perm);
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::permute(a, perm), pw)); }, a)
              .max_rel_error < 1e-4);
    Tensor flat_w = o::reshape(w, {w.numel()});
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::reshape(a, {a.numel()}), flat_w)); }, a)
              .max_rel_error < 1e-4);

    const std::size_t rows = s[0];
    o::IndexList idx{static_cast<o::Index>(rows - 1), 0, -1, 0};
    Shape gs = s;
    gs[0] = idx.size();
    Tensor gw = test::randn(rng, gs);
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::index_rows(a, idx), gw)); }, a)
              .max_rel_error < 1e-4);
    Tensor src = test::randn(rng, gs);
    Shape as = s;
    Tensor aw = test::randn(rng, as);
    CHECK(check_gradient(
              [&] { return o::sum_all(o::mul(o::index_add_rows(src, idx, rows), aw)); }, src)
              .max_rel_error < 1e-4);

    Shape cs = s;
    cs[0] *= 2;
    Tensor cw = test::randn(rng, cs);
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::concat_rows(a, b), cw)); }, {a, b})
              .max_rel_error < 1e-4);
    Shape ss = s;
    ss[0] = rows - 1;
    Tensor sw = test::randn(rng, ss);
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::slice_rows(a, 1, rows), sw)); }, a)
              .max_rel_error < 1e-4);

    std::vector<std::uint8_t> m(a.numel());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0);
    CHECK(check_gradient([&] { return lin(o::mask_fill(a, m, 0.5)); }, a).max_rel_error < 1e-4);
  }
}

TEST_CASE("matrix ops pass finite-difference checks on three shapes") {
  Rng rng(8);
  for (auto [m, k, n] : {std::tuple{2, 3, 4}, std::tuple{5, 1, 3}, std::tuple{4, 4, 4}}) {
    const std::size_t um = m, uk = k, un = n;
    Tensor a = test::randn(rng, {um, uk});
    Tensor b = test::randn(rng, {uk, un});
    Tensor w = test::randn(rng, {um, un});
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::matmul(a, b), w)); }, {a, b})
              .max_rel_error < 1e-4);

    Tensor ba = test::randn(rng, {2, um, uk});
    Tensor bb = test::randn(rng, {2, uk, un});
    Tensor bt = test::randn(rng, {2, un, uk});
    Tensor bw = test::randn(rng, {2, um, un});
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::bmm(ba, bb), bw)); }, {ba, bb})
              .max_rel_error < 1e-4);
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::bmm(ba, bt, true), bw)); }, {ba, bt})
              .max_rel_error < 1e-4);

    Tensor nw = test::randn(rng, {um, uk});
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::normalize_rows(a), nw)); }, a)
              .max_rel_error < 1e-4);
    Tensor table = test::randn(rng, {un, uk});
    o::IndexList ids{0, static_cast<o::Index>(un - 1), 0};
    Tensor ew = test::randn(rng, {3, uk});
    CHECK(check_gradient([&] { return o::sum_all(o::mul(o::embedding(table, ids), ew)); }, table)
              .max_rel_error < 1e-4);
  }
}

TEST_CASE("backward of a sum of losses equals sum of separate backwards") {
  Rng rng(17);
  Tensor x = test::randn(rng, {3, 4}, 1.0, true);
  Tensor w = test::randn(rng, {4, 2});
  Tensor w2 = test::randn(rng, {3, 4});

  auto grad_of = [&](auto fn) {
    x.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(fn());
    return test::grads(x);
  };
  auto combined = [&](auto f1, auto f2) {
    return [=] {
      Tensor l1 = f1();
      Tensor l2 = f2();
      return o::add(l1, l2);
    };
  };

  // One accumulation into x per loss: bitwise exact, in either order.
  auto loss1 = [&] { return o::sum_all(o::gelu(o::matmul(x, w))); };
  auto loss2 = [&] { return o::sum_all(o::mul(o::softplus(x), w2)); };
  {
    const auto g1 = grad_of(loss1);
    const auto g2 = grad_of(loss2);
    const auto g12 = grad_of(combined(loss1, loss2));
    const auto g21 = grad_of(combined(loss2, loss1));
    for (std::size_t i = 0; i < g1.size(); ++i) {
      CHECK(g12[i] == g1[i] + g2[i]);
      CHECK(g21[i] == g1[i] + g2[i]);
    }
  }
  // Several accumulations into x: equal up to summation order.
  auto loss3 = [&] { return o::mean_all(o::mul(x, x)); };
  {
    const auto g1 = grad_of(loss1);
    const auto g3 = grad_of(loss3);
    const auto g13 = grad_of(combined(loss1, loss3));
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g13[i] - (g1[i] + g3[i])) < 1e-14);
  }
}

TEST_CASE("tape visits each node once in reverse order") {
  Tensor x({1}, {2}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = o::mul(x, x);
    Tensor z = o::scale(y, 3);
    CHECK(tape.size() == 2);
    CHECK(std::string(tape.op_names()[0]) == "mul");
    tape.backward(z);
  }
  CHECK(tape.size() == 0);
  CHECK(test::grads(x) == std::vector<double>{12});
}

TEST_CASE("no recording without an active tape") {
  Tensor x({1}, {2}, true);
  Tensor y = o::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p({3}, {1, -2, 3}, true);
  Adam adam({.lr = 0.1});
  p.mutable_grad();  // zeros
  adam.step({{"p", p}});
  CHECK(test::values(p) == std::vector<double>{1, -2, 3});
}

TEST_CASE("adam: one step on a scalar matches the hand-evaluated recurrence") {
  Tensor p({1}, {1.0}, true);
  Adam adam({.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
  p.mutable_grad()[0] = 1.0;
  adam.step({{"p", p}});
  // m = 0.1, v = 0.001, mhat = vhat = 1  ->  p = 1 - 0.1 / (1 + 1e-8)
  CHECK(p.item() == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam: identical runs are bitwise identical") {
  auto run = [] {
    Rng rng(99);
    Tensor p = test::randn(rng, {5}, 1.0, true);
    Tensor target = test::randn(rng, {5});
    Adam adam({.lr = 0.05});
    for (int s = 0; s < 20; ++s) {
      Tape tape;
      TapeScope scope(tape);
      Tensor d = o::sub(p, target);
      tape.backward(o::sum_all(o::mul(d, d)));
      adam.step({{"p", p}});
    }
    return test::values(p);
  };
  CHECK(run() == run());
}

TEST_CASE("adam: NaN gradient is a training error naming the parameter") {
  Tensor p({2}, {1, 2}, true);
  p.mutable_grad()[1] = std::nan("");
  Adam adam;
  try {
    adam.step({{"encoder.w", p}});
    FAIL("expected training error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTraining);
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
}

TEST_CASE("rng streams are deterministic and independent") {
  Rng a(7, 3), b(7, 3), c(7, 4);
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  Rng parent(1);
  Rng s1 = parent.split(5);
  Rng s2 = parent.split(5);
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(parent.counter() == 0);
}
