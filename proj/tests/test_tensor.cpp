#include <doctest.h>

#include <cmath>
#include <vector>

#include "cattn/errors.hpp"
#include "cattn/rng.hpp"
#include "cattn/tensor.hpp"
#include "fd_check.hpp"

using namespace cattn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.next_double() * 4.0 - 2.0;  // [-2, 2)
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Runs the analytic backward once and compares against the FD oracle.
void check_gradient(Tensor& param, const std::function<Tensor(GradientTape*)>& loss_fn) {
  param.zero_grad();
  GradientTape tape;
  Tensor loss = loss_fn(&tape);
  tape.backward(loss);
  auto numeric = fd::numeric_gradient(
      param, [&]() { return loss_fn(nullptr).scalar_value(); });
  auto m = fd::compare(param.grad(), numeric);
  INFO(fd::describe(m));
  CHECK(m.ok);
  param.zero_grad();
}

}  // namespace

TEST_CASE("matmul basics") {
  auto I = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto A = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  auto P = matmul(I, A);
  CHECK(P.values()[0] == 3);
  CHECK(P.values()[1] == 4);
  CHECK(P.values()[2] == 5);
  CHECK(P.values()[3] == 6);

  auto r = Tensor::from_data({1, 2}, {1, 2});
  auto c = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(r, c).scalar_value() == doctest::Approx(11).epsilon(1e-12));

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})),
                  ContractError);
  CHECK_THROWS_WITH_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})),
                       doctest::Contains("[2,3]"), ContractError);
}

TEST_CASE("matmul gradient of sum equals ones x B^T") {
  Rng rng(11);
  auto A = random_tensor({3, 4}, rng);
  auto B = random_tensor({4, 5}, rng, false);
  GradientTape tape;
  auto loss = sum(matmul(A, B, &tape), &tape);
  tape.backward(loss);
  // d sum(AB) / dA[i,k] = sum_j B[k,j]
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 5; ++j) expect += B.values()[k * 5 + j];
      CHECK(A.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  // and against the finite-difference oracle
  auto numeric = fd::numeric_gradient(
      A, [&]() { return sum(matmul(A, B)).scalar_value(); });
  auto m = fd::compare(A.grad(), numeric);
  INFO(fd::describe(m));
  CHECK(m.ok);
}

TEST_CASE("matmul batched broadcasting") {
  Rng rng(7);
  auto A = random_tensor({2, 3, 4}, rng);
  auto B = random_tensor({4, 5}, rng);  // broadcasts over batch of 2
  auto C = matmul(A, B);
  CHECK(C.shape() == Shape{2, 3, 5});
  // against unbatched slices
  for (std::size_t b = 0; b < 2; ++b) {
    auto Ab = Tensor::from_data({3, 4}, std::vector<double>(
                                            A.values().begin() + b * 12,
                                            A.values().begin() + (b + 1) * 12));
    auto Cb = matmul(Ab, B);
    for (std::size_t i = 0; i < 15; ++i)
      CHECK(C.values()[b * 15 + i] == doctest::Approx(Cb.values()[i]).epsilon(1e-12));
  }
  // gradient flows through broadcast (reduction over batch)
  check_gradient(B, [&](GradientTape* t) { return sum(matmul(A, B, t), t); });
  check_gradient(A, [&](GradientTape* t) { return sum(matmul(A, B, t), t); });
}

TEST_CASE("softmax values and properties") {
  auto s = softmax(Tensor::from_data({2}, {0, 0}), 0);
  CHECK(s.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(0.5).epsilon(1e-12));

  auto big = softmax(Tensor::from_data({2}, {1000, 0}), 0);
  CHECK(std::isfinite(big.values()[0]));
  CHECK(big.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.values()[1] == doctest::Approx(0.0).epsilon(1e-12));

  auto logs = softmax(Tensor::from_data({2}, {std::log(1.0), std::log(3.0)}), 0);
  CHECK(logs.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(logs.values()[1] == doctest::Approx(0.75).epsilon(1e-12));

  // slices along the axis sum to 1 within 1e-9, entries in (0,1)
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    auto x = random_tensor({3, 5}, rng, false);
    std::size_t axis = rep % 2;
    auto sm = softmax(x, axis);
    std::size_t n = x.shape()[axis];
    std::size_t inner = axis == 0 ? 5 : 1;
    std::size_t outer = sm.size() / (n * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        double total = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          double v = sm.values()[o * n * inner + t * inner + i];
          CHECK(v > 0.0);
          CHECK(v < 1.0);
          total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
  }
}

TEST_CASE("softmax and log_softmax gradients") {
  Rng rng(5);
  auto x = random_tensor({4, 3}, rng);
  auto w = random_tensor({4, 3}, rng, false);
  check_gradient(x, [&](GradientTape* t) {
    return sum(mul(softmax(x, 1, t), w, t), t);
  });
  check_gradient(x, [&](GradientTape* t) {
    return sum(mul(log_softmax(x, 1, t), w, t), t);
  });
}

TEST_CASE("layer_norm values") {
  auto gain = Tensor::full({4}, 1.0);
  auto bias = Tensor::zeros({4});
  auto c = layer_norm(Tensor::full({4}, 3.25), gain, bias, 1e-5);
  for (double v : c.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  auto g2 = Tensor::full({2}, 1.0);
  auto b2 = Tensor::zeros({2});
  auto pm = layer_norm(Tensor::from_data({2}, {1, -1}), g2, b2, 1e-12);
  CHECK(pm.values()[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(pm.values()[1] == doctest::Approx(-1.0).epsilon(1e-5));

  CHECK_THROWS_AS(layer_norm(Tensor::zeros({3}), gain, bias, 1e-5),
                  ContractError);
}

TEST_CASE("layer_norm gradients vs finite differences") {
  Rng rng(9);
  auto x = random_tensor({3, 6}, rng);
  auto gain = random_tensor({6}, rng);
  auto bias = random_tensor({6}, rng);
  auto w = random_tensor({3, 6}, rng, false);
  auto loss = [&](GradientTape* t) {
    return sum(mul(layer_norm(x, gain, bias, 1e-5, t), w, t), t);
  };
  check_gradient(x, loss);
  check_gradient(gain, loss);
  check_gradient(bias, loss);
}

TEST_CASE("elementwise suite values") {
  CHECK(square(Tensor::from_data({1}, {0.5})).values()[0] == doctest::Approx(0.25));
  CHECK(cattn::abs(Tensor::from_data({1}, {-0.8})).values()[0] == doctest::Approx(0.8));
  CHECK_THROWS_AS(cattn::log(Tensor::from_data({1}, {0.0})), NumericError);
  CHECK_THROWS_AS(cattn::log(Tensor::from_data({1}, {-1.0})), NumericError);
  CHECK(relu(Tensor::from_data({3}, {-1, 0, 2})).values()[2] == 2);
  // broadcasting add: (2,3) + (3)
  auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from_data({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.values()[0] == 11);
  CHECK(c.values()[5] == 36);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ContractError);
}

TEST_CASE("elementwise gradients vs finite differences") {
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = random_tensor({2, 3}, rng);
    auto y = random_tensor({3}, rng);
    check_gradient(x, [&](GradientTape* t) { return sum(gelu(x, t), t); });
    check_gradient(x, [&](GradientTape* t) { return sum(square(x, t), t); });
    check_gradient(x, [&](GradientTape* t) { return sum(cattn::exp(x, t), t); });
    check_gradient(x, [&](GradientTape* t) { return mean(mul(x, x, t), t); });
    check_gradient(x, [&](GradientTape* t) { return sum(add(x, y, t), t); });
    check_gradient(y, [&](GradientTape* t) { return sum(mul(x, y, t), t); });
    check_gradient(y, [&](GradientTape* t) { return sum(div(x, y, t), t); });
    // abs away from the origin
    check_gradient(x, [&](GradientTape* t) { return sum(cattn::abs(x, t), t); });
  }
}

TEST_CASE("abs subgradient at zero is zero") {
  auto x = Tensor::from_data({1}, {0.0}, true);
  GradientTape tape;
  auto loss = sum(cattn::abs(x, &tape), &tape);
  tape.backward(loss);
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("backward basics") {
  auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  {
    GradientTape tape;
    auto loss = sum(x, &tape);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
    x.zero_grad();
  }
  {
    auto y = Tensor::from_data({2}, {1, 2}, true);
    GradientTape tape;
    auto loss = sum(square(y, &tape), &tape);
    tape.backward(loss);
    CHECK(y.grad()[0] == 2.0);
    CHECK(y.grad()[1] == 4.0);
  }
  // non-scalar loss rejected
  GradientTape tape;
  auto z = add(x, x, &tape);
  CHECK_THROWS_AS(tape.backward(z), ContractError);
}

TEST_CASE("backward determinism: identical tapes give bit-identical gradients") {
  Rng rng(21);
  auto seed_data = random_tensor({4, 4}, rng, false);
  auto run = [&]() {
    auto x = Tensor::from_data({4, 4}, std::vector<double>(
                                           seed_data.values().begin(),
                                           seed_data.values().end()),
                               true);
    GradientTape tape;
    auto y = softmax(matmul(x, x, &tape), 1, &tape);
    auto loss = sum(mul(y, x, &tape), &tape);
    tape.backward(loss);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto g1 = run();
  auto g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("transpose, reshape, gather, concat, sum_axis gradients") {
  Rng rng(31);
  auto x = random_tensor({2, 3, 4}, rng);
  check_gradient(x, [&](GradientTape* t) {
    return sum(transpose(x, {1, 0, 2}, t), t);
  });
  check_gradient(x, [&](GradientTape* t) {
    auto r = reshape(x, {6, 4}, t);
    return sum(square(r, t), t);
  });
  check_gradient(x, [&](GradientTape* t) {
    std::vector<std::size_t> idx = {0, 5, 7, 23, 5};
    return sum(square(gather(x, idx, t), t), t);
  });
  check_gradient(x, [&](GradientTape* t) { return sum(sum_axis(x, 1, t), t); });
  auto y = random_tensor({3}, rng);
  check_gradient(y, [&](GradientTape* t) {
    std::vector<Tensor> parts = {y, scale(y, 2.0, t)};
    return sum(square(concat(parts, t), t), t);
  });

  // transpose round-trip
  auto tr = transpose(transpose(x, {2, 0, 1}), {1, 2, 0});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(tr.values()[i] == x.values()[i]);
}

TEST_CASE("embedding_rows lookup and scatter gradient") {
  auto table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  std::vector<int> ids = {2, 0, 2};
  auto rows = embedding_rows(table, ids);
  CHECK(rows.shape() == Shape{3, 2});
  CHECK(rows.values()[0] == 5);
  CHECK(rows.values()[2] == 1);
  CHECK_THROWS_AS(embedding_rows(table, std::vector<int>{3}), ContractError);

  GradientTape tape;
  auto loss = sum(embedding_rows(table, ids, &tape), &tape);
  tape.backward(loss);
  // row 2 used twice, row 0 once, row 1 never
  CHECK(table.grad()[0] == 1.0);
  CHECK(table.grad()[2] == 0.0);
  CHECK(table.grad()[4] == 2.0);
}

TEST_CASE("finite outputs on finite inputs") {
  Rng rng(41);
  for (int rep = 0; rep < 100; ++rep) {
    auto x = random_tensor({3, 3}, rng, false);
    auto ops = {softmax(x, 1), gelu(x), square(x), cattn::abs(x), cattn::exp(x)};
    for (const auto& t : ops)
      for (double v : t.values()) CHECK(std::isfinite(v));
  }
}
