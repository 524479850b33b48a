/*
 * Copyright 2026 The nalucast authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "nalucast/autodiff.hpp"
#include "nalucast/layers.hpp"

using namespace nalucast;

TEST_CASE("backward of sum gives all-ones gradient", "[autodiff]") {
  Tape tape;
  Variable x = tape.leaf(Tensor({3}, {1, 2, 3}), true);
  Variable loss = sum(x);
  tape.backward(loss);
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("backward of x*x at x=3 gives 6", "[autodiff]") {
  Tape tape;
  Variable x = tape.leaf(Tensor::scalar(3.0), true);
  Variable loss = sum(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("fan-out accumulates additively", "[autodiff]") {
  Tape tape;
  Variable x = tape.leaf(Tensor::scalar(1.5), true);
  Variable loss = sum(add(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("two backward calls without zeroing double the gradient",
          "[autodiff]") {
  Tape tape;
  Variable x = tape.leaf(Tensor({2}, {0.5, -0.25}), true);
  Variable loss = sum(mul(x, x));
  tape.backward(loss);
  const double g0 = x.grad()[0];
  const double g1 = x.grad()[1];
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0 * g0);
  CHECK(x.grad()[1] == 2.0 * g1);
}

TEST_CASE("non-requires-grad leaves stay at zero gradient", "[autodiff]") {
  Tape tape;
  Variable x = tape.leaf(Tensor({2}, {1, 2}), false);
  Variable y = tape.leaf(Tensor({2}, {3, 4}), true);
  Variable loss = sum(mul(x, y));
  tape.backward(loss);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(y.grad()[0] == 1.0);
  CHECK(y.grad()[1] == 2.0);
}

TEST_CASE("backward rejects non-scalar loss and empty tapes", "[autodiff]") {
  Tape tape;
  Variable x = tape.leaf(Tensor({2}, {1, 2}), true);
  Variable y = add(x, x);
  CHECK_THROWS_AS(tape.backward(y), Error);

  Tape empty;
  Variable dangling;
  CHECK_THROWS_AS(empty.backward(dangling), Error);
}

TEST_CASE("parameter leaves accumulate into the parameter grad",
          "[autodiff]") {
  auto p = std::make_shared<Parameter>("p", Tensor({2}, {2.0, 3.0}));
  Tape tape;
  Variable v = tape.param(p);
  Variable loss = sum(mul(v, v));
  tape.backward(loss);
  CHECK(p->grad[0] == 4.0);
  CHECK(p->grad[1] == 6.0);
}

TEST_CASE("grad_check on a sum of squares is tight", "[autodiff]") {
  std::mt19937_64 rng(5);
  Tensor x = random_uniform({6}, 0.2, 1.0, rng);
  const double err = grad_check(
      [](Tape&, Variable v) { return sum(mul(v, v)); }, x, 1e-5);
  CHECK(err <= 1e-7);
}

TEST_CASE("grad_check on a constant function reports zero error",
          "[autodiff]") {
  Tensor x({3}, {0.4, 0.5, 0.6});
  const double err = grad_check(
      [](Tape& t, Variable v) {
        Variable c = t.leaf(Tensor::scalar(2.5), false);
        // v participates with weight zero so the loss stays constant
        return add(c, affine(sum(v), 0.0, 0.0));
      },
      x, 1e-5);
  CHECK(err <= 1e-8);
}

TEST_CASE("dense layer loss gradients match finite differences",
          "[autodiff]") {
  std::mt19937_64 rng(17);
  DenseParams dp{
      std::make_shared<Parameter>("W", random_uniform({4, 3}, -0.8, 0.8, rng)),
      std::make_shared<Parameter>("b", random_uniform({3}, -0.2, 0.2, rng))};
  Tensor x = random_uniform({5, 4}, 0.1, 1.0, rng);
  Tensor target = random_uniform({5, 3}, 0.0, 1.0, rng);

  auto loss_of = [&](Tape& t, Variable vx) {
    Variable pred = dense_forward(t, dp, vx);
    Variable tgt = t.leaf(target, false);
    Variable d = sub(pred, tgt);
    return mean(mul(d, d));
  };

  CHECK(grad_check(loss_of, x, 1e-5) <= 1e-5);
  CHECK(grad_check_param(
            [&](Tape& t) { return loss_of(t, t.leaf(x, false)); }, *dp.W,
            1e-5) <= 1e-5);
  CHECK(grad_check_param(
            [&](Tape& t) { return loss_of(t, t.leaf(x, false)); }, *dp.b,
            1e-5) <= 1e-5);
}

TEST_CASE("grad_check through a NALU layer stays within 1e-4", "[autodiff]") {
  std::mt19937_64 rng(29);
  NaluParams np;
  np.nac.W_hat =
      std::make_shared<Parameter>("W_hat", random_uniform({2, 3}, -0.8, 0.8, rng));
  np.nac.M_hat =
      std::make_shared<Parameter>("M_hat", random_uniform({2, 3}, -0.8, 0.8, rng));
  np.G = std::make_shared<Parameter>("G", random_uniform({2, 3}, -0.8, 0.8, rng));
  Tensor x = random_uniform({4, 3}, 0.1, 1.0, rng);

  const double err = grad_check(
      [&](Tape& t, Variable vx) { return mean(nalu_forward(t, np, vx)); }, x,
      1e-5);
  CHECK(err <= 1e-4);
}

TEST_CASE("matmul and transpose gradients agree with finite differences",
          "[autodiff]") {
  std::mt19937_64 rng(31);
  Tensor a = random_uniform({3, 4}, 0.1, 1.0, rng);
  Tensor b = random_uniform({4, 2}, 0.1, 1.0, rng);
  const double err = grad_check(
      [&](Tape& t, Variable va) {
        Variable vb = t.leaf(b, false);
        return sum(matmul(va, transpose(transpose(vb))));
      },
      a, 1e-5);
  CHECK(err <= 1e-6);
}

TEST_CASE("log_abs gradient is finite at zero and matches sign/(|x|+eps)",
          "[autodiff]") {
  Tape tape;
  Variable x = tape.leaf(Tensor({3}, {-0.5, 0.0, 0.5}), true);
  Variable loss = sum(log_abs(x, 1e-7));
  tape.backward(loss);
  CHECK_THAT(x.grad()[0], Catch::Matchers::WithinRel(-1.0 / 0.5000001, 1e-12));
  CHECK(x.grad()[1] == 0.0);
  CHECK_THAT(x.grad()[2], Catch::Matchers::WithinRel(1.0 / 0.5000001, 1e-12));
}
