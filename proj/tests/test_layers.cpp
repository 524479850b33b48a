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

#include <cmath>
#include <random>

#include "nalucast/layers.hpp"

using namespace nalucast;

namespace {

ParamPtr make_param(const char* name, Tensor t) {
  return std::make_shared<Parameter>(name, std::move(t));
}

Tensor forward_value(const std::function<Variable(Tape&)>& f) {
  Tape tape;
  return f(tape).value();
}

}  // namespace

TEST_CASE("dense forward: identity weights and sum-plus-bias", "[layers]") {
  DenseParams identity{make_param("W", Tensor::eye(2)),
                       make_param("b", Tensor::zeros({2}))};
  Tensor x({1, 2}, {3, 4});
  Tensor y = forward_value([&](Tape& t) {
    return dense_forward(t, identity, t.leaf(x));
  });
  CHECK(y.at2(0, 0) == 3.0);
  CHECK(y.at2(0, 1) == 4.0);

  DenseParams summer{make_param("W", Tensor({2, 1}, {1, 1})),
                     make_param("b", Tensor({1}, {5}))};
  Tensor x2({1, 2}, {2, 3});
  Tensor y2 = forward_value([&](Tape& t) {
    return dense_forward(t, summer, t.leaf(x2));
  });
  CHECK(y2.at2(0, 0) == 10.0);
}

TEST_CASE("dense forward equals the matmul + broadcast composition",
          "[layers]") {
  std::mt19937_64 rng(41);
  DenseParams p{make_param("W", random_uniform({6, 4}, -1.0, 1.0, rng)),
                make_param("b", random_uniform({4}, -1.0, 1.0, rng))};
  Tensor x = random_uniform({3, 6}, -1.0, 1.0, rng);
  Tensor got = forward_value([&](Tape& t) {
    return dense_forward(t, p, t.leaf(x));
  });
  Tensor want = zip_binary(matmul(x, p.W->value), p.b->value,
                           [](double a, double b) { return a + b; });
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);

  Tensor bad({3, 5});
  Tape t;
  CHECK_THROWS_AS(dense_forward(t, p, t.leaf(bad)), ShapeError);
}

TEST_CASE("conv1d identity kernel and adjacent sums", "[layers]") {
  // kernel [1], one channel: output equals input
  Conv1dParams id{make_param("k", Tensor({1, 1, 1}, {1})),
                  make_param("b", Tensor::zeros({1})), 1, 0};
  Tensor x({1, 1, 3}, {5, 7, 9});
  Tensor y = forward_value([&](Tape& t) {
    return conv1d(t.leaf(x), t.param(id.kernels), t.param(id.bias), 1, 0);
  });
  CHECK(y.shape() == Shape{1, 1, 3});
  CHECK(y.at3(0, 0, 0) == 5.0);
  CHECK(y.at3(0, 0, 1) == 7.0);
  CHECK(y.at3(0, 0, 2) == 9.0);

  // kernel [1,1]: adjacent sums
  Conv1dParams sum2{make_param("k", Tensor({1, 1, 2}, {1, 1})),
                    make_param("b", Tensor::zeros({1})), 1, 0};
  Tensor x2({1, 1, 4}, {1, 2, 3, 4});
  Tensor y2 = forward_value([&](Tape& t) {
    return conv1d(t.leaf(x2), t.param(sum2.kernels), t.param(sum2.bias), 1, 0);
  });
  CHECK(y2.shape() == Shape{1, 1, 3});
  CHECK(y2.at3(0, 0, 0) == 3.0);
  CHECK(y2.at3(0, 0, 1) == 5.0);
  CHECK(y2.at3(0, 0, 2) == 7.0);
}

TEST_CASE("conv1d and maxpool1d length formulas", "[layers]") {
  CHECK(conv1d_output_length(20, 4, 1, 0) == 17);
  CHECK(maxpool1d_output_length(17, 2, 2) == 8);

  // formula sweep
  for (std::size_t len : {4u, 9u, 20u, 33u}) {
    for (std::size_t k : {1u, 2u, 4u}) {
      for (std::size_t s : {1u, 2u, 3u}) {
        for (std::size_t pad : {0u, 1u, 2u}) {
          if (len + 2 * pad < k) continue;
          std::mt19937_64 rng(len * 100 + k * 10 + s + pad);
          Tensor x = random_uniform({2, 1, len}, -1.0, 1.0, rng);
          Tensor kern = random_uniform({1, 1, k}, -1.0, 1.0, rng);
          Tensor got = forward_value([&](Tape& t) {
            return conv1d(t.leaf(x), t.leaf(kern),
                          t.leaf(Tensor::zeros({1})), s, pad);
          });
          CHECK(got.extent(2) == (len + 2 * pad - k) / s + 1);
          if (len >= k && pad == 0) {
            Tensor pooled = forward_value([&](Tape& t) {
              return maxpool1d(t.leaf(x), k, s);
            });
            CHECK(pooled.extent(2) == (len - k) / s + 1);
          }
        }
      }
    }
  }
}

TEST_CASE("conv1d rejects too-short inputs", "[layers]") {
  Tensor x({1, 1, 2});
  Tape t;
  CHECK_THROWS_WITH(conv1d(t.leaf(x), t.leaf(Tensor({1, 1, 4}, {1, 1, 1, 1})),
                           t.leaf(Tensor::zeros({1})), 1, 0),
                    Catch::Matchers::ContainsSubstring("too short"));
}

TEST_CASE("conv1d zero padding matches a hand-padded input", "[layers]") {
  std::mt19937_64 rng(77);
  Tensor x = random_uniform({1, 1, 5}, -1.0, 1.0, rng);
  Tensor kern = random_uniform({1, 1, 3}, -1.0, 1.0, rng);
  Tensor padded({1, 1, 9});
  for (std::size_t i = 0; i < 5; ++i) padded.at3(0, 0, i + 2) = x.at3(0, 0, i);

  Tensor with_pad = forward_value([&](Tape& t) {
    return conv1d(t.leaf(x), t.leaf(kern), t.leaf(Tensor::zeros({1})), 1, 2);
  });
  Tensor by_hand = forward_value([&](Tape& t) {
    return conv1d(t.leaf(padded), t.leaf(kern), t.leaf(Tensor::zeros({1})), 1,
                  0);
  });
  REQUIRE(with_pad.size() == by_hand.size());
  for (std::size_t i = 0; i < with_pad.size(); ++i)
    CHECK_THAT(with_pad[i], Catch::Matchers::WithinAbs(by_hand[i], 1e-15));
}

TEST_CASE("maxpool1d picks window maxima and routes ties to the first",
          "[layers]") {
  Tensor x({1, 1, 4}, {1, 3, 2, 5});
  Tensor y = forward_value([&](Tape& t) { return maxpool1d(t.leaf(x), 2, 2); });
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y.at3(0, 0, 0) == 3.0);
  CHECK(y.at3(0, 0, 1) == 5.0);

  Tape tape;
  Variable tied = tape.leaf(Tensor({1, 1, 2}, {4, 4}), true);
  Variable pooled = maxpool1d(tied, 2, 2);
  tape.backward(sum(pooled));
  CHECK(tied.grad()[0] == 1.0);
  CHECK(tied.grad()[1] == 0.0);

  Tape t2;
  CHECK_THROWS_WITH(maxpool1d(t2.leaf(Tensor({1, 1, 1}, {1})), 2, 2),
                    Catch::Matchers::ContainsSubstring("too short"));
}

TEST_CASE("relu values and slopes", "[layers]") {
  Tape tape;
  Variable x = tape.leaf(Tensor({3}, {-1, 0, 2}), true);
  Variable y = relu(x);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == 2.0);

  Tape t2;
  Variable x2 = t2.leaf(Tensor({2}, {3, -3}), true);
  t2.backward(sum(relu(x2)));
  CHECK(x2.grad()[0] == 1.0);
  CHECK(x2.grad()[1] == 0.0);

  Tensor pos({3}, {0.5, 1.0, 7.0});
  Tensor kept = forward_value([&](Tape& t) { return relu(t.leaf(pos)); });
  for (std::size_t i = 0; i < pos.size(); ++i) CHECK(kept[i] == pos[i]);
}

TEST_CASE("sigmoid values and symmetry", "[layers]") {
  Tensor zero = forward_value(
      [](Tape& t) { return sigmoid(t.leaf(Tensor::scalar(0.0))); });
  CHECK(zero[0] == 0.5);

  Tensor ten = forward_value(
      [](Tape& t) { return sigmoid(t.leaf(Tensor::scalar(10.0))); });
  CHECK_THAT(ten[0], Catch::Matchers::WithinAbs(0.9999546, 1e-7));

  std::mt19937_64 rng(53);
  Tensor xs = random_uniform({32}, -6.0, 6.0, rng);
  Tensor neg = map_unary(xs, [](double v) { return -v; });
  Tensor s = forward_value([&](Tape& t) { return sigmoid(t.leaf(xs)); });
  Tensor sn = forward_value([&](Tape& t) { return sigmoid(t.leaf(neg)); });
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK_THAT(sn[i], Catch::Matchers::WithinAbs(1.0 - s[i], 1e-15));
    CHECK(s[i] > 0.0);
    CHECK(s[i] < 1.0);
  }
}

TEST_CASE("dropout identity cases and preserved expectation", "[layers]") {
  std::mt19937_64 rng(59);
  Tensor x({4}, {1, 2, 3, 4});

  Tensor rate0 = forward_value([&](Tape& t) {
    return dropout(t.leaf(x), 0.0, Mode::train, &rng);
  });
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(rate0[i] == x[i]);

  Tensor eval = forward_value([&](Tape& t) {
    return dropout(t.leaf(x), 0.9, Mode::eval, nullptr);
  });
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(eval[i] == x[i]);

  Tape t;
  CHECK_THROWS_WITH(dropout(t.leaf(x), 1.0, Mode::train, &rng),
                    Catch::Matchers::ContainsSubstring("rate"));
  CHECK_THROWS_WITH(dropout(t.leaf(x), -0.1, Mode::train, &rng),
                    Catch::Matchers::ContainsSubstring("rate"));

  // inverted scaling keeps the mean at 1 over a large sample
  Tensor ones = Tensor::full({100000}, 1.0);
  Tensor dropped = forward_value([&](Tape& tt) {
    return dropout(tt.leaf(ones), 0.5, Mode::train, &rng);
  });
  double mean = 0.0;
  for (std::size_t i = 0; i < dropped.size(); ++i) mean += dropped[i];
  mean /= static_cast<double>(dropped.size());
  CHECK(mean >= 0.98);
  CHECK(mean <= 1.02);
}

TEST_CASE("dropout backward reuses the forward mask", "[layers]") {
  std::mt19937_64 rng(61);
  Tape tape;
  Variable x = tape.leaf(Tensor::full({64}, 2.0), true);
  Variable y = dropout(x, 0.5, Mode::train, &rng);
  tape.backward(sum(y));
  for (std::size_t i = 0; i < 64; ++i) {
    const double scaled = y.value()[i];
    if (scaled == 0.0) {
      CHECK(x.grad()[i] == 0.0);
    } else {
      CHECK(x.grad()[i] == 2.0);  // 1/(1-0.5)
    }
  }
}

TEST_CASE("nac forward: zero weights, saturated example, weight range",
          "[layers]") {
  NacParams zero{make_param("W_hat", Tensor::zeros({2, 3})),
                 make_param("M_hat", Tensor::full({2, 3}, 1.0))};
  Tensor x({1, 3}, {1, 2, 3});
  Tensor y = forward_value([&](Tape& t) {
    return nac_forward(t, zero, t.leaf(x));
  });
  CHECK(y.at2(0, 0) == 0.0);
  CHECK(y.at2(0, 1) == 0.0);

  NacParams sat{make_param("W_hat", Tensor::full({1, 2}, 10.0)),
                make_param("M_hat", Tensor::full({1, 2}, 10.0))};
  Tensor x2({1, 2}, {2, 3});
  Tensor y2 = forward_value([&](Tape& t) {
    return nac_forward(t, sat, t.leaf(x2));
  });
  const double w_eff = std::tanh(10.0) * (1.0 / (1.0 + std::exp(-10.0)));
  CHECK_THAT(y2.at2(0, 0), Catch::Matchers::WithinRel(5.0 * w_eff, 1e-12));
  CHECK_THAT(y2.at2(0, 0), Catch::Matchers::WithinAbs(4.99977, 1e-4));

  std::mt19937_64 rng(67);
  NacParams rnd{make_param("W_hat", random_uniform({4, 5}, -3.0, 3.0, rng)),
                make_param("M_hat", random_uniform({4, 5}, -3.0, 3.0, rng))};
  Tensor w_mat = forward_value([&](Tape& t) {
    return nac_effective_weight(t, rnd);
  });
  for (std::size_t i = 0; i < w_mat.size(); ++i) {
    CHECK(w_mat[i] > -1.0);
    CHECK(w_mat[i] < 1.0);
  }
}

TEST_CASE("nac is exactly linear in its input", "[layers]") {
  std::mt19937_64 rng(71);
  NacParams p{make_param("W_hat", random_uniform({3, 4}, -1.0, 1.0, rng)),
              make_param("M_hat", random_uniform({3, 4}, -1.0, 1.0, rng))};
  Tensor x1 = random_uniform({2, 4}, -2.0, 2.0, rng);
  Tensor x2 = random_uniform({2, 4}, -2.0, 2.0, rng);
  const double alpha = 1.7, beta = -0.6;
  Tensor mix = zip_binary(x1, x2, [&](double a, double b) {
    return alpha * a + beta * b;
  });
  auto run = [&](const Tensor& in) {
    return forward_value([&](Tape& t) {
      return nac_forward(t, p, t.leaf(in));
    });
  };
  Tensor lhs = run(mix);
  Tensor y1 = run(x1);
  Tensor y2 = run(x2);
  for (std::size_t i = 0; i < lhs.size(); ++i)
    CHECK_THAT(lhs[i], Catch::Matchers::WithinAbs(alpha * y1[i] + beta * y2[i],
                                                  1e-12));
}

namespace {
NaluParams make_nalu_params(std::mt19937_64& rng, std::size_t out,
                            std::size_t in) {
  NaluParams p;
  p.nac.W_hat =
      make_param("W_hat", random_uniform({out, in}, -0.8, 0.8, rng));
  p.nac.M_hat =
      make_param("M_hat", random_uniform({out, in}, -0.8, 0.8, rng));
  p.G = make_param("G", random_uniform({out, in}, -0.8, 0.8, rng));
  return p;
}
}  // namespace

TEST_CASE("nalu gate saturation selects the NAC path", "[layers]") {
  std::mt19937_64 rng(73);
  NaluParams p = make_nalu_params(rng, 2, 3);
  p.G = make_param("G", Tensor::full({2, 3}, 20.0));
  Tensor x = random_uniform({3, 3}, 0.5, 1.5, rng);

  Tensor y = forward_value([&](Tape& t) {
    return nalu_forward(t, p, t.leaf(x));
  });
  Tensor a = forward_value([&](Tape& t) {
    return nac_forward(t, p.nac, t.leaf(x));
  });
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK_THAT(y[i], Catch::Matchers::WithinAbs(a[i], 1e-6));
}

TEST_CASE("nalu closed gate with zero weights gives 0.5", "[layers]") {
  NaluParams p;
  p.nac.W_hat = make_param("W_hat", Tensor::zeros({1, 2}));
  p.nac.M_hat = make_param("M_hat", Tensor::zeros({1, 2}));
  p.G = make_param("G", Tensor::full({1, 2}, -20.0));
  Tensor x({1, 2}, {2, 3});
  Tensor y = forward_value([&](Tape& t) {
    return nalu_forward(t, p, t.leaf(x));
  });
  CHECK_THAT(y.at2(0, 0), Catch::Matchers::WithinAbs(0.5, 1e-6));
}

TEST_CASE("nalu handles zero inputs with finite values and gradients",
          "[layers]") {
  std::mt19937_64 rng(79);
  NaluParams p = make_nalu_params(rng, 2, 3);
  Tape tape;
  Variable x = tape.leaf(Tensor({2, 3}, {0.0, 0.4, -0.2, 0.1, 0.0, 0.3}),
                         true);
  Variable y = nalu_forward(tape, p, x);
  CHECK(y.value().all_finite());
  tape.backward(mean(y));
  CHECK(x.grad().all_finite());
  CHECK(p.nac.W_hat->grad.all_finite());
  CHECK(p.G->grad.all_finite());
}

TEST_CASE("nalu output is a per-coordinate convex combination", "[layers]") {
  std::mt19937_64 rng(83);
  for (int rep = 0; rep < 10; ++rep) {
    NaluParams p = make_nalu_params(rng, 3, 4);
    Tensor x = random_uniform({2, 4}, 0.1, 1.0, rng);
    Tensor y = forward_value([&](Tape& t) {
      return nalu_forward(t, p, t.leaf(x));
    });
    Tensor a = forward_value([&](Tape& t) {
      return nac_forward(t, p.nac, t.leaf(x));
    });
    Tensor m = forward_value([&](Tape& t) {
      Variable w_t = transpose(nac_effective_weight(t, p.nac));
      return sigmoid(matmul(log_abs(t.leaf(x), p.epsilon), w_t));
    });
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] >= std::min(a[i], m[i]) - 1e-12);
      CHECK(y[i] <= std::max(a[i], m[i]) + 1e-12);
    }
  }
}

TEST_CASE("nalu exp m-path stays finite and differs from sigmoid path",
          "[layers]") {
  std::mt19937_64 rng(89);
  NaluParams p = make_nalu_params(rng, 2, 3);
  Tensor x = random_uniform({2, 3}, 0.2, 1.0, rng);
  Tensor y_sig = forward_value([&](Tape& t) {
    return nalu_forward(t, p, t.leaf(x));
  });
  p.m_path = NaluMPath::exp;
  Tensor y_exp = forward_value([&](Tape& t) {
    return nalu_forward(t, p, t.leaf(x));
  });
  CHECK(y_exp.all_finite());
  bool any_diff = false;
  for (std::size_t i = 0; i < y_sig.size(); ++i)
    any_diff = any_diff || y_sig[i] != y_exp[i];
  CHECK(any_diff);
}

TEST_CASE("every layer passes the finite-difference gradient check",
          "[layers][gradcheck]") {
  std::mt19937_64 rng(97);
  const Tensor x2 = random_uniform({3, 4}, 0.1, 1.0, rng);
  const Tensor x3 = random_uniform({2, 2, 8}, 0.1, 1.0, rng);

  SECTION("dense") {
    DenseParams p{make_param("W", random_uniform({4, 3}, -0.8, 0.8, rng)),
                  make_param("b", random_uniform({3}, -0.3, 0.3, rng))};
    auto f = [&](Tape& t, Variable v) {
      return mean(mul(dense_forward(t, p, v), dense_forward(t, p, v)));
    };
    CHECK(grad_check(f, x2, 1e-5) <= 1e-4);
    auto fp = [&](Tape& t) { return f(t, t.leaf(x2)); };
    CHECK(grad_check_param(fp, *p.W, 1e-5) <= 1e-4);
    CHECK(grad_check_param(fp, *p.b, 1e-5) <= 1e-4);
  }

  SECTION("conv1d") {
    Conv1dParams p{make_param("k", random_uniform({3, 2, 3}, -0.8, 0.8, rng)),
                   make_param("b", random_uniform({3}, -0.3, 0.3, rng)), 2, 1};
    auto f = [&](Tape& t, Variable v) {
      Variable y = conv1d(v, t.param(p.kernels), t.param(p.bias), p.stride,
                          p.padding);
      return mean(mul(y, y));
    };
    CHECK(grad_check(f, x3, 1e-5) <= 1e-4);
    auto fp = [&](Tape& t) { return f(t, t.leaf(x3)); };
    CHECK(grad_check_param(fp, *p.kernels, 1e-5) <= 1e-4);
    CHECK(grad_check_param(fp, *p.bias, 1e-5) <= 1e-4);
  }

  SECTION("maxpool1d") {
    auto f = [&](Tape&, Variable v) {
      Variable y = maxpool1d(v, 2, 2);
      return mean(mul(y, y));
    };
    CHECK(grad_check(f, x3, 1e-6) <= 1e-4);
  }

  SECTION("relu") {
    auto f = [](Tape&, Variable v) { return mean(mul(relu(v), relu(v))); };
    CHECK(grad_check(f, x2, 1e-5) <= 1e-4);
  }

  SECTION("sigmoid") {
    auto f = [](Tape&, Variable v) { return mean(sigmoid(v)); };
    CHECK(grad_check(f, x2, 1e-5) <= 1e-4);
  }

  SECTION("dropout with a fixed mask") {
    auto f = [](Tape&, Variable v) {
      std::mt19937_64 mask_rng(1234);  // same mask on every evaluation
      Variable y = dropout(v, 0.3, Mode::train, &mask_rng);
      return mean(mul(y, y));
    };
    CHECK(grad_check(f, x2, 1e-5) <= 1e-4);
  }

  SECTION("nac") {
    NacParams p{make_param("W_hat", random_uniform({3, 4}, -0.8, 0.8, rng)),
                make_param("M_hat", random_uniform({3, 4}, -0.8, 0.8, rng))};
    auto f = [&](Tape& t, Variable v) {
      Variable y = nac_forward(t, p, v);
      return mean(mul(y, y));
    };
    CHECK(grad_check(f, x2, 1e-5) <= 1e-4);
    auto fp = [&](Tape& t) { return f(t, t.leaf(x2)); };
    CHECK(grad_check_param(fp, *p.W_hat, 1e-5) <= 1e-4);
    CHECK(grad_check_param(fp, *p.M_hat, 1e-5) <= 1e-4);
  }

  SECTION("nalu") {
    NaluParams p = make_nalu_params(rng, 3, 4);
    auto f = [&](Tape& t, Variable v) {
      Variable y = nalu_forward(t, p, v);
      return mean(mul(y, y));
    };
    CHECK(grad_check(f, x2, 1e-5) <= 1e-4);
    auto fp = [&](Tape& t) { return f(t, t.leaf(x2)); };
    CHECK(grad_check_param(fp, *p.nac.W_hat, 1e-5) <= 1e-4);
    CHECK(grad_check_param(fp, *p.nac.M_hat, 1e-5) <= 1e-4);
    CHECK(grad_check_param(fp, *p.G, 1e-5) <= 1e-4);
  }

  SECTION("nalu with separate m-path weights") {
    NaluParams p = make_nalu_params(rng, 2, 4);
    p.separate_m_weights = true;
    p.nac_m.W_hat =
        make_param("Wm_hat", random_uniform({2, 4}, -0.8, 0.8, rng));
    p.nac_m.M_hat =
        make_param("Mm_hat", random_uniform({2, 4}, -0.8, 0.8, rng));
    auto fp = [&](Tape& t) {
      Variable y = nalu_forward(t, p, t.leaf(x2));
      return mean(mul(y, y));
    };
    CHECK(grad_check_param(fp, *p.nac_m.W_hat, 1e-5) <= 1e-4);
    CHECK(grad_check_param(fp, *p.nac.W_hat, 1e-5) <= 1e-4);
  }
}
