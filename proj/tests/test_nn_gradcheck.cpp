#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mtcl/errors.hpp"
#include "mtcl/nn.hpp"
#include "testutil.hpp"

using namespace mtcl;
using namespace mtcl::testutil;

namespace {

std::vector<double> readout_weights(long n, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(n));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

}  // namespace

TEST_CASE("linear matches finite differences") {
  Rng rng(11);
  Linear layer(5, 4, rng);
  Parameter input;
  input.value = random_tensor({3, 5}, rng);
  const auto w = readout_weights(7, rng);

  auto loss = [&]() {
    Var x{input.value, -1};
    return weighted_readout(nullptr, layer.forward(nullptr, x), w).v.item();
  };

  Tape tape;
  Var x = make_output(&tape, input.value);
  Var out = weighted_readout(&tape, layer.forward(&tape, x), w);
  tape.backward(out);
  input.grad = tape.grad_ptr(x.id)->clone();

  Rng probe(1);
  CHECK(check_param(layer.weight, loss, probe, 20).failed == 0);
  CHECK(check_param(layer.bias, loss, probe, 4).failed == 0);
  CHECK(check_param(input, loss, probe, 15).failed == 0);
}

TEST_CASE("linear zero input and zero bias give zero output") {
  Rng rng(3);
  Linear layer(6, 2, rng);
  Var x{Tensor::zeros({2, 6}), -1};
  const Var y = layer.forward(nullptr, x);
  for (long i = 0; i < y.v.numel(); ++i) CHECK(y.v[i] == 0.0);
}

TEST_CASE("conv3d shapes and finite differences") {
  Rng rng(17);
  Conv3d conv(2, 3, {3, 3, 2}, {2, 2, 1}, {1, 1, 0}, rng);
  const auto os = conv.output_shape(5, 6, 4);
  CHECK(os == std::array<long, 4>{3, 3, 3, 3});

  Parameter input;
  input.value = random_tensor({2, 2, 5, 6, 4}, rng);
  const auto w = readout_weights(9, rng);

  auto loss = [&]() {
    Var x{input.value, -1};
    return weighted_readout(nullptr, conv.forward(nullptr, x), w).v.item();
  };

  Tape tape;
  Var x = make_output(&tape, input.value);
  Var out = weighted_readout(&tape, conv.forward(&tape, x), w);
  tape.backward(out);
  input.grad = tape.grad_ptr(x.id)->clone();

  Rng probe(2);
  CHECK(check_param(conv.weight, loss, probe, 30).failed == 0);
  CHECK(check_param(conv.bias, loss, probe, 3).failed == 0);
  CHECK(check_param(input, loss, probe, 30).failed == 0);
}

TEST_CASE("conv3d rejects too-small inputs") {
  Rng rng(5);
  Conv3d conv(1, 1, {2, 2, 2}, {1, 1, 1}, {0, 0, 0}, rng);
  CHECK_THROWS_AS(conv.output_shape(1, 4, 4), ConfigError);
}

TEST_CASE("batchnorm train mode matches finite differences") {
  Rng rng(23);
  BatchNorm3d bn(3);
  // Non-trivial affine parameters so their gradients are informative.
  for (long i = 0; i < 3; ++i) {
    bn.gamma.value[i] = 0.5 + 0.3 * static_cast<double>(i);
    bn.beta.value[i] = 0.1 * static_cast<double>(i);
  }
  Parameter input;
  input.value = random_tensor({2, 3, 2, 3, 2}, rng);
  const auto w = readout_weights(11, rng);

  auto loss = [&]() {
    Var x{input.value, -1};
    return weighted_readout(nullptr, bn.forward(nullptr, x, true, false), w).v.item();
  };

  Tape tape;
  Var x = make_output(&tape, input.value);
  Var out = weighted_readout(&tape, bn.forward(&tape, x, true, false), w);
  tape.backward(out);
  input.grad = tape.grad_ptr(x.id)->clone();

  Rng probe(3);
  CHECK(check_param(bn.gamma, loss, probe, 3).failed == 0);
  CHECK(check_param(bn.beta, loss, probe, 3).failed == 0);
  CHECK(check_param(input, loss, probe, 40).failed == 0);
}

TEST_CASE("batchnorm eval mode uses running statistics and is affine") {
  Rng rng(29);
  BatchNorm3d bn(2);
  bn.running_mean[0] = 1.0;
  bn.running_mean[1] = -2.0;
  bn.running_var[0] = 4.0;
  bn.running_var[1] = 0.25;
  Var x{random_tensor({1, 2, 2, 2, 2}, rng), -1};
  const Var y = bn.forward(nullptr, x, false);
  for (long c = 0; c < 2; ++c)
    for (long s = 0; s < 8; ++s) {
      const double xv = x.v[c * 8 + s];
      const double expect = (xv - bn.running_mean[c]) / std::sqrt(bn.running_var[c] + bn.eps);
      CHECK(y.v[c * 8 + s] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("batchnorm handles an all-zero batch without dividing by zero") {
  BatchNorm3d bn(2);
  Var x{Tensor::zeros({2, 2, 2, 2, 2}), -1};
  const Var train_out = bn.forward(nullptr, x, true, false);
  const Var eval_out = bn.forward(nullptr, x, false);
  CHECK(train_out.v.all_finite());
  CHECK(eval_out.v.all_finite());
}

TEST_CASE("maxpool routes gradients to the argmax") {
  Rng rng(31);
  MaxPool3d pool({2, 2, 2}, {2, 2, 2}, {0, 0, 0});
  Parameter input;
  input.value = random_tensor({1, 2, 4, 4, 4}, rng);
  const auto w = readout_weights(5, rng);

  auto loss = [&]() {
    Var x{input.value, -1};
    return weighted_readout(nullptr, pool.forward(nullptr, x), w).v.item();
  };

  Tape tape;
  Var x = make_output(&tape, input.value);
  Var out = weighted_readout(&tape, pool.forward(&tape, x), w);
  tape.backward(out);
  input.grad = tape.grad_ptr(x.id)->clone();

  Rng probe(4);
  CHECK(check_param(input, loss, probe, 40).failed == 0);
}

TEST_CASE("relu, residual add, concat and pooling match finite differences") {
  Rng rng(37);
  Parameter a, b;
  a.value = random_tensor({2, 2, 3, 3, 2}, rng);
  b.value = random_tensor({2, 2, 3, 3, 2}, rng);
  const auto w = readout_weights(13, rng);

  auto graph = [&](Tape* tape, const Var& xa, const Var& xb) {
    Var h = add(tape, relu(tape, xa), xb);
    Var cat = concat_dim1(tape, {h, xa});
    return weighted_readout(tape, global_avg_pool(tape, cat), w);
  };
  auto loss = [&]() {
    Var xa{a.value, -1}, xb{b.value, -1};
    return graph(nullptr, xa, xb).v.item();
  };

  Tape tape;
  Var xa = make_output(&tape, a.value);
  Var xb = make_output(&tape, b.value);
  tape.backward(graph(&tape, xa, xb));
  a.grad = tape.grad_ptr(xa.id)->clone();
  b.grad = tape.grad_ptr(xb.id)->clone();

  Rng probe(5);
  CHECK(check_param(a, loss, probe, 40).failed == 0);
  CHECK(check_param(b, loss, probe, 40).failed == 0);
}

TEST_CASE("dropout is identity in eval mode and rescales kept units in train mode") {
  Rng rng(41);
  Dropout drop(0.5);
  Var x{random_tensor({4, 10}, rng), -1};
  Rng eval_rng(1);
  const Var eval_out = drop.forward(nullptr, x, false, eval_rng);
  CHECK(tensors_equal(eval_out.v, x.v));

  Rng d1(7), d2(7);
  const Var t1 = drop.forward(nullptr, x, true, d1);
  const Var t2 = drop.forward(nullptr, x, true, d2);
  CHECK(tensors_equal(t1.v, t2.v));  // same stream, same mask
  long kept = 0;
  for (long i = 0; i < t1.v.numel(); ++i) {
    if (t1.v[i] == 0.0) continue;
    ++kept;
    CHECK(t1.v[i] == doctest::Approx(2.0 * x.v[i]).epsilon(1e-12));
  }
  CHECK(kept > 0);
  CHECK(kept < t1.v.numel());
}

TEST_CASE("mlp with dropout disabled matches finite differences") {
  Rng rng(43);
  Mlp mlp(6, {5, 3}, 2, 0.0, rng);
  Parameter input;
  input.value = random_tensor({3, 6}, rng);
  const auto w = readout_weights(3, rng);
  Rng dropout_rng(1);

  auto loss = [&]() {
    Var x{input.value, -1};
    Rng r(1);
    return weighted_readout(nullptr, mlp.forward(nullptr, x, true, r), w).v.item();
  };

  Tape tape;
  Var x = make_output(&tape, input.value);
  tape.backward(weighted_readout(&tape, mlp.forward(&tape, x, true, dropout_rng), w));
  input.grad = tape.grad_ptr(x.id)->clone();

  NamedTensors named;
  mlp.collect("mlp", named);
  CHECK(named.params.size() == 6);  // three layers, weight + bias each

  Rng probe(6);
  CHECK(check_param(input, loss, probe, 18).failed == 0);
  for (auto& [name, param] : named.params) {
    INFO(name);
    CHECK(check_param(*param, loss, probe, 10).failed == 0);
  }
}

TEST_CASE("adam minimizes a quadratic and applies coupled weight decay") {
  Rng rng(47);
  Parameter p;
  p.value = random_tensor({8}, rng, 2.0);
  Adam opt({&p}, 0.05, 0.0);
  for (int step = 0; step < 400; ++step) {
    p.zero_grad();
    Tensor& g = p.grad_buffer();
    for (long i = 0; i < 8; ++i) g[i] = 2.0 * (p.value[i] - 1.5);
    opt.step();
  }
  for (long i = 0; i < 8; ++i) CHECK(p.value[i] == doctest::Approx(1.5).epsilon(1e-2));

  // With weight decay and zero gradient the parameter shrinks toward zero.
  Parameter q;
  q.value = Tensor({4}, 1.0);
  Adam decay({&q}, 0.01, 0.5);
  const double before = q.value[0];
  q.grad_buffer();
  for (int step = 0; step < 50; ++step) {
    decay.zero_grad();
    decay.step();
  }
  CHECK(q.value[0] < before);

  CHECK(l2_penalty({&q}) == doctest::Approx(0.5 * 4.0 * q.value[0] * q.value[0]).epsilon(1e-12));
}

TEST_CASE("tape prunes branches that do not reach the loss") {
  Rng rng(53);
  Linear used(4, 3, rng), unused(4, 3, rng);
  Parameter input;
  input.value = random_tensor({2, 4}, rng);
  const auto w = readout_weights(3, rng);

  Tape tape;
  Var x = make_output(&tape, input.value);
  Var live = used.forward(&tape, x);
  (void)unused.forward(&tape, x);  // dead branch
  tape.backward(weighted_readout(&tape, live, w));

  CHECK(used.weight.grad.defined());
  CHECK_FALSE(unused.weight.grad.defined());
}
