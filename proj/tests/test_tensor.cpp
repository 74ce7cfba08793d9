#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "nbslu/adam.hpp"
#include "nbslu/graph.hpp"
#include "nbslu/nn.hpp"
#include "nbslu/rng.hpp"

using namespace nbslu;
using nbslu::testing::finite_diff_check;
using nbslu::testing::random_tensor;

TEST_CASE("softmax basics") {
  Tape t;
  Val x = t.constant(Tensor({3}, {0.0, 0.0, 0.0}));
  Val y = softmax(x, 0);
  for (int i = 0; i < 3; ++i) CHECK(y.t().values[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Val a = t.constant(Tensor({2}, {0.0, std::log(2.0)}));
  Val s = softmax(a, 0);
  CHECK(s.t().values[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(s.t().values[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and row sums") {
  Rng rng(11);
  for (int iter = 0; iter < 50; ++iter) {
    Tensor x = random_tensor({3, 5}, rng, -8.0, 8.0);
    Tensor shifted = x;
    double c = rng.uniform(-100.0, 100.0);
    for (double& v : shifted.values) v += c;
    Tape t;
    Val y0 = softmax(t.constant(x), 1);
    Val y1 = softmax(t.constant(shifted), 1);
    for (size_t i = 0; i < y0.t().values.size(); ++i)
      CHECK(std::abs(y0.t().values[i] - y1.t().values[i]) < 1e-12);
    for (int r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (int col = 0; col < 5; ++col) sum += y0.t().at(r, col);
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax invalid axis") {
  Tape t;
  Val x = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(softmax(x, 2), std::invalid_argument);
}

TEST_CASE("cross entropy closed forms") {
  Tape t;
  // One-hot on target.
  Val onehot = t.constant(Tensor({4}, {0.0, 1.0, 0.0, 0.0}));
  CHECK(cross_entropy(onehot, 1).t().values[0] == doctest::Approx(0.0));
  // Uniform over 4 classes.
  Val uni = t.constant(Tensor({4}, {0.25, 0.25, 0.25, 0.25}));
  CHECK(cross_entropy(uni, 2).t().values[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // Zero probability at target: clamped by the 1e-12 floor.
  Val zero = t.constant(Tensor({2}, {0.0, 1.0}));
  CHECK(cross_entropy(zero, 0).t().values[0] == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK(std::isfinite(cross_entropy(zero, 0).t().values[0]));
  CHECK_THROWS_AS(cross_entropy(zero, 5), std::invalid_argument);
}

TEST_CASE("backward: linear case grad(w) = x") {
  Tensor w({4}, {0.3, -0.2, 0.5, 0.9});
  w.requires_grad = true;
  w.ensure_grad();
  Tensor x({4}, {1.0, 2.0, 3.0, 4.0});
  Tape t;
  Val loss = sum_all(mul(t.leaf(&x), t.leaf(&w)));
  t.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(w.grad[static_cast<size_t>(i)] == doctest::Approx(x.values[static_cast<size_t>(i)]));
  CHECK(x.grad.empty());  // requires_grad false
}

TEST_CASE("backward: unused parameter keeps exact zero grad") {
  Tensor used({2}, {1.0, 2.0});
  Tensor unused({2}, {3.0, 4.0});
  used.requires_grad = unused.requires_grad = true;
  used.ensure_grad();
  unused.ensure_grad();
  Tape t;
  Val lu = t.leaf(&used);
  t.leaf(&unused);
  t.backward(sum_all(lu));
  CHECK(unused.grad[0] == 0.0);
  CHECK(unused.grad[1] == 0.0);
  CHECK(used.grad[0] == 1.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  x.requires_grad = true;
  Tape t;
  Val v = t.leaf(&x);
  CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
}

TEST_CASE("backward: two-layer network matches finite differences") {
  Rng rng(42);
  // 2-in -> 3-hidden -> 1-out with gelu: ~13 parameters plus input.
  std::vector<Tensor> inputs;
  inputs.push_back(random_tensor({1, 2}, rng));  // x
  inputs.push_back(random_tensor({2, 3}, rng));  // W1
  inputs.push_back(random_tensor({3}, rng));     // b1
  inputs.push_back(random_tensor({3, 1}, rng));  // W2
  inputs.push_back(random_tensor({1}, rng));     // b2
  auto res = finite_diff_check(inputs, [](Tape& t, const std::vector<Val>& v) {
    Val h = gelu(add(matmul(v[0], v[1]), v[2]));
    return sum_all(add(matmul(h, v[3]), v[4]));
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradient check property: every op, random small inputs") {
  Rng rng(7);
  int iters = 25;
  for (int it = 0; it < iters; ++it) {
    int R = 2 + rng.uniform_int(3), C = 2 + rng.uniform_int(4);
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({R, C}, rng),
                             random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(add(v[0], v[1]), v[2]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "add/mul " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({C}, rng),
                             random_tensor({C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(add(v[0], v[1]), v[2]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "broadcast add/mul " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({C, R}, rng)};
      auto res = finite_diff_check(
          in, [](Tape& t, const std::vector<Val>& v) { return sum_all(matmul(v[0], v[1])); });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "matmul " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(matmul(v[0], v[1], false, true));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "matmul_nt " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(matmul(v[0], v[1], true, false));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "matmul_tn " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng, -3.0, 3.0), random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(softmax(v[0], 1), v[1]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "softmax ax1 " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng, -3.0, 3.0), random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(softmax(v[0], 0), v[1]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "softmax ax0 " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng, -2.0, 2.0), random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(layer_norm(v[0]), v[1]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "layer_norm " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng, -2.0, 2.0), random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(gelu(v[0]), v[1]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "gelu " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({R, C}, rng),
                             random_tensor({2 * R, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(concat({v[0], v[1]}, 0), v[2]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "concat0 " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({R, C}, rng),
                             random_tensor({R, 2 * C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(concat({v[0], v[1]}, 1), v[2]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "concat1 " << res.where);
    }
    {
      std::vector<int> idx{0, R - 1, 0};
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({3, C}, rng)};
      auto res = finite_diff_check(in, [idx](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(gather_rows(v[0], idx), v[1]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "gather_rows " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng), random_tensor({1, C}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(mean_rows(v[0]), v[1]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "mean_rows " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({R, C}, rng)};
      auto res = finite_diff_check(in, [R, C](Tape& t, const std::vector<Val>& v) {
        return sum_all(slice_cols(slice_rows(v[0], 0, R - 1), 1, C));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "slice " << res.where);
    }
    {
      std::vector<Tensor> in{random_tensor({2, C}, rng, -3.0, 3.0)};
      int target = rng.uniform_int(C);
      auto res = finite_diff_check(in, [target](Tape& t, const std::vector<Val>& v) {
        return cross_entropy(softmax(slice_rows(v[0], 0, 1), 1), target);
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "cross_entropy " << res.where);
    }
    {
      int dk = 3;
      std::vector<Tensor> in{random_tensor({R, dk}, rng), random_tensor({C, dk}, rng),
                             random_tensor({C, dk}, rng), random_tensor({R, dk}, rng)};
      auto res = finite_diff_check(in, [](Tape& t, const std::vector<Val>& v) {
        return sum_all(mul(scaled_dot_product_attention(v[0], v[1], v[2]), v[3]));
      });
      CHECK_MESSAGE(res.max_rel_err < 1e-4, "attention " << res.where);
    }
  }
}

TEST_CASE("standard layers: closed-form identities") {
  Tape t;
  // matmul(I, A) = A.
  Val I = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Val A = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Val P = matmul(I, A);
  for (size_t i = 0; i < 6; ++i) CHECK(P.t().values[i] == A.t().values[i]);

  // layer_norm of a constant vector -> zeros.
  Val c = t.constant(Tensor({1, 4}, {3.5, 3.5, 3.5, 3.5}));
  Val ln = layer_norm(c);
  for (double v : ln.t().values) CHECK(v == doctest::Approx(0.0));

  // Attention with a single key: output equals the value row for any query.
  Rng rng(3);
  Val q = t.constant(random_tensor({2, 4}, rng, -5.0, 5.0));
  Val k = t.constant(random_tensor({1, 4}, rng));
  Tensor vrow = random_tensor({1, 4}, rng);
  Val v = t.constant(vrow);
  Val out = scaled_dot_product_attention(q, k, v);
  for (int r = 0; r < 2; ++r)
    for (int col = 0; col < 4; ++col) CHECK(out.t().at(r, col) == doctest::Approx(vrow.at(0, col)));
}

TEST_CASE("layer_norm row statistics") {
  Rng rng(9);
  Tape t;
  Tensor x = random_tensor({4, 16}, rng, -2.0, 2.0);
  Val y = layer_norm(t.constant(x));
  for (int r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < 16; ++c) mean += y.t().at(r, c);
    mean /= 16;
    for (int c = 0; c < 16; ++c) var += (y.t().at(r, c) - mean) * (y.t().at(r, c) - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("dimension mismatches raise contract errors") {
  Tape t;
  Val a = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Val b = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(concat({a, b}, 0), std::invalid_argument);
  CHECK_THROWS_AS(slice_rows(a, 0, 5), std::invalid_argument);
  CHECK_THROWS_AS(gather_rows(a, {7}), std::invalid_argument);
}

TEST_CASE("no NaN/Inf on finite inputs up to 1e3") {
  Rng rng(21);
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor({3, 6}, rng, -1e3, 1e3);
    Tensor w = random_tensor({6, 4}, rng, -1e3, 1e3);
    x.requires_grad = w.requires_grad = true;
    x.ensure_grad();
    w.ensure_grad();
    Tape t;
    Val vx = t.leaf(&x);
    Val h = layer_norm(matmul(vx, t.leaf(&w)));
    Val p = softmax(gelu(h), 1);
    Val loss = cross_entropy(slice_rows(p, 0, 1), 0);
    t.backward(loss);
    for (double v : p.t().values) CHECK(std::isfinite(v));
    for (double v : x.grad) CHECK(std::isfinite(v));
    for (double v : w.grad) CHECK(std::isfinite(v));
  }
}

TEST_CASE("adam: zero grad leaves parameters unchanged") {
  Tensor p({3}, {1.0, 2.0, 3.0});
  p.requires_grad = true;
  p.ensure_grad();
  Adam opt({&p}, {});
  opt.step();
  CHECK(p.values[0] == 1.0);
  CHECK(p.values[1] == 2.0);
  CHECK(p.values[2] == 3.0);
  CHECK(opt.t() == 1);
}

TEST_CASE("adam: first-step closed form") {
  Tensor p({1}, {0.5});
  p.requires_grad = true;
  p.ensure_grad();
  p.grad[0] = 1.0;
  AdamConfig cfg;
  cfg.lr = 1e-3;
  Adam opt({&p}, cfg);
  opt.step();
  // mhat = 1, vhat = 1 -> delta = -lr / (1 + eps)
  double expect = 0.5 - 1e-3 / (1.0 + 1e-8);
  CHECK(p.values[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(p.grad[0] == 0.0);  // zeroed after step
}

TEST_CASE("adam: identical seeds give bit-identical trajectories") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor p = random_tensor({8}, rng);
    p.requires_grad = true;
    p.ensure_grad();
    Adam opt({&p}, {});
    for (int i = 0; i < 25; ++i) {
      Tape t;
      Val lp = t.leaf(&p);
      Val loss = sum_all(mul(lp, lp));
      t.backward(loss);
      opt.step();
    }
    return p.values;
  };
  auto a = run(123), b = run(123);
  CHECK(a == b);
}

TEST_CASE("clipped adam update max-norm bound") {
  // With grad norm clipped to 1, per-coordinate |delta| stays under
  // lr * clip / (1 - beta1) at every step.
  Rng rng(5);
  Tensor p = random_tensor({16}, rng);
  p.requires_grad = true;
  p.ensure_grad();
  AdamConfig cfg;
  Adam opt({&p}, cfg);
  double bound = cfg.lr * 1.0 / (1.0 - cfg.beta1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> before = p.values;
    for (double& g : p.grad) g = rng.uniform(-50.0, 50.0);
    clip_global_norm({&p}, 1.0);
    double sq = 0.0;
    for (double g : p.grad) sq += g * g;
    CHECK(std::sqrt(sq) <= 1.0 + 1e-12);
    opt.step();
    for (size_t k = 0; k < p.values.size(); ++k)
      CHECK(std::abs(p.values[k] - before[k]) <= bound);
  }
}

TEST_CASE("dropout scales and masks deterministically") {
  Rng rng(17);
  Tape t;
  Tensor x({1, 1000}, std::vector<double>(1000, 1.0));
  Val y = dropout(t.constant(x), 0.25, rng);
  int zeros = 0;
  for (double v : y.t().values) {
    if (v == 0.0)
      ++zeros;
    else
      CHECK(v == doctest::Approx(1.0 / 0.75));
  }
  CHECK(zeros > 180);
  CHECK(zeros < 320);
}

TEST_CASE("param store init and checkpoint round trip") {
  Rng rng(33);
  ParamStore ps;
  Tensor* w = ps.create("enc.W", {4, 3}, Init::Xavier, rng);
  Tensor* b = ps.create("enc.b", {3}, Init::Zeros, rng);
  Tensor* e = ps.create("emb.tok", {5, 3}, Init::Embedding, rng);
  for (double v : b->values) CHECK(v == 0.0);
  double lim = std::sqrt(6.0 / (4 + 3));
  for (double v : w->values) {
    CHECK(v <= lim);
    CHECK(v >= -lim);
  }
  (void)e;
  std::map<std::string, std::string> meta{{"model", "unit"}, {"dim", "3"}};
  save_checkpoint("ckpt_unit_test.tmp", meta, ps);

  Rng rng2(99);
  ParamStore ps2;
  ps2.create("enc.W", {4, 3}, Init::Xavier, rng2);
  ps2.create("enc.b", {3}, Init::Zeros, rng2);
  ps2.create("emb.tok", {5, 3}, Init::Embedding, rng2);
  auto meta2 = load_checkpoint("ckpt_unit_test.tmp", ps2);
  CHECK(meta2.at("model") == "unit");
  CHECK(ps2.find("enc.W")->values == w->values);
  CHECK(ps2.find("emb.tok")->values == e->values);
  std::remove("ckpt_unit_test.tmp");
}

TEST_CASE("transformer encoder smoke: shapes and gradient flow") {
  Rng rng(4);
  ParamStore ps;
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.ffn = 16;
  cfg.max_positions = 16;
  TransformerEncoder enc(ps, rng, "enc", 11, cfg);
  Tape t;
  std::vector<int> toks{1, 5, 6, 2}, segs{0, 0, 0, 0}, pos{0, 1, 2, 3};
  Val h = enc.encode(t, toks, segs, pos);
  CHECK(h.rows() == 4);
  CHECK(h.cols() == 8);
  t.backward(sum_all(h));
  bool any = false;
  for (double g : enc.tok_emb->grad)
    if (g != 0.0) any = true;
  CHECK(any);
}
