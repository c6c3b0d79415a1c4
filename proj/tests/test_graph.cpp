#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ckl/gradcheck.hpp"
#include "ckl/graph.hpp"

using namespace ckl;

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, float stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data) v = rng.normalf(0.0f, stddev);
  return t;
}

// 2-layer MLP with MSE head. Parameters are regenerated until every hidden
// pre-activation sits away from the relu kink, so central differences at
// h=1e-3 stay valid.
struct MlpFixture {
  Tensor x, w1, b1, w2, b2, target;
  int loss_node = -1;

  explicit MlpFixture(uint64_t seed) {
    for (uint64_t attempt = 0;; ++attempt) {
      Rng rng(mix_seed(seed, attempt));
      x = randn(rng, {4, 6}, 1.0f);
      w1 = randn(rng, {6, 16}, 0.7f);
      b1 = randn(rng, {16}, 0.3f);
      w2 = randn(rng, {16, 3}, 0.25f);
      b2 = randn(rng, {3}, 0.1f);
      target = randn(rng, {4, 3}, 0.5f);
      for (Tensor* p : {&w1, &b1, &w2, &b2}) p->requires_grad = true;
      // Central differences step through +-h on every weight; keep all relu
      // inputs well clear of the kink so the perturbed nets stay on one side.
      Graph probe;
      int px = probe.input(x);
      int pre = probe.add(probe.matmul(px, probe.input(w1)), probe.input(b1));
      float m = 1e9f;
      for (float v : probe.forward().data) m = std::min(m, std::abs(v));
      if (m > 2e-2f) break;
    }
  }

  Graph build() {
    Graph g;
    int xi = g.input(x);
    int h = g.relu(g.add(g.matmul(xi, g.leaf(&w1, "w1")), g.leaf(&b1, "b1")));
    int pred = g.add(g.matmul(h, g.leaf(&w2, "w2")), g.leaf(&b2, "b2"));
    int diff = g.add(pred, g.scale(g.input(target), -1.0f));
    loss_node = g.mean_all(g.mul(diff, diff));
    return g;
  }
};

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

}  // namespace

TEST_CASE("rng streams are deterministic and bounded", "[graph]") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) REQUIRE(c.below(13) < 13);
  Rng d(7);
  double mean = 0.0;
  for (int i = 0; i < 4000; ++i) mean += d.uniform();
  REQUIRE(std::abs(mean / 4000.0 - 0.5) < 0.05);
  std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7}, v2 = v1;
  Rng e1(3), e2(3);
  e1.shuffle(v1);
  e2.shuffle(v2);
  REQUIRE(v1 == v2);
  REQUIRE(v1 != std::vector<int>({0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST_CASE("matmul against identity returns the input bitwise", "[graph]") {
  Graph g;
  Tensor b = Tensor::from({2, 3}, {1.5f, -2.0f, 0.25f, 3.0f, 0.0f, -7.5f});
  int id = g.input(Tensor::from({2, 2}, {1, 0, 0, 1}));
  int bi = g.input(b);
  g.matmul(id, bi);
  const Tensor& out = g.forward();
  REQUIRE(out.shape == std::vector<int>({2, 3}));
  REQUIRE(out.data == b.data);
}

TEST_CASE("softmax of equal logits is exactly uniform", "[graph]") {
  Graph g;
  g.softmax_last(g.input(Tensor::from({1, 2}, {0.0f, 0.0f})));
  const Tensor& out = g.forward();
  REQUIRE(out.data[0] == 0.5f);
  REQUIRE(out.data[1] == 0.5f);
}

TEST_CASE("layernorm of a constant row is exactly the bias", "[graph]") {
  Graph g;
  Tensor gain = Tensor::from({4}, {2.0f, -1.0f, 0.5f, 3.0f});
  Tensor bias = Tensor::from({4}, {0.1f, 0.2f, -0.3f, 0.4f});
  g.layernorm_last(g.input(Tensor::from({2, 4}, {5, 5, 5, 5, -3, -3, -3, -3})), g.input(gain), g.input(bias));
  const Tensor& out = g.forward();
  for (int r = 0; r < 2; ++r)
    for (int i = 0; i < 4; ++i) REQUIRE(out.data[static_cast<size_t>(r) * 4 + i] == bias.data[static_cast<size_t>(i)]);
}

TEST_CASE("product rule on scalars", "[graph]") {
  Tensor x = Tensor::from({1}, {3.0f});
  Tensor y = Tensor::from({1}, {4.0f});
  x.requires_grad = y.requires_grad = true;
  Graph g;
  g.sum_all(g.mul(g.leaf(&x), g.leaf(&y)));
  g.forward();
  g.backward();
  REQUIRE(x.grad[0] == 4.0f);
  REQUIRE(y.grad[0] == 3.0f);
}

TEST_CASE("sum of elements has all-ones gradient", "[graph]") {
  Tensor w = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  w.requires_grad = true;
  Graph g;
  g.sum_all(g.leaf(&w));
  g.forward();
  g.backward();
  for (float v : w.grad) REQUIRE(v == 1.0f);
}

TEST_CASE("backward twice without reset accumulates exactly twice", "[graph]") {
  Tensor w = Tensor::from({3}, {0.5f, -1.0f, 2.0f});
  w.requires_grad = true;
  Graph g;
  g.mean_all(g.mul(g.leaf(&w), g.leaf(&w)));
  g.forward();
  g.backward();
  std::vector<float> once = w.grad;
  g.backward();
  for (size_t i = 0; i < once.size(); ++i) REQUIRE(w.grad[i] == 2.0f * once[i]);
}

TEST_CASE("cross entropy of uniform logits is log vocab", "[graph]") {
  Graph g;
  g.cross_entropy(g.input(Tensor::zeros({3, 7})), {0, 3, 6}, {1, 1, 1});
  REQUIRE_THAT(g.forward().data[0], Catch::Matchers::WithinRel(std::log(7.0), 1e-6));
}

TEST_CASE("cross entropy of an exact one-hot distribution is zero", "[graph]") {
  Graph g;
  g.cross_entropy(g.input(Tensor::from({1, 3}, {0.0f, -1e9f, -1e9f})), {0}, {1});
  REQUIRE(g.forward().data[0] == 0.0f);
}

TEST_CASE("cross entropy ignores inactive rows and rejects empty masks", "[graph]") {
  Graph g;
  // second row would contribute a huge loss if counted
  g.cross_entropy(g.input(Tensor::from({2, 2}, {5.0f, -5.0f, -30.0f, 30.0f})), {0, 0}, {1, 0});
  double expect = std::log(1.0 + std::exp(-10.0));
  REQUIRE_THAT(g.forward().data[0], Catch::Matchers::WithinAbs(expect, 1e-6));
  Graph g2;
  REQUIRE_THROWS_AS(g2.cross_entropy(g2.input(Tensor::zeros({2, 2})), {0, 0}, {0, 0}), ConfigError);
}

TEST_CASE("broadcast add matches a hand loop and reduces gradients", "[graph]") {
  Rng rng(11);
  Tensor a = randn(rng, {2, 3, 4}, 1.0f);
  Tensor bias = randn(rng, {4}, 1.0f);
  Tensor rowmask = randn(rng, {2, 1, 4}, 1.0f);
  bias.requires_grad = rowmask.requires_grad = true;

  Graph g;
  int ai = g.input(a);
  int bi = g.leaf(&bias);
  int mi = g.leaf(&rowmask);
  int with_bias = g.add(ai, bi);
  g.sum_all(g.add(with_bias, mi));
  g.forward();

  const Tensor& mid = g.out(with_bias);
  for (int b = 0; b < 2; ++b)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        size_t i = static_cast<size_t>((b * 3 + r) * 4 + c);
        REQUIRE(mid.data[i] == a.data[i] + bias.data[static_cast<size_t>(c)]);
      }
  g.backward();
  for (float v : bias.grad) REQUIRE(v == 6.0f);     // 2*3 positions
  for (float v : rowmask.grad) REQUIRE(v == 3.0f);  // 3 rows each
}

TEST_CASE("slice and concat round-trip; transpose swaps the last two dims", "[graph]") {
  Rng rng(5);
  Tensor x = randn(rng, {2, 3, 6}, 1.0f);
  Graph g;
  int xi = g.input(x);
  int lo = g.slice_last(xi, 0, 2);
  int hi = g.slice_last(xi, 2, 4);
  g.concat_last({lo, hi});
  REQUIRE(g.forward().data == x.data);

  Graph t;
  t.transpose_last2(t.input(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6})));
  REQUIRE(t.forward().data == std::vector<float>({1, 4, 2, 5, 3, 6}));
}

TEST_CASE("embedding gathers rows and scatters gradients, duplicates included", "[graph]") {
  Tensor table = Tensor::from({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
  table.requires_grad = true;
  Graph g;
  int tab = g.leaf(&table);
  int emb = g.embed({3, 0, 3}, {3}, tab);
  g.sum_all(emb);
  g.forward();
  REQUIRE(g.out(emb).data == std::vector<float>({30, 31, 0, 1, 30, 31}));
  g.backward();
  REQUIRE(table.grad == std::vector<float>({1, 1, 0, 0, 0, 0, 2, 2}));
}

TEST_CASE("mlp mse gradients match central finite differences", "[graph]") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    MlpFixture f(seed);
    Graph g = f.build();
    g.forward();
    for (Tensor* p : {&f.w1, &f.b1, &f.w2, &f.b2}) {
      p->grad.clear();
      p->ensure_grad();
    }
    g.backward();
    const double h = 1e-3;
    for (Tensor* p : {&f.w1, &f.b1, &f.w2, &f.b2}) {
      for (size_t i = 0; i < p->data.size(); ++i) {
        float saved = p->data[i];
        p->data[i] = saved + static_cast<float>(h);
        g.invalidate();
        double fp = g.forward().data[0];
        p->data[i] = saved - static_cast<float>(h);
        g.invalidate();
        double fm = g.forward().data[0];
        p->data[i] = saved;
        double fd = (fp - fm) / (2.0 * h);
        INFO("seed " << seed << " elem " << i);
        REQUIRE(rel_err(p->grad[i], fd) < 1e-3);
      }
    }
  }
}

TEST_CASE("check_gradients passes on an attention block and flags a corrupted rule", "[graph]") {
  Rng rng(21);
  const int B = 2, L = 4, d = 8, hd = 4;
  Tensor x = randn(rng, {B, L, d}, 1.0f);
  Tensor wq = randn(rng, {d, d}, 0.4f), wk = randn(rng, {d, d}, 0.4f);
  Tensor wv = randn(rng, {d, d}, 0.4f), wo = randn(rng, {d, d}, 0.4f);
  for (Tensor* p : {&x, &wq, &wk, &wv, &wo}) p->requires_grad = true;

  Tensor causal = Tensor::zeros({L, L});
  for (int i = 0; i < L; ++i)
    for (int j = i + 1; j < L; ++j) causal.data[static_cast<size_t>(i) * L + j] = -1e9f;

  auto build = [&](Graph& g) {
    int xi = g.leaf(&x, "x");
    int q = g.matmul(xi, g.leaf(&wq, "wq"));
    int k = g.matmul(xi, g.leaf(&wk, "wk"));
    int v = g.matmul(xi, g.leaf(&wv, "wv"));
    int mask = g.input(causal);
    std::vector<int> heads;
    for (int h0 = 0; h0 < d; h0 += hd) {
      int qs = g.slice_last(q, h0, hd);
      int ks = g.slice_last(k, h0, hd);
      int vs = g.slice_last(v, h0, hd);
      int sc = g.scale(g.matmul(qs, g.transpose_last2(ks)), 0.5f);
      int pr = g.softmax_last(g.add(sc, mask));
      heads.push_back(g.matmul(pr, vs));
    }
    int ctx = g.concat_last(heads);
    int out = g.matmul(ctx, g.leaf(&wo, "wo"));
    g.mean_all(g.mul(out, out));
  };

  Graph good;
  build(good);
  GradCheckReport rep = check_gradients(good, 1e-3, 1e-3);
  REQUIRE(rep.entries.size() == 5);
  REQUIRE(rep.pass);

  Graph bad;
  build(bad);
  bad.set_leaf_grad_scale_for_tests(1.05f);
  REQUIRE_FALSE(check_gradients(bad, 1e-3, 1e-3).pass);
}

TEST_CASE("identical seeds rebuild bit-identical graphs", "[graph]") {
  auto run = [] {
    Rng rng(99);
    Tensor x = randn(rng, {3, 5}, 1.0f);
    Tensor w = randn(rng, {5, 4}, 0.5f);
    w.requires_grad = true;
    Graph g;
    g.mean_all(g.relu(g.matmul(g.input(x), g.leaf(&w))));
    g.forward();
    g.backward();
    return std::make_pair(g.out(g.size() - 1).data, w.grad);
  };
  auto [o1, g1] = run();
  auto [o2, g2] = run();
  REQUIRE(o1 == o2);
  REQUIRE(g1 == g2);
}

TEST_CASE("state and shape errors are explicit", "[graph]") {
  Graph g;
  Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4});
  w.requires_grad = true;
  g.sum_all(g.leaf(&w));
  REQUIRE_THROWS_AS(g.backward(), StateError);

  Graph bad;
  int a = bad.input(Tensor::zeros({2, 3}));
  int b = bad.input(Tensor::zeros({2, 3}));
  REQUIRE_THROWS_AS(bad.matmul(a, b), ShapeError);

  Graph nan_graph;
  Tensor poison = Tensor::from({2}, {1.0f, std::numeric_limits<float>::infinity()});
  nan_graph.scale(nan_graph.input(poison, "poison"), 1.0f);
  REQUIRE_THROWS_AS(nan_graph.forward(), DivergenceError);
}
