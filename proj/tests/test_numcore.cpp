#include "doctest.h"

#include "poseshift/numcore/checkpoint.hpp"
#include "poseshift/numcore/gradcheck.hpp"
#include "poseshift/numcore/ops.hpp"
#include "poseshift/numcore/paramset.hpp"
#include "poseshift/numcore/rng.hpp"
#include "poseshift/numcore/tensor.hpp"

#include <cstdio>
#include <vector>

using namespace poseshift::num;

namespace {

ArrX<double> arr(std::initializer_list<double> v) {
  ArrX<double> a(static_cast<std::int64_t>(v.size()));
  std::int64_t i = 0;
  for (double x : v) a[i++] = x;
  return a;
}

using LossFn = std::function<Tensor<double>(ParamSet<double>&)>;

double fd_err(ParamSet<double>& ps, const LossFn& fn, int probes = 40) {
  return check_gradients(ps, fn, probes, RngStream::root(77));
}

// Random weights so reductions do not hide sign errors.
Tensor<double> weighted_sum(const Tensor<double>& t, std::uint64_t seed) {
  RngStream rng = RngStream::root(seed);
  auto w = randn<double>(t->shape, rng);
  return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("sum of squares gradient is 2p") {
  ParamSet<double> ps;
  ps.add("p", {3}, arr({1, 2, 3}));
  auto grads = grad_of<double>([](ParamSet<double>& p) { return sum_all(square(p.at("p"))); }, ps);
  CHECK(grads["p"][0] == doctest::Approx(2));
  CHECK(grads["p"][1] == doctest::Approx(4));
  CHECK(grads["p"][2] == doctest::Approx(6));
}

TEST_CASE("constant loss yields zero gradients") {
  ParamSet<double> ps;
  ps.add("p", {4}, arr({1, -1, 2, 0.5}));
  auto grads = grad_of<double>([](ParamSet<double>&) { return scalar<double>(3.5); }, ps);
  CHECK((grads["p"] == 0.0).all());
  CHECK(check_gradients(ps, [](ParamSet<double>&) { return scalar<double>(3.5); }, 20) == 0.0);
}

TEST_CASE("linear model squared loss matches finite differences tightly") {
  RngStream rng = RngStream::root(11);
  ParamSet<double> ps;
  ps.add("w", {5, 3}, randn_array<double>(15, rng));
  ps.add("b", {1, 3}, randn_array<double>(3, rng));
  auto x = randn<double>({7, 5}, rng);
  auto y = randn<double>({7, 3}, rng);
  LossFn fn = [x, y](ParamSet<double>& p) {
    auto pred = add(matmul(x, p.at("w")), broadcast_rows(p.at("b"), 7));
    return mse(pred, y);
  };
  CHECK(fd_err(ps, fn, 60) < 1e-8);
}

TEST_CASE("three layer perceptron passes 100-probe finite difference check") {
  RngStream rng = RngStream::root(42);
  ParamSet<double> ps;
  ps.add("w1", {6, 16}, randn_array<double>(96, rng) * 0.5);
  ps.add("b1", {1, 16}, randn_array<double>(16, rng) * 0.1);
  ps.add("w2", {16, 16}, randn_array<double>(256, rng) * 0.3);
  ps.add("b2", {1, 16}, randn_array<double>(16, rng) * 0.1);
  ps.add("w3", {16, 1}, randn_array<double>(16, rng) * 0.3);
  ps.add("b3", {1, 1}, randn_array<double>(1, rng) * 0.1);
  auto x = randn<double>({8, 6}, rng);
  auto y = randn<double>({8, 1}, rng);
  LossFn fn = [x, y](ParamSet<double>& p) {
    auto h1 = tanh(add(matmul(x, p.at("w1")), broadcast_rows(p.at("b1"), 8)));
    auto h2 = tanh(add(matmul(h1, p.at("w2")), broadcast_rows(p.at("b2"), 8)));
    auto out = add(matmul(h2, p.at("w3")), broadcast_rows(p.at("b3"), 8));
    return mse(out, y);
  };
  CHECK(check_gradients(ps, fn, 100, RngStream::root(7)) < 1e-4);
}

TEST_CASE("elementwise primitives pass finite difference checks") {
  RngStream rng = RngStream::root(5);
  auto fresh = [&](double scale, double shift) {
    ParamSet<double> ps;
    ps.add("x", {3, 4}, randn_array<double>(12, rng) * scale + shift);
    return ps;
  };
  auto other = randn<double>({3, 4}, rng);

  struct Case {
    const char* name;
    double scale, shift;
    std::function<Tensor<double>(const Tensor<double>&)> op;
  };
  std::vector<Case> cases = {
      {"add", 1, 0, [&](const Tensor<double>& x) { return add(x, other); }},
      {"sub", 1, 0, [&](const Tensor<double>& x) { return sub(other, x); }},
      {"mul", 1, 0, [&](const Tensor<double>& x) { return mul(x, other); }},
      {"div_num", 1, 0, [&](const Tensor<double>& x) { return div(x, add_scalar(square(other), 0.5)); }},
      {"div_den", 0.3, 2.0, [&](const Tensor<double>& x) { return div(other, x); }},
      {"add_scalar", 1, 0, [](const Tensor<double>& x) { return add_scalar(x, 1.7); }},
      {"mul_scalar", 1, 0, [](const Tensor<double>& x) { return mul_scalar(x, -2.3); }},
      {"exp", 0.8, 0, [](const Tensor<double>& x) { return exp(x); }},
      {"log", 0.3, 2.0, [](const Tensor<double>& x) { return log(x); }},
      {"sqrt", 0.3, 2.0, [](const Tensor<double>& x) { return sqrt(x); }},
      {"tanh", 1, 0, [](const Tensor<double>& x) { return tanh(x); }},
      {"sigmoid", 1.5, 0, [](const Tensor<double>& x) { return sigmoid(x); }},
      {"softplus", 1.5, 0, [](const Tensor<double>& x) { return softplus(x); }},
      {"silu", 1.5, 0, [](const Tensor<double>& x) { return silu(x); }},
      {"abs", 1, 3.0, [](const Tensor<double>& x) { return abs(x); }},
      {"square", 1, 0, [](const Tensor<double>& x) { return square(x); }},
  };
  for (auto& c : cases) {
    CAPTURE(c.name);
    auto ps = fresh(c.scale, c.shift);
    LossFn fn = [&c](ParamSet<double>& p) { return weighted_sum(c.op(p.at("x")), 99); };
    CHECK(fd_err(ps, fn) < 1e-6);
  }
}

TEST_CASE("clamp passes through inside the range and blocks outside") {
  ParamSet<double> ps;
  ps.add("x", {4}, arr({-2.0, -0.5, 0.5, 2.0}));
  auto grads = grad_of<double>(
      [](ParamSet<double>& p) { return sum_all(clamp(p.at("x"), -1.0, 1.0)); }, ps);
  CHECK(grads["x"][0] == 0.0);
  CHECK(grads["x"][1] == 1.0);
  CHECK(grads["x"][2] == 1.0);
  CHECK(grads["x"][3] == 0.0);
}

TEST_CASE("matmul gradient is correct for every transpose combination") {
  RngStream rng = RngStream::root(21);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      CAPTURE(ta);
      CAPTURE(tb);
      ParamSet<double> ps;
      Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
      Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
      ps.add("a", sa, randn_array<double>(12, rng));
      ps.add("b", sb, randn_array<double>(20, rng));
      LossFn fn = [ta, tb](ParamSet<double>& p) {
        return weighted_sum(matmul(p.at("a"), p.at("b"), ta, tb), 3);
      };
      CHECK(fd_err(ps, fn, 32) < 1e-7);
    }
}

TEST_CASE("gather and scatter_add are adjoint and differentiable") {
  RngStream rng = RngStream::root(31);
  auto idx = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{0, 2, 2, 5, -1, 3, 0, 1});

  SUBCASE("adjoint identity") {
    auto x = randn<double>({6}, rng);
    auto y = randn<double>({8}, rng);
    auto lhs = sum_all(mul(gather(x, idx, {8}), y));
    auto rhs = sum_all(mul(x, scatter_add(y, idx, {6})));
    CHECK(lhs->value[0] == doctest::Approx(rhs->value[0]).epsilon(1e-12));
  }
  SUBCASE("gather gradient") {
    ParamSet<double> ps;
    ps.add("x", {6}, randn_array<double>(6, rng));
    LossFn fn = [idx](ParamSet<double>& p) { return weighted_sum(gather(p.at("x"), idx, {8}), 4); };
    CHECK(fd_err(ps, fn, 12) < 1e-8);
  }
  SUBCASE("scatter gradient") {
    ParamSet<double> ps;
    ps.add("x", {8}, randn_array<double>(8, rng));
    LossFn fn = [idx](ParamSet<double>& p) { return weighted_sum(scatter_add(p.at("x"), idx, {6}), 4); };
    CHECK(fd_err(ps, fn, 16) < 1e-8);
  }
  SUBCASE("out of range raises") {
    auto x = randn<double>({3}, rng);
    auto bad = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{0, 7});
    CHECK_THROWS_AS(gather(x, bad, {2}), std::out_of_range);
  }
}

TEST_CASE("scans, reductions and column ops have correct values and gradients") {
  RngStream rng = RngStream::root(53);

  SUBCASE("cumsum values") {
    auto x = from_array<double>({2, 3}, arr({1, 2, 3, 10, 20, 30}));
    auto c = cumsum_last(x);
    CHECK(c->value[2] == 6);
    CHECK(c->value[5] == 60);
    auto r = rev_cumsum_last(x);
    CHECK(r->value[0] == 6);
    CHECK(r->value[3] == 60);
  }
  SUBCASE("gradients") {
    struct Case {
      const char* name;
      std::function<Tensor<double>(const Tensor<double>&)> op;
    };
    std::vector<Case> cases = {
        {"cumsum_last", [](const Tensor<double>& x) { return cumsum_last(x); }},
        {"rev_cumsum_last", [](const Tensor<double>& x) { return rev_cumsum_last(x); }},
        {"rowsum", [](const Tensor<double>& x) { return rowsum(x); }},
        {"colsum", [](const Tensor<double>& x) { return colsum(x); }},
        {"sum_all", [](const Tensor<double>& x) { return sum_all(x); }},
        {"slice_cols", [](const Tensor<double>& x) { return slice_cols(x, 1, 2); }},
        {"pad_cols", [](const Tensor<double>& x) { return pad_cols(x, 2, 9); }},
        {"reshape", [](const Tensor<double>& x) { return reshape(x, {4, 5}); }},
        {"concat_self", [](const Tensor<double>& x) { return concat_cols(x, square(x)); }},
        {"broadcast_via_rowsum", [](const Tensor<double>& x) { return broadcast_cols(rowsum(x), 7); }},
        {"broadcast_via_colsum", [](const Tensor<double>& x) { return broadcast_rows(colsum(x), 6); }},
    };
    for (auto& c : cases) {
      CAPTURE(c.name);
      ParamSet<double> ps;
      ps.add("x", {4, 5}, randn_array<double>(20, rng));
      LossFn fn = [&c](ParamSet<double>& p) { return weighted_sum(c.op(p.at("x")), 8); };
      CHECK(fd_err(ps, fn, 24) < 1e-7);
    }
  }
}

TEST_CASE("cross entropy matches the explicit log-softmax formula") {
  RngStream rng = RngStream::root(61);
  ParamSet<double> ps;
  ps.add("z", {4, 5}, randn_array<double>(20, rng) * 2.0);
  std::vector<int> labels{0, 3, 2, 4};

  auto ce = cross_entropy(ps.at("z"), labels);
  double expect = 0;
  for (int i = 0; i < 4; ++i) {
    double denom = 0;
    for (int j = 0; j < 5; ++j) denom += std::exp(ps.at("z")->value[i * 5 + j]);
    expect += -std::log(std::exp(ps.at("z")->value[i * 5 + labels[i]]) / denom);
  }
  expect /= 4;
  CHECK(ce->value[0] == doctest::Approx(expect).epsilon(1e-12));

  LossFn fn = [&labels](ParamSet<double>& p) { return cross_entropy(p.at("z"), labels); };
  CHECK(fd_err(ps, fn, 30) < 1e-5);
}

TEST_CASE("take_rows and argmax_rows behave") {
  auto x = from_array<double>({3, 2}, arr({1, 9, 5, 2, 7, 3}));
  auto t = take_rows(x, {2, 0});
  CHECK(t->shape == Shape{2, 2});
  CHECK(t->value[0] == 7);
  CHECK(t->value[3] == 9);
  auto am = argmax_rows(x);
  CHECK(am == std::vector<int>{1, 0, 0});
}

TEST_CASE("gradients are themselves differentiable") {
  SUBCASE("second derivative of cubic") {
    ParamSet<double> ps;
    ps.add("x", {3}, arr({0.5, -1.2, 2.0}));
    auto& x = ps.at("x");
    auto loss = sum_all(mul(x, square(x)));  // sum x^3
    auto gx = backward(loss).get(x);
    REQUIRE(gx != nullptr);
    // gx = 3x^2; differentiate sum(gx^2) = sum 9x^4 -> 36x^3
    auto loss2 = sum_all(square(gx));
    auto g2 = backward(loss2).array(x);
    for (int i = 0; i < 3; ++i) {
      double xi = x->value[i];
      CHECK(g2[i] == doctest::Approx(36 * xi * xi * xi).epsilon(1e-10));
    }
  }
  SUBCASE("gradient-penalty style double backward") {
    // score = sum(w * x); the input-gradient is w, so d/dw of |grad_x|^2 = 2w.
    RngStream rng = RngStream::root(17);
    ParamSet<double> ps;
    ps.add("w", {5}, randn_array<double>(5, rng));
    auto x = from_array<double>({5}, randn_array<double>(5, rng), /*requires_grad=*/true);
    auto score = sum_all(mul(ps.at("w"), x));
    auto gx = backward(score).get(x);
    REQUIRE(gx != nullptr);
    auto penalty = sum_all(square(gx));
    auto gw = backward(penalty).array(ps.at("w"));
    for (int i = 0; i < 5; ++i) CHECK(gw[i] == doctest::Approx(2 * ps.at("w")->value[i]).epsilon(1e-12));
    // and via finite differences on the full pipeline
    LossFn fn = [x](ParamSet<double>& p) {
      auto s = sum_all(mul(p.at("w"), x));
      return sum_all(square(backward(s).get(x)));
    };
    CHECK(fd_err(ps, fn, 10) < 1e-7);
  }
}

TEST_CASE("adam first step moves a unit-gradient scalar by about lr") {
  ParamSet<double> ps;
  ps.add("p", {1}, arr({0}));
  GradMap<double> g{{"p", arr({1})}};
  adam_step<double>(ps, g, 0.002);
  CHECK(ps.at("p")->value[0] == doctest::Approx(-0.002).epsilon(1e-6));
  CHECK(ps.items["p"].step == 1);
}

TEST_CASE("adam with zero gradients and fresh state leaves parameters unchanged") {
  ParamSet<double> ps;
  ps.add("p", {3}, arr({1, 2, 3}));
  GradMap<double> g{{"p", ArrX<double>::Zero(3)}};
  adam_step<double>(ps, g, 0.1);
  CHECK(ps.at("p")->value[0] == 1.0);
  CHECK(ps.at("p")->value[1] == 2.0);
  CHECK(ps.at("p")->value[2] == 3.0);
}

TEST_CASE("adam is deterministic after state reset") {
  RngStream rng = RngStream::root(3);
  auto run = [&](ParamSet<double>& ps) {
    GradMap<double> g{{"p", arr({0.3, -0.7})}};
    for (int i = 0; i < 5; ++i) adam_step<double>(ps, g, 0.01);
    return ps.at("p")->value;
  };
  ParamSet<double> ps;
  ps.add("p", {2}, arr({0.1, 0.2}));
  auto a = run(ps);
  ps.at("p")->value = arr({0.1, 0.2});
  ps.reset_optimizer();
  auto b = run(ps);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
}

TEST_CASE("adam rejects unknown names and mismatched shapes") {
  ParamSet<double> ps;
  ps.add("p", {2}, arr({0, 0}));
  GradMap<double> bad_name{{"q", arr({1, 1})}};
  CHECK_THROWS_AS(adam_step<double>(ps, bad_name, 0.01), std::invalid_argument);
  GradMap<double> bad_shape{{"p", arr({1, 1, 1})}};
  CHECK_THROWS_AS(adam_step<double>(ps, bad_shape, 0.01), std::invalid_argument);
}

TEST_CASE("verification mode raises on non-finite values") {
  auto x = from_array<double>({2}, arr({1, 0}));
  CHECK_THROWS_AS(div(x, x), NumericalError);  // 0/0
  auto y = from_array<double>({1}, arr({800}));
  CHECK_THROWS_AS(exp(y), NumericalError);  // overflow to inf
}

TEST_CASE("backward rejects non-scalar losses and unregistered primitives") {
  auto x = from_array<double>({3}, arr({1, 2, 3}), true);
  CHECK_THROWS_AS(backward(square(x)), std::invalid_argument);
  auto mystery = make_node<double>({3}, x->value, "mystery", {x}, nullptr);
  CHECK_THROWS_AS(backward(sum_all(mystery)), std::logic_error);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  auto x = from_array<double>({2}, arr({1, 2}), true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = square(x);
  }
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
  auto z = sum_all(square(x));
  auto table = backward(z);
  CHECK(table.get(y) == nullptr);
}

TEST_CASE("rng streams are counter-based and splittable") {
  auto a = RngStream::root(123);
  auto b = RngStream::root(123);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());

  auto c = RngStream::root(123);
  auto d = c.split("data");
  auto e = c.split("init");
  CHECK(d.next_u64() != e.next_u64());
  CHECK(c.split(0).next_u64() != c.split(1).next_u64());

  // a normal draw consumes exactly two counter positions
  auto f = RngStream::root(9);
  (void)f.normal();
  CHECK(f.counter() == 2);

  auto g = RngStream::root(55);
  double mean = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = g.normal();
    mean += v;
    sq += v * v;
  }
  mean /= n;
  sq = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq - 1.0) < 0.05);

  auto h = RngStream::root(56);
  for (int i = 0; i < 1000; ++i) {
    double u = h.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("checkpoints round-trip bitwise including optimizer state") {
  const char* path = "numcore_ckpt_test.bin";
  RngStream rng = RngStream::root(88);
  ParamSet<double> ps;
  ps.add("layer.w", {3, 4}, randn_array<double>(12, rng));
  ps.add("layer.b", {1, 4}, randn_array<double>(4, rng));
  GradMap<double> g{{"layer.w", randn_array<double>(12, rng)}, {"layer.b", randn_array<double>(4, rng)}};
  adam_step<double>(ps, g, 0.01);
  save_params(path, ps, /*include_optimizer_state=*/true);

  ParamSet<double> qs;
  qs.add("layer.w", {3, 4}, ArrX<double>::Zero(12));
  qs.add("layer.b", {1, 4}, ArrX<double>::Zero(4));
  load_params(path, qs);
  CHECK((qs.at("layer.w")->value == ps.at("layer.w")->value).all());
  CHECK((qs.at("layer.b")->value == ps.at("layer.b")->value).all());
  CHECK((qs.items["layer.w"].m == ps.items["layer.w"].m).all());
  CHECK((qs.items["layer.w"].v == ps.items["layer.w"].v).all());
  CHECK(qs.items["layer.w"].step == 1);

  SUBCASE("missing parameter raises") {
    ParamSet<double> rs;
    rs.add("other", {2}, ArrX<double>::Zero(2));
    CHECK_THROWS_AS(load_params(path, rs), CheckpointError);
  }
  SUBCASE("shape mismatch raises") {
    ParamSet<double> rs;
    rs.add("layer.w", {4, 3}, ArrX<double>::Zero(12));
    CHECK_THROWS_AS(load_params(path, rs), CheckpointError);
  }
  SUBCASE("float load casts") {
    ParamSet<float> fs;
    fs.add("layer.w", {3, 4}, ArrX<float>::Zero(12));
    fs.add("layer.b", {1, 4}, ArrX<float>::Zero(4));
    load_params(path, fs);
    CHECK(fs.at("layer.w")->value[5] == doctest::Approx(ps.at("layer.w")->value[5]));
  }
  std::remove(path);
}

TEST_CASE("tensor file containers store int and float payloads") {
  const char* path = "numcore_blob_test.bin";
  TensorFile tf;
  ArrX<float> img(6);
  for (int i = 0; i < 6; ++i) img[i] = 0.5f * i;
  tf["images"] = stored_from<float>({2, 3}, img);
  tf["labels"] = stored_from_ints({2}, {4, 7});
  save_tensors(path, tf);
  auto back = load_tensors(path);
  CHECK(back.at("images").shape == Shape{2, 3});
  CHECK(back.at("images").f32[3] == 1.5f);
  CHECK(back.at("labels").i32[1] == 7);
  CHECK_THROWS_AS(load_tensors("does_not_exist.bin"), CheckpointError);
  std::remove(path);
}
