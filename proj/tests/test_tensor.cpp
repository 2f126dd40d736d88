#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "gemdepth/gradcheck.hpp"
#include "gemdepth/io.hpp"
#include "gemdepth/ops.hpp"
#include "gemdepth/tensor.hpp"

using namespace gemdepth;

namespace {

Tensor rand_t(Shape shape, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// Scalar probe: sum(op_output * r) with a fixed random weighting so every
// output element contributes a distinct gradient.
Tensor probe(const Tensor& y, uint64_t seed = 99) {
  Tensor r = rand_t(y.shape(), seed, 0.25f, 1.75f);
  return sum_all(mul(y, r));
}

}  // namespace

TEST_CASE("matmul forward examples") {
  // identity case
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  Tensor y = matmul(eye, b);
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == b.data()[i]);

  // hand-evaluated dot product
  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor c = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, c).item() == doctest::Approx(11.0).epsilon(1e-7));

  CHECK_THROWS_AS(matmul(c, c), std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
  // gradient of sum(A*B) w.r.t. A at fixed B of ones -> row sums of B^T
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor bconst = Tensor::full({2, 2}, 1.0f);
  auto f = [&](const Tensor& x) { return sum_all(matmul(x, bconst)); };
  Tensor leaf = a.detach_copy();
  leaf.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = f(leaf);
    tape.backward(out);
  }
  for (int i = 0; i < 4; ++i)
    CHECK(leaf.grad_view()[i] == doctest::Approx(2.0).epsilon(1e-6));

  auto rep = grad_check(f, a, 1e-3, 1e-3);
  CHECK(rep.pass);

  // batched and shared-right variants
  auto rep3 = grad_check(
      [&](const Tensor& x) {
        Tensor w = rand_t({3, 4, 2}, 7);
        return probe(matmul(reshape(x, {3, 2, 4}), w));
      },
      rand_t({3, 2, 4}, 3), 1e-2, 1e-3);
  CHECK(rep3.pass);
  auto repb = grad_check(
      [&](const Tensor& x) {
        Tensor a3 = rand_t({3, 2, 4}, 11);
        return probe(matmul(a3, reshape(x, {4, 3})));
      },
      rand_t({4, 3}, 5), 1e-2, 1e-3);
  CHECK(repb.pass);
}

TEST_CASE("softmax examples and properties") {
  Tensor s1 = softmax(Tensor::from_data({3}, {0, 0, 0}), -1);
  for (int i = 0; i < 3; ++i)
    CHECK(s1.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));

  // stabilization: huge logits must not overflow
  Tensor s2 = softmax(Tensor::from_data({2}, {1000, 1000}), -1);
  CHECK(s2.data()[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(s2.data()[1]));

  Tensor s3 = softmax(Tensor::from_data({2}, {0.0f, std::log(3.0f)}), -1);
  CHECK(s3.data()[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(s3.data()[1] == doctest::Approx(0.75).epsilon(1e-6));

  // rows sum to 1 for any finite input, any axis
  Tensor x = rand_t({4, 5, 6}, 21, -30.0f, 30.0f);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor sm = softmax(x, axis);
    Tensor sums = sum_axis(sm, axis);
    for (float v : sums.data()) CHECK(std::fabs(v - 1.0f) < 1e-6f);
  }
}

TEST_CASE("layernorm examples") {
  Tensor gain = Tensor::full({3}, 1.0f);
  Tensor bias = Tensor::zeros({3});
  Tensor y = layernorm(Tensor::from_data({1, 3}, {5, 5, 5}), gain, bias);
  for (float v : y.data()) CHECK(v == doctest::Approx(0.0));

  Tensor gain2 = Tensor::full({2}, 1.0f);
  Tensor bias2 = Tensor::zeros({2});
  Tensor y2 = layernorm(Tensor::from_data({1, 2}, {1, -1}), gain2, bias2);
  CHECK(y2.data()[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y2.data()[1] == doctest::Approx(-1.0).epsilon(1e-4));

  Tensor x8 = rand_t({1, 8}, 17);
  Tensor g8 = rand_t({8}, 18, 0.5f, 1.5f);
  Tensor b8 = rand_t({8}, 19);
  auto rep = grad_check(
      [&](const Tensor& x) { return probe(layernorm(x, g8, b8)); }, x8, 1e-3,
      1e-3);
  CHECK(rep.pass);
  auto repg = grad_check(
      [&](const Tensor& g) { return probe(layernorm(x8, g, b8)); }, g8, 1e-3,
      1e-3);
  CHECK(repg.pass);
}

TEST_CASE("grad_check oracle examples") {
  // f(x)=sum(x^2) at x=3: analytic 6, numeric 6 within 1e-4
  auto f = [](const Tensor& x) { return sum_all(mul(x, x)); };
  Tensor x = Tensor::from_data({1}, {3.0f});
  Tensor leaf = x.detach_copy();
  leaf.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = f(leaf);
    tape.backward(out);
  }
  CHECK(leaf.grad_view()[0] == doctest::Approx(6.0).epsilon(1e-7));
  auto rep = grad_check(f, x, 1e-2, 1e-3);
  CHECK(rep.pass);
  CHECK(rep.max_abs_err < 1e-4);

  // linear function: gradient exactly ones
  Tensor xr = rand_t({7}, 4);
  Tensor leaf2 = xr.detach_copy();
  leaf2.set_requires_grad(true);
  Tape tape2;
  {
    TapeScope scope(tape2);
    Tensor out = sum_all(leaf2);
    tape2.backward(out);
  }
  for (float g : leaf2.grad_view()) CHECK(g == 1.0f);

  CHECK_THROWS_AS(
      grad_check([](const Tensor& x2) { return smul(x2, 2.0f); },
                 rand_t({3}, 5)),
      std::invalid_argument);
}

TEST_CASE("finite-difference sweep over primitives") {
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    Tensor x;
  };
  Tensor pos = rand_t({2, 6}, 31, 0.5f, 2.0f);
  Tensor any = rand_t({2, 6}, 32, -2.0f, 2.0f);
  Tensor other = rand_t({2, 6}, 33, -1.0f, 1.0f);
  std::vector<Case> cases = {
      {"add", [&](const Tensor& x) { return probe(add(x, other)); }, any},
      {"sub", [&](const Tensor& x) { return probe(sub(other, x)); }, any},
      {"mul", [&](const Tensor& x) { return probe(mul(x, other)); }, any},
      {"smul", [&](const Tensor& x) { return probe(smul(x, -1.7f)); }, any},
      {"sadd", [&](const Tensor& x) { return probe(sadd(x, 0.3f)); }, any},
      {"neg", [&](const Tensor& x) { return probe(neg(x)); }, any},
      {"exp", [&](const Tensor& x) { return probe(exp_t(x)); }, other},
      {"log", [&](const Tensor& x) { return probe(log_t(x)); }, pos},
      {"sqrt", [&](const Tensor& x) { return probe(sqrt_t(x)); }, pos},
      {"recip", [&](const Tensor& x) { return probe(recip(x)); }, pos},
      {"gelu", [&](const Tensor& x) { return probe(gelu(x)); }, any},
      {"softplus", [&](const Tensor& x) { return probe(softplus(x)); }, any},
      {"huber_quad", [&](const Tensor& x) { return probe(huber(x, 1.0f)); },
       rand_t({2, 6}, 34, -0.8f, 0.8f)},
      {"huber_lin", [&](const Tensor& x) { return probe(huber(x, 1.0f)); },
       rand_t({2, 6}, 34, 1.2f, 2.0f)},
      {"clamp_min",
       [&](const Tensor& x) { return probe(clamp_min(x, 0.2f)); },
       rand_t({2, 6}, 35, 0.5f, 2.0f)},
      {"abs", [&](const Tensor& x) { return probe(abs_t(x)); },
       rand_t({2, 6}, 36, 0.3f, 2.0f)},
      {"scale_by",
       [&](const Tensor& x) { return probe(scale_by(x, Tensor::scalar(1.3f))); },
       any},
      {"scale_by_s",
       [&](const Tensor& s) { return probe(scale_by(other, s)); },
       Tensor::scalar(0.7f)},
      {"shift_by",
       [&](const Tensor& s) { return probe(shift_by(other, s)); },
       Tensor::scalar(-0.4f)},
      {"add_bias",
       [&](const Tensor& b) { return probe(add_bias(any, b)); },
       rand_t({6}, 37)},
      {"mul_rowvec",
       [&](const Tensor& v) { return probe(mul_rowvec(any, v)); },
       rand_t({6}, 38)},
      {"scale_rows",
       [&](const Tensor& s) { return probe(scale_rows(any, s)); },
       rand_t({2, 1}, 39, 0.5f, 1.5f)},
      {"softmax", [&](const Tensor& x) { return probe(softmax(x, -1)); }, any},
      {"reshape",
       [&](const Tensor& x) { return probe(reshape(x, {3, 4})); }, any},
      {"transpose",
       [&](const Tensor& x) { return probe(transpose(x, {1, 0})); }, any},
      {"slice",
       [&](const Tensor& x) { return probe(slice(x, 1, 1, 3)); }, any},
      {"tile_axis",
       [&](const Tensor& x) { return probe(tile_axis(reshape(x, {2, 1, 6}), 1, 4)); },
       any},
      {"sum_axis",
       [&](const Tensor& x) { return probe(sum_axis(x, 0)); }, any},
      {"mean_axis",
       [&](const Tensor& x) { return probe(mean_axis(x, 1)); }, any},
      {"mean_all", [&](const Tensor& x) { return mean_all(x); }, any},
  };
  for (auto& c : cases) {
    auto rep = grad_check(c.f, c.x, 5e-3, 1e-3, 0.1, c.name);
    INFO("op ", std::string(c.name), " max rel err ", rep.max_rel_err);
    CHECK(rep.pass);
  }
}

TEST_CASE("finite differences: broadcast token/seq ops, embedding, rope, quat") {
  Tensor x3 = rand_t({2, 3, 4}, 41);
  Tensor v2 = rand_t({2, 4}, 42);
  Tensor e2 = rand_t({3, 4}, 43);
  auto rep1 = grad_check(
      [&](const Tensor& x) { return probe(add_token_bias(x, v2)); }, x3, 5e-3,
      1e-3);
  CHECK(rep1.pass);
  auto rep2 = grad_check(
      [&](const Tensor& v) { return probe(add_token_bias(x3, v)); }, v2, 5e-3,
      1e-3);
  CHECK(rep2.pass);
  auto rep3 = grad_check(
      [&](const Tensor& e) { return probe(add_seq_bias(x3, e)); }, e2, 5e-3,
      1e-3);
  CHECK(rep3.pass);

  Tensor table = rand_t({5, 4}, 44);
  std::vector<int64_t> idx = {0, 3, 3, 1};
  auto rep4 = grad_check(
      [&](const Tensor& t) { return probe(embedding(t, idx)); }, table, 5e-3,
      1e-3);
  CHECK(rep4.pass);

  std::vector<std::pair<int, int>> positions = {{0, 0}, {1, 2}, {3, 1}};
  Tensor xr = rand_t({2, 3, 8}, 45);
  auto rep5 = grad_check(
      [&](const Tensor& x) { return probe(rope2d(x, positions)); }, xr, 5e-3,
      1e-3);
  CHECK(rep5.pass);

  Tensor qa = l2normalize_rows(rand_t({3, 4}, 46));
  Tensor qb = rand_t({3, 4}, 47);
  auto rep6 = grad_check(
      [&](const Tensor& q) { return probe(quat_mul(q, qb)); }, qa, 5e-3, 1e-3);
  CHECK(rep6.pass);
  Tensor v3 = rand_t({3, 3}, 48);
  auto rep7 = grad_check(
      [&](const Tensor& q) { return probe(quat_rotate(l2normalize_rows(q), v3)); },
      qa, 5e-3, 1e-2);
  CHECK(rep7.pass);
  auto rep8 = grad_check(
      [&](const Tensor& x) { return probe(l2normalize_rows(x)); },
      rand_t({3, 4}, 49, 0.5f, 1.5f), 5e-3, 1e-3);
  CHECK(rep8.pass);
}

TEST_CASE("rope2d structure") {
  // zero position -> identity
  std::vector<std::pair<int, int>> zero_pos = {{0, 0}};
  Tensor x = rand_t({1, 1, 8}, 51);
  Tensor y = rope2d(x, zero_pos);
  for (int i = 0; i < 8; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  // norm preservation for arbitrary positions
  std::vector<std::pair<int, int>> pos = {{5, 2}, {1, 7}, {3, 3}, {0, 6}};
  Tensor x2 = rand_t({3, 4, 16}, 52);
  Tensor y2 = rope2d(x2, pos);
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t t = 0; t < 4; ++t) {
      double n_in = 0, n_out = 0;
      for (int64_t d = 0; d < 16; ++d) {
        n_in += x2.data()[(r * 4 + t) * 16 + d] * x2.data()[(r * 4 + t) * 16 + d];
        n_out += y2.data()[(r * 4 + t) * 16 + d] * y2.data()[(r * 4 + t) * 16 + d];
      }
      CHECK(std::sqrt(n_out) == doctest::Approx(std::sqrt(n_in)).epsilon(1e-6));
    }
}

TEST_CASE("determinism: identical inputs give bitwise-identical outputs") {
  auto run = [](uint64_t seed) {
    Tensor x = rand_t({4, 8}, seed);
    Tensor w = rand_t({8, 8}, seed + 1);
    Tensor y = softmax(matmul(gelu(x), w), -1);
    std::vector<float> out(y.data().begin(), y.data().end());
    return out;
  };
  auto a = run(123), b = run(123);
  CHECK(a == b);
}

TEST_CASE("nan debug mode names the producing op") {
  set_debug_check_finite(true);
  Tensor x = Tensor::from_data({2}, {1.0f, -1.0f});
  CHECK_THROWS_WITH_AS(log_t(x), doctest::Contains("log"), std::runtime_error);
  set_debug_check_finite(false);
}

TEST_CASE("gemt file round-trips bitwise") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "gemt_test";
  fs::create_directories(dir);
  const auto path = (dir / "t.gemt").string();

  Tensor t = rand_t({3, 4, 5}, 61, -100.0f, 100.0f);
  write_gemt(path, t);
  Tensor back = read_gemt(path);
  REQUIRE(back.shape() == t.shape());
  auto a = t.data();
  auto b = back.data();
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(std::memcmp(&a[i], &b[i], sizeof(float)) == 0);

  // corrupted magic rejected
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "BAD!";
  }
  CHECK_THROWS_AS(read_gemt(path), std::runtime_error);
}

TEST_CASE("checkpoint container round-trips with manifest") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "gemt_test";
  fs::create_directories(dir);
  const auto path = (dir / "c.gemc").string();

  std::vector<NamedTensor> entries;
  entries.push_back({"enc/w", rand_t({4, 4}, 71)});
  entries.push_back({"enc/b", rand_t({4}, 72)});
  entries.push_back({"opt/m/enc/w", rand_t({4, 4}, 73)});
  write_checkpoint(path, entries);

  auto manifest = checkpoint_manifest(path);
  REQUIRE(manifest.size() == 3);
  CHECK(manifest[0].first == "enc/w");
  CHECK(manifest[1].second == Shape{4});

  auto back = read_checkpoint(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == entries[i].name);
    auto a = entries[i].tensor.data();
    auto b = back[i].tensor.data();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("shape errors carry both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4,5]"),
                       std::invalid_argument);
}

TEST_CASE("concat and slice invert each other") {
  Tensor a = rand_t({2, 3, 4}, 81);
  Tensor b = rand_t({2, 2, 4}, 82);
  Tensor cat = concat({a, b}, 1);
  CHECK(cat.shape() == Shape{2, 5, 4});
  Tensor a2 = slice(cat, 1, 0, 3);
  Tensor b2 = slice(cat, 1, 3, 2);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a2.data()[i] == a.data()[i]);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(b2.data()[i] == b.data()[i]);

  auto rep = grad_check(
      [&](const Tensor& x) { return probe(concat({x, b}, 1)); }, a, 5e-3, 1e-3);
  CHECK(rep.pass);
}

TEST_CASE("sdpa composition matches manual attention on a tiny case") {
  Tensor q = rand_t({1, 2, 4}, 91);
  Tensor k = rand_t({1, 3, 4}, 92);
  Tensor v = rand_t({1, 3, 4}, 93);
  Tensor attn;
  Tensor out = sdpa(q, k, v, &attn);
  CHECK(out.shape() == Shape{1, 2, 4});
  // attention rows sum to one
  Tensor rows = sum_axis(attn, -1);
  for (float r : rows.data()) CHECK(r == doctest::Approx(1.0).epsilon(1e-6));
  auto rep = grad_check(
      [&](const Tensor& x) { return probe(sdpa(x, k, v)); }, q, 5e-3, 1e-2);
  CHECK(rep.pass);
}
