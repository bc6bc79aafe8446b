// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

#include "fd_oracle.hpp"
#include "gmbm/errors.hpp"
#include "gmbm/model.hpp"

using namespace gmbm;
using ad::Node;
using testing::autodiff_vs_fd;
using testing::random_tensor;

namespace {

Node constant(std::vector<std::vector<double>> rows) { return Node::constant(Tensor::matrix(rows)); }

model::Linear zero_linear(std::size_t in, std::size_t out) {
  return {Node::parameter(Tensor({in, out})), Node::parameter(Tensor(Shape{out}))};
}

model::ModelDims tiny_dims() {
  model::ModelDims dims;
  dims.input_dim = 6;
  dims.hidden_dim = 8;
  dims.embed_dim = 5;
  dims.num_classes = 3;
  dims.cardinalities = {2, 3};
  return dims;
}

double row_norm(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c) * t.at(r, c);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("encode") {
  SUBCASE("zero weights give zero features") {
    model::EncoderParams enc{zero_linear(4, 3), zero_linear(3, 2)};
    std::mt19937_64 rng(1);
    auto h = model::encode(enc, Node::constant(random_tensor(rng, {5, 4})));
    CHECK(h.value() == Tensor({5, 2}));
  }
  SUBCASE("identity weights reproduce a non-negative input") {
    model::EncoderParams enc{zero_linear(3, 3), zero_linear(3, 3)};
    for (std::size_t i = 0; i < 3; ++i) {
      enc.layer1.weight.mutable_value().at(i, i) = 1.0;
      enc.layer2.weight.mutable_value().at(i, i) = 1.0;
    }
    auto x = Tensor::matrix({{0.5, 2.0, 0.0}, {1.0, 0.25, 3.0}});
    CHECK(model::encode(enc, Node::constant(x)).value() == x);
  }
  SUBCASE("input width mismatch") {
    model::EncoderParams enc{zero_linear(4, 3), zero_linear(3, 2)};
    CHECK_THROWS_AS(model::encode(enc, Node::constant(Tensor({2, 5}))), DimensionError);
  }
  SUBCASE("gradient of sum(H) matches central differences") {
    auto state = model::init_model(tiny_dims(), 3);
    std::mt19937_64 rng(2);
    auto x = Node::constant(random_tensor(rng, {4, 6}));
    CHECK(autodiff_vs_fd([&] { return ad::sum(model::encode(state.backbone, x)); }, state.backbone.parameters()) <=
          1e-6);
  }
}

TEST_CASE("attention weights") {
  SUBCASE("single channel is all ones") {
    std::mt19937_64 rng(4);
    auto h = Node::constant(random_tensor(rng, {6, 3}));
    std::vector<Node> bs{Node::constant(random_tensor(rng, {6, 3}))};
    auto alpha = model::attention_weights(h, bs);
    CHECK(alpha.shape() == Shape{6, 1});
    for (double a : alpha.value().data()) CHECK(a == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("identical channels split evenly") {
    auto h = constant({{1, 2, 3}});
    std::vector<Node> bs{h, h};
    auto alpha = model::attention_weights(h, bs).value();
    CHECK(alpha.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(alpha.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("softmax of cosines 1 and 0") {
    std::vector<Node> bs{constant({{1, 0}}), constant({{0, 1}})};
    auto alpha = model::attention_weights(constant({{1, 0}}), bs).value();
    const double e = std::numbers::e;
    CHECK(std::abs(alpha.at(0, 0) - e / (e + 1)) <= 1e-15);
    CHECK(std::abs(alpha.at(0, 1) - 1 / (e + 1)) <= 1e-15);
    CHECK(std::abs(alpha.at(0, 0) - 0.7310586) <= 1e-7);
  }
  SUBCASE("zero rows are rejected") {
    std::vector<Node> bs{constant({{1, 0}})};
    CHECK_THROWS_AS(model::attention_weights(constant({{0, 0}}), bs), DegenerateInputError);
    std::vector<Node> zero_b{constant({{0, 0}})};
    CHECK_THROWS_AS(model::attention_weights(constant({{1, 0}}), zero_b), DegenerateInputError);
  }
}

TEST_CASE("attention rows are stochastic, positive and scale invariant in h") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> kdist(1, 4), ddist(1, 6);
  std::uniform_real_distribution<double> sdist(1e-3, 1e3);
  std::size_t cases = 0;
  while (cases < 10000) {
    const std::size_t k = kdist(rng), d = ddist(rng), rows = 4;
    auto h = random_tensor(rng, {rows, d});
    std::vector<Node> bs;
    for (std::size_t j = 0; j < k; ++j) bs.push_back(Node::constant(random_tensor(rng, {rows, d})));
    const auto alpha = model::attention_weights(Node::constant(h), bs).value();
    const double s = sdist(rng);
    auto scaled = h;
    for (auto& v : scaled.data()) v *= s;
    const auto alpha_scaled = model::attention_weights(Node::constant(scaled), bs).value();
    for (std::size_t r = 0; r < rows; ++r, ++cases) {
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        REQUIRE(alpha.at(r, j) > 0.0);
        total += alpha.at(r, j);
        REQUIRE(std::abs(alpha_scaled.at(r, j) - alpha.at(r, j)) <= 1e-12);
      }
      REQUIRE(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("fuse") {
  SUBCASE("zero bias features leave h unchanged") {
    auto h = constant({{1, -2}, {3, 4}});
    std::vector<Node> bs{constant({{0, 0}, {0, 0}}), constant({{0, 0}, {0, 0}})};
    auto alpha = constant({{0.3, 0.7}, {0.6, 0.4}});
    CHECK(model::fuse(h, bs, alpha).value() == h.value());
  }
  SUBCASE("cancellation") {
    auto h = constant({{1, -2, 0.5}});
    std::vector<Node> bs{constant({{-1, 2, -0.5}})};
    CHECK(model::fuse(h, bs, constant({{1}})).value() == Tensor({1, 3}));
  }
  SUBCASE("attention example") {
    auto h = constant({{1, 0}});
    std::vector<Node> bs{constant({{1, 0}}), constant({{0, 1}})};
    auto fused = model::fuse(h, bs, model::attention_weights(h, bs)).value();
    CHECK(std::abs(fused.at(0, 0) - 1.7310586) <= 1e-7);
    CHECK(std::abs(fused.at(0, 1) - 0.2689414) <= 1e-7);
  }
  SUBCASE("differentiable through h, bias features and alpha") {
    std::mt19937_64 rng(6);
    auto h = Node::parameter(random_tensor(rng, {3, 4}));
    auto b0 = Node::parameter(random_tensor(rng, {3, 4}));
    auto b1 = Node::parameter(random_tensor(rng, {3, 4}));
    auto alpha = Node::parameter(random_tensor(rng, {3, 2}));
    auto w = Node::constant(random_tensor(rng, {3, 4}));
    auto f = [&] {
      std::vector<Node> bs{b0, b1};
      return ad::sum(ad::mul(model::fuse(h, bs, alpha), w));
    };
    CHECK(autodiff_vs_fd(f, {h, b0, b1, alpha}) <= 1e-6);
  }
}

TEST_CASE("orthogonal residual examples") {
  SUBCASE("parallel bias gives zero") {
    auto l = model::orthogonal_residual(constant({{1, -2, 3}}), constant({{2, -4, 6}})).value();
    for (double v : l.data()) CHECK(std::abs(v) <= 1e-12);
  }
  SUBCASE("orthogonal bias is returned unchanged") {
    auto b = constant({{2, 1, 0}});
    auto l = model::orthogonal_residual(constant({{-1, 2, 5}}), b).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(l[i] - b.value()[i]) <= 1e-12);
  }
  SUBCASE("two-dimensional decomposition") {
    CHECK(model::orthogonal_residual(constant({{1, 0}}), constant({{1, 1}})).value() == Tensor::matrix({{0, 1}}));
  }
  SUBCASE("zero feature row") {
    CHECK_THROWS_AS(model::orthogonal_residual(constant({{0, 0}}), constant({{1, 1}})), DegenerateInputError);
  }
}

TEST_CASE("orthogonal residual properties over random pairs") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> ddist(2, 16);
  std::uniform_real_distribution<double> scale(-5.0, 5.0);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t trial = 0; trial < 10000; ++trial) {
    const std::size_t d = ddist(rng);
    auto h = random_tensor(rng, {1, d}, -10.0, 10.0);
    auto b = random_tensor(rng, {1, d}, -10.0, 10.0);
    const auto l = model::orthogonal_residual(Node::constant(h), Node::constant(b)).value();
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += h.at(0, c) * l.at(0, c);
    REQUIRE(std::abs(dot) <= 1e-9 * row_norm(h, 0) * row_norm(b, 0));

    const double s = scale(rng);
    auto sb = b;
    for (auto& v : sb.data()) v *= s;
    const auto ls = model::orthogonal_residual(Node::constant(h), Node::constant(sb)).value();
    for (std::size_t c = 0; c < d; ++c) REQUIRE(std::abs(ls.at(0, c) - s * l.at(0, c)) <= 1e-9 * (1.0 + std::abs(s)));

    // Exact orthogonal pair: rotate one coordinate pair of h by 90 degrees.
    const std::size_t a = trial % (d - 1);
    Tensor perp({1, d});
    perp.at(0, a) = -h.at(0, a + 1);
    perp.at(0, a + 1) = h.at(0, a);
    if (flip(rng)) {
      // Disjoint supports are also exactly orthogonal.
      Tensor hs({1, d});
      hs.at(0, 0) = h.at(0, 0);
      Tensor bs({1, d});
      for (std::size_t c = 1; c < d; ++c) bs.at(0, c) = b.at(0, c);
      const auto lo = model::orthogonal_residual(Node::constant(hs), Node::constant(bs)).value();
      for (std::size_t c = 0; c < d; ++c) REQUIRE(std::abs(lo.at(0, c) - bs.at(0, c)) <= 1e-12);
    } else {
      Tensor hp({1, d});
      hp.at(0, a) = h.at(0, a);
      hp.at(0, a + 1) = h.at(0, a + 1);
      const auto lo = model::orthogonal_residual(Node::constant(hp), Node::constant(perp)).value();
      for (std::size_t c = 0; c < d; ++c) REQUIRE(std::abs(lo.at(0, c) - perp.at(0, c)) <= 1e-12);
    }

    // Parallel: b = s h.
    auto par = h;
    for (auto& v : par.data()) v *= s;
    const auto lp = model::orthogonal_residual(Node::constant(h), Node::constant(par)).value();
    for (std::size_t c = 0; c < d; ++c) REQUIRE(std::abs(lp.at(0, c)) <= 1e-12 * (1.0 + row_norm(par, 0)));
  }
}

TEST_CASE("classify") {
  SUBCASE("zero weights repeat the bias row") {
    model::HeadParams head{zero_linear(3, 2)};
    head.linear.bias.mutable_value() = Tensor::vector({0.5, -1.5});
    auto logits = model::classify(head, constant({{1, 2, 3}, {4, 5, 6}})).value();
    CHECK(logits == Tensor::matrix({{0.5, -1.5}, {0.5, -1.5}}));
  }
  SUBCASE("one-hot weight columns select coordinates") {
    model::HeadParams head{zero_linear(3, 2)};
    head.linear.weight.mutable_value().at(2, 0) = 1.0;
    head.linear.weight.mutable_value().at(0, 1) = 1.0;
    auto logits = model::classify(head, constant({{1, 2, 3}})).value();
    CHECK(logits == Tensor::matrix({{3, 1}}));
  }
  SUBCASE("gradient check") {
    auto state = model::init_model(tiny_dims(), 9);
    std::mt19937_64 rng(10);
    auto h = Node::parameter(random_tensor(rng, {4, 5}));
    const std::vector<std::size_t> y{0, 2, 1, 2};
    auto params = state.classifier.parameters();
    params.push_back(h);
    CHECK(autodiff_vs_fd([&] { return ad::softmax_cross_entropy_mean(model::classify(state.classifier, h), y); },
                         params) <= 1e-6);
  }
}

TEST_CASE("feature gradient") {
  SUBCASE("hand example") {
    model::HeadParams head{zero_linear(2, 2)};
    head.linear.weight.mutable_value() = Tensor::matrix({{1, 0}, {0, 1}});
    const std::vector<std::size_t> y{0};
    auto g = model::feature_gradient(head, constant({{0, 0}}), y).value();
    CHECK(std::abs(g.at(0, 0) + 0.5) <= 1e-15);
    CHECK(std::abs(g.at(0, 1) - 0.5) <= 1e-15);
  }
  SUBCASE("vanishes at an extreme margin") {
    model::HeadParams head{zero_linear(2, 2)};
    head.linear.weight.mutable_value() = Tensor::matrix({{1, 0}, {0, 1}});
    const std::vector<std::size_t> y{0};
    auto g = model::feature_gradient(head, constant({{60, -60}}), y).value();
    for (double v : g.data()) CHECK(std::abs(v) <= 1e-40);
  }
  SUBCASE("equals the autodiff gradient of the per-sample loss") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t b = 1 + trial % 6, d = 2 + trial % 5, n = 2 + trial % 4;
      model::HeadParams head{{Node::parameter(random_tensor(rng, {d, n})), Node::parameter(random_tensor(rng, {n}))}};
      auto h = Node::parameter(random_tensor(rng, {b, d}, -2.0, 2.0));
      std::vector<std::size_t> y(b);
      for (auto& v : y) v = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      const auto g = model::feature_gradient(head, h, y).value();
      h.zero_grad();
      // The mean loss scales each row gradient by 1/B; the sum recovers per-sample gradients.
      ad::backward(ad::scale(ad::softmax_cross_entropy_mean(model::classify(head, h), y), static_cast<double>(b)));
      for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(std::abs(g[i] - h.grad()[i]) <= 1e-10);
    }
  }
  SUBCASE("differentiable in h and head parameters") {
    auto state = model::init_model(tiny_dims(), 12);
    std::mt19937_64 rng(13);
    auto h = Node::parameter(random_tensor(rng, {4, 5}));
    auto w = Node::constant(random_tensor(rng, {4, 5}));
    const std::vector<std::size_t> y{1, 0, 2, 1};
    auto params = state.classifier.parameters();
    params.push_back(h);
    CHECK(autodiff_vs_fd([&] { return ad::sum(ad::mul(model::feature_gradient(state.classifier, h, y), w)); },
                         params) <= 1e-6);
  }
}

TEST_CASE("initialisation") {
  const auto dims = tiny_dims();
  const auto a = model::init_model(dims, 21);
  const auto b = model::init_model(dims, 21);
  const auto c = model::init_model(dims, 22);
  CHECK(model::serialize_checkpoint(model::to_checkpoint(a)) == model::serialize_checkpoint(model::to_checkpoint(b)));
  CHECK(a.backbone.layer1.weight.value() != c.backbone.layer1.weight.value());
  CHECK(a.bias_encoders.size() == 2);
  CHECK(a.bias_heads.size() == 2);
  CHECK(a.bias_heads[1].linear.out_dim() == 3);
  CHECK(a.classifier.linear.out_dim() == 3);
  SUBCASE("weights stay within the fan-in bound") {
    const double bound = 1.0 / std::sqrt(6.0);
    for (double v : a.backbone.layer1.weight.value().data()) CHECK(std::abs(v) <= bound);
    for (double v : a.backbone.layer1.bias.value().data()) CHECK(std::abs(v) <= bound);
  }
  SUBCASE("main components do not depend on the bias components") {
    const auto plain = model::init_model(dims, 21, false);
    CHECK(plain.bias_encoders.empty());
    CHECK(plain.backbone.layer2.weight.value() == a.backbone.layer2.weight.value());
    CHECK(plain.classifier.linear.weight.value() == a.classifier.linear.weight.value());
  }
  SUBCASE("bias encoders have independent parameters") {
    CHECK(a.bias_encoders[0].layer1.weight.value() != a.bias_encoders[1].layer1.weight.value());
    CHECK(a.bias_encoders[0].layer1.weight.value() != a.backbone.layer1.weight.value());
  }
}

TEST_CASE("checkpoints") {
  const auto state = model::init_model(tiny_dims(), 31);
  SUBCASE("full round trip") {
    const auto bytes = model::serialize_checkpoint(model::to_checkpoint(state));
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "GMBMCK01");
    const auto back = model::state_from_checkpoint(model::deserialize_checkpoint(bytes));
    CHECK(back.dims == state.dims);
    CHECK(model::serialize_checkpoint(model::to_checkpoint(back)) == bytes);
  }
  SUBCASE("inference variant carries only backbone and classifier") {
    const auto inf = model::export_inference(state);
    const auto ckpt = model::to_checkpoint(inf);
    CHECK(ckpt.variant == model::CheckpointVariant::Inference);
    for (const auto& block : ckpt.blocks) {
      CHECK(block.name.rfind("bias_", 0) == std::string::npos);
    }
    CHECK(ckpt.blocks.size() == 6);
    const auto back = model::inference_from_checkpoint(model::deserialize_checkpoint(model::serialize_checkpoint(ckpt)));
    std::mt19937_64 rng(32);
    const auto x = random_tensor(rng, {3, 6});
    CHECK(back.logits(x) == inf.logits(x));
  }
  SUBCASE("export is a deep copy") {
    auto copy = model::init_model(tiny_dims(), 31);
    const auto inf = model::export_inference(copy);
    copy.backbone.layer1.weight.mutable_value()[0] += 1.0;
    CHECK(inf.backbone.layer1.weight.value() == state.backbone.layer1.weight.value());
  }
  SUBCASE("full checkpoint names every block") {
    const auto ckpt = model::to_checkpoint(state);
    std::vector<std::string> names;
    for (const auto& block : ckpt.blocks) names.push_back(block.name);
    CHECK(names.front() == "backbone.layer1.weight");
    CHECK(std::find(names.begin(), names.end(), "bias_encoder.1.layer2.bias") != names.end());
    CHECK(std::find(names.begin(), names.end(), "bias_head.0.weight") != names.end());
  }
  SUBCASE("corruption is detected") {
    auto bytes = model::serialize_checkpoint(model::to_checkpoint(state));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(model::deserialize_checkpoint(bad_magic), SchemaError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(model::deserialize_checkpoint(truncated), SchemaError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(model::deserialize_checkpoint(trailing), SchemaError);
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "gmbm_test_model.ckpt";
    model::write_checkpoint(path, model::to_checkpoint(state));
    const auto back = model::read_checkpoint(path);
    CHECK(model::serialize_checkpoint(back) == model::serialize_checkpoint(model::to_checkpoint(state)));
    std::filesystem::remove(path);
  }
  SUBCASE("predict rejects mismatched datasets") {
    synth::DatasetLayout layout{3, {2, 3}, 3, 1};  // input_dim 9 != 6
    synth::Dataset ds(layout);
    CHECK_THROWS_AS(model::export_inference(state).predict(ds), DimensionError);
  }
}
