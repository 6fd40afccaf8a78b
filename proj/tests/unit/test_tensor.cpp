#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "afflow/adam.hpp"
#include "afflow/gradcheck.hpp"
#include "afflow/ops.hpp"
#include "afflow/params.hpp"
#include "afflow/rng.hpp"
#include "afflow/tensor_io.hpp"

using namespace afflow;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor leaf(Shape s, std::vector<double> v) {
  Tensor t(std::move(s), std::move(v));
  t.set_requires_grad(true);
  return t;
}

// Random values bounded away from zero so kinks (abs, leaky_relu) are not
// straddled by the finite-difference stencil.
Tensor random_away_from_zero(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.mutable_values()) {
    do {
      v = rng.uniform(-2.0, 2.0);
    } while (std::abs(v) < 1e-2);
  }
  return t;
}

// Weighted sum so every output element carries a distinct cotangent.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, Tensor::uniform(y.shape(), rng, -1.0, 1.0)));
}

}  // namespace

// ---------------------------------------------------------------- pointwise

TEST(Pointwise, Examples) {
  EXPECT_EQ(vals(add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}))), (std::vector<double>{4, 6}));
  EXPECT_EQ(vals(mul(Tensor({2}, {2, 3}), Tensor::scalar(0.0))), (std::vector<double>{0, 0}));
  EXPECT_EQ(vals(div(Tensor({2}, {1, 4}), Tensor({2}, {2, 8}))), (std::vector<double>{0.5, 0.5}));
}

TEST(Pointwise, BroadcastOverSingletonAxes) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(vals(add(a, Tensor({1, 3}, {10, 20, 30}))), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(vals(sub(a, Tensor({2, 1}, {1, 2}))), (std::vector<double>{0, 1, 2, 2, 3, 4}));
  EXPECT_EQ(vals(mul(Tensor({3}, {1, 2, 3}), a)), (std::vector<double>{1, 4, 9, 4, 10, 18}));
  EXPECT_EQ(add(Tensor({1, 3, 1, 1}), Tensor({2, 3, 4, 5})).shape(), (Shape{2, 3, 4, 5}));
}

TEST(Pointwise, ShapeMismatchReportsBothShapes) {
  try {
    add(Tensor({2, 3}), Tensor({3, 2}));
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[3x2]"), std::string::npos);
  }
}

TEST(Pointwise, DivisionByZeroRejected) {
  EXPECT_THROW(div(Tensor({2}, {1, 1}), Tensor({2}, {1, 0})), std::domain_error);
}

// ---------------------------------------------------------------- conv2d

TEST(Conv2d, OneByOneKernelScales) {
  Tensor y = conv2d(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 1, 1}, {2.0}), Tensor({1}, {0.0}));
  for (double v : y.values()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, IdentityCenterKernelIsIdentity) {
  Rng rng(1);
  Tensor x = Tensor::randn({2, 1, 5, 4}, rng);
  Tensor w({1, 1, 3, 3}, 0.0);
  w.mutable_values()[4] = 1.0;
  EXPECT_EQ(vals(conv2d(x, w)), vals(x));
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(2);
  const std::size_t N = 1, Ci = 2, H = 4, W = 4, Co = 3, k = 3;
  Tensor x = Tensor::randn({N, Ci, H, W}, rng);
  Tensor w = Tensor::randn({Co, Ci, k, k}, rng);
  Tensor b = Tensor::randn({Co}, rng);
  Tensor y = conv2d(x, w, b);
  const auto xv = x.values(), wv = w.values();
  for (std::size_t o = 0; o < Co; ++o)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double s = b.at(o);
        for (std::size_t c = 0; c < Ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long yy = static_cast<long>(i + ky) - 1, xx = static_cast<long>(j + kx) - 1;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
              s += xv[(c * H + yy) * W + xx] * wv[((o * Ci + c) * k + ky) * k + kx];
            }
        EXPECT_NEAR(y.at((o * H + i) * W + j), s, 1e-12);
      }
}

TEST(Conv2d, ChannelMismatchRejected) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3})), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 2, 2, 2})), std::invalid_argument);
}

// ---------------------------------------------------------------- reductions / unary

TEST(Reduce, Examples) {
  EXPECT_EQ(sum(Tensor({3}, {1, 2, 3})).item(), 6.0);
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = i;
  EXPECT_EQ(mean(Tensor({4, 4}, ramp)).item(), 7.5);
}

TEST(Reduce, AxesAndKeepdim) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(vals(sum(a, {0})), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(vals(sum(a, {1})), (std::vector<double>{6, 15}));
  EXPECT_EQ(sum(a, {1}, true).shape(), (Shape{2, 1}));
  EXPECT_EQ(vals(mean(a, {1})), (std::vector<double>{2, 5}));
  EXPECT_THROW(sum(a, {2}), std::invalid_argument);
}

TEST(Reduce, LogOfNonPositiveRejected) {
  EXPECT_THROW(log(Tensor({2}, {1.0, 0.0})), std::domain_error);
  EXPECT_THROW(log(Tensor({1}, {-3.0})), std::domain_error);
}

TEST(Reduce, LeakyReluSlope) {
  EXPECT_EQ(vals(leaky_relu(Tensor({2}, {-1.0, 2.0}))), (std::vector<double>{-0.2, 2.0}));
}

// ---------------------------------------------------------------- shape ops

TEST(Squeeze, RampLayout) {
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = i;
  Tensor y = squeeze2(Tensor({1, 1, 4, 4}, ramp));
  ASSERT_EQ(y.shape(), (Shape{1, 4, 2, 2}));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().begin() + 4),
            (std::vector<double>{0, 2, 8, 10}));
  EXPECT_EQ(std::vector<double>(y.values().begin() + 4, y.values().begin() + 8),
            (std::vector<double>{1, 3, 9, 11}));
}

TEST(Squeeze, RoundTripAndOddRejected) {
  Rng rng(3);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
  EXPECT_EQ(vals(unsqueeze2(squeeze2(x))), vals(x));
  EXPECT_THROW(squeeze2(Tensor({1, 1, 3, 4})), std::invalid_argument);
}

TEST(ConcatNarrow, Inverse) {
  Rng rng(4);
  Tensor a = Tensor::randn({2, 3, 2, 2}, rng), b = Tensor::randn({2, 1, 2, 2}, rng);
  Tensor c = concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 4, 2, 2}));
  EXPECT_EQ(vals(narrow(c, 1, 0, 3)), vals(a));
  EXPECT_EQ(vals(narrow(c, 1, 3, 1)), vals(b));
  EXPECT_THROW(narrow(c, 1, 3, 2), std::invalid_argument);
}

TEST(LogAbsDet, MatchesDeterminant) {
  Tensor w({2, 2}, {2.0, 1.0, 1.0, -3.0});
  EXPECT_NEAR(logabsdet(w).item(), std::log(7.0), 1e-14);
}

// ---------------------------------------------------------------- backward

TEST(Backward, SquareSum) {
  Tensor x = leaf({2}, {1, 2});
  backward(sum(mul(x, x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, ProductRule) {
  Tensor a = leaf({1}, {3}), b = leaf({1}, {5});
  backward(sum(mul(a, b)));
  EXPECT_EQ(a.grad()[0], 5.0);
  EXPECT_EQ(b.grad()[0], 3.0);
}

TEST(Backward, FanOutAccumulates) {
  Tensor x = leaf({1}, {2.0});
  backward(sum(add(mul(x, x), scale(x, 3.0))));  // d/dx (x^2 + 3x) = 2x + 3
  EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(Backward, SecondCallRejected) {
  Tensor x = leaf({2}, {1, 2});
  Tensor loss = sum(exp(x));
  backward(loss);
  EXPECT_THROW(backward(loss), std::logic_error);
}

TEST(Backward, NonScalarRejected) {
  Tensor x = leaf({2}, {1, 2});
  EXPECT_THROW(backward(exp(x)), std::invalid_argument);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = leaf({2}, {1, 2});
  NoGradGuard guard;
  Tensor y = exp(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Backward, BroadcastGradientMatchesMaterialisedOracle) {
  Rng rng(5);
  Tensor a = Tensor::randn({2, 3, 4}, rng);
  Tensor b = Tensor::randn({3, 1}, rng);
  Tensor w = Tensor::randn({2, 3, 4}, rng);
  for (auto op : {0, 1, 2}) {
    auto apply = [op](const Tensor& x, const Tensor& y) {
      return op == 0 ? add(x, y) : op == 1 ? sub(x, y) : mul(x, y);
    };
    Tensor al = a.detach().set_requires_grad(true), bl = b.detach().set_requires_grad(true);
    backward(sum(mul(apply(al, bl), w)));

    // Materialise b to the full shape, then reduce its gradient by hand.
    std::vector<double> tiled(24);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 4; ++k) tiled[(i * 3 + j) * 4 + k] = b.at(j);
    Tensor bt = leaf({2, 3, 4}, tiled);
    Tensor a2 = a.detach().set_requires_grad(true);
    backward(sum(mul(apply(a2, bt), w)));
    for (std::size_t j = 0; j < 3; ++j) {
      double want = 0.0;
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 4; ++k) want += bt.grad()[(i * 3 + j) * 4 + k];
      EXPECT_NEAR(bl.grad()[j], want, 1e-12) << "op " << op;
    }
    for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(al.grad()[i], a2.grad()[i], 1e-12);
  }
}

// Every registered op against central finite differences.
struct GradCase {
  const char* name;
  std::vector<Shape> shapes;
  ScalarFn fn;
  bool positive = false;
};

class GradientOracle : public ::testing::TestWithParam<int> {};

std::vector<GradCase> grad_cases() {
  return {
      {"add", {{2, 3}, {2, 3}}, [](auto& v) { return probe(add(v[0], v[1]), 1); }},
      {"add_bcast", {{2, 3}, {1, 3}}, [](auto& v) { return probe(add(v[0], v[1]), 2); }},
      {"sub_bcast", {{2, 3}, {2, 1}}, [](auto& v) { return probe(sub(v[0], v[1]), 3); }},
      {"mul", {{2, 3}, {2, 3}}, [](auto& v) { return probe(mul(v[0], v[1]), 4); }},
      {"mul_scalar", {{2, 3}, {}}, [](auto& v) { return probe(mul(v[0], v[1]), 5); }},
      {"div", {{2, 3}, {2, 3}}, [](auto& v) { return probe(div(v[0], v[1]), 6); }, true},
      {"div_bcast", {{2, 3}, {3}}, [](auto& v) { return probe(div(v[0], v[1]), 7); }, true},
      {"scale", {{2, 3}}, [](auto& v) { return probe(scale(v[0], -1.3), 8); }},
      {"add_scalar", {{2, 3}}, [](auto& v) { return probe(add_scalar(v[0], 0.7), 9); }},
      {"exp", {{2, 3}}, [](auto& v) { return probe(exp(v[0]), 10); }},
      {"log", {{2, 3}}, [](auto& v) { return probe(log(v[0]), 11); }, true},
      {"abs", {{2, 3}}, [](auto& v) { return probe(abs(v[0]), 12); }},
      {"sigmoid", {{2, 3}}, [](auto& v) { return probe(sigmoid(v[0]), 13); }},
      {"leaky_relu", {{2, 3}}, [](auto& v) { return probe(leaky_relu(v[0]), 14); }},
      {"sum_axis", {{2, 3, 2}}, [](auto& v) { return probe(sum(v[0], {0, 2}), 15); }},
      {"mean_axis", {{2, 3, 2}}, [](auto& v) { return probe(mean(v[0], {1}, true), 16); }},
      {"sum_all", {{2, 3}}, [](auto& v) { return mul(sum(v[0]), sum(v[0])); }},
      {"reshape", {{2, 3}}, [](auto& v) { return probe(reshape(v[0], {3, 2}), 17); }},
      {"conv2d_3x3", {{1, 2, 4, 4}, {3, 2, 3, 3}, {3}},
       [](auto& v) { return probe(conv2d(v[0], v[1], v[2]), 18); }},
      {"conv2d_1x1", {{2, 3, 2, 3}, {2, 3, 1, 1}}, [](auto& v) { return probe(conv2d(v[0], v[1]), 19); }},
      {"avg_pool2", {{1, 2, 4, 4}}, [](auto& v) { return probe(avg_pool2(v[0]), 20); }},
      {"squeeze2", {{1, 2, 4, 4}}, [](auto& v) { return probe(squeeze2(v[0]), 21); }},
      {"unsqueeze2", {{1, 4, 2, 2}}, [](auto& v) { return probe(unsqueeze2(v[0]), 22); }},
      {"concat", {{1, 2, 2, 2}, {1, 1, 2, 2}}, [](auto& v) { return probe(concat({v[0], v[1]}, 1), 23); }},
      {"narrow", {{1, 4, 2, 2}}, [](auto& v) { return probe(narrow(v[0], 1, 1, 2), 24); }},
      {"logabsdet", {{3, 3}}, [](auto& v) { return logabsdet(v[0]); }},
      {"composite", {{2, 3}, {2, 3}},
       [](auto& v) { return mean(mul(sigmoid(mul(v[0], v[1])), exp(scale(v[1], 0.5)))); }},
  };
}

TEST_P(GradientOracle, MatchesFiniteDifferences) {
  const GradCase c = grad_cases()[static_cast<std::size_t>(GetParam())];
  Rng rng(100 + GetParam());
  std::vector<Tensor> inputs;
  for (const Shape& s : c.shapes) {
    Tensor t = random_away_from_zero(s, rng);
    if (c.positive) {
      for (double& v : t.mutable_values()) v = std::abs(v) + 0.5;
    }
    inputs.push_back(t);
  }
  const GradCheckResult r = gradient_check(c.fn, inputs, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientOracle,
                         ::testing::Range(0, static_cast<int>(grad_cases().size())),
                         [](const auto& info) { return std::string(grad_cases()[info.param].name); });

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(77);
    Tensor x = Tensor::randn({2, 3, 6, 6}, rng).set_requires_grad(true);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng).set_requires_grad(true);
    Tensor loss = mean(sigmoid(conv2d(x, w)));
    backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

// ---------------------------------------------------------------- Adam

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParamStore ps;
  Tensor p = ps.add("p", Tensor({3}, {1.0, -2.0, 3.0}));
  AdamState st;
  for (int i = 0; i < 5; ++i) {
    ps.zero_grad();
    backward(sum(scale(p, 0.0)));
    ASSERT_TRUE(adam_step(ps, st));
  }
  EXPECT_EQ(vals(p), (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(st.t, 5u);
}

TEST(Adam, SingleStepHandOracle) {
  ParamStore ps;
  Tensor p = ps.add("p", Tensor({1}, {0.25}));
  AdamState st;  // lr 1e-4, (0.5, 0.999), eps 1e-8
  backward(sum(p));  // g = 1
  ASSERT_TRUE(adam_step(ps, st));
  // m = 0.5, v = 0.001; m_hat = 1, v_hat = 1
  const double want = 0.25 - 1e-4 * 1.0 / (1.0 + 1e-8);
  EXPECT_DOUBLE_EQ(p.at(0), want);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, IdenticalParamsStayIdentical) {
  ParamStore ps;
  Tensor a = ps.add("a", Tensor({2}, {0.3, -0.1}));
  Tensor b = ps.add("b", Tensor({2}, {0.3, -0.1}));
  AdamState st;
  st.config.lr = 1e-2;
  for (int i = 0; i < 25; ++i) {
    ps.zero_grad();
    backward(add(sum(mul(a, a)), sum(mul(b, b))));
    ASSERT_TRUE(adam_step(ps, st));
  }
  EXPECT_EQ(vals(a), vals(b));
}

TEST(Adam, NonFiniteGradientRejected) {
  ParamStore ps;
  Tensor p = ps.add("p", Tensor({2}, {1.0, 0.0}));
  backward(sum(mul(p, Tensor({2}, {1.0, std::numeric_limits<double>::infinity()}))));
  AdamState st;
  EXPECT_FALSE(adam_step(ps, st));
  EXPECT_EQ(vals(p), (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(st.t, 0u);
}

// ---------------------------------------------------------------- AFT1

TEST(TensorFile, ExactByteLayout) {
  std::ostringstream os;
  write_aft(os, Tensor({1, 2}, {1.0, -2.5}));
  const std::string s = os.str();
  ASSERT_EQ(s.size(), 4u + 4u + 8u + 16u);
  EXPECT_EQ(s.substr(0, 4), "AFT1");
  const unsigned char hdr[] = {2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0};
  EXPECT_EQ(std::memcmp(s.data() + 4, hdr, sizeof hdr), 0);
  const unsigned char one[] = {0, 0, 0, 0, 0, 0, 0xf0, 0x3f};  // 1.0 little-endian
  EXPECT_EQ(std::memcmp(s.data() + 16, one, 8), 0);
}

TEST(TensorFile, RoundTripPreservesBits) {
  Rng rng(9);
  Tensor t = Tensor::randn({2, 3, 4}, rng);
  std::stringstream ss;
  write_aft(ss, t);
  Tensor r = read_aft(ss);
  EXPECT_EQ(r.shape(), t.shape());
  EXPECT_EQ(std::memcmp(r.values().data(), t.values().data(), t.numel() * 8), 0);
}

TEST(TensorFile, CorruptInputRejected) {
  std::istringstream bad_magic("AFT2\0\0\0\0");
  EXPECT_THROW(read_aft(bad_magic), std::runtime_error);
  std::ostringstream os;
  write_aft(os, Tensor({4}, 1.0));
  std::istringstream truncated(os.str().substr(0, 20));
  EXPECT_THROW(read_aft(truncated), std::runtime_error);
}
