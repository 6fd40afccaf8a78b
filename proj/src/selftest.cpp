#include "afflow/selftest.hpp"

#include <fmt/format.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <tuple>

#include "afflow/flow_layers.hpp"
#include "afflow/gradcheck.hpp"
#include "afflow/linalg.hpp"
#include "afflow/metrics.hpp"
#include "afflow/model.hpp"
#include "afflow/ops.hpp"
#include "afflow/phantom.hpp"
#include "afflow/rng.hpp"
#include "afflow/sim.hpp"

namespace afflow {

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor with_values(const Shape& s, const std::vector<double>& v) { return Tensor(s, v); }

// log|det| of the dense Jacobian of a flattened layer map.
double jacobian_logdet(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  const Shape shape = x.shape();
  const std::vector<double> x0(x.values().begin(), x.values().end());
  const auto jac = numerical_jacobian(
      [&](const std::vector<double>& v) {
        const Tensor y = f(with_values(shape, v));
        return std::vector<double>(y.values().begin(), y.values().end());
      },
      x0);
  return lu_decompose(jac, x0.size()).log_abs_det();
}

CouplingParams random_coupling(std::size_t C, std::size_t cond, std::size_t hidden, Rng& rng) {
  return {Tensor::randn({hidden, C / 2 + cond, 3, 3}, rng, 0.3), Tensor::randn({hidden}, rng, 0.1),
          Tensor::randn({hidden, hidden, 1, 1}, rng, 0.3),        Tensor::randn({hidden}, rng, 0.1),
          Tensor::randn({C, hidden, 3, 3}, rng, 0.3),             Tensor::randn({C}, rng, 0.1)};
}

struct Suite {
  std::vector<SelfTestResult> results;

  void check(const std::string& name, double err, double tol) {
    results.push_back({name, err < tol, fmt::format("max error {:.3g} (tolerance {:.0e})", err, tol)});
  }
  void run(const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      results.push_back({name, false, std::string("threw: ") + e.what()});
    }
  }
};

}  // namespace

std::vector<SelfTestResult> run_selftest() {
  Suite s;
  Rng rng(20240607);

  s.run("fft round trip and Parseval", [&] {
    ComplexGrid g(16, 8);
    for (auto& v : g.data) v = {rng.normal(), rng.normal()};
    const ComplexGrid k = fft2(g), back = ifft2(k);
    double err = 0.0, e0 = 0.0, e1 = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      err = std::max(err, std::abs(back.data[i] - g.data[i]));
      e0 += std::norm(g.data[i]);
      e1 += std::norm(k.data[i]);
    }
    s.check("fft round trip", err, 1e-10);
    s.check("fft Parseval", std::abs(std::sqrt(e0) - std::sqrt(e1)), 1e-10);
  });

  s.run("shift theorem", [&] {
    const Tensor img = random_phantom(32, rng);
    MotionSpec m;
    m.kind = MotionKind::RigidConstant;
    m.amplitude = 3.0;
    m.fraction = 1.0;
    const Tensor out = corrupt_kspace(img, make_trajectory(m, 32));
    double err = 0.0;
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        err = std::max(err, std::abs(out.at(y * 32 + x) - img.at(y * 32 + (x + 29) % 32)));
    s.check("constant trajectory is a circular shift", err, 1e-8);
  });

  s.run("composition model", [&] {
    const Tensor J = Tensor::uniform({1, 8, 8}, rng, 0.0, 1.0), R = Tensor::uniform({1, 8, 8}, rng, -0.2, 0.2);
    const Tensor I = compose_artifact(J, R, 0.5);
    s.check("decompose(compose) round trip", max_abs_diff(decompose_artifact(I, J, 0.5).values(), R.values()), 1e-10);
  });

  const double eps = 0.05;
  s.run("layer invertibility", [&] {
    const Tensor x = Tensor::randn({2, 4, 4, 4}, rng);
    const Tensor sc = Tensor::uniform({4}, rng, 0.5, 2.0), b = Tensor::randn({4}, rng);
    s.check("actnorm inverse", max_abs_diff(actnorm_inverse(actnorm_forward(x, sc, b).y, sc, b).values(), x.values()),
            1e-8);
    const Tensor w = Tensor::randn({4, 4}, rng);
    s.check("invconv inverse", max_abs_diff(invconv_inverse(invconv_forward(x, w).y, w).values(), x.values()), 1e-8);
    const Tensor cond = Tensor::randn({2, 3, 4, 4}, rng);
    const CouplingParams cp = random_coupling(4, 3, 8, rng);
    s.check("coupling inverse",
            max_abs_diff(nac_inverse(nac_forward(x, cond, cp, 0.7, eps).y, cond, cp, 0.7, eps).values(), x.values()),
            1e-8);
    const SplitOut sp = split_forward(x, Tensor::randn({4, 2}, rng), Tensor::randn({4}, rng));
    s.check("split inverse", max_abs_diff(split_inverse(sp.keep, sp.z).values(), x.values()), 1e-8);
    s.check("squeeze inverse", max_abs_diff(unsqueeze2(squeeze2(x)).values(), x.values()), 1e-15);
  });

  s.run("flow invertibility", [&] {
    NoGradGuard no_grad;
    ModelConfig mc;
    mc.flow.levels = 2;
    mc.flow.steps = 3;
    mc.flow.hidden = 8;
    mc.encoder = {1, 4};
    Model model(mc, 7);
    jitter_parameters(model, 7);
    const Tensor y = Tensor::uniform({2, 1, 16, 16}, rng, 0.0, 1.0), x = Tensor::uniform({2, 1, 16, 16}, rng, 0.0, 1.0);
    const auto cond = model.conditioning(x);
    const FlowOutput out = model.forward(y, cond);
    s.check("flow inverse(forward(y))", max_abs_diff(model.inverse(out.z, cond).values(), y.values()), 1e-6);
  });

  s.run("log-determinants", [&] {
    NoGradGuard no_grad;
    const Tensor x = Tensor::randn({1, 4, 2, 2}, rng);
    const Tensor sc = Tensor::uniform({4}, rng, 0.5, 2.0), b = Tensor::randn({4}, rng);
    s.check("actnorm log-det",
            std::abs(actnorm_forward(x, sc, b).logdet.item() -
                     jacobian_logdet([&](const Tensor& v) { return actnorm_forward(v, sc, b).y; }, x)),
            1e-5);
    const Tensor w = Tensor::randn({4, 4}, rng);
    s.check("invconv log-det",
            std::abs(invconv_forward(x, w).logdet.item() -
                     jacobian_logdet([&](const Tensor& v) { return invconv_forward(v, w).y; }, x)),
            1e-5);
    const Tensor cond = Tensor::randn({1, 2, 2, 2}, rng);
    const CouplingParams cp = random_coupling(4, 2, 6, rng);
    s.check("coupling log-det",
            std::abs(nac_forward(x, cond, cp, 0.8, eps).logdet.item() -
                     jacobian_logdet([&](const Tensor& v) { return nac_forward(v, cond, cp, 0.8, eps).y; }, x)),
            1e-5);

    ModelConfig mc;
    mc.flow.levels = 1;
    mc.flow.steps = 2;
    mc.flow.hidden = 6;
    mc.encoder = {1, 2};
    Model model(mc, 3);
    jitter_parameters(model, 3);
    const Tensor y = Tensor::uniform({1, 1, 8, 8}, rng, 0.0, 1.0);
    const auto c = model.conditioning(Tensor::uniform({1, 1, 8, 8}, rng, 0.0, 1.0));
    const double analytic = model.forward(y, c).logdet.item();
    const double numeric = jacobian_logdet([&](const Tensor& v) { return model.forward(v, c).z.back(); }, y);
    s.check("flow log-det (64 dims)", std::abs(analytic - numeric), 1e-5);
  });

  s.run("gradients", [&] {
    const auto rnd = [&](Shape sh) { return Tensor::randn(std::move(sh), rng); };
    using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
    const std::vector<std::tuple<std::string, Fn, std::vector<Tensor>>> cases = {
        {"mul/div/exp/log/abs",
         [](const std::vector<Tensor>& v) {
           return sum(log(add_scalar(abs(div(mul(v[0], v[1]), add_scalar(exp(v[1]), 1.0))), 0.5)));
         },
         {rnd({2, 3}), rnd({2, 3})}},
        {"sigmoid/leaky_relu with broadcasting",
         [](const std::vector<Tensor>& v) { return sum(mul(sigmoid(v[0]), leaky_relu(sub(v[0], v[1])))); },
         {rnd({2, 3}), rnd({3})}},
        {"conv2d",
         [](const std::vector<Tensor>& v) {
           const Tensor y = conv2d(v[0], v[1], v[2]);
           return sum(mul(y, y));
         },
         {rnd({2, 2, 4, 4}), rnd({3, 2, 3, 3}), rnd({3})}},
        {"squeeze/narrow/concat/avg_pool",
         [](const std::vector<Tensor>& v) {
           const Tensor s2 = squeeze2(v[0]);
           const Tensor c = unsqueeze2(concat({narrow(s2, 1, 2, 2), narrow(s2, 1, 0, 2)}, 1));
           return add(sum(mul(c, v[0])), sum(mul(avg_pool2(v[0]), avg_pool2(c))));
         },
         {rnd({1, 1, 4, 4})}},
        {"mean over axes", [](const std::vector<Tensor>& v) { const Tensor m = mean(v[0], {0, 2}); return sum(mul(m, m)); },
         {rnd({2, 3, 2})}},
        {"logabsdet", [](const std::vector<Tensor>& v) { return logabsdet(v[0]); }, {rnd({4, 4})}},
    };
    for (const auto& [name, fn, inputs] : cases) s.check("gradient " + name, gradient_check(fn, inputs).max_rel_error, 1e-4);
  });

  s.run("metrics", [&] {
    const Tensor a = Tensor::uniform({1, 16, 16}, rng, 0.0, 1.0);
    s.check("psnr(x, x) is the cap", std::abs(psnr(a, a) - kPsnrCap), 1e-12);
    s.check("ssim(x, x) = 1", std::abs(ssim(a, a) - 1.0), 1e-12);
    s.check("uqi(x, x) = 1", std::abs(uqi(a, a) - 1.0), 1e-12);
  });
  return s.results;
}

}  // namespace afflow
