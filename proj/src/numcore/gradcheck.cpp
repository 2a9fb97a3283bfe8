#include "mobyal/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "mobyal/numcore/ops.hpp"
#include "mobyal/rng.hpp"

namespace mobyal::numcore {

GradCheckResult gradient_check(const ScalarFn& f, std::vector<Tensor<double>> inputs, double eps) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    auto loss = f(tape);
    tape.backward(loss);
    for (auto& x : inputs) {
      const auto g = x.ensure_grad();
      analytic.emplace_back(g.begin(), g.end());
      x.clear_grad();
    }
  }

  auto evaluate = [&f]() {
    Tape<double> tape;
    return f(tape).item();
  };

  auto central = [&evaluate](std::span<double> values, std::size_t i, double h, double& scale) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = evaluate();
    values[i] = saved - h;
    const double down = evaluate();
    values[i] = saved;
    scale = std::max(std::abs(up), std::abs(down));
    return (up - down) / (2.0 * h);
  };

  GradCheckResult result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      double scale = 0.0;
      const double numeric = central(values, i, eps, scale);
      const double a = analytic[t][i];
      // Rounding in f alone moves the quotient by about ulp(f) / eps.
      const double noise = 16.0 * std::numeric_limits<double>::epsilon() * scale / eps;
      double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (std::abs(a - numeric) <= noise) {
        err = 0.0;
        ++result.at_noise_floor;
      } else if (err > 1e-4) {
        // A smooth f gives nearly the same quotient with a 10x smaller step;
        // a kink inside [x - eps, x + eps] does not.
        double s2 = 0.0;
        const double fine = central(values, i, eps / 10.0, s2);
        const double fine_noise = 16.0 * std::numeric_limits<double>::epsilon() * s2 / (eps / 10.0);
        if (std::abs(fine - numeric) > 1e-4 * (std::abs(fine) + std::abs(numeric)) + fine_noise) ++result.unstable;
      }
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

double finite_difference_check(const ScalarFn& f, Tensor<double> x, double eps) {
  return gradient_check(f, {std::move(x)}, eps).max_relative_error;
}

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

// sum(y * r) for a fixed random r, so every output coordinate matters.
Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& y, const Tensor<double>& r) {
  return sum(&tape, mul(&tape, y, r));
}

using CaseFn = GradCheckResult (*)(std::uint64_t seed, double eps);

GradCheckResult check_matmul(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto a = random_tensor(rng, {4, 3});
  auto b = random_tensor(rng, {3, 5});
  auto r = random_tensor(rng, {4, 5});
  return gradient_check([&](Tape<double>& t) { return weighted_sum(t, matmul(&t, a, b), r); }, {a, b}, eps);
}

GradCheckResult check_linear(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto x = random_tensor(rng, {5, 4});
  auto w = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {3});
  auto r = random_tensor(rng, {5, 3});
  return gradient_check([&](Tape<double>& t) { return weighted_sum(t, linear(&t, x, w, b), r); }, {x, w, b}, eps);
}

GradCheckResult check_conv(std::uint64_t seed, double eps, std::size_t stride) {
  Rng rng(seed);
  auto x = random_tensor(rng, {2, 3, 8, 8});
  auto w = random_tensor(rng, {4, 3, 3, 3}, 0.5);
  const std::size_t o = stride == 1 ? 8 : 4;
  auto r = random_tensor(rng, {2, 4, o, o});
  return gradient_check([&](Tape<double>& t) { return weighted_sum(t, conv2d(&t, x, w, stride), r); }, {x, w},
                        eps);
}

GradCheckResult check_conv_s1(std::uint64_t seed, double eps) { return check_conv(seed, eps, 1); }
GradCheckResult check_conv_s2(std::uint64_t seed, double eps) { return check_conv(seed, eps, 2); }

GradCheckResult check_batchnorm(std::uint64_t seed, double eps, Shape shape, BnMode mode) {
  Rng rng(seed);
  const std::size_t c = shape[1];
  auto x = random_tensor(rng, shape);
  auto gamma = random_tensor(rng, {c});
  auto beta = random_tensor(rng, {c});
  auto r = random_tensor(rng, shape);
  BatchNormStats<double> stats(c);
  for (std::size_t i = 0; i < c; ++i) {
    stats.running_mean[i] = rng.normal(0.0, 0.5);
    stats.running_var[i] = rng.uniform(0.5, 2.0);
  }
  return gradient_check(
             [&](Tape<double>& t) {
               return weighted_sum(t, batchnorm(&t, x, gamma, beta, stats, mode, false), r);
             },
             {x, gamma, beta}, eps);
}

GradCheckResult check_bn_train_2d(std::uint64_t seed, double eps) { return check_batchnorm(seed, eps, {8, 4}, BnMode::Train); }
GradCheckResult check_bn_train_4d(std::uint64_t seed, double eps) {
  return check_batchnorm(seed, eps, {3, 2, 4, 4}, BnMode::Train);
}
GradCheckResult check_bn_eval(std::uint64_t seed, double eps) { return check_batchnorm(seed, eps, {8, 4}, BnMode::Eval); }

GradCheckResult check_relu(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto x = random_tensor(rng, {6, 5});
  // Keep inputs away from the kink so central differences do not straddle it.
  for (double& v : x.data()) v = v >= 0 ? v + 0.05 : v - 0.05;
  auto r = random_tensor(rng, {6, 5});
  return gradient_check([&](Tape<double>& t) { return weighted_sum(t, relu(&t, x), r); }, {x}, eps);
}

GradCheckResult check_pool(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto x = random_tensor(rng, {2, 3, 4, 5});
  auto r = random_tensor(rng, {2, 3});
  return gradient_check([&](Tape<double>& t) { return weighted_sum(t, global_avg_pool(&t, x), r); }, {x}, eps);
}

GradCheckResult check_xent(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto logits = random_tensor(rng, {5, 4}, 2.0);
  std::vector<int> labels(5);
  for (int& y : labels) y = static_cast<int>(rng.uniform_index(4));
  return gradient_check([&](Tape<double>& t) { return softmax_cross_entropy(&t, logits, labels); }, {logits}, eps);
}

GradCheckResult check_l2(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto x = random_tensor(rng, {4, 6});
  auto r = random_tensor(rng, {4, 6});
  return gradient_check([&](Tape<double>& t) { return weighted_sum(t, l2_normalize(&t, x), r); }, {x}, eps);
}

GradCheckResult check_network(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto x = random_tensor(rng, {3, 2, 6, 6});
  auto w1 = random_tensor(rng, {4, 2, 3, 3}, 0.5);
  auto g1 = random_tensor(rng, {4});
  auto b1 = random_tensor(rng, {4});
  auto w2 = random_tensor(rng, {4, 4, 3, 3}, 0.3);
  auto g2 = random_tensor(rng, {4});
  auto b2 = random_tensor(rng, {4});
  auto wl = random_tensor(rng, {3, 4});
  auto bl = random_tensor(rng, {3});
  std::vector<int> labels{0, 2, 1};
  BatchNormStats<double> s1(4), s2(4);
  return gradient_check(
             [&](Tape<double>& t) {
               auto h = relu(&t, batchnorm(&t, conv2d(&t, x, w1, 1), g1, b1, s1, BnMode::Train, false));
               h = relu(&t, batchnorm(&t, conv2d(&t, h, w2, 2), g2, b2, s2, BnMode::Train, false));
               return softmax_cross_entropy(&t, linear(&t, global_avg_pool(&t, h), wl, bl), labels);
             },
             {x, w1, g1, b1, w2, g2, b2, wl, bl}, eps);
}

}  // namespace

GradCheckCase run_case(const std::string& name, const std::function<GradCheckResult(std::uint64_t, double)>& fn,
                       std::uint64_t base_seed, int seeds, double eps, double tolerance) {
  GradCheckCase c{name, seeds, 0.0, tolerance};
  for (int s = 0; s < seeds; ++s) {
    GradCheckResult r;
    for (std::uint64_t draw = 0;; ++draw) {
      r = fn(derive_seed(base_seed, {static_cast<std::uint64_t>(s), draw}), eps);
      if (r.unstable == 0 || draw + 1 == kMaxRedraws) break;
      ++c.redrawn;
    }
    c.worst_error = std::max(c.worst_error, r.max_relative_error);
  }
  return c;
}

std::vector<GradCheckCase> run_gradient_suite(int seeds, double eps, double tolerance) {
  const std::vector<std::pair<std::string, CaseFn>> cases{
      {"matmul", check_matmul},
      {"linear", check_linear},
      {"conv2d_stride1", check_conv_s1},
      {"conv2d_stride2", check_conv_s2},
      {"batchnorm_train_2d", check_bn_train_2d},
      {"batchnorm_train_4d", check_bn_train_4d},
      {"batchnorm_eval", check_bn_eval},
      {"relu", check_relu},
      {"global_avg_pool", check_pool},
      {"softmax_cross_entropy", check_xent},
      {"l2_normalize", check_l2},
      {"conv_bn_relu_pool_linear_xent", check_network},
  };
  std::vector<GradCheckCase> out;
  for (const auto& [name, fn] : cases) out.push_back(run_case(name, fn, 0x6772616463686bULL, seeds, eps, tolerance));
  return out;
}

}  // namespace mobyal::numcore
