/*
 * Copyright 2026 The revsde Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "revsde/brownian.hpp"
#include "revsde/harness.hpp"
#include "revsde/solvers.hpp"

using namespace revsde;

namespace {

struct Outcome {
  bool passed;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const Check* find_check(const Report& r, const std::string& name) {
  for (const auto& c : r.checks)
    if (c.name == name) return &c;
  return nullptr;
}

Outcome from_checks(const Report& r, std::initializer_list<const char*> names) {
  Outcome o{true, ""};
  for (const char* n : names) {
    const Check* c = find_check(r, n);
    o.passed = o.passed && c != nullptr && c->passed;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string(n) + ": " + (c ? c->detail : "missing");
  }
  return o;
}

double mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double variance(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double correlation(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

BrownianInterval make_interval(std::uint64_t seed, std::size_t capacity, std::size_t batch, std::size_t dims) {
  BrownianInterval::Options o;
  o.dims = dims;
  o.batch = batch;
  o.seed = new_seed(seed);
  o.cache_capacity = capacity;
  return BrownianInterval(o);
}

// Criterion 6.
Outcome reversibility() {
  const auto field = NeuralSdeField::make(4, 3, 16, Activation::lipswish, Activation::lipswish, new_seed(601));
  constexpr std::size_t n = 1024, batch = 4;
  auto noise = make_interval(602, 128, batch, 3);
  const double dt = 1.0 / n;
  auto s = initial_state(field, 0.0, standard_normals(new_seed(603), 4 * batch), batch);
  const auto z0 = s.z, zh0 = s.zhat;
  std::vector<double> dw(3 * batch);
  for (std::size_t k = 0; k < n; ++k) {
    noise.increment(k * dt, (k + 1) * dt, dw);
    revheun_step_forward(field, s, dt, dw, k);
  }
  for (std::size_t k = n; k-- > 0;) {
    noise.increment(k * dt, (k + 1) * dt, dw);
    revheun_step_reverse(field, s, dt, dw, k);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < z0.size(); ++i) {
    num = std::max({num, std::abs(s.z[i] - z0[i]), std::abs(s.zhat[i] - zh0[i])});
    den = std::max({den, std::abs(z0[i]), std::abs(zh0[i])});
  }
  const double rel = num / den;
  return {rel <= 1e-12, "2^10 steps forward and back, relative error " + fmt(rel) + " (<= 1e-12)"};
}

// Criterion 7.
Outcome evaluation_economy() {
  auto inner = NeuralSdeField::make(3, 2, 8, Activation::tanh, Activation::sigmoid, new_seed(701));
  CountingField field(inner);
  constexpr std::size_t n = 256;
  auto noise = make_interval(702, 128, 1, 2);
  SolveConfig c;
  c.step = 1.0 / n;
  c.noise = &noise;
  const std::vector<double> z0{0.1, -0.2, 0.3};
  std::string detail;
  bool ok = true;
  for (auto m : {Method::reversible_heun, Method::midpoint}) {
    c.method = m;
    auto s = initial_state(field, 0.0, z0, 1);
    field.reset();
    integrate(field, s, c);
    const std::size_t want = m == Method::reversible_heun ? n : 2 * n;
    ok = ok && field.drift_evals() == want && field.diffusion_evals() == want;
    detail += std::string(detail.empty() ? "" : ", ") + to_string(m) + " " + std::to_string(field.drift_evals()) +
              " drift + " + std::to_string(field.diffusion_evals()) + " diffusion";
  }
  return {ok, detail + " over N = " + std::to_string(n) + " steps (after the initial state)"};
}

// Criterion 8.
Outcome brownian_correctness() {
  std::string detail;
  bool ok = true;

  // Additivity, including a 10-way split.
  {
    auto bi = make_interval(801, 128, 16, 2);
    const auto whole = bi.increment(0.05, 0.85);
    std::vector<double> sum(whole.size(), 0.0);
    for (int k = 0; k < 10; ++k) {
      const auto piece = bi.increment(0.05 + 0.08 * k, k == 9 ? 0.85 : 0.05 + 0.08 * (k + 1));
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += piece[i];
    }
    bool exact = sum == whole;
    const auto a = bi.increment(0.05, 0.45), b = bi.increment(0.45, 0.85);
    for (std::size_t i = 0; i < whole.size(); ++i) exact = exact && a[i] + b[i] == whole[i];
    ok = ok && exact;
    detail += std::string("additivity ") + (exact ? "exact" : "NOT exact");
  }

  // Determinism under cache capacities 1, 128, 1e4.
  {
    std::vector<std::pair<double, double>> queries;
    for (int k = 0; k < 50; ++k) queries.push_back({k / 50.0, (k + 1) / 50.0});
    for (int k = 49; k >= 0; --k) queries.push_back({k / 50.0, (k + 1) / 50.0});
    queries.push_back({0.0, 1.0});
    queries.push_back({0.123, 0.789});
    std::vector<std::vector<double>> ref;
    bool same = true;
    for (std::size_t cap : {std::size_t{10000}, std::size_t{128}, std::size_t{1}}) {
      auto bi = make_interval(802, cap, 4, 2);
      std::vector<std::vector<double>> got;
      for (const auto& [s, t] : queries) got.push_back(bi.increment(s, t));
      for (std::size_t i = 0; i < queries.size(); ++i) same = same && bi.increment(queries[i].first, queries[i].second) == got[i];
      if (ref.empty()) ref = got;
      same = same && got == ref;
    }
    ok = ok && same;
    detail += std::string("; capacities {1,128,1e4} ") + (same ? "bitwise identical" : "DIFFER");
  }

  // Moments of disjoint increments over 1e4 trees.
  {
    constexpr std::size_t trees = 10000;
    std::vector<double> a(trees), b(trees), c(trees);
    for (std::size_t k = 0; k < trees; ++k) {
      auto bi = make_interval(100000 + k, 128, 1, 1);
      a[k] = bi.increment(0.0, 0.3)[0];
      b[k] = bi.increment(0.3, 0.7)[0];
      c[k] = bi.increment(0.7, 1.0)[0];
    }
    const double ea = std::abs(variance(a) / 0.3 - 1), eb = std::abs(variance(b) / 0.4 - 1),
                 ec = std::abs(variance(c) / 0.3 - 1);
    const double r = std::max({std::abs(correlation(a, b)), std::abs(correlation(b, c)), std::abs(correlation(a, c))});
    const double worst = std::max({ea, eb, ec});
    ok = ok && worst <= 0.05 && r < 0.03;
    detail += "; 1e4 trees variance error " + fmt(100 * worst) + "% (<= 5%), max |r| " + fmt(r) + " (< 0.03)";
  }

  // Bridge conditional moments at 1e5 samples: W_{0,1/4} given W_{0,1}.
  {
    constexpr std::size_t n = 100000;
    const std::vector<double> w_ut{1.3};
    std::vector<double> draws(n);
    for (std::size_t i = 0; i < n; ++i) draws[i] = bridge_sample(0.0, 1.0, 0.25, w_ut, new_seed(900000 + i))[0];
    const double me = std::abs(mean(draws) / (0.25 * 1.3) - 1), ve = std::abs(variance(draws) / 0.1875 - 1);

    auto bi = make_interval(803, 128, n, 1);
    const auto parent = bi.increment(0.0, 1.0);
    const auto child = bi.increment(0.0, 0.25);
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = child[i] - 0.25 * parent[i];
    const double te = std::abs(variance(resid) / 0.1875 - 1);
    const double worst = std::max({me, ve, te});
    ok = ok && worst <= 0.01;
    detail += "; bridge mean/variance error " + fmt(100 * me) + "%/" + fmt(100 * ve) + "%, in-tree residual variance " +
              fmt(100 * te) + "% (<= 1%)";
  }
  return {ok, detail};
}

// Criterion 10.
Outcome stability_region() {
  struct P {
    double re, im;
    std::size_t steps;
    bool bounded;
  };
  const std::vector<P> points{{0, 0.5, 100000, true},  {0, -0.5, 100000, true}, {0, 0.99, 100000, true},
                              {0, -0.99, 100000, true}, {-0.5, 0, 1000, false},  {-0.1, 0.5, 1000, false}};
  bool ok = true;
  std::string detail;
  for (const auto& p : points) {
    const auto r = stability_probe(p.re, p.im, p.steps);
    ok = ok && r.bounded == p.bounded;
    detail += std::string(detail.empty() ? "" : ", ") + fmt(p.re) + (p.im < 0 ? "" : "+") + fmt(p.im) + "i " +
              (r.bounded ? "bounded" : "unbounded") + " (max " + fmt(std::max(r.max_z, r.max_zhat)) + ")";
  }
  return {ok, detail};
}

// Criterion 11.
Outcome clipping_and_lipswish() {
  Mlp net({6, 16, 16, 4}, Activation::lipswish, Activation::identity);
  net.init_uniform(new_seed(1101));
  net.clip_weights();
  std::size_t violations = 0;
  constexpr std::size_t pairs = 1000;
  for (std::size_t k = 0; k < pairs; ++k) {
    const std::size_t l = k % net.layer_count();
    const std::size_t in = net.widths()[l], out = net.widths()[l + 1];
    const auto w = std::as_const(net).weights(l);
    const auto x = standard_normals(new_seed(1200 + k), in);
    double nx = 0.0, ny = 0.0;
    for (double v : x) nx = std::max(nx, std::abs(v));
    for (std::size_t r = 0; r < out; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += w[r * in + c] * x[c];
      ny = std::max(ny, std::abs(acc));
    }
    violations += ny > nx ? 1 : 0;
  }
  double max_slope = 0.0;
  constexpr int grid = 100000;
  for (int i = 0; i <= grid; ++i) max_slope = std::max(max_slope, std::abs(lipswish_derivative(-10.0 + 20.0 * i / grid)));
  return {violations == 0 && max_slope <= 1.0, std::to_string(violations) + " of 1000 (layer, input) pairs expand the inf-norm; grid max |rho'| " +
                                                 fmt(max_slope) + " (<= 1)"};
}

}  // namespace

int main() {
  struct Line {
    int id;
    const char* name;
    Outcome outcome;
    double seconds;
  };
  std::vector<Line> lines;
  // `shared` is time spent on a report that several criteria read.
  auto run = [&](int id, const char* name, const std::function<Outcome()>& fn, double shared = 0.0) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = fn();
    lines.push_back({id, name, std::move(o), seconds_since(t0) + shared});
    const auto& l = lines.back();
    std::printf("%s [%d] %s: %s (%.1f s)\n", l.outcome.passed ? "PASS" : "FAIL", l.id, l.name, l.outcome.detail.c_str(),
                l.seconds);
    std::fflush(stdout);
  };

  Report gradient;
  double gradient_seconds = 0.0;
  {
    ExperimentConfig c;
    c.experiment = "gradient-error";
    const auto t0 = std::chrono::steady_clock::now();
    gradient = run_experiment(c);
    gradient_seconds = seconds_since(t0);
  }
  run(1, "gradient exactness", [&] {
    Outcome o = from_checks(gradient, {"reversible_heun exact gradients"});
    o.passed = o.passed && gradient_seconds < 60.0;
    o.detail += "; experiment runtime " + fmt(gradient_seconds) + " s (< 60 s)";
    return o;
  }, gradient_seconds);
  run(2, "baseline adjoint error trend", [&] {
    Outcome o = from_checks(gradient, {"midpoint adjoint error trend", "heun adjoint error trend"});
    o.passed = o.passed && gradient_seconds < 120.0;
    return o;
  }, gradient_seconds);

  Report convergence;
  double convergence_seconds = 0.0;
  {
    ExperimentConfig c;
    c.experiment = "convergence";
    const auto t0 = std::chrono::steady_clock::now();
    convergence = run_experiment(c);
    convergence_seconds = seconds_since(t0);
  }
  run(3, "strong convergence, multiplicative noise",
      [&] { return from_checks(convergence, {"multiplicative strong order", "coupled increments exact"}); },
      convergence_seconds);
  run(4, "strong convergence, additive noise", [&] { return from_checks(convergence, {"additive strong order"}); },
      convergence_seconds);
  run(5, "weak convergence, additive noise",
      [&] { return from_checks(convergence, {"additive weak order E[Y]", "additive weak order E[Y^2]"}); },
      convergence_seconds);

  run(6, "reversibility round trip", reversibility);
  run(7, "evaluation economy", evaluation_economy);
  run(8, "Brownian Interval correctness", brownian_correctness);

  run(9, "Brownian speed", [] {
    ExperimentConfig c;
    c.experiment = "brownian-bench";
    c.subintervals = {10, 100};
    return from_checks(run_experiment(c), {"doubly-sequential 100 speedup", "repeat determinism"});
  });

  run(10, "stability region", stability_region);
  run(11, "clipping and LipSwish", clipping_and_lipswish);

  run(12, "smoke fit", [] {
    ExperimentConfig c;
    c.experiment = "fit-toy";
    return from_checks(run_experiment(c), {"loss reduction", "gradients match oracle"});
  });

  int failed = 0;
  for (const auto& l : lines) failed += l.outcome.passed ? 0 : 1;
  std::printf("%d of %zu criteria passed\n", static_cast<int>(lines.size()) - failed, lines.size());
  return failed == 0 ? 0 : 1;
}
