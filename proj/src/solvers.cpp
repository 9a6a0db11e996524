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

#include "revsde/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>

namespace revsde {

namespace {

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_finite(std::span<const double> v, std::size_t step) {
  if (!all_finite(v)) throw NumericalError("non-finite solver state", step);
}

// out_i (+)= sum_k sigma_ik dw_k, fixed k order.
void matvec(std::span<const double> sigma, std::span<const double> dw, std::size_t x,
            std::span<double> out) {
  const std::size_t w = dw.size();
  for (std::size_t i = 0; i < x; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < w; ++k) acc += sigma[i * w + k] * dw[k];
    out[i] = acc;
  }
}

struct Dims {
  std::size_t x, w, batch;
};

Dims check_dims(const VectorField& field, const RevHeunState& s, std::span<const double> dw) {
  const Dims d{field.state_dim(), field.noise_dim(), s.batch};
  if (s.z.size() != d.batch * d.x) throw std::invalid_argument("solver: state size mismatch");
  if (dw.size() != d.batch * d.w) throw std::invalid_argument("solver: noise increment size mismatch");
  return d;
}

void check_revheun(const Dims& d, const RevHeunState& s) {
  if (s.zhat.size() != d.batch * d.x || s.mu.size() != d.batch * d.x ||
      s.sigma.size() != d.batch * d.x * d.w)
    throw std::invalid_argument("revheun: state is missing zhat, mu or sigma");
}

void check_noise(const VectorField& field, const SolveConfig& config, std::size_t batch) {
  if (config.noise == nullptr) throw std::invalid_argument("solve: no noise source");
  if (config.noise->dims() != field.noise_dim() || config.noise->batch() != batch)
    throw std::invalid_argument("solve: noise source shape does not match field and batch");
  if (config.noise->horizon() < config.horizon)
    throw std::invalid_argument("solve: noise source does not cover the horizon");
}

std::size_t batch_of(const VectorField& field, std::span<const double> z0) {
  const std::size_t x = field.state_dim();
  if (z0.empty() || z0.size() % x != 0) throw std::invalid_argument("solve: z0 size is not a multiple of state_dim");
  return z0.size() / x;
}

std::map<std::size_t, std::vector<double>> index_schedule(const CotangentSchedule& schedule,
                                                           std::size_t n_steps, std::size_t width) {
  std::map<std::size_t, std::vector<double>> out;
  for (const auto& [n, cot] : schedule) {
    if (n > n_steps) throw std::invalid_argument("cotangent schedule index beyond the last step");
    if (cot.size() != width) throw std::invalid_argument("cotangent schedule entry has the wrong size");
    auto& slot = out[n];
    if (slot.empty()) slot.assign(width, 0.0);
    for (std::size_t i = 0; i < width; ++i) slot[i] += cot[i];
  }
  return out;
}

}  // namespace

const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::reversible_heun: return "reversible_heun";
    case Method::midpoint: return "midpoint";
    case Method::heun: return "heun";
    case Method::euler_maruyama: return "euler_maruyama";
  }
  return "reversible_heun";
}

Method method_from_string(const std::string& name) {
  if (name == "reversible_heun") return Method::reversible_heun;
  if (name == "midpoint") return Method::midpoint;
  if (name == "heun") return Method::heun;
  if (name == "euler_maruyama") return Method::euler_maruyama;
  throw std::invalid_argument("unknown method '" + name + "'");
}

CotangentState CotangentState::zeros(const VectorField& field, std::size_t batch) {
  const std::size_t x = field.state_dim();
  CotangentState c;
  c.d_z.assign(batch * x, 0.0);
  c.d_zhat.assign(batch * x, 0.0);
  c.d_mu.assign(batch * x, 0.0);
  c.d_sigma.assign(batch * field.diffusion_size(), 0.0);
  c.d_params.assign(field.param_count(), 0.0);
  return c;
}

std::size_t SolveConfig::steps() const {
  if (!(step > 0.0) || !(horizon > 0.0)) throw std::invalid_argument("SolveConfig: step and horizon must be positive");
  const double ratio = horizon / step;
  const double n = std::round(ratio);
  if (n < 1.0 || std::abs(ratio - n) > 1e-9 * n)
    throw std::invalid_argument("SolveConfig: horizon must be an integer multiple of the step");
  return static_cast<std::size_t>(n);
}

double SolveConfig::time(std::size_t n) const {
  const std::size_t total = steps();
  return horizon * (static_cast<double>(n) / static_cast<double>(total));
}

RevHeunState initial_state(const VectorField& field, double t, std::span<const double> z0,
                           std::size_t batch) {
  const std::size_t x = field.state_dim();
  const std::size_t xw = field.diffusion_size();
  if (z0.size() != batch * x) throw std::invalid_argument("initial_state: z0 size mismatch");
  RevHeunState s;
  s.t = t;
  s.batch = batch;
  s.z.assign(z0.begin(), z0.end());
  s.zhat = s.z;
  s.mu.resize(batch * x);
  s.sigma.resize(batch * xw);
  for (std::size_t p = 0; p < batch; ++p) {
    auto zp = std::span<const double>(s.zhat).subspan(p * x, x);
    field.drift(t, zp, std::span<double>(s.mu).subspan(p * x, x));
    field.diffusion(t, zp, std::span<double>(s.sigma).subspan(p * xw, xw));
  }
  check_finite(s.mu, 0);
  check_finite(s.sigma, 0);
  return s;
}

void revheun_step_forward(const VectorField& field, RevHeunState& s, double dt,
                          std::span<const double> dw, std::size_t step_index) {
  const Dims d = check_dims(field, s, dw);
  check_revheun(d, s);
  const std::size_t xw = d.x * d.w;
  const double t1 = s.t + dt;
  std::vector<double> sdw(d.x), mu1(d.x), sig1(xw), sig_sum(xw);
  for (std::size_t p = 0; p < d.batch; ++p) {
    double* z = s.z.data() + p * d.x;
    double* zh = s.zhat.data() + p * d.x;
    double* mu = s.mu.data() + p * d.x;
    double* sig = s.sigma.data() + p * xw;
    auto dwp = dw.subspan(p * d.w, d.w);

    matvec({sig, xw}, dwp, d.x, sdw);
    for (std::size_t i = 0; i < d.x; ++i) zh[i] = 2.0 * z[i] - zh[i] + mu[i] * dt + sdw[i];

    field.drift(t1, {zh, d.x}, mu1);
    field.diffusion(t1, {zh, d.x}, sig1);

    for (std::size_t k = 0; k < xw; ++k) sig_sum[k] = sig[k] + sig1[k];
    matvec(sig_sum, dwp, d.x, sdw);
    for (std::size_t i = 0; i < d.x; ++i) z[i] = z[i] + 0.5 * (mu[i] + mu1[i]) * dt + 0.5 * sdw[i];

    std::copy(mu1.begin(), mu1.end(), mu);
    std::copy(sig1.begin(), sig1.end(), sig);
  }
  s.t = t1;
  check_finite(s.z, step_index);
  check_finite(s.zhat, step_index);
}

void revheun_step_reverse(const VectorField& field, RevHeunState& s, double dt,
                          std::span<const double> dw, std::size_t step_index) {
  const Dims d = check_dims(field, s, dw);
  check_revheun(d, s);
  const std::size_t xw = d.x * d.w;
  const double t0 = s.t - dt;
  std::vector<double> sdw(d.x), mu0(d.x), sig0(xw), sig_sum(xw);
  for (std::size_t p = 0; p < d.batch; ++p) {
    double* z = s.z.data() + p * d.x;
    double* zh = s.zhat.data() + p * d.x;
    double* mu = s.mu.data() + p * d.x;
    double* sig = s.sigma.data() + p * xw;
    auto dwp = dw.subspan(p * d.w, d.w);

    matvec({sig, xw}, dwp, d.x, sdw);
    for (std::size_t i = 0; i < d.x; ++i) zh[i] = 2.0 * z[i] - zh[i] - mu[i] * dt - sdw[i];

    field.drift(t0, {zh, d.x}, mu0);
    field.diffusion(t0, {zh, d.x}, sig0);

    for (std::size_t k = 0; k < xw; ++k) sig_sum[k] = sig0[k] + sig[k];
    matvec(sig_sum, dwp, d.x, sdw);
    for (std::size_t i = 0; i < d.x; ++i) z[i] = z[i] - 0.5 * (mu0[i] + mu[i]) * dt - 0.5 * sdw[i];

    std::copy(mu0.begin(), mu0.end(), mu);
    std::copy(sig0.begin(), sig0.end(), sig);
  }
  s.t = t0;
  check_finite(s.z, step_index);
  check_finite(s.zhat, step_index);
}

void revheun_step_backward(const VectorField& field, RevHeunState& s, CotangentState& c, double dt,
                           std::span<const double> dw, std::size_t step_index,
                           const BackwardOptions& options) {
  const Dims d = check_dims(field, s, dw);
  check_revheun(d, s);
  const std::size_t xw = d.x * d.w;
  if (c.d_z.size() != d.batch * d.x || c.d_zhat.size() != d.batch * d.x ||
      c.d_mu.size() != d.batch * d.x || c.d_sigma.size() != d.batch * xw ||
      c.d_params.size() != field.param_count())
    throw std::invalid_argument("revheun_step_backward: cotangent shape mismatch");

  // Local backward through the step map, linearised at the next state.
  std::vector<double> g_mu(d.x), g_sig(xw), v_mu(d.x), v_sig(d.x);
  for (std::size_t p = 0; p < d.batch; ++p) {
    double* gz = c.d_z.data() + p * d.x;
    double* gzh = c.d_zhat.data() + p * d.x;
    double* gm = c.d_mu.data() + p * d.x;
    double* gs = c.d_sigma.data() + p * xw;
    const double* dwp = dw.data() + p * d.w;
    auto zh1 = std::span<const double>(s.zhat).subspan(p * d.x, d.x);

    for (std::size_t i = 0; i < d.x; ++i) {
      g_mu[i] = gm[i] + 0.5 * dt * gz[i];
      for (std::size_t k = 0; k < d.w; ++k) g_sig[i * d.w + k] = gs[i * d.w + k] + 0.5 * gz[i] * dwp[k];
    }
    field.drift_vjp(s.t, zh1, g_mu, v_mu, c.d_params);
    field.diffusion_vjp(s.t, zh1, g_sig, v_sig, c.d_params);

    for (std::size_t i = 0; i < d.x; ++i) {
      const double g_zh1 = gzh[i] + v_mu[i] + v_sig[i];
      const double g_z1 = gz[i];
      gz[i] = g_z1 + 2.0 * g_zh1;
      gzh[i] = -g_zh1;
      gm[i] = 0.5 * dt * g_z1 + dt * g_zh1;
      for (std::size_t k = 0; k < d.w; ++k) gs[i * d.w + k] = (0.5 * g_z1 + g_zh1) * dwp[k];
    }
  }

  if (!options.verify_round_trip) {
    revheun_step_reverse(field, s, dt, dw, step_index);
    return;
  }
  const RevHeunState next = s;
  revheun_step_reverse(field, s, dt, dw, step_index);
  RevHeunState again = s;
  revheun_step_forward(field, again, dt, dw, step_index);
  double err = 0.0, scale = 0.0;
  auto compare = [&](const std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      err = std::max(err, std::abs(a[i] - b[i]));
      scale = std::max(scale, std::abs(b[i]));
    }
  };
  compare(again.z, next.z);
  compare(again.zhat, next.zhat);
  if (err > options.round_trip_tolerance * std::max(scale, 1e-300))
    throw NumericalError("reversible round trip diverged", step_index);
}

void baseline_step(Method method, const VectorField& field, RevHeunState& s, double dt,
                   std::span<const double> dw, std::size_t step_index) {
  if (method == Method::reversible_heun)
    throw std::invalid_argument("baseline_step: reversible_heun is not a baseline method");
  const Dims d = check_dims(field, s, dw);
  const std::size_t xw = d.x * d.w;
  std::vector<double> mu0(d.x), sig0(xw), mu1(d.x), sig1(xw), sdw(d.x), tmp(d.x);
  for (std::size_t p = 0; p < d.batch; ++p) {
    double* z = s.z.data() + p * d.x;
    auto dwp = dw.subspan(p * d.w, d.w);
    field.drift(s.t, {z, d.x}, mu0);
    field.diffusion(s.t, {z, d.x}, sig0);
    matvec(sig0, dwp, d.x, sdw);
    switch (method) {
      case Method::euler_maruyama:
        for (std::size_t i = 0; i < d.x; ++i) z[i] = z[i] + mu0[i] * dt + sdw[i];
        break;
      case Method::midpoint: {
        const double tm = s.t + 0.5 * dt;
        for (std::size_t i = 0; i < d.x; ++i) tmp[i] = z[i] + 0.5 * (mu0[i] * dt + sdw[i]);
        field.drift(tm, tmp, mu1);
        field.diffusion(tm, tmp, sig1);
        matvec(sig1, dwp, d.x, sdw);
        for (std::size_t i = 0; i < d.x; ++i) z[i] = z[i] + mu1[i] * dt + sdw[i];
        break;
      }
      case Method::heun: {
        for (std::size_t i = 0; i < d.x; ++i) tmp[i] = z[i] + mu0[i] * dt + sdw[i];
        field.drift(s.t + dt, tmp, mu1);
        field.diffusion(s.t + dt, tmp, sig1);
        for (std::size_t k = 0; k < xw; ++k) sig1[k] += sig0[k];
        matvec(sig1, dwp, d.x, sdw);
        for (std::size_t i = 0; i < d.x; ++i) z[i] = z[i] + 0.5 * (mu0[i] + mu1[i]) * dt + 0.5 * sdw[i];
        break;
      }
      case Method::reversible_heun: break;
    }
  }
  s.t += dt;
  check_finite(s.z, step_index);
}

void integrate(const VectorField& field, RevHeunState& state, const SolveConfig& config,
               Trajectory* trajectory) {
  const std::size_t n_steps = config.steps();
  check_noise(field, config, state.batch);
  std::vector<double> dw(config.noise->width());
  if (trajectory) {
    trajectory->times.assign(1, config.time(0));
    trajectory->states.assign(1, state.z);
  }
  for (std::size_t n = 0; n < n_steps; ++n) {
    const double t0 = config.time(n);
    const double t1 = config.time(n + 1);
    config.noise->increment(t0, t1, dw);
    state.t = t0;
    if (config.method == Method::reversible_heun)
      revheun_step_forward(field, state, t1 - t0, dw, n + 1);
    else
      baseline_step(config.method, field, state, t1 - t0, dw, n + 1);
    state.t = t1;
    if (trajectory) {
      trajectory->times.push_back(t1);
      trajectory->states.push_back(state.z);
    }
  }
}

SolveResult solve(const VectorField& field, std::span<const double> z0, const SolveConfig& config) {
  const std::size_t batch = batch_of(field, z0);
  SolveResult r;
  if (config.method == Method::reversible_heun) {
    r.state = initial_state(field, 0.0, z0, batch);
  } else {
    r.state.t = 0.0;
    r.state.batch = batch;
    r.state.z.assign(z0.begin(), z0.end());
  }
  integrate(field, r.state, config, config.store_trajectory ? &r.trajectory : nullptr);
  return r;
}

SolveResult revheun_solve(const VectorField& field, std::span<const double> z0,
                          const SolveConfig& config) {
  SolveConfig c = config;
  c.method = Method::reversible_heun;
  return solve(field, z0, c);
}

Gradients revheun_backward(const VectorField& field, const RevHeunState& terminal,
                           const SolveConfig& config, const CotangentSchedule& schedule,
                           const BackwardOptions& options,
                           std::vector<std::vector<double>>* adjoint_path) {
  const std::size_t n_steps = config.steps();
  const std::size_t x = field.state_dim();
  const std::size_t xw = field.diffusion_size();
  const std::size_t batch = terminal.batch;
  check_noise(field, config, batch);
  const auto extra = index_schedule(schedule, n_steps, batch * x);

  RevHeunState s = terminal;
  CotangentState c = CotangentState::zeros(field, batch);
  auto add_loss = [&](std::size_t n) {
    if (auto it = extra.find(n); it != extra.end())
      for (std::size_t i = 0; i < c.d_z.size(); ++i) c.d_z[i] += it->second[i];
  };
  add_loss(n_steps);
  if (adjoint_path) adjoint_path->assign(n_steps + 1, {});
  if (adjoint_path) (*adjoint_path)[n_steps] = c.d_z;

  std::vector<double> dw(config.noise->width());
  for (std::size_t n = n_steps; n-- > 0;) {
    const double t0 = config.time(n);
    const double t1 = config.time(n + 1);
    config.noise->increment(t0, t1, dw);
    s.t = t1;
    revheun_step_backward(field, s, c, t1 - t0, dw, n + 1, options);
    s.t = t0;
    add_loss(n);
    if (adjoint_path && n > 0) (*adjoint_path)[n] = c.d_z;
  }

  // Initial map z0 -> (z0, z0, mu(0, z0), sigma(0, z0)).
  Gradients g;
  g.z0.resize(batch * x);
  g.params = std::move(c.d_params);
  std::vector<double> v_mu(x), v_sig(x);
  for (std::size_t p = 0; p < batch; ++p) {
    auto zh = std::span<const double>(s.zhat).subspan(p * x, x);
    field.drift_vjp(s.t, zh, std::span<const double>(c.d_mu).subspan(p * x, x), v_mu, g.params);
    field.diffusion_vjp(s.t, zh, std::span<const double>(c.d_sigma).subspan(p * xw, xw), v_sig, g.params);
    for (std::size_t i = 0; i < x; ++i)
      g.z0[p * x + i] = c.d_z[p * x + i] + c.d_zhat[p * x + i] + v_mu[i] + v_sig[i];
  }
  if (adjoint_path) (*adjoint_path)[0] = g.z0;
  return g;
}

Gradients revheun_adjoint_solve(const VectorField& field, std::span<const double> z0,
                                const SolveConfig& config, std::span<const double> loss_cotangent,
                                const BackwardOptions& options,
                                std::vector<std::vector<double>>* adjoint_path) {
  SolveConfig c = config;
  c.store_trajectory = false;
  const SolveResult fwd = revheun_solve(field, z0, c);
  const CotangentSchedule schedule{{c.steps(), std::vector<double>(loss_cotangent.begin(), loss_cotangent.end())}};
  return revheun_backward(field, fwd.state, c, schedule, options, adjoint_path);
}

Gradients revheun_adjoint_solve(const VectorField& field, std::span<const double> z0,
                                const SolveConfig& config, const CotangentSchedule& schedule,
                                const BackwardOptions& options) {
  SolveConfig c = config;
  c.store_trajectory = false;
  const SolveResult fwd = revheun_solve(field, z0, c);
  return revheun_backward(field, fwd.state, c, schedule, options);
}

// ---------------------------------------------------------------------------
// Continuous adjoint

namespace {

struct Augmented {
  std::vector<double> z, a, g;
};

// Increment of the (Z, A, G) system over a step of signed length h with noise dw.
void augmented_increment(const VectorField& field, double t, const Augmented& y, double h,
                         std::span<const double> dw, std::size_t batch, Augmented& inc) {
  const std::size_t x = field.state_dim();
  const std::size_t w = field.noise_dim();
  const std::size_t xw = x * w;
  inc.z.assign(batch * x, 0.0);
  inc.a.assign(batch * x, 0.0);
  inc.g.assign(field.param_count(), 0.0);
  std::vector<double> mu(x), sig(xw), sdw(x), cot_mu(x), cot_sig(xw), v_mu(x), v_sig(x);
  for (std::size_t p = 0; p < batch; ++p) {
    auto zp = std::span<const double>(y.z).subspan(p * x, x);
    const double* ap = y.a.data() + p * x;
    auto dwp = dw.subspan(p * w, w);
    field.drift(t, zp, mu);
    field.diffusion(t, zp, sig);
    matvec(sig, dwp, x, sdw);
    for (std::size_t i = 0; i < x; ++i) {
      inc.z[p * x + i] = mu[i] * h + sdw[i];
      cot_mu[i] = ap[i] * h;
      for (std::size_t k = 0; k < w; ++k) cot_sig[i * w + k] = ap[i] * dwp[k];
    }
    field.drift_vjp(t, zp, cot_mu, v_mu, inc.g);
    field.diffusion_vjp(t, zp, cot_sig, v_sig, inc.g);
    for (std::size_t i = 0; i < x; ++i) inc.a[p * x + i] = -(v_mu[i] + v_sig[i]);
  }
  for (double& v : inc.g) v = -v;
}

void axpy(Augmented& out, const Augmented& base, double c, const Augmented& inc) {
  auto one = [c](std::vector<double>& o, const std::vector<double>& b, const std::vector<double>& d) {
    o.resize(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) o[i] = b[i] + c * d[i];
  };
  one(out.z, base.z, inc.z);
  one(out.a, base.a, inc.a);
  one(out.g, base.g, inc.g);
}

}  // namespace

Gradients continuous_adjoint_solve(Method method, const VectorField& field,
                                   std::span<const double> z0, const SolveConfig& config,
                                   std::span<const double> loss_cotangent,
                                   std::vector<std::vector<double>>* adjoint_path) {
  if (method != Method::midpoint && method != Method::heun)
    throw std::invalid_argument("continuous_adjoint_solve: method must be midpoint or heun");
  SolveConfig c = config;
  c.method = method;
  c.store_trajectory = false;
  const std::size_t n_steps = c.steps();
  const SolveResult fwd = solve(field, z0, c);
  const std::size_t batch = fwd.state.batch;
  if (loss_cotangent.size() != fwd.state.z.size())
    throw std::invalid_argument("continuous_adjoint_solve: loss cotangent size mismatch");

  Augmented y{fwd.state.z, {loss_cotangent.begin(), loss_cotangent.end()},
              std::vector<double>(field.param_count(), 0.0)};
  if (adjoint_path) {
    adjoint_path->assign(n_steps + 1, {});
    (*adjoint_path)[n_steps] = y.a;
  }
  Augmented k1, k2, mid;
  std::vector<double> dw(c.noise->width());
  for (std::size_t n = n_steps; n-- > 0;) {
    const double t0 = c.time(n);
    const double t1 = c.time(n + 1);
    const double dt = t1 - t0;
    c.noise->increment(t0, t1, dw);
    for (double& v : dw) v = -v;
    augmented_increment(field, t1, y, -dt, dw, batch, k1);
    if (method == Method::midpoint) {
      axpy(mid, y, 0.5, k1);
      augmented_increment(field, t0 + 0.5 * dt, mid, -dt, dw, batch, k2);
      axpy(y, y, 1.0, k2);
    } else {
      axpy(mid, y, 1.0, k1);
      augmented_increment(field, t0, mid, -dt, dw, batch, k2);
      for (std::size_t i = 0; i < k1.z.size(); ++i) k1.z[i] += k2.z[i];
      for (std::size_t i = 0; i < k1.a.size(); ++i) k1.a[i] += k2.a[i];
      for (std::size_t i = 0; i < k1.g.size(); ++i) k1.g[i] += k2.g[i];
      axpy(y, y, 0.5, k1);
    }
    check_finite(y.z, n + 1);
    check_finite(y.a, n + 1);
    if (adjoint_path) (*adjoint_path)[n] = y.a;
  }
  return Gradients{std::move(y.a), std::move(y.g)};
}

// ---------------------------------------------------------------------------
// Tape-based oracle

namespace {

class Tape {
 public:
  Tape(const VectorField& field, std::size_t batch, std::size_t limit)
      : field_(field), batch_(batch), limit_(limit) {}

  int leaf(std::span<const double> v) {
    Node n;
    n.kind = Kind::leaf;
    n.value.assign(v.begin(), v.end());
    return push(std::move(n));
  }

  int lincomb(std::initializer_list<std::pair<int, double>> terms) {
    Node n;
    n.kind = Kind::lincomb;
    n.terms.assign(terms.begin(), terms.end());
    n.value.assign(nodes_[n.terms.front().first].value.size(), 0.0);
    for (const auto& [id, coeff] : n.terms) {
      const auto& v = nodes_[id].value;
      for (std::size_t i = 0; i < v.size(); ++i) n.value[i] += coeff * v[i];
    }
    return push(std::move(n));
  }

  // Per path: sigma (x by w) times the constant dw.
  int sigma_dw(int sigma, std::span<const double> dw) {
    const std::size_t x = field_.state_dim(), w = field_.noise_dim();
    Node n;
    n.kind = Kind::sigma_dw;
    n.input = sigma;
    n.constant.assign(dw.begin(), dw.end());
    n.value.assign(batch_ * x, 0.0);
    const auto& s = nodes_[sigma].value;
    for (std::size_t p = 0; p < batch_; ++p)
      for (std::size_t i = 0; i < x; ++i)
        for (std::size_t k = 0; k < w; ++k)
          n.value[p * x + i] += s[p * x * w + i * w + k] * dw[p * w + k];
    return push(std::move(n));
  }

  int drift(double t, int z) { return field_eval(Kind::drift, t, z); }
  int diffusion(double t, int z) { return field_eval(Kind::diffusion, t, z); }

  const std::vector<double>& value(int id) const { return nodes_[id].value; }

  // Reverse sweep from the given seeds; returns (grad of `wrt`, parameter gradient).
  std::pair<std::vector<double>, std::vector<double>> backward(
      const std::vector<std::pair<int, std::vector<double>>>& seeds, int wrt) {
    std::vector<std::vector<double>> grads(nodes_.size());
    auto grad = [&](int id) -> std::vector<double>& {
      if (grads[id].empty()) grads[id].assign(nodes_[id].value.size(), 0.0);
      return grads[id];
    };
    for (const auto& [id, g] : seeds) {
      auto& dst = grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    std::vector<double> params(field_.param_count(), 0.0);
    const std::size_t x = field_.state_dim(), w = field_.noise_dim();
    std::vector<double> cz(x);
    for (std::size_t id = nodes_.size(); id-- > 0;) {
      if (grads[id].empty()) continue;
      const Node& n = nodes_[id];
      const auto& g = grads[id];
      switch (n.kind) {
        case Kind::leaf: break;
        case Kind::lincomb:
          for (const auto& [in, coeff] : n.terms) {
            auto& dst = grad(in);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += coeff * g[i];
          }
          break;
        case Kind::sigma_dw: {
          auto& dst = grad(n.input);
          for (std::size_t p = 0; p < batch_; ++p)
            for (std::size_t i = 0; i < x; ++i)
              for (std::size_t k = 0; k < w; ++k)
                dst[p * x * w + i * w + k] += g[p * x + i] * n.constant[p * w + k];
          break;
        }
        case Kind::drift:
        case Kind::diffusion: {
          const std::size_t out = n.kind == Kind::drift ? x : x * w;
          const auto& zv = nodes_[n.input].value;
          auto& dst = grad(n.input);
          for (std::size_t p = 0; p < batch_; ++p) {
            auto zp = std::span<const double>(zv).subspan(p * x, x);
            auto gp = std::span<const double>(g).subspan(p * out, out);
            if (n.kind == Kind::drift)
              field_.drift_vjp(n.t, zp, gp, cz, params);
            else
              field_.diffusion_vjp(n.t, zp, gp, cz, params);
            for (std::size_t i = 0; i < x; ++i) dst[p * x + i] += cz[i];
          }
          break;
        }
      }
      if (static_cast<int>(id) != wrt) std::vector<double>().swap(grads[id]);
    }
    return {grad(wrt), params};
  }

 private:
  enum class Kind { leaf, lincomb, sigma_dw, drift, diffusion };

  struct Node {
    Kind kind = Kind::leaf;
    std::vector<double> value;
    std::vector<std::pair<int, double>> terms;
    std::vector<double> constant;
    int input = -1;
    double t = 0.0;
  };

  int field_eval(Kind kind, double t, int z) {
    const std::size_t x = field_.state_dim();
    const std::size_t out = kind == Kind::drift ? x : field_.diffusion_size();
    Node n;
    n.kind = kind;
    n.t = t;
    n.input = z;
    n.value.resize(batch_ * out);
    const auto& zv = nodes_[z].value;
    for (std::size_t p = 0; p < batch_; ++p) {
      auto zp = std::span<const double>(zv).subspan(p * x, x);
      auto op = std::span<double>(n.value).subspan(p * out, out);
      if (kind == Kind::drift)
        field_.drift(t, zp, op);
      else
        field_.diffusion(t, zp, op);
    }
    return push(std::move(n));
  }

  int push(Node n) {
    // Value plus a same-sized gradient slot on the reverse sweep.
    bytes_ += 2 * sizeof(double) * (n.value.size() + n.constant.size()) + sizeof(Node);
    if (bytes_ > limit_)
      throw MemoryLimitError("unrolled_backprop: tape exceeds the memory limit of " +
                             std::to_string(limit_) + " bytes");
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  const VectorField& field_;
  std::size_t batch_;
  std::size_t limit_;
  std::size_t bytes_ = 0;
  std::vector<Node> nodes_;
};

}  // namespace

Gradients unrolled_backprop(const VectorField& field, std::span<const double> z0,
                            const SolveConfig& config, const CotangentSchedule& schedule,
                            const UnrolledOptions& options) {
  const std::size_t batch = batch_of(field, z0);
  const std::size_t n_steps = config.steps();
  check_noise(field, config, batch);
  const auto extra = index_schedule(schedule, n_steps, z0.size());

  Tape tape(field, batch, options.memory_limit_bytes);
  const int z_leaf = tape.leaf(z0);
  std::vector<int> z_nodes{z_leaf};
  int z = z_leaf;
  int zh = z_leaf, mu = -1, sig = -1;
  if (config.method == Method::reversible_heun) {
    mu = tape.drift(0.0, zh);
    sig = tape.diffusion(0.0, zh);
  }
  std::vector<double> dw(config.noise->width());
  for (std::size_t n = 0; n < n_steps; ++n) {
    const double t0 = config.time(n);
    const double t1 = config.time(n + 1);
    const double dt = t1 - t0;
    config.noise->increment(t0, t1, dw);
    switch (config.method) {
      case Method::reversible_heun: {
        const int zh1 = tape.lincomb({{z, 2.0}, {zh, -1.0}, {mu, dt}, {tape.sigma_dw(sig, dw), 1.0}});
        const int mu1 = tape.drift(t1, zh1);
        const int sig1 = tape.diffusion(t1, zh1);
        const int s = tape.sigma_dw(tape.lincomb({{sig, 1.0}, {sig1, 1.0}}), dw);
        z = tape.lincomb({{z, 1.0}, {mu, 0.5 * dt}, {mu1, 0.5 * dt}, {s, 0.5}});
        zh = zh1;
        mu = mu1;
        sig = sig1;
        break;
      }
      case Method::midpoint: {
        const int m0 = tape.drift(t0, z);
        const int s0 = tape.sigma_dw(tape.diffusion(t0, z), dw);
        const int mid = tape.lincomb({{z, 1.0}, {m0, 0.5 * dt}, {s0, 0.5}});
        const double tm = t0 + 0.5 * dt;
        const int m1 = tape.drift(tm, mid);
        const int s1 = tape.sigma_dw(tape.diffusion(tm, mid), dw);
        z = tape.lincomb({{z, 1.0}, {m1, dt}, {s1, 1.0}});
        break;
      }
      case Method::heun: {
        const int m0 = tape.drift(t0, z);
        const int g0 = tape.diffusion(t0, z);
        const int pred = tape.lincomb({{z, 1.0}, {m0, dt}, {tape.sigma_dw(g0, dw), 1.0}});
        const int m1 = tape.drift(t1, pred);
        const int g1 = tape.diffusion(t1, pred);
        const int s = tape.sigma_dw(tape.lincomb({{g0, 1.0}, {g1, 1.0}}), dw);
        z = tape.lincomb({{z, 1.0}, {m0, 0.5 * dt}, {m1, 0.5 * dt}, {s, 0.5}});
        break;
      }
      case Method::euler_maruyama: {
        const int m0 = tape.drift(t0, z);
        const int s0 = tape.sigma_dw(tape.diffusion(t0, z), dw);
        z = tape.lincomb({{z, 1.0}, {m0, dt}, {s0, 1.0}});
        break;
      }
    }
    check_finite(tape.value(z), n + 1);
    z_nodes.push_back(z);
  }

  std::vector<std::pair<int, std::vector<double>>> seeds;
  for (const auto& [n, cot] : extra) seeds.emplace_back(z_nodes[n], cot);
  auto [gz, gp] = tape.backward(seeds, z_leaf);
  return Gradients{std::move(gz), std::move(gp)};
}

Gradients unrolled_backprop(const VectorField& field, std::span<const double> z0,
                            const SolveConfig& config, std::span<const double> loss_cotangent,
                            const UnrolledOptions& options) {
  const CotangentSchedule schedule{
      {config.steps(), std::vector<double>(loss_cotangent.begin(), loss_cotangent.end())}};
  return unrolled_backprop(field, z0, config, schedule, options);
}

double relative_l1_error(const Gradients& a, const Gradients& b) {
  if (a.z0.size() != b.z0.size() || a.params.size() != b.params.size())
    throw std::invalid_argument("relative_l1_error: gradient shapes differ");
  double diff = 0.0, na = 0.0, nb = 0.0;
  auto acc = [&](const std::vector<double>& u, const std::vector<double>& v) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      diff += std::abs(u[i] - v[i]);
      na += std::abs(u[i]);
      nb += std::abs(v[i]);
    }
  };
  acc(a.z0, b.z0);
  acc(a.params, b.params);
  const double denom = std::max(na, nb);
  return denom == 0.0 ? 0.0 : diff / denom;
}

StabilityResult stability_probe(double re, double im, std::size_t n_steps) {
  if (n_steps == 0) throw std::invalid_argument("stability_probe: n_steps must be positive");
  constexpr double kThreshold = 10.0;
  const LinearField field(2, 1, {re, -im, im, re}, {0.0, 0.0});
  const std::vector<double> z0{1.0, 0.0};
  RevHeunState s = initial_state(field, 0.0, z0, 1);
  const std::vector<double> dw{0.0};
  StabilityResult r;
  r.max_z = r.max_zhat = 1.0;
  for (std::size_t n = 0; n < n_steps; ++n) {
    revheun_step_forward(field, s, 1.0, dw, n + 1);
    r.max_z = std::max(r.max_z, std::hypot(s.z[0], s.z[1]));
    r.max_zhat = std::max(r.max_zhat, std::hypot(s.zhat[0], s.zhat[1]));
    r.steps_run = n + 1;
    if (r.max_z > kThreshold || r.max_zhat > kThreshold) {
      r.bounded = false;
      break;
    }
  }
  return r;
}

void write_trajectory_csv(const Trajectory& trajectory, std::size_t batch, std::size_t state_dim,
                          std::ostream& os) {
  os << 't';
  for (std::size_t p = 0; p < batch; ++p)
    for (std::size_t i = 0; i < state_dim; ++i) {
      if (batch == 1)
        os << ",z" << i;
      else
        os << ",p" << p << "_z" << i;
    }
  os << '\n';
  char buf[32];
  for (std::size_t r = 0; r < trajectory.times.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", trajectory.times[r]);
    os << buf;
    for (double v : trajectory.states[r]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace revsde
