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

#include "revsde/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "revsde/brownian.hpp"
#include "revsde/solvers.hpp"

namespace revsde {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty entry in list '" + text + "'");
    out.push_back(item);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || v < 0)
    throw std::invalid_argument("'" + key + "' expects a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size()) throw std::invalid_argument("'" + key + "' expects a number, got '" + value + "'");
  return v;
}

std::vector<double> or_default(const std::vector<double>& v, std::vector<double> def) {
  return v.empty() ? def : v;
}

std::size_t or_default(std::size_t v, std::size_t def) { return v == 0 ? def : v; }

std::vector<double> powers_of_two(int from, int to) {
  std::vector<double> out;
  for (int e = from; e >= to; --e) out.push_back(std::ldexp(1.0, e));
  return out;
}

std::string pow2_label(double h) {
  int e = 0;
  const double m = std::frexp(h, &e);
  if (m == 0.5) return "2^" + std::to_string(e - 1);
  return short_fmt(h);
}

SeedState derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return new_seed(mix64(seed ^ mix64(a * 0x9E3779B97F4A7C15ull + b)));
}

void add_check(Report& r, std::string name, bool passed, std::string detail) {
  r.checks.push_back(Check{std::move(name), passed, std::move(detail)});
}

void finish_summary(Report& r, std::ostringstream& os) {
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
  for (const auto& c : r.checks)
    os << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  r.summary = os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::vector<double> parse_step_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    double v = 0.0;
    if (auto caret = item.find('^'); caret != std::string::npos) {
      const double base = parse_double("steps", trim(item.substr(0, caret)));
      const double expo = parse_double("steps", trim(item.substr(caret + 1)));
      v = std::pow(base, expo);
    } else {
      v = parse_double("steps", item);
    }
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("step sizes must be positive, got '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void ExperimentConfig::set(const std::string& raw_key, const std::string& raw_value) {
  std::string key = trim(raw_key);
  std::replace(key.begin(), key.end(), '_', '-');
  const std::string value = trim(raw_value);
  if (key == "experiment") {
    experiment = value;
  } else if (key == "seed") {
    std::size_t pos = 0;
    try {
      seed = std::stoull(value, &pos, 0);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != value.size() || value.empty() || value[0] == '-')
      throw std::invalid_argument("'seed' expects a 64-bit unsigned integer, got '" + value + "'");
  } else if (key == "out") {
    out = value;
  } else if (key == "batch") {
    batch = parse_size(key, value);
  } else if (key == "steps") {
    steps = parse_step_list(value);
  } else if (key == "paths") {
    paths = parse_size(key, value);
  } else if (key == "methods") {
    methods = split_list(value);
    for (const auto& m : methods) method_from_string(m);
  } else if (key == "cache-capacity") {
    cache_capacity = parse_size(key, value);
  } else if (key == "vbt-eps") {
    vbt_eps = parse_step_list(value).at(0);
  } else if (key == "dims") {
    dims = parse_size(key, value);
  } else if (key == "weak-paths") {
    weak_paths = parse_size(key, value);
  } else if (key == "weak-steps") {
    weak_steps = parse_step_list(value);
  } else if (key == "iterations") {
    iterations = parse_size(key, value);
  } else if (key == "learning-rate") {
    learning_rate = parse_double(key, value);
  } else if (key == "repeats") {
    repeats = parse_size(key, value);
  } else if (key == "subintervals") {
    subintervals.clear();
    for (const auto& s : split_list(value)) subintervals.push_back(parse_size(key, s));
  } else if (key == "spot-check-every") {
    spot_check_every = parse_size(key, value);
  } else {
    throw std::invalid_argument("unknown config key '" + raw_key + "'");
  }
}

void ExperimentConfig::load_text(const std::string& text) {
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  load_text(ss.str());
}

void ExperimentConfig::validate() const {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), experiment) == names.end())
    throw std::invalid_argument("unknown experiment '" + experiment + "'");
  if (cache_capacity == 0) throw std::invalid_argument("cache-capacity must be positive");
  if (repeats == 0) throw std::invalid_argument("repeats must be positive");
  if (vbt_eps < 0.0) throw std::invalid_argument("vbt-eps must be positive");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0)
    throw std::invalid_argument("learning-rate must be finite and non-negative");
  if (std::find(subintervals.begin(), subintervals.end(), std::size_t{0}) != subintervals.end())
    throw std::invalid_argument("subintervals must be positive");
  if (!out.empty()) {
    const auto parent = std::filesystem::absolute(out).parent_path();
    if (!std::filesystem::is_directory(parent))
      throw std::invalid_argument("output directory '" + parent.string() + "' does not exist");
  }
}

bool Report::passed() const noexcept {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"gradient-error", "convergence", "brownian-bench",
                                              "stability", "fit-toy"};
  return names;
}

Report run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (config.experiment == "gradient-error") return run_gradient_error(config);
  if (config.experiment == "convergence") return run_convergence(config);
  if (config.experiment == "brownian-bench") return run_brownian_bench(config);
  if (config.experiment == "stability") return run_stability(config);
  return run_fit_toy(config);
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: x values are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss += r * r;
  }
  f.residual = std::sqrt(ss / n);
  return f;
}

// ---------------------------------------------------------------------------
// Test problems

ElementwiseField anharmonic_oscillator() {
  ElementwiseField::Functions fn;
  fn.f = [](double, double y) { return std::sin(y); };
  fn.f_prime = [](double, double y) { return std::cos(y); };
  fn.g = [](double, double) { return 1.0; };
  fn.g_prime = [](double, double) { return 0.0; };
  fn.g_second = [](double, double) { return 0.0; };
  return ElementwiseField(1, std::move(fn));
}

ElementwiseField anharmonic_cosine_noise() {
  ElementwiseField::Functions fn;
  fn.f = [](double, double y) { return std::sin(y); };
  fn.f_prime = [](double, double y) { return std::cos(y); };
  fn.g = [](double, double y) { return std::cos(y); };
  fn.g_prime = [](double, double y) { return -std::sin(y); };
  fn.g_second = [](double, double y) { return -std::cos(y); };
  return ElementwiseField(1, std::move(fn));
}

void CrossCosineField::drift(double, std::span<const double> z, std::span<double> out) const {
  out[0] = std::sin(z[0]);
  out[1] = std::sin(z[1]);
}

void CrossCosineField::diffusion(double, std::span<const double> z, std::span<double> out) const {
  out[0] = std::cos(z[1]);
  out[1] = 0.0;
  out[2] = 0.0;
  out[3] = std::cos(z[0]);
}

void CrossCosineField::drift_vjp(double, std::span<const double> z, std::span<const double> cot,
                                 std::span<double> cot_z, std::span<double>) const {
  cot_z[0] = cot[0] * std::cos(z[0]);
  cot_z[1] = cot[1] * std::cos(z[1]);
}

void CrossCosineField::diffusion_vjp(double, std::span<const double> z, std::span<const double> cot,
                                     std::span<double> cot_z, std::span<double>) const {
  cot_z[0] = -cot[3] * std::sin(z[0]);
  cot_z[1] = -cot[0] * std::sin(z[1]);
}

OuMoments ou_moments(double t, double rho, double kappa, double chi) {
  const double mean = rho / kappa * t - rho / (kappa * kappa) * (1.0 - std::exp(-kappa * t));
  const double var = chi * chi / (2.0 * kappa) * (1.0 - std::exp(-2.0 * kappa * t));
  return {mean, var + mean * mean};
}

// ---------------------------------------------------------------------------
// Gradient error

Report run_gradient_error(const ExperimentConfig& config) {
  constexpr std::size_t kState = 8, kHidden = 8;
  const std::size_t noise = or_default(config.dims, 4);
  const std::size_t batch = or_default(config.batch, 8);
  const auto steps = or_default(config.steps, {1.0, 0.25, 0.0625, 0.015625, 0.00390625});
  std::vector<std::string> methods = config.methods;
  if (methods.empty()) methods = {"reversible_heun", "midpoint", "heun"};
  for (const auto& m : methods) {
    const Method mm = method_from_string(m);
    if (mm == Method::euler_maruyama)
      throw std::invalid_argument("gradient-error: methods must be reversible_heun, midpoint or heun");
  }

  const auto field = NeuralSdeField::make(kState, noise, kHidden, Activation::tanh, Activation::sigmoid,
                                          derive_seed(config.seed, 1));
  const auto z0 = standard_normals(derive_seed(config.seed, 2), batch * kState);
  const std::vector<double> cot(batch * kState, 1.0);

  Report r;
  std::ostringstream csv;
  csv << "method,step,relative_l1_error,oracle_l1_norm\n";
  std::vector<std::vector<double>> errors(methods.size());
  for (std::size_t j = 0; j < steps.size(); ++j) {
    BrownianInterval::Options bo;
    bo.dims = noise;
    bo.batch = batch;
    bo.seed = derive_seed(config.seed, 3, j);
    bo.cache_capacity = config.cache_capacity;
    BrownianInterval bi(bo);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      SolveConfig c;
      c.method = method_from_string(methods[m]);
      c.step = steps[j];
      c.horizon = 1.0;
      c.noise = &bi;
      const Gradients oracle = unrolled_backprop(field, z0, c, cot);
      const Gradients od = c.method == Method::reversible_heun
                               ? revheun_adjoint_solve(field, z0, c, cot)
                               : continuous_adjoint_solve(c.method, field, z0, c, cot);
      const double err = relative_l1_error(od, oracle);
      double norm = 0.0;
      for (double v : oracle.z0) norm += std::abs(v);
      for (double v : oracle.params) norm += std::abs(v);
      errors[m].push_back(err);
      csv << methods[m] << ',' << fmt(steps[j]) << ',' << fmt(err) << ',' << fmt(norm) << '\n';
    }
  }
  r.csv = csv.str();

  std::ostringstream os;
  os << "gradient-error: state " << kState << ", noise " << noise << ", batch " << batch << ", hidden "
     << kHidden << '\n';
  for (std::size_t m = 0; m < methods.size(); ++m) {
    os << "  " << methods[m] << ':';
    for (std::size_t j = 0; j < steps.size(); ++j) os << ' ' << pow2_label(steps[j]) << '=' << short_fmt(errors[m][j]);
    os << '\n';
    if (methods[m] == "reversible_heun") {
      const double worst = *std::max_element(errors[m].begin(), errors[m].end());
      add_check(r, "reversible_heun exact gradients", worst <= 1e-12, "max relative L1 " + short_fmt(worst) + " (<= 1e-12)");
    } else {
      bool ok = steps.size() >= 2;
      std::string detail;
      for (std::size_t j = 1; j < steps.size(); ++j) {
        // Required reduction: sqrt of the step ratio, i.e. 2x per 4x refinement.
        const double need = std::sqrt(steps[j - 1] / steps[j]);
        const double got = errors[m][j - 1] / errors[m][j];
        ok = ok && steps[j] < steps[j - 1] && got >= need;
        detail += (j > 1 ? ", " : "") + short_fmt(got);
      }
      add_check(r, methods[m] + " adjoint error trend", ok, "error ratios " + detail + " (each >= 2 per 4x refinement)");
    }
  }
  finish_summary(r, os);
  return r;
}

// ---------------------------------------------------------------------------
// Convergence

namespace {

struct StudyResult {
  std::vector<double> strong;       // sqrt(E |Y_N - Y_fine|^2)
  std::vector<double> weak_mean;    // |E[Y_N] - E[Y_fine]| (first coordinate)
  std::vector<double> weak_second;  // |E[Y_N^2] - E[Y_fine^2]|
  bool coupling_exact = true;
};

StudyResult coupled_study(const VectorField& field, double y0, std::size_t paths, std::size_t chunk,
                          const std::vector<double>& steps, std::uint64_t seed, std::uint64_t tag,
                          std::size_t cache_capacity) {
  const std::size_t x = field.state_dim();
  const std::size_t w = field.noise_dim();
  const std::size_t ns = steps.size();
  std::vector<double> s2(ns, 0.0), d1(ns, 0.0), d2(ns, 0.0);
  StudyResult res;
  std::vector<double> coarse_inc, fine_sum, fine_inc;
  for (std::size_t start = 0, c = 0; start < paths; start += chunk, ++c) {
    const std::size_t b = std::min(chunk, paths - start);
    BrownianInterval::Options bo;
    bo.dims = w;
    bo.batch = b;
    bo.seed = derive_seed(seed, tag, c);
    bo.cache_capacity = cache_capacity;
    BrownianInterval bi(bo);
    const std::vector<double> z0(b * x, y0);
    for (std::size_t j = 0; j < ns; ++j) {
      SolveConfig coarse;
      coarse.method = Method::reversible_heun;
      coarse.step = steps[j];
      coarse.horizon = 1.0;
      coarse.noise = &bi;
      SolveConfig fine = coarse;
      fine.method = Method::heun;
      fine.step = steps[j] / 10.0;

      // Ten fine increments must sum exactly to each coarse increment.
      const std::size_t n = coarse.steps();
      coarse_inc.resize(bi.width());
      fine_inc.resize(bi.width());
      for (std::size_t k = 0; k < n; ++k) {
        bi.increment(coarse.time(k), coarse.time(k + 1), coarse_inc);
        fine_sum.assign(bi.width(), 0.0);
        for (std::size_t q = 10 * k; q < 10 * (k + 1); ++q) {
          bi.increment(fine.time(q), fine.time(q + 1), fine_inc);
          for (std::size_t i = 0; i < fine_sum.size(); ++i) fine_sum[i] += fine_inc[i];
        }
        res.coupling_exact = res.coupling_exact && fine_sum == coarse_inc;
      }

      const auto yc = solve(field, z0, coarse).state.z;
      const auto yf = solve(field, z0, fine).state.z;
      for (std::size_t p = 0; p < b; ++p) {
        double sq = 0.0;
        for (std::size_t i = 0; i < x; ++i) {
          const double d = yc[p * x + i] - yf[p * x + i];
          sq += d * d;
        }
        s2[j] += sq;
        d1[j] += yc[p * x] - yf[p * x];
        d2[j] += yc[p * x] * yc[p * x] - yf[p * x] * yf[p * x];
      }
    }
  }
  const double m = static_cast<double>(paths);
  for (std::size_t j = 0; j < ns; ++j) {
    res.strong.push_back(std::sqrt(s2[j] / m));
    res.weak_mean.push_back(std::abs(d1[j] / m));
    res.weak_second.push_back(std::abs(d2[j] / m));
  }
  return res;
}

LineFit loglog_fit(const std::vector<double>& h, const std::vector<double>& err) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < h.size(); ++i) {
    lx.push_back(std::log2(h[i]));
    ly.push_back(std::log2(err[i]));
  }
  return fit_line(lx, ly);
}

}  // namespace

Report run_convergence(const ExperimentConfig& config) {
  const std::size_t paths = or_default(config.paths, 10000);
  const std::size_t weak_paths = or_default(config.weak_paths, 1000000);
  const std::size_t chunk = or_default(config.batch, 1000);
  const auto steps = or_default(config.steps, powers_of_two(-3, -7));
  const auto weak_steps = or_default(config.weak_steps, powers_of_two(0, -4));
  for (const auto* list : {&steps, &weak_steps})
    if (list->size() < 2) throw std::invalid_argument("convergence: need at least two step sizes");

  Report r;
  if (paths < 1000) r.warnings.push_back("strong studies use " + std::to_string(paths) + " paths (< 1000); slope fits are unreliable");
  if (weak_paths < 100000)
    r.warnings.push_back("weak study uses " + std::to_string(weak_paths) + " paths (< 1e5); weak slopes are noise dominated");

  const auto additive = anharmonic_oscillator();
  const auto scalar_cos = anharmonic_cosine_noise();
  const CrossCosineField cross;

  std::ostringstream csv;
  csv << "kind,case,estimator,paths,h,value,slope,intercept,residual\n";
  std::ostringstream os;
  os << "convergence: coupled coarse reversible Heun vs fine Heun at h/10, T = 1\n";
  bool coupling = true;

  auto emit = [&](const std::string& name, const std::string& estimator, std::size_t n_paths,
                  const std::vector<double>& h, const std::vector<double>& err) {
    for (std::size_t j = 0; j < h.size(); ++j)
      csv << "point," << name << ',' << estimator << ',' << n_paths << ',' << fmt(h[j]) << ',' << fmt(err[j]) << ",,,\n";
    const LineFit f = loglog_fit(h, err);
    csv << "fit," << name << ',' << estimator << ',' << n_paths << ",,," << fmt(f.slope) << ',' << fmt(f.intercept) << ','
        << fmt(f.residual) << '\n';
    os << "  " << name << ' ' << estimator << ": slope " << short_fmt(f.slope) << " (residual " << short_fmt(f.residual) << ")\n";
    return f;
  };

  const auto add = coupled_study(additive, 1.0, paths, chunk, steps, config.seed, 10, config.cache_capacity);
  coupling = coupling && add.coupling_exact;
  const LineFit fs = emit("additive", "strong", paths, steps, add.strong);
  emit("additive", "weak_mean", paths, steps, add.weak_mean);
  emit("additive", "weak_second", paths, steps, add.weak_second);

  const auto weak = coupled_study(additive, 1.0, weak_paths, chunk, weak_steps, config.seed, 11, config.cache_capacity);
  coupling = coupling && weak.coupling_exact;
  emit("additive_weak", "strong", weak_paths, weak_steps, weak.strong);
  const LineFit fe = emit("additive_weak", "weak_mean", weak_paths, weak_steps, weak.weak_mean);
  const LineFit fv = emit("additive_weak", "weak_second", weak_paths, weak_steps, weak.weak_second);

  const auto mult = coupled_study(cross, 1.0, paths, chunk, steps, config.seed, 12, config.cache_capacity);
  coupling = coupling && mult.coupling_exact;
  const LineFit fm = emit("multiplicative", "strong", paths, steps, mult.strong);

  const auto sc = coupled_study(scalar_cos, 1.0, paths, chunk, steps, config.seed, 13, config.cache_capacity);
  coupling = coupling && sc.coupling_exact;
  emit("scalar_cosine", "strong", paths, steps, sc.strong);
  r.csv = csv.str();

  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  add_check(r, "additive strong order", in(fs.slope, 0.8, 1.2), "slope " + short_fmt(fs.slope) + " in [0.8, 1.2]");
  add_check(r, "additive weak order E[Y]", in(fe.slope, 1.6, 2.4), "slope " + short_fmt(fe.slope) + " in [1.6, 2.4]");
  add_check(r, "additive weak order E[Y^2]", in(fv.slope, 1.6, 2.4), "slope " + short_fmt(fv.slope) + " in [1.6, 2.4]");
  add_check(r, "multiplicative strong order", in(fm.slope, 0.4, 0.7), "slope " + short_fmt(fm.slope) + " in [0.4, 0.7]");
  add_check(r, "coupled increments exact", coupling, "sum of 10 fine increments == coarse increment, bitwise");
  finish_summary(r, os);
  return r;
}

// ---------------------------------------------------------------------------
// Brownian benchmark

namespace {

std::vector<std::pair<double, double>> access_pattern(const std::string& pattern, std::size_t n,
                                                      const SeedState& seed) {
  std::vector<std::pair<double, double>> q;
  auto t = [n](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n); };
  for (std::size_t k = 0; k < n; ++k) q.emplace_back(t(k), t(k + 1));
  if (pattern == "doubly_sequential") {
    for (std::size_t k = n; k-- > 0;) q.emplace_back(t(k), t(k + 1));
  } else if (pattern == "random") {
    // Fisher-Yates driven by the stream of `seed`.
    for (std::size_t i = n; i-- > 1;) {
      const auto bits = stream_block(seed, i)[0];
      const std::size_t j = static_cast<std::size_t>(to_open_unit(bits) * static_cast<double>(i + 1));
      std::swap(q[i], q[std::min(j, i)]);
    }
  }
  return q;
}

template <typename Make>
double time_min(std::size_t repeats, const std::vector<std::pair<double, double>>& queries, std::size_t width,
                Make make, bool& deterministic) {
  double best = INFINITY;
  std::vector<double> out(queries.size() * width), first;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto source = make();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < queries.size(); ++i)
      source->increment(queries[i].first, queries[i].second, std::span<double>(out).subspan(i * width, width));
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    if (r == 0)
      first = out;
    else
      deterministic = deterministic && out == first;
  }
  return best;
}

}  // namespace

Report run_brownian_bench(const ExperimentConfig& config) {
  const std::size_t batch = or_default(config.batch, 256);
  const std::size_t dims = or_default(config.dims, 1);
  auto subintervals = config.subintervals;
  if (subintervals.empty()) subintervals = {10, 100, 1000};
  const double eps = config.vbt_eps > 0.0 ? config.vbt_eps : std::ldexp(1.0, -16);
  const std::vector<std::string> patterns{"sequential", "doubly_sequential", "random"};

  Report r;
  std::ostringstream csv;
  csv << "pattern,subintervals,structure,batch,repeats,min_seconds,speedup_vs_vbt,queries,cache_hits,"
         "cache_misses,mean_traverse_edges,max_miss_chain,vbt_descents,deterministic\n";
  std::ostringstream os;
  os << "brownian-bench: batch " << batch << ", dims " << dims << ", " << config.repeats << " repeats, vbt eps "
     << short_fmt(eps) << '\n';

  bool all_deterministic = true;
  double ds100_speedup = -1.0;
  double seq_edges = -1.0;
  for (const auto& pattern : patterns) {
    for (std::size_t n : subintervals) {
      const auto queries = access_pattern(pattern, n, derive_seed(config.seed, 20, n));
      const std::size_t width = batch * dims;

      BrownianInterval::Options bo;
      bo.dims = dims;
      bo.batch = batch;
      bo.seed = derive_seed(config.seed, 21);
      bo.cache_capacity = config.cache_capacity;
      VirtualBrownianTree::Options vo;
      vo.dims = dims;
      vo.batch = batch;
      vo.seed = bo.seed;
      vo.tolerance = eps;

      bool det_bi = true, det_vbt = true;
      const double t_bi = time_min(config.repeats, queries, width,
                                   [&] { return std::make_unique<BrownianInterval>(bo); }, det_bi);
      const double t_vbt = time_min(config.repeats, queries, width,
                                    [&] { return std::make_unique<VirtualBrownianTree>(vo); }, det_vbt);
      all_deterministic = all_deterministic && det_bi && det_vbt;

      // Untimed instrumented pass; statistics exclude the first 10% of queries as warm-up.
      BrownianInterval bi(bo);
      VirtualBrownianTree vbt(vo);
      std::vector<double> buf(width);
      const std::size_t warm = std::max<std::size_t>(1, queries.size() / 10);
      for (std::size_t i = 0; i < queries.size(); ++i) {
        if (i == warm) bi.reset_stats();
        bi.increment(queries[i].first, queries[i].second, buf);
        vbt.increment(queries[i].first, queries[i].second, buf);
      }
      const TreeStats& st = bi.stats();
      const double mean_edges = st.queries ? static_cast<double>(st.traverse_edges) / static_cast<double>(st.queries) : 0.0;
      const double speedup = t_vbt / t_bi;
      if (pattern == "doubly_sequential" && n == 100) ds100_speedup = speedup;
      if (pattern == "sequential" && n == 1000) seq_edges = mean_edges;

      csv << pattern << ',' << n << ",brownian_interval," << batch << ',' << config.repeats << ',' << fmt(t_bi) << ','
          << fmt(speedup) << ',' << queries.size() << ',' << st.cache_hits << ',' << st.cache_misses << ','
          << fmt(mean_edges) << ',' << st.max_miss_chain << ",," << (det_bi ? 1 : 0) << '\n';
      csv << pattern << ',' << n << ",virtual_brownian_tree," << batch << ',' << config.repeats << ',' << fmt(t_vbt)
          << ",," << queries.size() << ",,,,," << vbt.descents() << ',' << (det_vbt ? 1 : 0) << '\n';
      os << "  " << pattern << " n=" << n << ": BI " << short_fmt(t_bi) << " s, VBT " << short_fmt(t_vbt)
         << " s, speedup " << short_fmt(speedup) << "x, mean edges " << short_fmt(mean_edges) << '\n';
    }
  }
  r.csv = csv.str();
  if (ds100_speedup >= 0.0)
    add_check(r, "doubly-sequential 100 speedup", ds100_speedup >= 1.5, "BI/VBT speedup " + short_fmt(ds100_speedup) + "x (>= 1.5x)");
  if (seq_edges >= 0.0)
    add_check(r, "sequential traversal depth", seq_edges < 4.0, "mean edges per query " + short_fmt(seq_edges) + " (< 4)");
  add_check(r, "repeat determinism", all_deterministic, "all repeats bitwise identical");
  finish_summary(r, os);
  return r;
}

// ---------------------------------------------------------------------------
// Stability

Report run_stability(const ExperimentConfig&) {
  struct Point {
    double re, im;
    bool expect_bounded;
  };
  constexpr std::size_t long_run = 100000;
  std::vector<Point> points;
  for (double im : {0.0, 0.25, -0.25, 0.5, -0.5, 0.75, -0.75, 0.9, -0.9, 0.99, -0.99}) points.push_back({0.0, im, true});
  for (auto [re, im] : std::vector<std::pair<double, double>>{
           {-0.5, 0.0}, {-0.1, 0.5}, {-0.1, -0.5}, {-1.0, 0.0}, {-0.25, 0.25}, {0.0, 1.01}, {0.0, -1.01}, {0.0, 1.5}})
    points.push_back({re, im, false});

  Report r;
  std::ostringstream csv;
  csv << "re,im,steps,max_z,max_zhat,bounded,expected_bounded\n";
  std::ostringstream os;
  os << "stability: reversible Heun on y' = lambda y, h = 1, bounded means max modulus <= 10\n";
  bool match = true;
  std::string mismatches;
  for (const auto& p : points) {
    const std::size_t n = p.expect_bounded ? long_run : 1000;
    const StabilityResult s = stability_probe(p.re, p.im, n);
    csv << fmt(p.re) << ',' << fmt(p.im) << ',' << s.steps_run << ',' << fmt(s.max_z) << ',' << fmt(s.max_zhat) << ','
        << (s.bounded ? 1 : 0) << ',' << (p.expect_bounded ? 1 : 0) << '\n';
    if (s.bounded != p.expect_bounded) {
      match = false;
      mismatches += " " + short_fmt(p.re) + "+" + short_fmt(p.im) + "i";
    }
    os << "  lambda h = " << short_fmt(p.re) << (p.im < 0 ? "" : "+") << short_fmt(p.im) << "i: "
       << (s.bounded ? "bounded" : "unbounded") << " after " << s.steps_run << " steps (max |z| " << short_fmt(s.max_z)
       << ", max |zhat| " << short_fmt(s.max_zhat) << ")\n";
  }
  r.csv = csv.str();
  const StabilityResult zero = stability_probe(0.0, 0.0, 1000);
  add_check(r, "classification matches [-i, i]", match, match ? "all points as expected" : "mismatch at" + mismatches);
  add_check(r, "lambda h = 0 constant", zero.max_z == 1.0 && zero.max_zhat == 1.0, "max |z| " + fmt(zero.max_z));
  finish_summary(r, os);
  return r;
}

// ---------------------------------------------------------------------------
// Toy fit

Report run_fit_toy(const ExperimentConfig& config) {
  constexpr double kHorizon = 8.0, kStep = 0.25;
  constexpr std::size_t kObs = 8, kHidden = 16;
  const std::size_t batch = or_default(config.batch, 256);
  const std::size_t data_paths = or_default(config.paths, 100000);
  const std::size_t iterations = config.iterations;
  const double lr = config.learning_rate;

  // Target moments from exactly simulated OU paths.
  constexpr double kappa = 0.1, chi = 0.4;
  std::vector<double> target_mean(kObs, 0.0), target_second(kObs, 0.0);
  {
    const auto normals = standard_normals(derive_seed(config.seed, 30), data_paths * kObs);
    const double a = std::exp(-kappa);
    const double sd = chi * std::sqrt((1.0 - std::exp(-2.0 * kappa)) / (2.0 * kappa));
    for (std::size_t p = 0; p < data_paths; ++p) {
      double y = 0.0;
      for (std::size_t k = 0; k < kObs; ++k) {
        const double t0 = static_cast<double>(k);
        // Exact transition over [t0, t0 + 1]: mean of the inhomogeneous drift term added to a*y.
        const double m = ou_moments(t0 + 1.0).mean - a * ou_moments(t0).mean;
        y = a * y + m + sd * normals[p * kObs + k];
        target_mean[k] += y;
        target_second[k] += y * y;
      }
    }
    for (std::size_t k = 0; k < kObs; ++k) {
      target_mean[k] /= static_cast<double>(data_paths);
      target_second[k] /= static_cast<double>(data_paths);
    }
  }

  NeuralSdeField field = NeuralSdeField::make(1, 1, kHidden, Activation::identity, Activation::sigmoid,
                                              derive_seed(config.seed, 31));
  field.clip_weights();
  BrownianInterval::Options bo;
  bo.horizon = kHorizon;
  bo.batch = batch;
  bo.seed = derive_seed(config.seed, 32);
  bo.cache_capacity = config.cache_capacity;
  BrownianInterval bi(bo);  // common random numbers for every iteration
  SolveConfig sc;
  sc.step = kStep;
  sc.horizon = kHorizon;
  sc.noise = &bi;
  sc.store_trajectory = true;
  const std::size_t per_obs = static_cast<std::size_t>(1.0 / kStep);
  const std::vector<double> z0(batch, 0.0);

  auto loss_and_schedule = [&](const Trajectory& traj, CotangentSchedule* schedule) {
    double loss = 0.0;
    const double b = static_cast<double>(batch);
    for (std::size_t k = 0; k < kObs; ++k) {
      const std::size_t n = (k + 1) * per_obs;
      const auto& z = traj.states[n];
      double m1 = 0.0, m2 = 0.0;
      for (double v : z) {
        m1 += v;
        m2 += v * v;
      }
      m1 /= b;
      m2 /= b;
      const double e1 = m1 - target_mean[k], e2 = m2 - target_second[k];
      loss += e1 * e1 + e2 * e2;
      if (schedule) {
        std::vector<double> cot(batch);
        for (std::size_t p = 0; p < batch; ++p) cot[p] = 2.0 * e1 / b + 2.0 * e2 * 2.0 * z[p] / b;
        schedule->emplace_back(n, std::move(cot));
      }
    }
    return loss;
  };

  // Adam.
  const std::size_t np = field.param_count();
  std::vector<double> m(np, 0.0), v(np, 0.0), theta(field.params().begin(), field.params().end());
  constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

  Report r;
  std::ostringstream csv;
  csv << "iteration,loss,oracle_relative_l1\n";
  double initial_loss = 0.0, final_loss = 0.0, worst_spot = 0.0;
  std::size_t spot_checks = 0;
  for (std::size_t it = 0; it <= iterations; ++it) {
    const SolveResult fwd = revheun_solve(field, z0, sc);
    CotangentSchedule schedule;
    const double loss = loss_and_schedule(fwd.trajectory, &schedule);
    if (!std::isfinite(loss)) throw NumericalError("fit-toy: non-finite loss", it);
    if (it == 0) initial_loss = loss;
    final_loss = loss;
    std::string spot;
    if (it == iterations) {
      csv << it << ',' << fmt(loss) << ",\n";
      break;
    }
    const Gradients g = revheun_backward(field, fwd.state, sc, schedule);
    if (config.spot_check_every > 0 && it % config.spot_check_every == 0) {
      const Gradients oracle = unrolled_backprop(field, z0, sc, schedule);
      const double e = relative_l1_error(g, oracle);
      worst_spot = std::max(worst_spot, e);
      ++spot_checks;
      spot = fmt(e);
    }
    csv << it << ',' << fmt(loss) << ',' << spot << '\n';
    const double t = static_cast<double>(it + 1);
    for (std::size_t k = 0; k < np; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g.params[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g.params[k] * g.params[k];
      const double mh = m[k] / (1.0 - std::pow(b1, t));
      const double vh = v[k] / (1.0 - std::pow(b2, t));
      theta[k] -= lr * mh / (std::sqrt(vh) + adam_eps);
    }
    field.set_params(theta);
    field.clip_weights();
    theta.assign(field.params().begin(), field.params().end());
  }
  r.csv = csv.str();

  std::ostringstream os;
  os << "fit-toy: OU moments at t = 1..8, batch " << batch << ", " << iterations << " iterations, lr " << short_fmt(lr)
     << '\n'
     << "  loss " << short_fmt(initial_loss) << " -> " << short_fmt(final_loss) << " (ratio "
     << short_fmt(final_loss > 0 ? initial_loss / final_loss : INFINITY) << ")\n";
  add_check(r, "loss reduction", final_loss * 5.0 <= initial_loss,
            "final/initial " + short_fmt(final_loss / initial_loss) + " (<= 0.2)");
  if (spot_checks > 0)
    add_check(r, "gradients match oracle", worst_spot <= 1e-12,
              std::to_string(spot_checks) + " spot checks, max relative L1 " + short_fmt(worst_spot) + " (<= 1e-12)");
  finish_summary(r, os);
  return r;
}

}  // namespace revsde
