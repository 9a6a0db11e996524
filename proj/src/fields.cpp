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

#include "revsde/fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace revsde {

namespace {

constexpr double kLipSwishScale = 0.909;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

double activate(Activation a, double x) noexcept {
  switch (a) {
    case Activation::identity: return x;
    case Activation::lipswish: return lipswish(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::sigmoid: return sigmoid(x);
  }
  return x;
}

double activate_derivative(Activation a, double x) noexcept {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::lipswish: return lipswish_derivative(x);
    case Activation::tanh: {
      const double th = std::tanh(x);
      return 1.0 - th * th;
    }
    case Activation::sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

}  // namespace

void VectorField::set_params(std::span<const double> values) {
  if (!values.empty()) throw std::invalid_argument("set_params: field has no parameters");
}

bool VectorField::diagonal_diffusion_derivatives(double, std::span<const double>, std::span<double>,
                                                 std::span<double>) const {
  return false;
}

// ---------------------------------------------------------------------------
// Activations

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double lipswish(double x) noexcept { return kLipSwishScale * x * sigmoid(x); }

double lipswish_derivative(double x) noexcept {
  const double s = sigmoid(x);
  return kLipSwishScale * (s + x * s * (1.0 - s));
}

const char* to_string(Activation a) noexcept {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::lipswish: return "lipswish";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "lipswish") return Activation::lipswish;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<std::size_t> widths, Activation hidden, Activation final)
    : widths_(std::move(widths)), hidden_(hidden), final_(final) {
  require(widths_.size() >= 2, "Mlp needs at least an input and an output width");
  require(std::all_of(widths_.begin(), widths_.end(), [](std::size_t w) { return w > 0; }),
          "Mlp widths must be positive");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(offset);
    offset += widths_[l] * widths_[l + 1] + widths_[l + 1];
  }
  params_.assign(offset, 0.0);
}

std::span<double> Mlp::weights(std::size_t layer) {
  require(layer < layer_count(), "Mlp: layer out of range");
  return std::span<double>(params_).subspan(weight_offset(layer), widths_[layer] * widths_[layer + 1]);
}

std::span<double> Mlp::bias(std::size_t layer) {
  require(layer < layer_count(), "Mlp: layer out of range");
  return std::span<double>(params_).subspan(bias_offset(layer), widths_[layer + 1]);
}

std::span<const double> Mlp::weights(std::size_t layer) const {
  return const_cast<Mlp*>(this)->weights(layer);
}

std::span<const double> Mlp::bias(std::size_t layer) const {
  return const_cast<Mlp*>(this)->bias(layer);
}

void Mlp::init_uniform(const SeedState& seed) {
  SeedState s = seed;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
    auto [layer_seed, next] = split(s);
    s = next;
    std::size_t k = 0;
    for (double& v : weights(l)) v = bound * (2.0 * to_open_unit(stream_block(layer_seed, k++)[0]) - 1.0);
    for (double& v : bias(l)) v = bound * (2.0 * to_open_unit(stream_block(layer_seed, k++)[0]) - 1.0);
  }
}

void Mlp::forward(std::span<const double> input, std::span<double> out) const {
  require(input.size() == in_dim(), "Mlp::forward: input size mismatch");
  require(out.size() == out_dim(), "Mlp::forward: output size mismatch");
  std::vector<double> cur(input.begin(), input.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t n_in = widths_[l];
    const std::size_t n_out = widths_[l + 1];
    const double* w = params_.data() + weight_offset(l);
    const double* b = params_.data() + bias_offset(l);
    const Activation act = l + 1 == layer_count() ? final_ : hidden_;
    next.assign(n_out, 0.0);
    for (std::size_t i = 0; i < n_out; ++i) {
      double acc = b[i];
      for (std::size_t j = 0; j < n_in; ++j) acc += w[i * n_in + j] * cur[j];
      next[i] = activate(act, acc);
    }
    cur.swap(next);
  }
  std::copy(cur.begin(), cur.end(), out.begin());
}

std::vector<double> Mlp::forward(std::span<const double> input) const {
  std::vector<double> out(out_dim());
  forward(input, out);
  return out;
}

void Mlp::vjp(std::span<const double> input, std::span<const double> cot, std::span<double> cot_in,
              std::span<double> cot_params) const {
  require(input.size() == in_dim(), "Mlp::vjp: input size mismatch");
  require(cot.size() == out_dim(), "Mlp::vjp: cotangent size mismatch");
  require(cot_in.size() == in_dim(), "Mlp::vjp: input cotangent size mismatch");
  require(cot_params.empty() || cot_params.size() == param_count(),
          "Mlp::vjp: parameter cotangent size mismatch");

  // Forward with stored layer inputs and pre-activations.
  const std::size_t layers = layer_count();
  std::vector<std::vector<double>> inputs(layers);
  std::vector<std::vector<double>> pre(layers);
  std::vector<double> cur(input.begin(), input.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t n_in = widths_[l];
    const std::size_t n_out = widths_[l + 1];
    const double* w = params_.data() + weight_offset(l);
    const double* b = params_.data() + bias_offset(l);
    const Activation act = l + 1 == layers ? final_ : hidden_;
    inputs[l] = cur;
    pre[l].assign(n_out, 0.0);
    std::vector<double> next(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      double acc = b[i];
      for (std::size_t j = 0; j < n_in; ++j) acc += w[i * n_in + j] * cur[j];
      pre[l][i] = acc;
      next[i] = activate(act, acc);
    }
    cur.swap(next);
  }

  std::vector<double> grad(cot.begin(), cot.end());
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t n_in = widths_[l];
    const std::size_t n_out = widths_[l + 1];
    const double* w = params_.data() + weight_offset(l);
    const Activation act = l + 1 == layers ? final_ : hidden_;
    for (std::size_t i = 0; i < n_out; ++i) grad[i] *= activate_derivative(act, pre[l][i]);
    if (!cot_params.empty()) {
      double* gw = cot_params.data() + weight_offset(l);
      double* gb = cot_params.data() + bias_offset(l);
      for (std::size_t i = 0; i < n_out; ++i) {
        gb[i] += grad[i];
        for (std::size_t j = 0; j < n_in; ++j) gw[i * n_in + j] += grad[i] * inputs[l][j];
      }
    }
    std::vector<double> prev(n_in, 0.0);
    for (std::size_t i = 0; i < n_out; ++i)
      for (std::size_t j = 0; j < n_in; ++j) prev[j] += w[i * n_in + j] * grad[i];
    grad.swap(prev);
  }
  std::copy(grad.begin(), grad.end(), cot_in.begin());
}

void Mlp::clip_weights() noexcept {
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double bound = 1.0 / static_cast<double>(widths_[l]);
    double* w = params_.data() + weight_offset(l);
    const std::size_t n = widths_[l] * widths_[l + 1];
    for (std::size_t i = 0; i < n; ++i) w[i] = std::clamp(w[i], -bound, bound);
  }
}

// ---------------------------------------------------------------------------
// NeuralSdeField

NeuralSdeField::NeuralSdeField(std::size_t state_dim, std::size_t noise_dim, Mlp drift_net,
                               Mlp diffusion_net)
    : state_dim_(state_dim),
      noise_dim_(noise_dim),
      drift_(std::move(drift_net)),
      diffusion_(std::move(diffusion_net)) {
  require(state_dim_ > 0 && noise_dim_ > 0, "NeuralSdeField: dimensions must be positive");
  require(drift_.in_dim() == state_dim_ + 1 && drift_.out_dim() == state_dim_,
          "NeuralSdeField: drift network must map x+1 -> x");
  require(diffusion_.in_dim() == state_dim_ + 1 && diffusion_.out_dim() == state_dim_ * noise_dim_,
          "NeuralSdeField: diffusion network must map x+1 -> x*w");
  sync_from_nets();
}

NeuralSdeField NeuralSdeField::make(std::size_t state_dim, std::size_t noise_dim,
                                    std::size_t hidden_width, Activation drift_final,
                                    Activation diffusion_final, const SeedState& seed) {
  Mlp drift({state_dim + 1, hidden_width, state_dim}, Activation::lipswish, drift_final);
  Mlp diffusion({state_dim + 1, hidden_width, state_dim * noise_dim}, Activation::lipswish,
                diffusion_final);
  const auto [drift_seed, diffusion_seed] = split(seed);
  drift.init_uniform(drift_seed);
  diffusion.init_uniform(diffusion_seed);
  return NeuralSdeField(state_dim, noise_dim, std::move(drift), std::move(diffusion));
}

void NeuralSdeField::sync_from_nets() {
  params_.assign(drift_.params().begin(), drift_.params().end());
  params_.insert(params_.end(), diffusion_.params().begin(), diffusion_.params().end());
}

void NeuralSdeField::sync_to_nets() {
  const auto nd = drift_.param_count();
  std::copy_n(params_.begin(), nd, drift_.params().begin());
  std::copy(params_.begin() + static_cast<std::ptrdiff_t>(nd), params_.end(),
            diffusion_.params().begin());
}

void NeuralSdeField::set_params(std::span<const double> values) {
  require(values.size() == params_.size(), "NeuralSdeField::set_params: size mismatch");
  params_.assign(values.begin(), values.end());
  sync_to_nets();
}

void NeuralSdeField::clip_weights() noexcept {
  drift_.clip_weights();
  diffusion_.clip_weights();
  sync_from_nets();
}

void NeuralSdeField::drift(double t, std::span<const double> z, std::span<double> out) const {
  require(z.size() == state_dim_, "NeuralSdeField::drift: state size mismatch");
  std::vector<double> input(z.begin(), z.end());
  input.push_back(t);
  drift_.forward(input, out);
}

void NeuralSdeField::diffusion(double t, std::span<const double> z, std::span<double> out) const {
  require(z.size() == state_dim_, "NeuralSdeField::diffusion: state size mismatch");
  std::vector<double> input(z.begin(), z.end());
  input.push_back(t);
  diffusion_.forward(input, out);
}

void NeuralSdeField::net_vjp(const Mlp& net, std::size_t offset, double t,
                             std::span<const double> z, std::span<const double> cot,
                             std::span<double> cot_z, std::span<double> cot_params) const {
  require(z.size() == state_dim_ && cot_z.size() == state_dim_, "NeuralSdeField: state size mismatch");
  require(cot_params.empty() || cot_params.size() == params_.size(),
          "NeuralSdeField: parameter cotangent size mismatch");
  std::vector<double> input(z.begin(), z.end());
  input.push_back(t);
  std::vector<double> cot_in(input.size());
  net.vjp(input, cot, cot_in,
          cot_params.empty() ? std::span<double>() : cot_params.subspan(offset, net.param_count()));
  std::copy_n(cot_in.begin(), state_dim_, cot_z.begin());
}

void NeuralSdeField::drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                               std::span<double> cot_z, std::span<double> cot_params) const {
  net_vjp(drift_, 0, t, z, cot, cot_z, cot_params);
}

void NeuralSdeField::diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                                   std::span<double> cot_z, std::span<double> cot_params) const {
  net_vjp(diffusion_, drift_.param_count(), t, z, cot, cot_z, cot_params);
}

void save_manifest(const NeuralSdeField& field, std::ostream& os) {
  auto write_net = [&os](const char* name, const Mlp& net) {
    os << name << "_widths";
    for (auto w : net.widths()) os << ' ' << w;
    os << '\n'
       << name << "_hidden " << to_string(net.hidden_activation()) << '\n'
       << name << "_final " << to_string(net.final_activation()) << '\n';
  };
  os << "revsde-field 1\n"
     << "kind neural_sde\n"
     << "state_dim " << field.state_dim() << '\n'
     << "noise_dim " << field.noise_dim() << '\n';
  write_net("drift", field.drift_net());
  write_net("diffusion", field.diffusion_net());
  os << "param_count " << field.param_count() << '\n' << "params\n";
  char buf[32];
  for (double p : field.params()) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    os << buf << '\n';
  }
}

NeuralSdeField load_manifest(std::istream& is) {
  auto fail = [](const std::string& what) -> void {
    throw std::invalid_argument("load_manifest: " + what);
  };
  std::string line;
  auto next_line = [&](const std::string& key) {
    if (!std::getline(is, line)) fail("unexpected end of input before '" + key + "'");
    std::istringstream ss(line);
    std::string k;
    ss >> k;
    if (k != key) fail("expected '" + key + "', found '" + k + "'");
    std::string rest;
    std::getline(ss, rest);
    return std::istringstream(rest);
  };
  auto header = next_line("revsde-field");
  int version = 0;
  header >> version;
  if (version != 1) fail("unsupported version");
  std::string kind;
  next_line("kind") >> kind;
  if (kind != "neural_sde") fail("unsupported kind '" + kind + "'");
  std::size_t state_dim = 0, noise_dim = 0;
  next_line("state_dim") >> state_dim;
  next_line("noise_dim") >> noise_dim;
  auto read_net = [&](const std::string& name) {
    auto ws = next_line(name + "_widths");
    std::vector<std::size_t> widths;
    for (std::size_t w; ws >> w;) widths.push_back(w);
    std::string hidden, final;
    next_line(name + "_hidden") >> hidden;
    next_line(name + "_final") >> final;
    return Mlp(widths, activation_from_string(hidden), activation_from_string(final));
  };
  Mlp drift = read_net("drift");
  Mlp diffusion = read_net("diffusion");
  std::size_t count = 0;
  next_line("param_count") >> count;
  next_line("params");
  std::vector<double> params(count);
  for (auto& p : params) {
    if (!std::getline(is, line)) fail("truncated parameter list");
    p = std::stod(line);
  }
  NeuralSdeField field(state_dim, noise_dim, std::move(drift), std::move(diffusion));
  if (count != field.param_count()) fail("param_count does not match the shapes");
  field.set_params(params);
  return field;
}

// ---------------------------------------------------------------------------
// LinearField

LinearField::LinearField(std::size_t state_dim, std::size_t noise_dim, std::vector<double> a,
                         std::vector<double> b)
    : state_dim_(state_dim), noise_dim_(noise_dim) {
  require(state_dim_ > 0 && noise_dim_ > 0, "LinearField: dimensions must be positive");
  require(a.size() == state_dim_ * state_dim_, "LinearField: A must be x by x");
  require(b.size() == state_dim_ * noise_dim_, "LinearField: B must be x by w");
  params_ = std::move(a);
  params_.insert(params_.end(), b.begin(), b.end());
}

void LinearField::set_params(std::span<const double> values) {
  require(values.size() == params_.size(), "LinearField::set_params: size mismatch");
  params_.assign(values.begin(), values.end());
}

void LinearField::drift(double, std::span<const double> z, std::span<double> out) const {
  require(z.size() == state_dim_ && out.size() == state_dim_, "LinearField::drift: size mismatch");
  for (std::size_t i = 0; i < state_dim_; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < state_dim_; ++j) acc += params_[i * state_dim_ + j] * z[j];
    out[i] = acc;
  }
}

void LinearField::diffusion(double, std::span<const double> z, std::span<double> out) const {
  require(z.size() == state_dim_ && out.size() == diffusion_size(),
          "LinearField::diffusion: size mismatch");
  std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(state_dim_ * state_dim_), out.size(),
              out.begin());
}

void LinearField::drift_vjp(double, std::span<const double> z, std::span<const double> cot,
                            std::span<double> cot_z, std::span<double> cot_params) const {
  require(z.size() == state_dim_ && cot.size() == state_dim_ && cot_z.size() == state_dim_,
          "LinearField::drift_vjp: size mismatch");
  for (std::size_t j = 0; j < state_dim_; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < state_dim_; ++i) acc += params_[i * state_dim_ + j] * cot[i];
    cot_z[j] = acc;
  }
  if (!cot_params.empty()) {
    require(cot_params.size() == params_.size(), "LinearField: parameter cotangent size mismatch");
    for (std::size_t i = 0; i < state_dim_; ++i)
      for (std::size_t j = 0; j < state_dim_; ++j) cot_params[i * state_dim_ + j] += cot[i] * z[j];
  }
}

void LinearField::diffusion_vjp(double, std::span<const double> z, std::span<const double> cot,
                                std::span<double> cot_z, std::span<double> cot_params) const {
  require(z.size() == state_dim_ && cot.size() == diffusion_size() && cot_z.size() == state_dim_,
          "LinearField::diffusion_vjp: size mismatch");
  std::fill(cot_z.begin(), cot_z.end(), 0.0);
  if (!cot_params.empty()) {
    require(cot_params.size() == params_.size(), "LinearField: parameter cotangent size mismatch");
    const std::size_t off = state_dim_ * state_dim_;
    for (std::size_t k = 0; k < cot.size(); ++k) cot_params[off + k] += cot[k];
  }
}

// ---------------------------------------------------------------------------
// ElementwiseField

ElementwiseField::ElementwiseField(std::size_t dim, Functions fns) : dim_(dim), fns_(std::move(fns)) {
  require(dim_ > 0, "ElementwiseField: dimension must be positive");
  require(fns_.f && fns_.f_prime && fns_.g && fns_.g_prime,
          "ElementwiseField: f, f', g and g' are required");
}

void ElementwiseField::drift(double t, std::span<const double> z, std::span<double> out) const {
  require(z.size() == dim_ && out.size() == dim_, "ElementwiseField::drift: size mismatch");
  for (std::size_t i = 0; i < dim_; ++i) out[i] = fns_.f(t, z[i]);
}

void ElementwiseField::diffusion(double t, std::span<const double> z, std::span<double> out) const {
  require(z.size() == dim_ && out.size() == dim_ * dim_, "ElementwiseField::diffusion: size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < dim_; ++i) out[i * dim_ + i] = fns_.g(t, z[i]);
}

void ElementwiseField::drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                                 std::span<double> cot_z, std::span<double>) const {
  require(z.size() == dim_ && cot.size() == dim_ && cot_z.size() == dim_,
          "ElementwiseField::drift_vjp: size mismatch");
  for (std::size_t i = 0; i < dim_; ++i) cot_z[i] = cot[i] * fns_.f_prime(t, z[i]);
}

void ElementwiseField::diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                                     std::span<double> cot_z, std::span<double>) const {
  require(z.size() == dim_ && cot.size() == dim_ * dim_ && cot_z.size() == dim_,
          "ElementwiseField::diffusion_vjp: size mismatch");
  for (std::size_t i = 0; i < dim_; ++i) cot_z[i] = cot[i * dim_ + i] * fns_.g_prime(t, z[i]);
}

bool ElementwiseField::diagonal_diffusion_derivatives(double t, std::span<const double> z,
                                                      std::span<double> first,
                                                      std::span<double> second) const {
  require(z.size() == dim_ && first.size() == dim_, "ElementwiseField: size mismatch");
  for (std::size_t i = 0; i < dim_; ++i) first[i] = fns_.g_prime(t, z[i]);
  if (!fns_.g_second) return false;
  require(second.size() == dim_, "ElementwiseField: size mismatch");
  for (std::size_t i = 0; i < dim_; ++i) second[i] = fns_.g_second(t, z[i]);
  return true;
}

// ---------------------------------------------------------------------------
// CountingField

void CountingField::drift(double t, std::span<const double> z, std::span<double> out) const {
  ++drift_evals_;
  inner_.drift(t, z, out);
}

void CountingField::diffusion(double t, std::span<const double> z, std::span<double> out) const {
  ++diffusion_evals_;
  inner_.diffusion(t, z, out);
}

void CountingField::drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                              std::span<double> cot_z, std::span<double> cot_params) const {
  ++drift_vjps_;
  inner_.drift_vjp(t, z, cot, cot_z, cot_params);
}

void CountingField::diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                                  std::span<double> cot_z, std::span<double> cot_params) const {
  ++diffusion_vjps_;
  inner_.diffusion_vjp(t, z, cot, cot_z, cot_params);
}

// ---------------------------------------------------------------------------
// ItoCorrectedField

ItoCorrectedField::ItoCorrectedField(const VectorField& inner) : inner_(inner) {
  if (!inner_.diagonal_noise() || inner_.noise_dim() != inner_.state_dim())
    throw std::invalid_argument("ito_correction_diagonal: field must declare diagonal noise");
}

ItoCorrectedField ito_correction_diagonal(const VectorField& field) { return ItoCorrectedField(field); }

void ItoCorrectedField::drift(double t, std::span<const double> z, std::span<double> out) const {
  const std::size_t x = state_dim();
  inner_.drift(t, z, out);
  std::vector<double> sigma(x * x);
  inner_.diffusion(t, z, sigma);
  std::vector<double> first(x), second(x);
  if (!inner_.diagonal_diffusion_derivatives(t, z, first, second)) {
    // Without second derivatives the field may not have filled `first` either; use one VJP per channel.
    std::vector<double> cot(x * x, 0.0), cot_z(x);
    for (std::size_t i = 0; i < x; ++i) {
      cot[i * x + i] = 1.0;
      inner_.diffusion_vjp(t, z, cot, cot_z, {});
      first[i] = cot_z[i];
      cot[i * x + i] = 0.0;
    }
  }
  for (std::size_t i = 0; i < x; ++i) out[i] -= 0.5 * sigma[i * x + i] * first[i];
}

void ItoCorrectedField::diffusion(double t, std::span<const double> z, std::span<double> out) const {
  inner_.diffusion(t, z, out);
}

void ItoCorrectedField::drift_vjp(double t, std::span<const double> z, std::span<const double> cot,
                                  std::span<double> cot_z, std::span<double> cot_params) const {
  // d/dz_i [sigma_ii sigma_ii'] = sigma_ii'^2 + sigma_ii sigma_ii''; assumes sigma_ii depends on z_i only.
  const std::size_t x = state_dim();
  if (inner_.param_count() != 0)
    throw std::logic_error("ItoCorrectedField: drift VJP with parametrised diffusion is not supported");
  std::vector<double> sigma(x * x), first(x), second(x);
  inner_.diffusion(t, z, sigma);
  if (!inner_.diagonal_diffusion_derivatives(t, z, first, second))
    throw std::logic_error("ItoCorrectedField: wrapped field does not expose second derivatives");
  inner_.drift_vjp(t, z, cot, cot_z, cot_params);
  for (std::size_t i = 0; i < x; ++i)
    cot_z[i] -= 0.5 * cot[i] * (first[i] * first[i] + sigma[i * x + i] * second[i]);
}

void ItoCorrectedField::diffusion_vjp(double t, std::span<const double> z, std::span<const double> cot,
                                      std::span<double> cot_z, std::span<double> cot_params) const {
  inner_.diffusion_vjp(t, z, cot, cot_z, cot_params);
}

// ---------------------------------------------------------------------------
// fd_check

FdReport fd_check(VectorField& field, double t, std::span<const double> z, const FdOptions& options) {
  if (!(options.tolerance > 0.0)) throw std::invalid_argument("fd_check: tolerance must be positive");
  const std::size_t x = field.state_dim();
  const std::size_t np = field.param_count();
  require(z.size() == x, "fd_check: state size mismatch");

  FdReport report;
  auto consider = [&](double analytic, double numeric, const std::string& where) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.absolute_floor});
    const double d = std::abs(analytic - numeric) / denom;
    if (d > report.max_discrepancy) {
      report.max_discrepancy = d;
      report.worst = where;
    }
  };

  SeedState seed = new_seed(options.seed);
  std::vector<double> z_work(z.begin(), z.end());
  const std::vector<double> p0(field.params().begin(), field.params().end());
  std::vector<double> p_work = p0;

  for (int which = 0; which < 2; ++which) {
    const bool is_drift = which == 0;
    const std::size_t out_n = is_drift ? x : field.diffusion_size();
    const char* name = is_drift ? "drift" : "diffusion";
    auto [cot_seed, next] = split(seed);
    seed = next;
    const auto cot = standard_normals(cot_seed, out_n);

    std::vector<double> cot_z(x), cot_p(np, 0.0);
    if (is_drift)
      field.drift_vjp(t, z, cot, cot_z, cot_p);
    else
      field.diffusion_vjp(t, z, cot, cot_z, cot_p);

    // Differences are taken per output before contracting with the cotangent,
    // and divided by the step actually realised in floating point.
    std::vector<double> up(out_n), down(out_n);
    auto evaluate = [&](std::vector<double>& dst) {
      if (is_drift)
        field.drift(t, z_work, dst);
      else
        field.diffusion(t, z_work, dst);
    };
    auto central = [&](double realised) {
      double acc = 0.0;
      for (std::size_t k = 0; k < out_n; ++k) acc += cot[k] * (up[k] - down[k]);
      return acc / realised;
    };

    for (std::size_t i = 0; i < x; ++i) {
      const double orig = z_work[i];
      const double hi = orig + options.step, lo = orig - options.step;
      z_work[i] = hi;
      evaluate(up);
      z_work[i] = lo;
      evaluate(down);
      z_work[i] = orig;
      consider(cot_z[i], central(hi - lo), std::string(name) + " dz[" + std::to_string(i) + "]");
    }
    for (std::size_t k = 0; k < np; ++k) {
      const double orig = p_work[k];
      const double hi = orig + options.step, lo = orig - options.step;
      p_work[k] = hi;
      field.set_params(p_work);
      evaluate(up);
      p_work[k] = lo;
      field.set_params(p_work);
      evaluate(down);
      p_work[k] = orig;
      field.set_params(p_work);
      consider(cot_p[k], central(hi - lo), std::string(name) + " dparam[" + std::to_string(k) + "]");
    }
  }
  field.set_params(p0);
  report.passed = report.max_discrepancy <= options.tolerance;
  return report;
}

}  // namespace revsde
