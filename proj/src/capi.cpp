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

#include "revsde/revsde.h"

#include <algorithm>
#include <fstream>
#include <memory>
#include <new>
#include <stdexcept>
#include <string>
#include <variant>

#include "revsde/brownian.hpp"
#include "revsde/harness.hpp"
#include "revsde/solvers.hpp"

struct rsde_brownian {
  std::unique_ptr<revsde::BrownianSource> source;
  revsde::BrownianInterval* interval = nullptr;  // non-null for Brownian Interval handles
};

struct rsde_field {
  std::variant<revsde::NeuralSdeField, revsde::LinearField> field;

  const revsde::VectorField& get() const {
    return std::visit([](const auto& f) -> const revsde::VectorField& { return f; }, field);
  }
  revsde::VectorField& get() {
    return std::visit([](auto& f) -> revsde::VectorField& { return f; }, field);
  }
};

struct rsde_experiment {
  revsde::ExperimentConfig config;
};

struct rsde_report {
  revsde::Report report;
};

namespace {

thread_local std::string g_last_error;

rsde_status fail(rsde_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
rsde_status guard(F&& body) {
  try {
    body();
    return RSDE_OK;
  } catch (const revsde::NumericalError& e) {
    return fail(RSDE_NUMERICAL_ERROR, e.what());
  } catch (const revsde::MemoryLimitError& e) {
    return fail(RSDE_MEMORY_LIMIT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(RSDE_OUT_OF_RANGE, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(RSDE_INVALID_ARGUMENT, e.what());
  } catch (const std::logic_error& e) {
    return fail(RSDE_UNSUPPORTED, e.what());
  } catch (const std::ios_base::failure& e) {
    return fail(RSDE_IO_ERROR, e.what());
  } catch (const std::bad_alloc&) {
    return fail(RSDE_MEMORY_LIMIT, "out of memory");
  } catch (const std::exception& e) {
    return fail(RSDE_INTERNAL_ERROR, e.what());
  } catch (...) {
    return fail(RSDE_INTERNAL_ERROR, "unknown exception");
  }
}

void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(message);
}

revsde::Method to_method(rsde_method m) {
  switch (m) {
    case RSDE_REVERSIBLE_HEUN: return revsde::Method::reversible_heun;
    case RSDE_MIDPOINT: return revsde::Method::midpoint;
    case RSDE_HEUN: return revsde::Method::heun;
    case RSDE_EULER_MARUYAMA: return revsde::Method::euler_maruyama;
  }
  throw std::invalid_argument("unknown method");
}

}  // namespace

extern "C" {

const char* rsde_version(void) { return "0.1.0"; }

const char* rsde_last_error(void) { return g_last_error.c_str(); }

const char* rsde_status_string(rsde_status status) {
  switch (status) {
    case RSDE_OK: return "ok";
    case RSDE_INVALID_ARGUMENT: return "invalid argument";
    case RSDE_OUT_OF_RANGE: return "out of range";
    case RSDE_NUMERICAL_ERROR: return "numerical error";
    case RSDE_MEMORY_LIMIT: return "memory limit";
    case RSDE_IO_ERROR: return "i/o error";
    case RSDE_UNSUPPORTED: return "unsupported";
    case RSDE_INTERNAL_ERROR: return "internal error";
  }
  return "unknown status";
}

// Brownian ------------------------------------------------------------------

rsde_status rsde_brownian_interval_create(double horizon, size_t dims, size_t batch, uint64_t seed,
                                          size_t cache_capacity, rsde_brownian** out) {
  return guard([&] {
    require(out != nullptr, "out is NULL");
    revsde::BrownianInterval::Options o;
    o.horizon = horizon;
    o.dims = dims;
    o.batch = batch;
    o.seed = revsde::new_seed(seed);
    o.cache_capacity = cache_capacity;
    auto h = std::make_unique<rsde_brownian>();
    auto bi = std::make_unique<revsde::BrownianInterval>(o);
    h->interval = bi.get();
    h->source = std::move(bi);
    *out = h.release();
  });
}

rsde_status rsde_virtual_tree_create(double horizon, size_t dims, size_t batch, uint64_t seed,
                                     double tolerance, rsde_brownian** out) {
  return guard([&] {
    require(out != nullptr, "out is NULL");
    revsde::VirtualBrownianTree::Options o;
    o.horizon = horizon;
    o.dims = dims;
    o.batch = batch;
    o.seed = revsde::new_seed(seed);
    o.tolerance = tolerance;
    auto h = std::make_unique<rsde_brownian>();
    h->source = std::make_unique<revsde::VirtualBrownianTree>(o);
    *out = h.release();
  });
}

rsde_status rsde_brownian_increment(rsde_brownian* source, double s, double t, double* out,
                                    size_t out_len) {
  return guard([&] {
    require(source != nullptr && out != nullptr, "NULL argument");
    require(out_len == source->source->width(), "output length must be batch * dims");
    source->source->increment(s, t, std::span<double>(out, out_len));
  });
}

rsde_status rsde_brownian_prebuild(rsde_brownian* source, double step_estimate, size_t cache_size) {
  return guard([&] {
    require(source != nullptr, "source is NULL");
    if (source->interval == nullptr) throw std::logic_error("prebuild needs a Brownian Interval");
    source->interval->prebuild_dyadic(step_estimate, cache_size);
  });
}

rsde_status rsde_brownian_stats(const rsde_brownian* source, rsde_tree_stats* out) {
  return guard([&] {
    require(source != nullptr && out != nullptr, "NULL argument");
    if (source->interval == nullptr) throw std::logic_error("statistics need a Brownian Interval");
    const auto& s = source->interval->stats();
    *out = rsde_tree_stats{s.node_count,     s.queries,        s.cache_hits,     s.cache_misses,
                           s.traverse_edges, s.max_traverse_edges, s.max_miss_chain, s.nodes_returned};
  });
}

void rsde_brownian_destroy(rsde_brownian* source) { delete source; }

// Fields --------------------------------------------------------------------

rsde_status rsde_field_create_mlp(size_t state_dim, size_t noise_dim, size_t hidden_width,
                                  const char* drift_final, const char* diffusion_final, uint64_t seed,
                                  rsde_field** out) {
  return guard([&] {
    require(out != nullptr && drift_final != nullptr && diffusion_final != nullptr, "NULL argument");
    auto f = revsde::NeuralSdeField::make(state_dim, noise_dim, hidden_width,
                                          revsde::activation_from_string(drift_final),
                                          revsde::activation_from_string(diffusion_final),
                                          revsde::new_seed(seed));
    *out = new rsde_field{std::move(f)};
  });
}

rsde_status rsde_field_create_linear(size_t state_dim, size_t noise_dim, const double* a,
                                     const double* b, rsde_field** out) {
  return guard([&] {
    require(out != nullptr && a != nullptr && b != nullptr, "NULL argument");
    std::vector<double> av(a, a + state_dim * state_dim), bv(b, b + state_dim * noise_dim);
    *out = new rsde_field{revsde::LinearField(state_dim, noise_dim, std::move(av), std::move(bv))};
  });
}

rsde_status rsde_field_load_manifest(const char* path, rsde_field** out) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "NULL argument");
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure(std::string("cannot open '") + path + "'");
    *out = new rsde_field{revsde::load_manifest(in)};
  });
}

rsde_status rsde_field_save_manifest(const rsde_field* field, const char* path) {
  return guard([&] {
    require(field != nullptr && path != nullptr, "NULL argument");
    const auto* neural = std::get_if<revsde::NeuralSdeField>(&field->field);
    if (neural == nullptr) throw std::logic_error("manifests are only defined for MLP fields");
    std::ofstream os(path);
    if (!os) throw std::ios_base::failure(std::string("cannot write '") + path + "'");
    revsde::save_manifest(*neural, os);
  });
}

rsde_status rsde_field_dims(const rsde_field* field, size_t* state_dim, size_t* noise_dim,
                            size_t* param_count) {
  return guard([&] {
    require(field != nullptr, "field is NULL");
    const auto& f = field->get();
    if (state_dim) *state_dim = f.state_dim();
    if (noise_dim) *noise_dim = f.noise_dim();
    if (param_count) *param_count = f.param_count();
  });
}

rsde_status rsde_field_get_params(const rsde_field* field, double* out, size_t len) {
  return guard([&] {
    require(field != nullptr && (out != nullptr || len == 0), "NULL argument");
    const auto p = field->get().params();
    require(len == p.size(), "length must equal param_count");
    std::copy(p.begin(), p.end(), out);
  });
}

rsde_status rsde_field_set_params(rsde_field* field, const double* values, size_t len) {
  return guard([&] {
    require(field != nullptr && (values != nullptr || len == 0), "NULL argument");
    field->get().set_params(std::span<const double>(values, len));
  });
}

rsde_status rsde_field_clip_weights(rsde_field* field) {
  return guard([&] {
    require(field != nullptr, "field is NULL");
    auto* neural = std::get_if<revsde::NeuralSdeField>(&field->field);
    if (neural == nullptr) throw std::logic_error("clipping is only defined for MLP fields");
    neural->clip_weights();
  });
}

void rsde_field_destroy(rsde_field* field) { delete field; }

// Solves --------------------------------------------------------------------

rsde_status rsde_solve(const rsde_field* field, rsde_brownian* noise, rsde_method method, double step,
                       double horizon, const double* z0, size_t batch, double* z_out) {
  return guard([&] {
    require(field != nullptr && noise != nullptr && z0 != nullptr && z_out != nullptr, "NULL argument");
    const auto& f = field->get();
    revsde::SolveConfig c;
    c.method = to_method(method);
    c.step = step;
    c.horizon = horizon;
    c.noise = noise->source.get();
    const auto r = revsde::solve(f, std::span<const double>(z0, batch * f.state_dim()), c);
    std::copy(r.state.z.begin(), r.state.z.end(), z_out);
  });
}

rsde_status rsde_gradient(const rsde_field* field, rsde_brownian* noise, rsde_method method,
                          rsde_gradient_kind kind, double step, double horizon, const double* z0,
                          size_t batch, const double* loss_cotangent, double* grad_z0,
                          double* grad_params) {
  return guard([&] {
    require(field != nullptr && noise != nullptr && z0 != nullptr && loss_cotangent != nullptr &&
                grad_z0 != nullptr,
            "NULL argument");
    const auto& f = field->get();
    require(grad_params != nullptr || f.param_count() == 0, "grad_params is NULL");
    revsde::SolveConfig c;
    c.method = to_method(method);
    c.step = step;
    c.horizon = horizon;
    c.noise = noise->source.get();
    const std::size_t n = batch * f.state_dim();
    const std::span<const double> z(z0, n), cot(loss_cotangent, n);
    revsde::Gradients g;
    switch (kind) {
      case RSDE_GRAD_REVERSIBLE_ADJOINT:
        require(c.method == revsde::Method::reversible_heun, "the reversible adjoint needs reversible_heun");
        g = revsde::revheun_adjoint_solve(f, z, c, cot);
        break;
      case RSDE_GRAD_CONTINUOUS_ADJOINT:
        g = revsde::continuous_adjoint_solve(c.method, f, z, c, cot);
        break;
      case RSDE_GRAD_UNROLLED:
        g = revsde::unrolled_backprop(f, z, c, cot);
        break;
      default:
        throw std::invalid_argument("unknown gradient kind");
    }
    std::copy(g.z0.begin(), g.z0.end(), grad_z0);
    if (grad_params) std::copy(g.params.begin(), g.params.end(), grad_params);
  });
}

rsde_status rsde_stability_probe(double re, double im, size_t n_steps, rsde_stability_result* out) {
  return guard([&] {
    require(out != nullptr, "out is NULL");
    const auto r = revsde::stability_probe(re, im, n_steps);
    *out = rsde_stability_result{r.max_z, r.max_zhat, r.bounded ? 1 : 0, r.steps_run};
  });
}

// Experiments ---------------------------------------------------------------

rsde_status rsde_experiment_create(const char* name, rsde_experiment** out) {
  return guard([&] {
    require(name != nullptr && out != nullptr, "NULL argument");
    auto e = std::make_unique<rsde_experiment>();
    e->config.experiment = name;
    const auto& names = revsde::experiment_names();
    if (std::find(names.begin(), names.end(), e->config.experiment) == names.end())
      throw std::invalid_argument(std::string("unknown experiment '") + name + "'");
    *out = e.release();
  });
}

rsde_status rsde_experiment_set(rsde_experiment* experiment, const char* key, const char* value) {
  return guard([&] {
    require(experiment != nullptr && key != nullptr && value != nullptr, "NULL argument");
    experiment->config.set(key, value);
  });
}

rsde_status rsde_experiment_load_file(rsde_experiment* experiment, const char* path) {
  return guard([&] {
    require(experiment != nullptr && path != nullptr, "NULL argument");
    if (!std::ifstream(path)) throw std::ios_base::failure(std::string("cannot open '") + path + "'");
    experiment->config.load_file(path);
  });
}

rsde_status rsde_experiment_run(const rsde_experiment* experiment, rsde_report** out) {
  rsde_status io = RSDE_OK;
  const rsde_status st = guard([&] {
    require(experiment != nullptr && out != nullptr, "NULL argument");
    auto r = std::make_unique<rsde_report>();
    r->report = revsde::run_experiment(experiment->config);
    if (!experiment->config.out.empty()) {
      std::ofstream os(experiment->config.out);
      os << r->report.csv;
      if (!os) {
        io = fail(RSDE_IO_ERROR, "cannot write '" + experiment->config.out + "'");
        return;
      }
    }
    *out = r.release();
  });
  return st != RSDE_OK ? st : io;
}

void rsde_experiment_destroy(rsde_experiment* experiment) { delete experiment; }

const char* rsde_report_csv(const rsde_report* report) { return report ? report->report.csv.c_str() : ""; }

const char* rsde_report_summary(const rsde_report* report) {
  return report ? report->report.summary.c_str() : "";
}

int rsde_report_passed(const rsde_report* report) { return report && report->report.passed() ? 1 : 0; }

size_t rsde_report_check_count(const rsde_report* report) { return report ? report->report.checks.size() : 0; }

rsde_status rsde_report_check(const rsde_report* report, size_t index, const char** name, int* passed,
                              const char** detail) {
  return guard([&] {
    require(report != nullptr, "report is NULL");
    const auto& c = report->report.checks.at(index);
    if (name) *name = c.name.c_str();
    if (passed) *passed = c.passed ? 1 : 0;
    if (detail) *detail = c.detail.c_str();
  });
}

void rsde_report_destroy(rsde_report* report) { delete report; }

}  // extern "C"
