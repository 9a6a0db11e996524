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

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "revsde/revsde.h"

TEST_CASE("status strings and last error") {
  CHECK(std::strcmp(rsde_status_string(RSDE_OK), "ok") == 0);
  CHECK(std::strlen(rsde_version()) > 0);
  rsde_brownian* b = nullptr;
  CHECK(rsde_brownian_interval_create(1.0, 0, 1, 0, 128, &b) == RSDE_INVALID_ARGUMENT);
  CHECK(b == nullptr);
  CHECK(std::string(rsde_last_error()).find("positive") != std::string::npos);
  CHECK(rsde_brownian_interval_create(1.0, 1, 1, 0, 128, nullptr) == RSDE_INVALID_ARGUMENT);
  rsde_brownian_destroy(nullptr);
  rsde_field_destroy(nullptr);
  rsde_experiment_destroy(nullptr);
  rsde_report_destroy(nullptr);
}

TEST_CASE("Brownian handles") {
  rsde_brownian* bi = nullptr;
  REQUIRE(rsde_brownian_interval_create(1.0, 2, 3, 7, 16, &bi) == RSDE_OK);
  std::vector<double> a(6), b(6), c(6);
  REQUIRE(rsde_brownian_increment(bi, 0.1, 0.4, a.data(), a.size()) == RSDE_OK);
  REQUIRE(rsde_brownian_increment(bi, 0.4, 0.9, b.data(), b.size()) == RSDE_OK);
  REQUIRE(rsde_brownian_increment(bi, 0.1, 0.9, c.data(), c.size()) == RSDE_OK);
  for (int i = 0; i < 6; ++i) CHECK(a[i] + b[i] == c[i]);
  CHECK(rsde_brownian_increment(bi, 0.5, 0.5, a.data(), a.size()) == RSDE_INVALID_ARGUMENT);
  CHECK(rsde_brownian_increment(bi, 0.5, 1.5, a.data(), a.size()) == RSDE_OUT_OF_RANGE);
  CHECK(rsde_brownian_increment(bi, 0.1, 0.5, a.data(), 5) == RSDE_INVALID_ARGUMENT);
  rsde_tree_stats st{};
  REQUIRE(rsde_brownian_stats(bi, &st) == RSDE_OK);
  CHECK(st.queries == 3);
  CHECK(st.node_count > 1);
  rsde_brownian_destroy(bi);

  rsde_brownian* fresh = nullptr;
  REQUIRE(rsde_brownian_interval_create(1.0, 1, 1, 1, 20, &fresh) == RSDE_OK);
  CHECK(rsde_brownian_prebuild(fresh, 0.01, 20) == RSDE_OK);
  REQUIRE(rsde_brownian_stats(fresh, &st) == RSDE_OK);
  CHECK(st.node_count == 15);
  rsde_brownian_destroy(fresh);

  rsde_brownian* vbt = nullptr;
  REQUIRE(rsde_virtual_tree_create(1.0, 1, 2, 7, 0.0, &vbt) == RSDE_OK);
  std::vector<double> w(2);
  CHECK(rsde_brownian_increment(vbt, 0.0, 0.5, w.data(), w.size()) == RSDE_OK);
  CHECK(rsde_brownian_prebuild(vbt, 0.01, 20) == RSDE_UNSUPPORTED);
  CHECK(rsde_brownian_stats(vbt, &st) == RSDE_UNSUPPORTED);
  rsde_brownian_destroy(vbt);
}

TEST_CASE("fields, manifests and gradients") {
  rsde_field* f = nullptr;
  REQUIRE(rsde_field_create_mlp(3, 2, 8, "tanh", "sigmoid", 4, &f) == RSDE_OK);
  CHECK(rsde_field_create_mlp(3, 2, 8, "relu", "sigmoid", 4, &f) == RSDE_INVALID_ARGUMENT);
  size_t x = 0, w = 0, np = 0;
  REQUIRE(rsde_field_dims(f, &x, &w, &np) == RSDE_OK);
  CHECK(x == 3);
  CHECK(w == 2);
  std::vector<double> p(np);
  REQUIRE(rsde_field_get_params(f, p.data(), p.size()) == RSDE_OK);
  CHECK(rsde_field_get_params(f, p.data(), p.size() - 1) == RSDE_INVALID_ARGUMENT);
  CHECK(rsde_field_clip_weights(f) == RSDE_OK);

  const auto path = (std::filesystem::temp_directory_path() / "revsde_capi_manifest.txt").string();
  REQUIRE(rsde_field_save_manifest(f, path.c_str()) == RSDE_OK);
  rsde_field* g = nullptr;
  REQUIRE(rsde_field_load_manifest(path.c_str(), &g) == RSDE_OK);
  std::vector<double> pf(np), pg(np);
  rsde_field_get_params(f, pf.data(), np);
  rsde_field_get_params(g, pg.data(), np);
  CHECK(pf == pg);
  std::filesystem::remove(path);
  CHECK(rsde_field_load_manifest("/nonexistent/m.txt", &g) == RSDE_IO_ERROR);

  constexpr size_t batch = 4;
  rsde_brownian* noise = nullptr;
  REQUIRE(rsde_brownian_interval_create(1.0, 2, batch, 9, 128, &noise) == RSDE_OK);
  std::vector<double> z0(3 * batch, 0.25), zt(3 * batch), cot(3 * batch, 1.0);
  REQUIRE(rsde_solve(f, noise, RSDE_REVERSIBLE_HEUN, 0.125, 1.0, z0.data(), batch, zt.data()) == RSDE_OK);
  CHECK(rsde_solve(f, noise, RSDE_HEUN, 0.3, 1.0, z0.data(), batch, zt.data()) == RSDE_INVALID_ARGUMENT);

  std::vector<double> gz_rev(3 * batch), gp_rev(np), gz_tape(3 * batch), gp_tape(np), gz_ca(3 * batch), gp_ca(np);
  REQUIRE(rsde_gradient(f, noise, RSDE_REVERSIBLE_HEUN, RSDE_GRAD_REVERSIBLE_ADJOINT, 0.125, 1.0, z0.data(), batch,
                        cot.data(), gz_rev.data(), gp_rev.data()) == RSDE_OK);
  REQUIRE(rsde_gradient(f, noise, RSDE_REVERSIBLE_HEUN, RSDE_GRAD_UNROLLED, 0.125, 1.0, z0.data(), batch, cot.data(),
                        gz_tape.data(), gp_tape.data()) == RSDE_OK);
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < gz_rev.size(); ++i) {
    num += std::abs(gz_rev[i] - gz_tape[i]);
    den += std::abs(gz_tape[i]);
  }
  for (size_t i = 0; i < np; ++i) {
    num += std::abs(gp_rev[i] - gp_tape[i]);
    den += std::abs(gp_tape[i]);
  }
  CHECK(num / den <= 1e-12);
  REQUIRE(rsde_gradient(f, noise, RSDE_MIDPOINT, RSDE_GRAD_CONTINUOUS_ADJOINT, 0.125, 1.0, z0.data(), batch,
                        cot.data(), gz_ca.data(), gp_ca.data()) == RSDE_OK);
  CHECK(rsde_gradient(f, noise, RSDE_MIDPOINT, RSDE_GRAD_REVERSIBLE_ADJOINT, 0.125, 1.0, z0.data(), batch, cot.data(),
                      gz_ca.data(), gp_ca.data()) == RSDE_INVALID_ARGUMENT);
  CHECK(rsde_gradient(f, noise, RSDE_EULER_MARUYAMA, RSDE_GRAD_CONTINUOUS_ADJOINT, 0.125, 1.0, z0.data(), batch,
                      cot.data(), gz_ca.data(), gp_ca.data()) == RSDE_INVALID_ARGUMENT);

  rsde_brownian_destroy(noise);
  rsde_field_destroy(g);
  rsde_field_destroy(f);
}

TEST_CASE("linear field and divergence status") {
  const double a[1] = {1e300}, b[1] = {0.0};
  rsde_field* f = nullptr;
  REQUIRE(rsde_field_create_linear(1, 1, a, b, &f) == RSDE_OK);
  CHECK(rsde_field_clip_weights(f) == RSDE_UNSUPPORTED);
  rsde_brownian* noise = nullptr;
  REQUIRE(rsde_brownian_interval_create(1.0, 1, 1, 0, 128, &noise) == RSDE_OK);
  const double z0 = 1e10;
  double zt = 0.0;
  CHECK(rsde_solve(f, noise, RSDE_REVERSIBLE_HEUN, 0.5, 1.0, &z0, 1, &zt) == RSDE_NUMERICAL_ERROR);
  CHECK(std::string(rsde_last_error()).find("at step") != std::string::npos);
  rsde_brownian_destroy(noise);
  rsde_field_destroy(f);
}

TEST_CASE("stability probe") {
  rsde_stability_result r{};
  REQUIRE(rsde_stability_probe(0.0, 0.5, 100000, &r) == RSDE_OK);
  CHECK(r.bounded == 1);
  REQUIRE(rsde_stability_probe(-0.5, 0.0, 1000, &r) == RSDE_OK);
  CHECK(r.bounded == 0);
  CHECK(rsde_stability_probe(0.0, 0.5, 0, &r) == RSDE_INVALID_ARGUMENT);
}

TEST_CASE("experiments and reports") {
  rsde_experiment* e = nullptr;
  CHECK(rsde_experiment_create("nope", &e) == RSDE_INVALID_ARGUMENT);
  REQUIRE(rsde_experiment_create("stability", &e) == RSDE_OK);
  CHECK(rsde_experiment_set(e, "colour", "red") == RSDE_INVALID_ARGUMENT);
  const auto out = (std::filesystem::temp_directory_path() / "revsde_capi_stability.csv").string();
  REQUIRE(rsde_experiment_set(e, "out", out.c_str()) == RSDE_OK);
  rsde_report* r = nullptr;
  REQUIRE(rsde_experiment_run(e, &r) == RSDE_OK);
  CHECK(rsde_report_passed(r) == 1);
  CHECK(std::string(rsde_report_csv(r)).rfind("re,im,", 0) == 0);
  CHECK(std::string(rsde_report_summary(r)).find("PASS") != std::string::npos);
  REQUIRE(rsde_report_check_count(r) >= 2);
  const char* name = nullptr;
  const char* detail = nullptr;
  int passed = 0;
  REQUIRE(rsde_report_check(r, 0, &name, &passed, &detail) == RSDE_OK);
  CHECK(passed == 1);
  CHECK(std::strlen(name) > 0);
  CHECK(rsde_report_check(r, 99, &name, &passed, &detail) == RSDE_OUT_OF_RANGE);
  CHECK(std::filesystem::exists(out));
  std::filesystem::remove(out);
  rsde_report_destroy(r);

  CHECK(rsde_experiment_load_file(e, "/nonexistent/x.cfg") == RSDE_IO_ERROR);
  REQUIRE(rsde_experiment_set(e, "out", "/nonexistent-dir/x.csv") == RSDE_OK);
  CHECK(rsde_experiment_run(e, &r) == RSDE_INVALID_ARGUMENT);
  rsde_experiment_destroy(e);
}
