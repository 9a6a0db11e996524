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

// revsde: runs the experiment harness through the C API.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "revsde/revsde.h"

namespace {

struct Options {
  std::map<std::string, std::string> values;  // flag name -> raw text
  std::string config;
  bool check = false;
  bool quiet = false;
};

const std::vector<std::pair<std::string, std::string>>& flag_table() {
  static const std::vector<std::pair<std::string, std::string>> flags = {
      {"seed", "master seed (uint64)"},
      {"out", "CSV output path; stdout when omitted"},
      {"batch", "paths per batch (convergence chunk, bench batch, gradient batch)"},
      {"steps", "comma-separated step sizes, 2^-k accepted"},
      {"paths", "Monte Carlo paths (strong study, fit-toy data)"},
      {"cache-capacity", "Brownian Interval LRU capacity"},
      {"vbt-eps", "Virtual Brownian Tree tolerance"},
      {"methods", "comma-separated solver list"},
      {"dims", "Brownian / noise dimension"},
      {"weak-paths", "paths for the weak study"},
      {"weak-steps", "step sizes for the weak study"},
      {"iterations", "optimiser iterations (fit-toy)"},
      {"learning-rate", "Adam learning rate (fit-toy)"},
      {"repeats", "timing repeats (brownian-bench)"},
      {"subintervals", "comma-separated subinterval counts (brownian-bench)"},
      {"spot-check-every", "oracle spot check period (fit-toy)"},
  };
  return flags;
}

int fail_with(const char* what) {
  std::fprintf(stderr, "revsde: %s: %s\n", what, rsde_last_error());
  return 2;
}

int run(const std::string& name, const Options& opts) {
  rsde_experiment* exp = nullptr;
  if (rsde_experiment_create(name.c_str(), &exp) != RSDE_OK) return fail_with("create");
  for (const auto& [key, value] : opts.values) {
    if (rsde_experiment_set(exp, key.c_str(), value.c_str()) != RSDE_OK) {
      rsde_experiment_destroy(exp);
      return fail_with(("--" + key).c_str());
    }
  }
  if (!opts.config.empty() && rsde_experiment_load_file(exp, opts.config.c_str()) != RSDE_OK) {
    rsde_experiment_destroy(exp);
    return fail_with("config");
  }

  rsde_report* report = nullptr;
  const rsde_status st = rsde_experiment_run(exp, &report);
  rsde_experiment_destroy(exp);
  if (st != RSDE_OK) return fail_with(name.c_str());

  const bool to_stdout = opts.values.find("out") == opts.values.end();
  if (to_stdout) std::fputs(rsde_report_csv(report), stdout);
  if (!opts.quiet) std::fputs(rsde_report_summary(report), stderr);

  int code = 0;
  if (opts.check) {
    const size_t n = rsde_report_check_count(report);
    for (size_t i = 0; i < n; ++i) {
      const char* check = nullptr;
      const char* detail = nullptr;
      int passed = 0;
      rsde_report_check(report, i, &check, &passed, &detail);
      if (!passed) {
        std::fprintf(stderr, "revsde: check failed: %s (%s)\n", check, detail);
        code = 1;
      }
    }
  }
  rsde_report_destroy(report);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reversible Heun SDE solver experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", rsde_version());

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gradient-error", "reversible adjoint vs continuous adjoint gradient error"},
      {"convergence", "strong and weak convergence studies"},
      {"brownian-bench", "Brownian Interval vs Virtual Brownian Tree query timing"},
      {"stability", "linear stability region of reversible Heun"},
      {"fit-toy", "fit a small neural SDE to OU moments"},
  };

  Options opts;
  std::map<std::string, std::string> raw;
  std::string chosen;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    for (const auto& [flag, flag_help] : flag_table()) sub->add_option("--" + flag, raw[flag], flag_help);
    sub->add_option("--config", opts.config, "key = value file; overrides flags")->check(CLI::ExistingFile);
    sub->add_flag("--check", opts.check, "exit non-zero when an acceptance check fails");
    sub->add_flag("-q,--quiet", opts.quiet, "suppress the summary on stderr");
    sub->callback([&chosen, n = name] { chosen = n; });
  }

  CLI11_PARSE(app, argc, argv);

  for (CLI::App* sub : app.get_subcommands()) {
    for (const auto& [flag, help] : flag_table()) {
      (void)help;
      if (sub->count("--" + flag) > 0) opts.values[flag] = raw[flag];
    }
  }
  return run(chosen, opts);
}
