#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spde/cli.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--set", f.sets, "override KEY=VALUE (repeatable)");
  cmd->add_option("--out", f.out, "output directory (output.dir)");
  cmd->add_option("--seed", f.seed, "master seed (study.seed)");
  cmd->add_option("--threads", f.threads, "worker threads (study.threads)");
}

spde::RunConfig resolve(const CommonFlags& f, std::vector<std::string> extra = {}, bool model_only = false) {
  std::vector<std::string> sets = std::move(extra);
  sets.insert(sets.end(), f.sets.begin(), f.sets.end());
  if (!f.out.empty()) sets.push_back("output.dir=" + f.out);
  if (f.seed) sets.push_back("study.seed=" + std::to_string(*f.seed));
  if (f.threads) sets.push_back("study.threads=" + std::to_string(*f.threads));
  return spde::parse_config(f.config, sets, model_only);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Drift-implicit Euler / Milstein Galerkin schemes for SPDEs with monotone drift"};
  app.require_subcommand(1);

  CommonFlags run_flags, check_flags, trunc_flags, dump_flags;
  std::string assert_order;
  bool dry_run = false, show_keys = false;
  std::uint64_t sample_id = 0;

  auto* run = app.add_subcommand("run", "run a strong error study");
  add_common(run, run_flags);
  run->add_option("--assert-order", assert_order, "fail with exit 4 unless the fitted slope is EXPECTED+-TOL");
  run->add_flag("--dry-run", dry_run, "print the resolved plan and exit");
  run->add_flag("--keys", show_keys, "list configuration keys and exit");

  auto* check = app.add_subcommand("check-model", "check the model assumptions and print estimated constants");
  add_common(check, check_flags);

  auto* trunc = app.add_subcommand("truncation-study", "error of truncated noise against a larger K");
  add_common(trunc, trunc_flags);
  trunc->add_flag("--dry-run", dry_run, "print the resolved plan and exit");

  auto* dump = app.add_subcommand("dump-noise", "write one sample's increment tree as binary");
  add_common(dump, dump_flags);
  dump->add_option("--sample-id", sample_id, "sample index within the master seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : spde::kExitConfig;
  }

  try {
    if (run->parsed()) {
      if (show_keys) {
        std::cout << spde::grammar();
        return spde::kExitOk;
      }
      std::optional<spde::OrderAssertion> assertion;
      if (!assert_order.empty()) assertion = spde::parse_order_assertion(assert_order);
      return spde::run_study(resolve(run_flags), assertion, dry_run, std::cout, std::cerr);
    }
    if (check->parsed()) return spde::check_model(resolve(check_flags, {}, true), std::cout);
    if (trunc->parsed()) {
      return spde::run_study(resolve(trunc_flags, {"study.axis=truncation"}), std::nullopt, dry_run, std::cout,
                             std::cerr);
    }
    return spde::dump_noise(resolve(dump_flags), sample_id, std::cout, std::cerr);
  } catch (const spde::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return spde::kExitConfig;
  }
}
