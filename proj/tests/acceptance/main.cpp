#include <CLI11.hpp>

#include <iostream>

#include "tta/error.hpp"
#include "tta/harness/acceptance.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1 to 10"};
  std::string config, out = "acceptance_out";
  bool no_repeat = false;
  app.add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--out", out, "Output directory");
  app.add_flag("--no-repeat", no_repeat, "Skip the second pipeline run");
  CLI11_PARSE(app, argc, argv);

  try {
    tta::harness::ExperimentConfig cfg = config.empty() ? tta::harness::ExperimentConfig{}
                                                        : tta::harness::load_config(config);
    cfg.output_dir = out;
    tta::harness::AcceptanceOptions opt;
    opt.repeat_run = !no_repeat;
    const auto report =
        tta::harness::run_acceptance(cfg, out, opt, [](const std::string& s) { std::cerr << s << std::endl; });
    std::cout << report.format();
    std::cout << (report.all_passed() ? "all criteria passed" : "some criteria failed") << " in "
              << report.wall_seconds / 60.0 << " min" << std::endl;
    return report.all_passed() ? 0 : 1;
  } catch (const tta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const tta::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << std::endl;
    return 3;
  }
}
