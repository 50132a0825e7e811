#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using namespace kernrecon;

enum ExitCode { kOk = 0, kUsage = 1, kNumerical = 2, kVerification = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-only training-data reconstruction for kernel models"};
  app.require_subcommand(0, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned threads = 1;
  app.add_option("--config", config_path, "INI config file; omitted keys take their defaults");
  app.add_option("--seed", seed, "overrides data.seed and attack.seed");
  app.add_option("--out", out, "overrides output.dir");
  app.add_option("--threads", threads, "worker threads for ablations and verification")
      ->check(CLI::Range(1u, 1024u));
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  auto* gen = app.add_subcommand("gen-data", "sample the [data] training set into X.txt and Y.txt");
  auto* train = app.add_subcommand("train", "fit the [model] and write model.txt");
  std::string model_path;
  auto* attack = app.add_subcommand("attack", "reconstruct training points through a query-only oracle");
  attack->add_option("--model", model_path, "ModelFile to serve behind the oracle")->required();
  std::string recon_path;
  std::string train_path;
  auto* evaluate = app.add_subcommand("evaluate", "compare reconstructions with the training set");
  evaluate->add_option("--recon", recon_path, "MatrixFile of reconstructed points")->required();
  evaluate->add_option("--train", train_path, "MatrixFile of training points")->required();
  auto* demo = app.add_subcommand("demo-kde2d", "attack a 2D KDE and export lattice grids");
  auto* ablate_m = app.add_subcommand("ablate-queries", "sweep attack.m_list on one instance");
  auto* ablate_g = app.add_subcommand("ablate-gamma", "sweep attack.gamma_list on one instance");
  auto* verify = app.add_subcommand("verify-uniqueness", "zero-loss soundness and gram invertibility suites");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  if (list_keys) {
    for (const ConfigKey& k : config_keys()) {
      std::cout << k.section << '.' << k.key << " = " << k.default_value << "    # " << k.help << '\n';
    }
    return kOk;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return kUsage;
  }

  try {
    const ExperimentConfig base = config_path.empty() ? parse_config("") : load_config(config_path);
    cli::Context ctx;
    ctx.config = cli::with_overrides(base, seed, out);
    ctx.out = ctx.config.output_dir;
    ctx.threads = threads;
    ctx.log = &std::cout;

    if (gen->parsed()) {
      cli::cmd_gen_data(ctx);
    } else if (train->parsed()) {
      cli::cmd_train(ctx);
    } else if (attack->parsed()) {
      cli::cmd_attack(ctx, model_path);
    } else if (evaluate->parsed()) {
      cli::cmd_evaluate(ctx, recon_path, train_path);
    } else if (demo->parsed()) {
      cli::cmd_demo_kde2d(ctx);
    } else if (ablate_m->parsed()) {
      cli::cmd_ablate_queries(ctx);
    } else if (ablate_g->parsed()) {
      cli::cmd_ablate_gamma(ctx);
    } else if (verify->parsed()) {
      if (!cli::cmd_verify_uniqueness(ctx).passed()) {
        std::cerr << "verify-uniqueness: suite failed\n";
        return kVerification;
      }
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const TrainingError& e) {
    std::cerr << "training failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}
