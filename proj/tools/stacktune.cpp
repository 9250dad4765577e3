#include "CLI11.hpp"

#include "stacktune.hpp"

int main(int argc, char** argv) {
  CLI::App app{"stacktune: stack-and-finetune adaptation of a small pre-trained encoder"};
  app.require_subcommand(1);
  stacktune::CommandLine cl;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cl.config_path, "key=value config file");
    sub->add_option("--seed", cl.seed, "overrides the config seed");
    sub->add_option("--out", cl.out, "output directory");
    sub->add_option("--strategy", cl.strategy, "stack-and-finetune | stack-only | finetune-only");
    sub->add_option("--head", cl.head, "head name, e.g. bilstm-tagger or sim-transformer");
  };
  const std::vector<std::pair<std::string, std::string>> commands{
      {"pretrain", "masked-LM pre-training of the encoder"},
      {"adapt", "train one strategy on a task"},
      {"compare", "train all three strategies and print one row each"},
      {"ensemble", "average the class probabilities of trained models"},
      {"gradcheck", "finite-difference check of every primitive and head"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    if (name == "ensemble") sub->add_option("--member", cl.members, "output directory of an adapt run");
    sub->callback([&cl, name = name] { cl.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), stacktune::kExitInvalid);
  }
  return stacktune::run_command(cl);
}
