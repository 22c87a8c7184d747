#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "xedit/harness/commands.hpp"

namespace h = xedit::harness;

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-pair image editing on a miniature diffusion transformer"};
  app.require_subcommand(1);
  h::CommandOptions o;

  std::string checkpoint, out, split, prompt, reference, source;
  std::uint64_t seed = 0;
  double alpha = 0, guidance = 0;
  std::size_t steps = 0, instance = 0, instruction = 0;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "configuration file");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--checkpoint", checkpoint, "checkpoint file");
    sub->add_option("--out", out, "output path");
    sub->add_option("--seed", seed, "override the relevant seed");
    sub->add_option("--split", split, "seen | unseen | all");
    sub->add_option("--alpha", alpha, "adapter fusion coefficient")->check(CLI::NonNegativeNumber);
    sub->add_option("--steps", steps, "sampler steps")->check(CLI::PositiveNumber);
    sub->add_option("--guidance", guidance, "guidance scale (0 disables)")->check(CLI::NonNegativeNumber);
  };

  auto* datagen = app.add_subcommand("datagen", "render the procedural edit dataset");
  common(datagen, true);
  auto* train = app.add_subcommand("train", "train a model (resume with --checkpoint)");
  common(train, true);
  auto* sample = app.add_subcommand("sample", "edit one query image");
  common(sample, false);
  sample->add_option("--instance", instance, "dataset instance index");
  sample->add_option("--prompt", prompt, "exemplar before image (PPM)");
  sample->add_option("--reference", reference, "exemplar after image (PPM)");
  sample->add_option("--source", source, "query image (PPM)");
  sample->add_option("--instruction", instruction, "instruction id (0 = none)");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the eval split");
  common(eval, false);
  auto* ablate = app.add_subcommand("ablate", "adapter vs concat vs no-conditioning comparison");
  common(ablate, true);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  common(gradcheck, false);
  gradcheck->add_flag("--inject-fault", o.inject_fault, "add a primitive with a broken backward rule");
  gradcheck->add_option("--seeds", o.gradcheck_seeds, "random seeds per primitive")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : h::kExitValidation;
  }

  for (auto* sub : app.get_subcommands()) {
    auto given = [sub](const char* name) {
      const auto* opt = sub->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };
    if (given("--checkpoint")) o.checkpoint = checkpoint;
    if (given("--out")) o.out = out;
    if (given("--seed")) o.seed = seed;
    if (given("--split")) o.split = split;
    if (given("--alpha")) o.alpha = alpha;
    if (given("--steps")) o.steps = steps;
    if (given("--guidance")) o.guidance = guidance;
    if (given("--instance")) o.instance = instance;
    if (given("--prompt")) o.prompt = prompt;
    if (given("--reference")) o.reference = reference;
    if (given("--source")) o.source = source;
    if (given("--instruction")) o.instruction = instruction;
  }

  auto& os = std::cout;
  auto& es = std::cerr;
  return h::run_guarded(
      [&] {
        if (*datagen) return h::cmd_datagen(o, os, es);
        if (*train) return h::cmd_train(o, os, es);
        if (*sample) return h::cmd_sample(o, os, es);
        if (*eval) return h::cmd_eval(o, os, es);
        if (*ablate) return h::cmd_ablate(o, os, es);
        return h::cmd_gradcheck(o, os, es);
      },
      es);
}
