#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "memesift/config.hpp"
#include "memesift/pipeline.hpp"

using namespace memesift;

namespace {

// Flag name → config key. Flags override values from --config.
const std::vector<std::pair<std::string, std::string>> kValueFlags = {
    {"--manifest", "manifest"},       {"--checkpoint", "checkpoint"},   {"--seed", "seed"},
    {"--omega", "omega"},             {"--alpha", "alpha"},             {"--shots", "shots"},
    {"--backend", "backend"},         {"--workers", "workers"},         {"--predictions", "predictions"},
    {"--rationales", "rationales"},   {"--references", "references"},   {"--output", "output"},
    {"--report-dir", "report_dir"},   {"--text-emb", "text_emb"},       {"--image-emb", "image_emb"},
    {"--templates", "templates"},     {"--fewshot", "fewshot"},         {"--out-dir", "out_dir"},
    {"--epochs", "epochs"},           {"--lr", "lr"},                   {"--lambda", "lambda"},
    {"--d-h", "d_h"},                 {"--vocab", "vocab"},             {"--conv-width", "conv_width"},
    {"--llm-base-url", "llm.base_url"}, {"--setup", "setup"},           {"--model-name", "model_name"},
    {"--signal", "toy.signal"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memesift: multimodal misogyny detection and rationale pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "flat key = value config file");
  std::map<std::string, std::string> values;
  for (const auto& [flag, key] : kValueFlags) app.add_option(flag, values[key], "overrides config key " + key);
  bool strict = false;
  app.add_flag("--strict", strict, "fail explain when any rationale fails");

  using Command = int (*)(const RunConfig&, std::ostream&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"stats", "dataset statistics table and CSV", cmd_stats},
      {"train", "train the detector and write a checkpoint", cmd_train},
      {"predict", "predict labels and categories as JSON Lines", cmd_predict},
      {"explain", "generate rationales for predictions", cmd_explain},
      {"evaluate", "score predictions and rationales", cmd_evaluate},
      {"prompts", "render detection prompts with 0, 2 or 5 shots", cmd_prompts},
      {"make-toy", "write the planted toy corpus", cmd_make_toy},
      {"make-wbms", "write the placeholder WBMS-mirror manifest", cmd_make_wbms},
  };
  std::map<CLI::App*, Command> handlers;
  for (const auto& [name, help, fn] : commands) handlers[app.add_subcommand(name, help)] = fn;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  RunConfig cfg;
  const int loaded = run_guarded(std::cerr, [&] {
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& [flag, key] : kValueFlags) {
      if (app.count(flag) > 0) cfg.set(key, values[key]);
    }
    if (strict) cfg.strict = true;
    cfg.validate();
    return int{kExitOk};
  });
  if (loaded != kExitOk) return loaded;

  for (const auto& [sub, fn] : handlers) {
    if (sub->parsed()) return fn(cfg, std::cout, std::cerr);
  }
  return kExitValidation;
}
