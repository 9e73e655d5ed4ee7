#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "ctxhsd/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> strategies;
  std::vector<std::string> tasks;
  std::string provider;
  bool mock = false;
  std::optional<std::uint64_t> seed_base;
  std::optional<std::size_t> runs;
  std::optional<std::string> mode;
  std::optional<std::string> a, b;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--strategy", o.strategies, "Restrict to these methods (repeatable)");
  cmd->add_option("--task", o.tasks, "Restrict to these tasks: binary, multiclass, multilabel");
  cmd->add_option("--provider", o.provider, "Override provider kind: mock, echo, openai_compatible");
  cmd->add_flag("--mock", o.mock, "Use the offline mock provider");
  cmd->add_option("--seed-base", o.seed_base, "First classifier seed");
  cmd->add_option("--runs", o.runs, "Number of seeds per experiment");
  cmd->add_flag("-v,--verbose", o.verbose, "Debug logging");
}

int run(const std::string& command, const Options& o) {
  using namespace ctxhsd;
  RunConfig cfg = RunConfig::load(o.config);
  if (!o.provider.empty()) cfg.provider.kind = o.provider;
  if (o.mock) cfg.provider.kind = "mock";
  if (o.seed_base) cfg.seed_base = *o.seed_base;
  if (o.runs) cfg.runs = *o.runs;
  Pipeline p(std::move(cfg), std::cout);
  Pipeline::Selection sel;
  sel.strategies = o.strategies;
  for (const auto& t : o.tasks) sel.tasks.push_back(parse_task(t));
  p.set_selection(sel);
  if (command == "ingest") p.ingest();
  else if (command == "gen-context") p.gen_context(o.mode);
  else if (command == "represent") p.represent();
  else if (command == "train") p.train();
  else if (command == "eval") p.eval();
  else if (command == "compare") p.compare(o.a, o.b);
  else if (command == "plot") p.plot();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-augmented hate speech detection pipeline"};
  app.require_subcommand(1);
  Options o;
  std::vector<std::pair<std::string, CLI::App*>> commands;
  const std::pair<const char*, const char*> stages[] = {
      {"ingest", "Load corpora, deduplicate, split and write distribution tables"},
      {"gen-context", "Generate background context, enhanced rewrites and direct LLM predictions"},
      {"represent", "Encode posts under each incorporation strategy"},
      {"train", "Train classifier heads, one per seed"},
      {"eval", "Score test predictions and aggregate across seeds"},
      {"compare", "Partition test items by which of two experiments got them right"},
      {"plot", "Render confusion matrices"},
  };
  for (const auto& [name, help] : stages) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    commands.emplace_back(name, cmd);
  }
  commands[1].second->add_option("--mode", o.mode, "named_entity, full_text, multimodal, enhance or prediction");
  commands[5].second->add_option("--a", o.a, "First experiment name");
  commands[5].second->add_option("--b", o.b, "Second experiment name");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::warn);

  std::string command;
  for (const auto& [name, cmd] : commands)
    if (cmd->parsed()) command = name;
  try {
    return run(command, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ctxhsd::exit_code_for(e);
  }
}
