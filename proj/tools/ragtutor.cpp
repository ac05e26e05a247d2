#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ragtutor/embeddings.hpp"
#include "ragtutor/error.hpp"
#include "ragtutor/evalsuite.hpp"
#include "ragtutor/gateway.hpp"

namespace fs = std::filesystem;
using namespace ragtutor;

namespace {

constexpr int kExitThreshold = 1;
constexpr int kExitError = 2;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot read file", path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "not valid JSON", path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write file", path.string());
  out << text;
}

/// A judge given as a kind name, an inline JSON object or a JSON file.
std::shared_ptr<eval::Judge> judge_from(const std::string& spec) {
  if (!spec.empty() && spec.front() == '{') return eval::make_judge(nlohmann::json::parse(spec));
  if (fs::is_regular_file(spec)) return eval::make_judge(read_json(spec), fs::path(spec).parent_path());
  return eval::make_judge(nlohmann::json(spec));
}

int serve(const std::string& config_path) {
  auto config = gateway::GatewayConfig::load(config_path);
  config.apply_env(gateway::process_env());

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  gateway::Gateway gw(config);
  gw.start();
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    std::cerr << "shutting down\n";
    gw.stop();
  });
  std::cerr << "listening on " << config.host << ":" << config.port << "\n";
  const bool ok = gw.listen();
  if (!ok) {
    std::cerr << "cannot listen on " << config.host << ":" << config.port << "\n";
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  return ok ? 0 : kExitError;
}

int eval_run(const std::string& dataset, const std::string& judge_spec, const std::string& out,
             const std::string& embedding, int workers, int n_questions,
             const std::map<std::string, std::optional<double>>& minimums) {
  const auto cases = eval::load_dataset(dataset);
  auto judge = judge_from(judge_spec);
  auto embed_config = embedding.empty() ? embeddings::EmbeddingProviderConfig{}
                                        : embeddings::EmbeddingProviderConfig::from_json(read_json(embedding));
  auto embedder = embeddings::make_provider(embed_config);
  const auto report = eval::run_dataset(cases, *judge, *embedder, workers, n_questions);
  const auto csv = report.to_csv();
  if (out.empty()) std::cout << csv;
  else write_file(out, csv);

  for (const auto& [name, agg] : report.metrics) {
    std::fprintf(stderr, "%-18s mean %.4f  sd %.4f  n %d\n", name.c_str(), agg.mean, agg.stddev, agg.count);
  }
  int errors = 0;
  for (const auto& c : report.cases) {
    if (c.error.empty()) continue;
    ++errors;
    std::cerr << "case " << c.case_id << " failed: " << c.error << "\n";
  }
  std::map<std::string, double> thresholds;
  for (const auto& [name, v] : minimums)
    if (v) thresholds[name] = *v;
  const auto failures = eval::threshold_failures(report, thresholds);
  for (const auto& name : failures)
    std::cerr << "below threshold: " << name << " (minimum " << thresholds.at(name) << ")\n";
  return failures.empty() ? 0 : kExitThreshold;
}

int eval_sweep(const std::string& config_path, const std::string& out_dir) {
  const auto plan = eval::SweepPlan::load(config_path);
  const auto report = eval::run_config_sweep(plan.config, plan.courses, plan.providers);
  const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  write_file(dir / "sweep.csv", report.to_csv());
  write_file(dir / "sweep.md", report.to_markdown());
  std::cout << report.to_markdown();
  int failed = 0;
  for (const auto& c : report.cells) {
    if (c.ok) continue;
    ++failed;
    std::cerr << "cell " << c.course_id << " chunk " << c.chunk_size << " temp " << c.temperature << " k " << c.top_k
              << " failed: " << c.error << "\n";
  }
  std::cerr << report.cells.size() << " cells, " << failed << " failed; wrote " << (dir / "sweep.csv").string()
            << " and " << (dir / "sweep.md").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Course-grounded tutoring engine"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP gateway");
  serve_cmd->add_option("--config", config_path, "Gateway config file")->required()->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluation tools");
  eval_cmd->require_subcommand(1);

  std::string dataset, judge = "lexical", out, embedding;
  int workers = 4, n_questions = 3;
  std::map<std::string, std::optional<double>> minimums = {
      {"faithfulness", std::nullopt},
      {"answer_relevancy", std::nullopt},
      {"context_recall", std::nullopt},
      {"context_precision", std::nullopt},
  };
  auto* run_cmd = eval_cmd->add_subcommand("run", "Score a dataset of answered cases");
  run_cmd->add_option("--dataset", dataset, "Dataset JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--judge", judge, "Judge kind, inline JSON or JSON file")->capture_default_str();
  run_cmd->add_option("--out", out, "CSV output path (stdout when omitted)");
  run_cmd->add_option("--embedding", embedding, "Embedding provider config JSON")->check(CLI::ExistingFile);
  run_cmd->add_option("--workers", workers, "Parallel cases")->capture_default_str()->check(CLI::PositiveNumber);
  run_cmd->add_option("--questions", n_questions, "Generated questions for answer relevancy")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--min-faithfulness", minimums["faithfulness"])->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--min-answer-relevancy", minimums["answer_relevancy"])->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--min-context-recall", minimums["context_recall"])->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--min-context-precision", minimums["context_precision"])->check(CLI::Range(0.0, 1.0));

  std::string sweep_config, out_dir;
  auto* sweep_cmd = eval_cmd->add_subcommand("sweep", "Chunk size x temperature x Top-K grid");
  sweep_cmd->add_option("--config", sweep_config, "Sweep plan JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out-dir", out_dir, "Directory for sweep.csv and sweep.md");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config_path);
    if (*run_cmd) return eval_run(dataset, judge, out, embedding, workers, n_questions, minimums);
    if (*sweep_cmd) return eval_sweep(sweep_config, out_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what();
    if (!e.detail().empty()) std::cerr << " (" << e.detail() << ")";
    std::cerr << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
