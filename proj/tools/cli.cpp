#include "cli.hpp"

#include "stadv/attacks.hpp"
#include "stadv/dataset.hpp"
#include "stadv/defenses.hpp"
#include "stadv/error.hpp"
#include "stadv/export.hpp"
#include "stadv/models.hpp"
#include "stadv/trainer.hpp"
#include "stadv/weights.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <ostream>

namespace stadv::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kModels{"A", "B", "C", "resnet_small"};
const std::vector<std::string> kMethods{"stadv", "fgsm", "cw", "pgd", "stadv-adaptive"};
const std::vector<std::string> kDefenses{"none", "blur", "advtrain-fgsm", "advtrain-ens", "advtrain-pgd"};
const std::vector<std::string> kAdvModes{"none", "fgsm", "ensemble", "pgd"};

struct TrainOpts {
  std::string model = "A";
  std::string data;
  std::string out = ".";
  std::string weights;
  std::string adv = "none";
  std::string optimizer = "adam";
  std::vector<std::string> sources;
  int epochs = 5;
  int batch = 64;
  int train_n = 2000;
  int test_n = 1000;
  int pgd_steps = 10;
  double lr = 1e-3;
  std::optional<double> epsilon;
  double pgd_step_size = 0.075;
  std::uint64_t seed = 0;
};

struct AttackOpts {
  std::string weights;
  std::string data;
  std::string out = ".";
  std::string results;
  std::string method = "stadv";
  std::string goal = "targeted";
  std::string tau_grid;
  int n = 100;
  int max_iter = 300;
  int cw_rounds = 5;
  int cw_max_iter = 100;
  int pgd_steps = 10;
  double tau = 0.05;
  double kappa = 0.0;
  double epsilon = 0.3;
  double pgd_step_size = 0.075;
  double cw_linf = 0.0;  // 0 = unbounded
  bool no_images = false;
  std::uint64_t seed = 0;
};

struct DefendOpts {
  AttackOpts attack;
  std::string defense = "blur";
  std::string defended_weights;
  std::vector<std::string> methods{"stadv", "fgsm", "cw"};
  std::vector<std::string> results;
};

struct VizOpts {
  std::string results;
  std::string data;
  std::string out = ".";
  int max = 0;  // 0 = all
};

struct MetricsOpts {
  std::vector<std::string> results;
  std::string out;
};

// ---------------------------------------------------------------- helpers

Json train_config(const TrainOpts& o, double epsilon) {
  Json j;
  j["record"] = "run_config";
  j["subcommand"] = "train";
  j["model"] = o.model;
  j["data"] = o.data;
  j["out"] = o.out;
  j["adv"] = o.adv;
  j["optimizer"] = o.optimizer;
  j["source_models"] = o.sources;
  j["epochs"] = o.epochs;
  j["batch"] = o.batch;
  j["train_n"] = o.train_n;
  j["test_n"] = o.test_n;
  j["lr"] = o.lr;
  j["epsilon"] = epsilon;
  j["pgd_steps"] = o.pgd_steps;
  j["pgd_step_size"] = o.pgd_step_size;
  j["seed"] = o.seed;
  return j;
}

void attack_fields(Json& j, const AttackOpts& o) {
  j["weights"] = o.weights;
  j["data"] = o.data;
  j["out"] = o.out;
  j["goal"] = o.goal;
  j["n"] = o.n;
  j["tau"] = o.tau;
  j["tau_grid"] = o.tau_grid;
  j["kappa"] = o.kappa;
  j["epsilon"] = o.epsilon;
  j["max_iter"] = o.max_iter;
  j["cw_rounds"] = o.cw_rounds;
  j["cw_max_iter"] = o.cw_max_iter;
  j["cw_linf"] = o.cw_linf;
  j["pgd_steps"] = o.pgd_steps;
  j["pgd_step_size"] = o.pgd_step_size;
  j["seed"] = o.seed;
}

Json attack_config(const AttackOpts& o) {
  Json j;
  j["record"] = "run_config";
  j["subcommand"] = "attack";
  j["method"] = o.method;
  attack_fields(j, o);
  j["results"] = o.results;
  j["images"] = !o.no_images;
  return j;
}

Json defend_config(const DefendOpts& o) {
  Json j;
  j["record"] = "run_config";
  j["subcommand"] = "defend";
  j["defense"] = o.defense;
  j["methods"] = o.methods;
  j["defended_weights"] = o.defended_weights;
  j["results"] = o.results;
  attack_fields(j, o.attack);
  return j;
}

bool is_cifar(const std::string& arch) { return arch == "resnet_small"; }

// Architecture part of a model name such as "A+blur".
std::string base_architecture(const std::string& name) { return name.substr(0, name.find('+')); }

void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw ValueError(std::string(what) + " path is empty");
  if (!fs::is_directory(path)) throw IoError(std::string(what) + " directory not found: " + path);
}

Dataset load_split(const std::string& data, const std::string& arch, const std::string& split) {
  require_dir(data, "dataset");
  return is_cifar(arch) ? load_cifar10(data, split) : load_mnist(data, split);
}

Classifier load_model(const std::string& path) {
  if (!fs::exists(path)) throw IoError("weights file not found: " + path);
  Classifier g = build_model(weights_architecture(path));
  load_weights(g, path);
  return g;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError(p.string() + ": cannot create directory: " + ec.message());
}

// n correctly classified test inputs, drawn at random, in index order.
std::vector<std::size_t> select_inputs(const LogitModel& g, const Dataset& test, int n, std::uint64_t seed) {
  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(stream_seed(seed, "select"));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> picked;
  const std::size_t chunk = 256;
  for (std::size_t begin = 0; begin < order.size() && static_cast<int>(picked.size()) < n; begin += chunk) {
    std::vector<Image> imgs;
    const std::size_t end = std::min(order.size(), begin + chunk);
    for (std::size_t i = begin; i < end; ++i) imgs.push_back(test.images[order[i]]);
    const std::vector<int> pred = predict_batch(g, imgs);
    for (std::size_t i = begin; i < end && static_cast<int>(picked.size()) < n; ++i) {
      if (pred[i - begin] == test.labels[order[i]]) picked.push_back(order[i]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

AttackOutcome run_method(const std::string& method, const LogitModel& g, const Image& x, const AttackGoal& goal,
                         const AttackOpts& o, std::size_t input_index) {
  if (method == "stadv" || method == "stadv-adaptive") {
    AttackObjectiveConfig cfg;
    cfg.tau = o.tau;
    cfg.kappa = o.kappa;
    cfg.goal = goal;
    LbfgsConfig solver;
    solver.max_iterations = o.max_iter;
    if (method == "stadv-adaptive") return adaptive_blur_attack(g, x, cfg, solver);
    if (!o.tau_grid.empty()) return stadv_attack_gridsearch(g, x, cfg, parse_tau_grid(o.tau_grid), solver);
    return stadv_attack(g, x, cfg, solver);
  }
  if (method == "fgsm") return fgsm_attack(g, x, goal, o.epsilon);
  if (method == "pgd") {
    PgdConfig cfg;
    cfg.epsilon = o.epsilon;
    cfg.steps = o.pgd_steps;
    cfg.step_size = o.pgd_step_size;
    cfg.seed = stream_seed(o.seed, "pgd") + input_index;
    return pgd_attack(g, x, goal, cfg);
  }
  if (method == "cw") {
    CwConfig cfg;
    cfg.kappa = o.kappa;
    cfg.search_rounds = o.cw_rounds;
    cfg.solver.max_iterations = o.cw_max_iter;
    if (o.cw_linf > 0.0) cfg.linf_bound = o.cw_linf;
    return cw_attack(g, x, goal, cfg);
  }
  throw ValueError("unknown attack method '" + method + "'");
}

struct AttackRun {
  std::vector<Json> records;
  std::vector<AttackOutcome> outcomes;
  std::vector<int> labels;
};

// Attacks the selected inputs with one method. Targets come from their own
// stream so every method sees the same targets for the same seed.
AttackRun attack_inputs(const std::string& method, const LogitModel& g, const Dataset& test,
                        const std::vector<std::size_t>& inputs, const AttackOpts& o, const std::string& defense,
                        const fs::path& image_dir, const std::string& comment) {
  AttackRun run;
  std::mt19937_64 targets(stream_seed(o.seed, "targets"));
  RecordContext ctx;
  ctx.defense = defense;
  ctx.seed = o.seed;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t idx = inputs[k];
    const Image& x = test.images[idx];
    const int y = test.labels[idx];
    const int t = draw_target(y, g.num_classes(), targets);
    const AttackGoal goal = o.goal == "targeted" ? AttackGoal::targeted(t, y) : AttackGoal::untargeted(y);
    AttackOutcome outcome = run_method(method, g, x, goal, o, idx);
    Json rec = outcome_record(outcome, ctx, static_cast<int>(k));
    rec["input_index"] = idx;
    if (!image_dir.empty()) {
      const std::string stem = std::to_string(idx) + "_" + method;
      const ImageFormat fmt = x.channels == 1 ? ImageFormat::pgm : ImageFormat::ppm;
      export_image(outcome.adversarial, image_dir / (stem + (x.channels == 1 ? ".pgm" : ".ppm")), fmt, comment);
      if (outcome.flow) export_flow_svg(*outcome.flow, x, image_dir / (stem + ".svg"), {}, comment);
    }
    run.records.push_back(std::move(rec));
    run.outcomes.push_back(std::move(outcome));
    run.labels.push_back(y);
  }
  return run;
}

std::string mean_pm(const MeanStd& m) {
  if (m.count == 0) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e ± %.2e", m.mean, m.stddev);
  return buf;
}

void print_summary(std::ostream& out, const std::vector<MethodSummary>& rows) {
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-14s %-14s %6s %6s %8s  %-22s %-22s\n", "method", "model", "defense",
                "n", "succ", "rate", "flow_tv", "flow_l2");
  out << line;
  for (const MethodSummary& s : rows) {
    std::snprintf(line, sizeof line, "%-16s %-14s %-14s %6d %6d %8.4f  %-22s %-22s\n", s.method.c_str(),
                  s.model.c_str(), s.defense.c_str(), s.attempted, s.succeeded, s.success_rate(),
                  mean_pm(s.flow_tv).c_str(), mean_pm(s.flow_l2).c_str());
    out << line;
  }
}

Json summary_record(const MethodSummary& s) {
  auto ms = [](const MeanStd& m) { return Json{{"count", m.count}, {"mean", m.mean}, {"std", m.stddev}}; };
  return Json{{"record", "summary"},   {"method", s.method},         {"model", s.model},
              {"defense", s.defense},   {"attempted", s.attempted},   {"succeeded", s.succeeded},
              {"success_rate", s.success_rate()}, {"flow_tv", ms(s.flow_tv)}, {"flow_l2", ms(s.flow_l2)}};
}

std::vector<Json> read_all(const std::vector<std::string>& files) {
  std::vector<Json> all;
  for (const std::string& f : files) {
    if (!fs::exists(f)) throw IoError("results file not found: " + f);
    auto recs = read_records(f);
    std::move(recs.begin(), recs.end(), std::back_inserter(all));
  }
  return all;
}

// ---------------------------------------------------------------- commands

int cmd_train(const TrainOpts& o, std::ostream& out) {
  const double epsilon = o.epsilon.value_or(is_cifar(o.model) ? 8.0 / 255.0 : 0.3);
  const Json config = train_config(o, epsilon);

  const Dataset train_set = load_split(o.data, o.model, "train").head(static_cast<std::size_t>(o.train_n));
  const Dataset test_set = load_split(o.data, o.model, "test").head(static_cast<std::size_t>(o.test_n));
  std::vector<Classifier> sources;
  for (const std::string& s : o.sources) sources.push_back(load_model(s));

  Classifier g = build_model(o.model, stream_seed(o.seed, "init"));
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.optimizer = parse_optimizer(o.optimizer);
  cfg.seed = stream_seed(o.seed, "train");
  cfg.mode = parse_adversarial_mode(o.adv);
  cfg.epsilon = epsilon;
  cfg.pgd_steps = o.pgd_steps;
  cfg.pgd_step_size = o.pgd_step_size;
  for (const Classifier& s : sources) cfg.ensemble_sources.push_back(&s);
  const TrainReport report = train(g, train_set, cfg, test_set.empty() ? nullptr : &test_set);

  ensure_dir(o.out);
  const fs::path weights = o.weights.empty() ? fs::path(o.out) / ("model_" + o.model + "_" + o.adv + ".weights")
                                             : fs::path(o.weights);
  if (weights.has_parent_path()) ensure_dir(weights.parent_path());
  save_weights(g, weights, config.dump());
  const fs::path report_path = fs::path(o.out) / ("train_" + o.model + "_" + o.adv + ".jsonl");
  const std::vector<Json> recs{config, train_record(report, g.name(), cfg)};
  write_records(recs, report_path);

  char line[256];
  std::snprintf(line, sizeof line, "model %s adv %s: %d epochs, final loss %.4f, test accuracy %.4f\n",
                o.model.c_str(), o.adv.c_str(), o.epochs, report.epoch_loss.empty() ? NAN : report.epoch_loss.back(),
                report.test_accuracy);
  out << line << "weights: " << weights.string() << "\nreport: " << report_path.string() << "\n";
  return 0;
}

int cmd_attack(const AttackOpts& o, std::ostream& out) {
  if (!o.tau_grid.empty()) (void)parse_tau_grid(o.tau_grid);
  const Json config = attack_config(o);
  const Classifier g = load_model(o.weights);
  const Dataset test = load_split(o.data, g.architecture(), "test");
  const auto inputs = select_inputs(g, test, o.n, o.seed);

  ensure_dir(o.out);
  const fs::path image_dir = o.no_images ? fs::path() : fs::path(o.out) / "images";
  if (!image_dir.empty()) ensure_dir(image_dir);
  const AttackRun run = attack_inputs(o.method, g, test, inputs, o, "none", image_dir, config.dump());

  const fs::path results = o.results.empty() ? fs::path(o.out) / ("results_" + o.method + ".jsonl") : fs::path(o.results);
  std::vector<Json> recs{config};
  recs.insert(recs.end(), run.records.begin(), run.records.end());
  write_records(recs, results);

  print_summary(out, summarize_records(run.records));
  out << "results: " << results.string() << "\n";
  return 0;
}

int cmd_defend(const DefendOpts& o, std::ostream& out) {
  const bool advtrain = o.defense.rfind("advtrain-", 0) == 0;
  if (advtrain && o.defended_weights.empty()) throw ValueError("--defense " + o.defense + " needs --defended-weights");
  if (advtrain && !o.results.empty()) throw ValueError("--results can only be reused with --defense none or blur");
  const Json config = defend_config(o);

  const Classifier base = load_model(o.attack.weights);
  std::optional<Classifier> defended;
  if (advtrain) {
    defended = load_model(o.defended_weights);
    if (defended->architecture() != base.architecture()) {
      throw ValueError("defended model is '" + defended->architecture() + "', base model is '" +
                       base.architecture() + "'");
    }
  }
  const Classifier& target = defended ? *defended : base;
  const Defense applied = o.defense == "blur" ? Defense::blur : Defense::none;

  std::vector<AttackOutcome> outcomes;
  std::vector<int> labels;
  std::vector<Json> outcome_recs;
  if (!o.results.empty()) {
    for (Json& r : read_all(o.results)) {
      if (r.value("record", "") != "outcome") continue;
      outcomes.push_back(outcome_from_record(r));
      labels.push_back(outcomes.back().goal.true_class);
      outcome_recs.push_back(std::move(r));
    }
  } else {
    const Dataset test = load_split(o.attack.data, target.architecture(), "test");
    const auto inputs = select_inputs(target, test, o.attack.n, o.attack.seed);
    for (const std::string& m : o.methods) {
      AttackRun run = attack_inputs(m, target, test, inputs, o.attack, o.defense, {}, "");
      std::move(run.outcomes.begin(), run.outcomes.end(), std::back_inserter(outcomes));
      labels.insert(labels.end(), run.labels.begin(), run.labels.end());
      std::move(run.records.begin(), run.records.end(), std::back_inserter(outcome_recs));
    }
  }

  ensure_dir(o.attack.out);
  const fs::path path = fs::path(o.attack.out) / ("defense_" + o.defense + ".jsonl");
  std::vector<Json> recs{config};
  char line[256];
  if (outcomes.empty()) {
    write_records(recs, path);
    out << "no outcomes to evaluate\nreport: " << path.string() << "\n";
    return 0;
  }
  DefenseReport report = evaluate_defense(target, applied, outcomes, labels, o.attack.seed);
  report.defense = o.defense;
  recs.push_back(defense_record(report));
  recs.insert(recs.end(), outcome_recs.begin(), outcome_recs.end());
  write_records(recs, path);

  std::snprintf(line, sizeof line, "%-14s %-14s %-16s %6s %14s %18s\n", "defense", "model", "method", "n",
                "success_rate", "recovered_accuracy");
  out << line;
  for (const auto& [method, s] : report.per_attack) {
    std::snprintf(line, sizeof line, "%-14s %-14s %-16s %6d %14.4f %18.4f\n", report.defense.c_str(),
                  report.model.c_str(), method.c_str(), s.count, s.success_rate, s.recovered_accuracy);
    out << line;
  }
  out << "report: " << path.string() << "\n";
  return 0;
}

int cmd_viz(const VizOpts& o, std::ostream& out) {
  const std::vector<Json> recs = read_all({o.results});
  Json config;
  config["record"] = "run_config";
  config["subcommand"] = "viz";
  config["results"] = o.results;
  config["data"] = o.data;
  config["out"] = o.out;
  config["max"] = o.max;
  const std::string comment = config.dump();

  ensure_dir(o.out);
  std::map<std::string, Dataset> tests;
  int written = 0;
  for (const Json& r : recs) {
    if (r.value("record", "") != "outcome") continue;
    if (o.max > 0 && written >= o.max) break;
    if (!r.contains("input_index")) throw ValueError("outcome record without input_index in " + o.results);
    const AttackOutcome a = outcome_from_record(r);
    const std::string arch = base_architecture(a.model);
    if (!tests.count(arch)) tests.emplace(arch, load_split(o.data, arch, "test"));
    const Dataset& test = tests.at(arch);
    const std::size_t idx = r.at("input_index").get<std::size_t>();
    if (idx >= test.size()) throw ValueError("input_index " + std::to_string(idx) + " outside the test split");
    const Image& x = test.images[idx];
    if (!x.same_geometry(a.adversarial)) throw ShapeError("record image does not match the dataset geometry");

    Image montage(x.height, 2 * x.width, x.channels);
    for (int u = 0; u < x.height; ++u)
      for (int v = 0; v < x.width; ++v)
        for (int c = 0; c < x.channels; ++c) {
          montage(u, v, c) = x(u, v, c);
          montage(u, v + x.width, c) = a.adversarial(u, v, c);
        }
    const std::string stem = std::to_string(idx) + "_" + a.method;
    const bool gray = x.channels == 1;
    export_image(montage, fs::path(o.out) / ("montage_" + stem + (gray ? ".pgm" : ".ppm")),
                 gray ? ImageFormat::pgm : ImageFormat::ppm, comment);
    if (a.flow) export_flow_svg(*a.flow, x, fs::path(o.out) / ("flow_" + stem + ".svg"), {}, comment);
    ++written;
  }
  out << "wrote " << written << " montage(s) to " << o.out << "\n";
  return 0;
}

int cmd_metrics(const MetricsOpts& o, std::ostream& out) {
  const std::vector<Json> recs = read_all(o.results);
  const auto rows = summarize_records(recs);
  print_summary(out, rows);
  if (!o.out.empty()) {
    Json config;
    config["record"] = "run_config";
    config["subcommand"] = "metrics";
    config["results"] = o.results;
    config["out"] = o.out;
    std::vector<Json> lines{config};
    for (const auto& r : rows) lines.push_back(summary_record(r));
    if (fs::path(o.out).has_parent_path()) ensure_dir(fs::path(o.out).parent_path());
    write_records(lines, o.out);
  }
  return 0;
}

void add_attack_options(CLI::App* sub, AttackOpts& o, bool with_method) {
  sub->add_option("--weights", o.weights, "Model weight file")->required();
  sub->add_option("--data", o.data, "Dataset directory (MNIST IDX or CIFAR-10 binary)")->required();
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  if (with_method) {
    sub->add_option("--method", o.method, "Attack method")
        ->check(CLI::IsMember(kMethods))
        ->capture_default_str();
  }
  sub->add_option("--goal", o.goal, "targeted (random targets) or untargeted")
      ->check(CLI::IsMember({"targeted", "untargeted"}))
      ->capture_default_str();
  sub->add_option("--n", o.n, "Number of correctly classified test inputs")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--seed", o.seed, "Seed for input selection, targets and PGD starts")->capture_default_str();
  sub->add_option("--tau", o.tau, "Flow loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--tau-grid", o.tau_grid, "lo:hi:count log-spaced tau grid search");
  sub->add_option("--kappa", o.kappa, "Margin loss confidence")->capture_default_str();
  sub->add_option("--epsilon", o.epsilon, "L-infinity budget for fgsm and pgd (default 0.3 MNIST, 8/255 CIFAR)")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--max-iter", o.max_iter, "L-BFGS iterations for stadv")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--cw-rounds", o.cw_rounds, "C&W search rounds over c")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--cw-max-iter", o.cw_max_iter, "L-BFGS iterations per C&W round")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--cw-linf", o.cw_linf, "Optional L-infinity bound for C&W (0 = none)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--pgd-steps", o.pgd_steps, "PGD steps")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--pgd-step-size", o.pgd_step_size, "PGD step size")->capture_default_str();
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose) {
  const auto* p = reinterpret_cast<const unsigned char*>(purpose.data());
  std::uint64_t h = fnv1a(std::span<const unsigned char>(p, purpose.size()), 0xcbf29ce484222325ULL ^ seed);
  // splitmix64 finaliser
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

std::vector<MethodSummary> summarize_records(const std::vector<Json>& records) {
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<MethodSummary, std::array<std::vector<double>, 2>>>
      groups;
  std::vector<std::tuple<std::string, std::string, std::string>> order;
  for (const Json& r : records) {
    if (r.value("record", "") != "outcome") continue;
    const auto key = std::make_tuple(r.value("method", ""), r.value("model", ""), r.value("defense", "none"));
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    auto& [s, flows] = it->second;
    s.method = std::get<0>(key);
    s.model = std::get<1>(key);
    s.defense = std::get<2>(key);
    ++s.attempted;
    const bool ok = r.at("success").get<bool>();
    s.succeeded += ok;
    if (ok && r.contains("flow_tv") && !r.at("flow_tv").is_null()) {
      flows[0].push_back(r.at("flow_tv").get<double>());
      flows[1].push_back(r.at("flow_l2").get<double>());
    }
  }
  std::vector<MethodSummary> out;
  for (const auto& key : order) {
    auto& [s, flows] = groups.at(key);
    s.flow_tv = mean_std(flows[0]);
    s.flow_l2 = mean_std(flows[1]);
    out.push_back(s);
  }
  return out;
}

std::vector<double> parse_tau_grid(const std::string& spec) {
  double lo = 0, hi = 0;
  int count = 0;
  char tail = 0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%d%c", &lo, &hi, &count, &tail) != 3) {
    throw ValueError("--tau-grid expects lo:hi:count, got '" + spec + "'");
  }
  if (!(lo > 0.0) || !(hi >= lo) || count < 1) {
    throw ValueError("--tau-grid needs 0 < lo <= hi and count >= 1, got '" + spec + "'");
  }
  std::vector<double> grid;
  for (int i = 0; i < count; ++i) grid.push_back(count == 1 ? hi : hi * std::pow(lo / hi, double(i) / (count - 1)));
  return grid;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatially transformed adversarial examples: train, attack, defend, visualise"};
  app.name("stadv");
  app.require_subcommand(1);

  TrainOpts t;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and write its weights");
  train_cmd->add_option("--model", t.model, "Architecture")->check(CLI::IsMember(kModels))->capture_default_str();
  train_cmd->add_option("--data", t.data, "Dataset directory")->required();
  train_cmd->add_option("--out", t.out, "Output directory")->capture_default_str();
  train_cmd->add_option("--weights", t.weights, "Weight file path (default: <out>/model_<model>_<adv>.weights)");
  train_cmd->add_option("--adv", t.adv, "Adversarial training mode")
      ->check(CLI::IsMember(kAdvModes))
      ->capture_default_str();
  train_cmd->add_option("--source-models", t.sources, "Weight files of fixed ensemble sources");
  train_cmd->add_option("--optimizer", t.optimizer, "Optimizer")
      ->check(CLI::IsMember({"adam", "sgd_momentum"}))
      ->capture_default_str();
  train_cmd->add_option("--epochs", t.epochs, "Epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
  train_cmd->add_option("--batch", t.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--train-n", t.train_n, "Training samples (first n)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--test-n", t.test_n, "Test samples (first n)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  train_cmd->add_option("--lr", t.lr, "Learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--epsilon", t.epsilon, "Adversarial budget (default 0.3 MNIST, 8/255 CIFAR)");
  train_cmd->add_option("--pgd-steps", t.pgd_steps, "PGD steps")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--pgd-step-size", t.pgd_step_size, "PGD step size")->capture_default_str();
  train_cmd->add_option("--seed", t.seed, "Seed for initialisation, shuffling and dropout")->capture_default_str();

  AttackOpts a;
  auto* attack_cmd = app.add_subcommand("attack", "Attack correctly classified test inputs");
  add_attack_options(attack_cmd, a, true);
  attack_cmd->add_option("--results", a.results, "Results file (default: <out>/results_<method>.jsonl)");
  attack_cmd->add_flag("--no-images", a.no_images, "Skip adversarial image and flow SVG export");

  DefendOpts d;
  auto* defend_cmd = app.add_subcommand("defend", "Evaluate attacks against a defense");
  add_attack_options(defend_cmd, d.attack, false);
  defend_cmd->add_option("--defense", d.defense, "Defense")->check(CLI::IsMember(kDefenses))->capture_default_str();
  defend_cmd->add_option("--defended-weights", d.defended_weights, "Adversarially trained model (advtrain-*)");
  defend_cmd->add_option("--methods", d.methods, "Attack methods")
      ->check(CLI::IsMember(kMethods))
      ->delimiter(',')
      ->capture_default_str();
  defend_cmd->add_option("--results", d.results, "Reuse outcomes from results files instead of attacking");

  VizOpts v;
  auto* viz_cmd = app.add_subcommand("viz", "Benign/adversarial montages and flow quivers");
  viz_cmd->add_option("--results", v.results, "Results file")->required();
  viz_cmd->add_option("--data", v.data, "Dataset directory")->required();
  viz_cmd->add_option("--out", v.out, "Output directory")->capture_default_str();
  viz_cmd->add_option("--max", v.max, "At most this many records (0 = all)")->capture_default_str();

  MetricsOpts m;
  auto* metrics_cmd = app.add_subcommand("metrics", "Success rates and flow metrics from results files");
  metrics_cmd->add_option("--results", m.results, "Results files")->required();
  metrics_cmd->add_option("--out", m.out, "Also write summary records to this file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (train_cmd->parsed() && t.adv == "ensemble" && t.sources.empty()) {
      throw CLI::RequiredError("--source-models (needed by --adv ensemble)");
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    // The attack budget defaults per dataset, like training's.
    auto default_epsilon = [](CLI::App* sub, AttackOpts& o) {
      if (sub->count("--epsilon") == 0 && is_cifar(weights_architecture(o.weights))) o.epsilon = 8.0 / 255.0;
    };
    if (train_cmd->parsed()) return cmd_train(t, out);
    if (attack_cmd->parsed()) {
      default_epsilon(attack_cmd, a);
      return cmd_attack(a, out);
    }
    if (defend_cmd->parsed()) {
      default_epsilon(defend_cmd, d.attack);
      return cmd_defend(d, out);
    }
    if (viz_cmd->parsed()) return cmd_viz(v, out);
    if (metrics_cmd->parsed()) return cmd_metrics(m, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace stadv::cli
