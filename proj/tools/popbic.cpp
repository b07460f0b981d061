// popbic: fit, select, simulate and mc subcommands.
//
// Exit codes: 0 success, 1 input error, 2 fit did not converge.

#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "popbic/criteria.hpp"
#include "popbic/dataset.hpp"
#include "popbic/errors.hpp"
#include "popbic/estimation.hpp"
#include "popbic/io.hpp"
#include "popbic/selection.hpp"
#include "popbic/simulate.hpp"

namespace fs = std::filesystem;
using namespace popbic;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNotConverged = 2;

struct Common {
  std::uint64_t seed = 1;
  int jobs = 0;
  int nodes = 1;
  std::string criterion = "bic_joint";
  std::string out = "out";
};

void add_common(CLI::App* app, Common& c, bool with_criterion = true) {
  app->add_option("--seed", c.seed, "master random seed")->capture_default_str();
  app->add_option("--jobs", c.jobs, "worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  app->add_option("--nodes", c.nodes, "quadrature nodes per random effect (1 = Laplace)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  if (with_criterion)
    app->add_option("--criterion", c.criterion, "bic_h, bic_v, bic_joint, aic, bic_n or bic_ntot");
  app->add_option("--out", c.out, "output directory")->capture_default_str();
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("out", "cannot create output directory '" + dir + "'");
}

std::string out_path(const std::string& dir, const char* name) {
  return (fs::path(dir) / name).string();
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("times", "cannot parse '" + item + "' as a number");
    }
  }
  return out;
}

std::string flags_digest(const Common& c) {
  std::ostringstream os;
  os << "seed=" << c.seed << ";nodes=" << c.nodes << ";criterion=" << c.criterion;
  return os.str();
}

void print_fit(std::ostream& os, const FitResult& fit) {
  os << "model      " << model_summary(fit.spec) << "\n";
  os << "loglik     " << format_double(fit.loglik) << (fit.converged ? "" : "  (not converged)")
     << "\n";
  for (auto k : kAllCriteria)
    os << criterion_name(k) << std::string(11 - std::string(criterion_name(k)).size(), ' ')
       << format_double(criterion(fit, k).value) << "\n";
}

int cmd_fit(const std::string& data_path, const std::string& model_path, const Common& c,
            int starts) {
  Timer timer;
  const std::string model_text = read_text_file(model_path);
  ModelDocument doc;
  try {
    doc = parse_model_document(Json::parse(model_text));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(model_path, "'" + model_path + "' is not valid JSON: " + e.what());
  }
  const CriterionKind kind = parse_criterion(c.criterion);
  const auto& regressors = structural_model(doc.spec.structural).regressors;
  const Dataset data = read_dataset_csv(data_path, regressors);
  validate_against_dataset(doc.spec, data);
  prepare_out(c.out);

  FitOptions fo;
  fo.nodes = c.nodes;
  fo.seed = c.seed;
  fo.starts = starts;
  const ThetaVector init = doc.init ? *doc.init : default_init(data, doc.spec);
  const FitResult fit = fit_ml(data, doc.spec, init, fo);

  write_text_file(out_path(c.out, "fit.json"), fit_document(fit, kind).dump(2) + "\n");
  print_fit(std::cout, fit);
  RunManifest m;
  m.command = "fit";
  m.inputs = {data_path, model_path};
  m.config_hash = config_hash({read_text_file(data_path), model_text, flags_digest(c),
                               "starts=" + std::to_string(starts)});
  m.seed = c.seed;
  m.outputs = {"fit.json"};
  m.wall_time_seconds = timer.seconds();
  write_manifest(c.out, m);
  return fit.converged ? kExitOk : kExitNotConverged;
}

int cmd_select(const std::string& data_path, const std::string& config_path, const Common& c,
               const std::string& direction, bool refine, bool criterion_given) {
  Timer timer;
  const std::string config_text = read_text_file(config_path);
  SearchConfig cfg;
  try {
    cfg = parse_search_config(Json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(config_path, "'" + config_path + "' is not valid JSON: " + e.what());
  }
  if (criterion_given) cfg.criterion = parse_criterion(c.criterion);
  if (!direction.empty()) cfg.options.direction = parse_direction(direction);
  if (refine) cfg.refine_correlations = true;
  cfg.options.fit.nodes = c.nodes;
  cfg.options.fit.seed = c.seed;

  const Dataset data = read_dataset_csv(data_path, structural_model(cfg.structural).regressors);
  prepare_out(c.out);

  SelectionTrace trace =
      stepwise_select(data, cfg.structural, cfg.transforms, cfg.pool, cfg.criterion, cfg.options);
  if (cfg.refine_correlations) refine_correlations(trace, data, cfg.options);

  std::ostringstream csv;
  write_trace_csv(csv, trace);
  write_text_file(out_path(c.out, "trace.csv"), csv.str());
  write_text_file(out_path(c.out, "fit.json"),
                  fit_document(trace.final_fit, trace.kind).dump(2) + "\n");
  std::cout << "steps      " << trace.steps.size() << "\n";
  print_fit(std::cout, trace.final_fit);

  RunManifest m;
  m.command = "select";
  m.inputs = {data_path, config_path};
  m.config_hash = config_hash({read_text_file(data_path), config_text, flags_digest(c),
                               "direction=" + std::string(direction_name(cfg.options.direction)),
                               std::string("refine=") + (cfg.refine_correlations ? "1" : "0")});
  m.seed = c.seed;
  m.outputs = {"trace.csv", "fit.json"};
  m.wall_time_seconds = timer.seconds();
  write_manifest(c.out, m);
  return trace.final_fit.converged ? kExitOk : kExitNotConverged;
}

struct SimulateArgs {
  std::string model;
  std::string theta;
  std::size_t N = 20;
  std::string times = "1,2,4,7,10,15,20,30,40";
  double dose = 100.0;
  double tinf = 1.0;
  double tD = 0.0;
  std::vector<std::string> covariates;  // name:mean:sd
};

int cmd_simulate(const SimulateArgs& a, const Common& c) {
  Timer timer;
  const std::string model_text = read_text_file(a.model);
  const std::string theta_text = read_text_file(a.theta);
  ModelDocument doc;
  ThetaVector theta;
  try {
    doc = parse_model_document(Json::parse(model_text));
    theta = parse_theta_document(Json::parse(theta_text), doc.spec);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("json", std::string("malformed JSON input: ") + e.what());
  }
  SimDesign design;
  design.N = a.N;
  design.times = parse_list(a.times);
  design.dose = a.dose;
  design.tinf = a.tinf;
  design.tD = a.tD;
  design.seed = c.seed;
  for (const auto& spec : a.covariates) {
    std::stringstream ss(spec);
    std::string name, mean, sd;
    if (!std::getline(ss, name, ':') || !std::getline(ss, mean, ':') || !std::getline(ss, sd))
      throw InputError("covariate", "expected name:mean:sd, got '" + spec + "'");
    const auto nums = parse_list(mean + "," + sd);
    design.covariates.push_back({name, nums[0], nums[1]});
  }
  const Dataset data = simulate_dataset(doc.spec, theta, design);
  prepare_out(c.out);
  std::ostringstream csv;
  write_dataset_csv(csv, data);
  write_text_file(out_path(c.out, "data.csv"), csv.str());
  std::cout << "subjects   " << data.size() << "\nrows       " << data.n_total() << "\n";

  RunManifest m;
  m.command = "simulate";
  m.inputs = {a.model, a.theta};
  std::ostringstream flags;
  flags << "N=" << a.N << ";times=" << a.times << ";dose=" << format_double(a.dose)
        << ";tinf=" << format_double(a.tinf) << ";tD=" << format_double(a.tD);
  for (const auto& cv : a.covariates) flags << ";cov=" << cv;
  m.config_hash = config_hash({model_text, theta_text, flags_digest(c), flags.str()});
  m.seed = c.seed;
  m.outputs = {"data.csv"};
  m.wall_time_seconds = timer.seconds();
  write_manifest(c.out, m);
  return kExitOk;
}

int cmd_mc(const std::string& config_path, const Common& c, std::size_t replicates,
           bool seed_given, bool criterion_given, bool nodes_given) {
  Timer timer;
  const std::string config_text = read_text_file(config_path);
  McConfig cfg;
  try {
    cfg = parse_study_config(Json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(config_path, "'" + config_path + "' is not valid JSON: " + e.what());
  }
  if (replicates > 0) cfg.replicates = replicates;
  if (seed_given) cfg.design.seed = c.seed;
  if (criterion_given) cfg.criterion = parse_criterion(c.criterion);
  if (nodes_given) cfg.fit.nodes = c.nodes;
  prepare_out(c.out);

  const McResult result = mc_selection_study(cfg);
  std::ostringstream freq, detail;
  write_frequency_csv(freq, result);
  write_detail_csv(detail, result);
  write_text_file(out_path(c.out, "frequencies.csv"), freq.str());
  write_text_file(out_path(c.out, "detail.csv"), detail.str());
  std::cout << freq.str();

  RunManifest m;
  m.command = "mc";
  m.inputs = {config_path};
  std::ostringstream flags;
  flags << "replicates=" << cfg.replicates << ";seed=" << cfg.design.seed
        << ";criterion=" << criterion_name(cfg.criterion) << ";nodes=" << cfg.fit.nodes;
  m.config_hash = config_hash({config_text, flags.str()});
  m.seed = cfg.design.seed;
  m.outputs = {"frequencies.csv", "detail.csv"};
  m.wall_time_seconds = timer.seconds();
  write_manifest(c.out, m);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear mixed-effects fitting and BIC-based model selection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  std::string data_path, model_path, config_path, direction;
  int starts = 1;
  bool refine = false;
  std::size_t replicates = 0;
  SimulateArgs sim;

  auto* fit = app.add_subcommand("fit", "fit one model by maximum likelihood");
  fit->add_option("--data", data_path, "dataset CSV")->required();
  fit->add_option("--model", model_path, "model specification (JSON)")->required();
  fit->add_option("--starts", starts, "number of optimizer starts")->check(CLI::PositiveNumber);
  add_common(fit, common);

  auto* select = app.add_subcommand("select", "stepwise covariate and covariance selection");
  select->add_option("--data", data_path, "dataset CSV")->required();
  select->add_option("--config", config_path, "search configuration (JSON)")->required();
  select->add_option("--direction", direction, "forward, backward or both");
  select->add_flag("--refine-corr", refine, "try correlations on the selected random effects");
  add_common(select, common);

  auto* simulate = app.add_subcommand("simulate", "simulate a dataset");
  simulate->add_option("--model", sim.model, "model specification (JSON)")->required();
  simulate->add_option("--theta", sim.theta, "population parameters (JSON)")->required();
  simulate->add_option("--N", sim.N, "number of subjects")->check(CLI::PositiveNumber);
  simulate->add_option("--times", sim.times, "comma-separated sampling times");
  simulate->add_option("--dose", sim.dose, "dose per subject");
  simulate->add_option("--tinf", sim.tinf, "infusion duration");
  simulate->add_option("--tD", sim.tD, "dosing time");
  simulate->add_option("--covariate", sim.covariates, "covariate generator name:mean:sd");
  add_common(simulate, common, false);

  auto* mc = app.add_subcommand("mc", "Monte Carlo selection-frequency study");
  mc->add_option("--config", config_path, "study configuration (JSON)")->required();
  mc->add_option("--replicates", replicates, "override the number of replicates")
      ->check(CLI::PositiveNumber);
  add_common(mc, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }
  if (common.jobs > 0) omp_set_num_threads(common.jobs);

  try {
    if (*fit) return cmd_fit(data_path, model_path, common, starts);
    if (*select) {
      const bool given = select->count("--criterion") > 0;
      return cmd_select(data_path, config_path, common, direction, refine, given);
    }
    if (*simulate) return cmd_simulate(sim, common);
    if (*mc)
      return cmd_mc(config_path, common, replicates, mc->count("--seed") > 0,
                    mc->count("--criterion") > 0, mc->count("--nodes") > 0);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const OffdiagWithoutDiag& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const TooManyStructures& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const GridTooLarge& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NonFiniteObjective& e) {
    std::cerr << "fit failed: " << e.what() << "\n";
    return kExitNotConverged;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNotConverged;
  }
  return kExitInput;
}
