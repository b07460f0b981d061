#include "popbic/simulate.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <ostream>
#include <random>

#include "popbic/errors.hpp"
#include "popbic/likelihood.hpp"
#include "popbic/rng.hpp"

namespace popbic {

void validate_design(const SimDesign& design) {
  if (design.N < 1) throw InputError("N", "design needs at least one subject");
  if (design.times.empty()) throw InputError("times", "design needs at least one sampling time");
  for (std::size_t j = 0; j < design.times.size(); ++j) {
    if (!std::isfinite(design.times[j])) throw InputError("times", "sampling times must be finite");
    if (j && !(design.times[j] > design.times[j - 1]))
      throw InputError("times", "sampling times must be strictly increasing");
  }
  for (const auto& g : design.covariates)
    if (!(g.sd >= 0.0) || !std::isfinite(g.mean))
      throw InputError(g.name, "covariate generator needs a finite mean and sd >= 0");
}

namespace {

double regressor_value(const std::string& name, const SimDesign& design) {
  if (name == "dose") return design.dose;
  if (name == "tinf") return design.tinf;
  if (name == "tD") return design.tD;
  throw InputError(name, "the simulator has no value for regressor '" + name + "'");
}

// Square-root factor of a positive semi-definite covariance.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& omega) {
  if (omega.rows() == 0) return omega;
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

std::string subject_id(std::size_t i, std::size_t N) {
  const std::size_t width = std::to_string(N).size();
  std::string digits = std::to_string(i + 1);
  return "S" + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

Dataset simulate_dataset(const ModelSpec& spec, const ThetaVector& theta, const SimDesign& design,
                         std::vector<Eigen::VectorXd>* psi_out) {
  validate_model_spec(spec);
  validate_design(design);
  check_theta(theta, spec);
  const auto& model = structural_model(spec.structural);

  std::vector<std::string> cov_names;
  for (const auto& g : design.covariates) cov_names.push_back(g.name);
  for (const auto& terms : spec.covariates.terms)
    for (const auto& c : terms)
      if (std::find(cov_names.begin(), cov_names.end(), c) == cov_names.end())
        throw InputError(c, "no generator for covariate '" + c + "'");

  std::vector<double> reg;
  for (const auto& r : model.regressors) reg.push_back(regressor_value(r, design));

  const auto layout = beta_layout(spec.covariates);
  const auto random = spec.pattern.get().random_indices();
  const Eigen::MatrixXd L = covariance_factor(theta.omega);
  ErrorModelSpec error = spec.error;
  error.a = error.uses_a() ? theta.a : 0.0;
  error.b = error.uses_b() ? theta.b : 0.0;

  std::vector<Subject> subjects(design.N);
  if (psi_out) psi_out->assign(design.N, Eigen::VectorXd());
  for (std::size_t i = 0; i < design.N; ++i) {
    std::mt19937_64 rng(derive_seed(design.seed, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    Subject& s = subjects[i];
    s.id = subject_id(i, design.N);
    for (const auto& g : design.covariates) s.covariates.push_back(g.mean + g.sd * normal(rng));

    Eigen::VectorXd z(static_cast<Eigen::Index>(random.size()));
    for (Eigen::Index r = 0; r < z.size(); ++r) z(r) = normal(rng);
    const Eigen::VectorXd eta = L * z;

    Eigen::VectorXd psi(static_cast<Eigen::Index>(spec.d()));
    std::vector<double> phi(spec.d());
    for (std::size_t k = 0; k < spec.d(); ++k) {
      double v = theta.beta(layout.offset[k]);
      const auto& terms = spec.covariates.terms[k];
      for (std::size_t c = 0; c < terms.size(); ++c) {
        const auto pos = std::find(cov_names.begin(), cov_names.end(), terms[c]) - cov_names.begin();
        v += theta.beta(layout.offset[k] + 1 + c) * s.covariates[pos];
      }
      psi(k) = v;
    }
    for (std::size_t r = 0; r < random.size(); ++r) psi(random[r]) += eta(r);
    for (std::size_t k = 0; k < spec.d(); ++k) phi[k] = to_natural(spec.transforms[k], psi(k));
    if (psi_out) (*psi_out)[i] = psi;

    for (double t : design.times) {
      const double c = model.eval(t, reg, phi);
      const double eps = normal(rng);
      s.observations.push_back({t, reg, c + raw_error_sd(error, c) * eps});
    }
  }
  return Dataset(model.regressors, cov_names, std::move(subjects));
}

double McResult::frequency(std::size_t c) const {
  return replicates ? static_cast<double>(selected_count.at(c)) / static_cast<double>(replicates)
                    : 0.0;
}

double McResult::failed_fraction() const {
  return replicates ? static_cast<double>(failed) / static_cast<double>(replicates) : 0.0;
}

std::size_t McResult::index_of(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw InputError("candidate", "no candidate labelled '" + label + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

McResult mc_selection_study(const McConfig& config) {
  if (config.replicates < 1) throw InputError("replicates", "need at least one replicate");
  if (config.candidates.empty()) throw InputError("candidates", "candidate list is empty");
  validate_design(config.design);
  for (const auto& c : config.candidates) validate_model_spec(c.spec);

  const std::size_t R = config.replicates;
  const std::size_t C = config.candidates.size();
  std::vector<std::vector<double>> values(R, std::vector<double>(C));
  std::vector<std::exception_ptr> errors(R);

  std::vector<std::size_t> sizes;
  std::vector<std::string> summaries;
  for (const auto& c : config.candidates) {
    sizes.push_back(theta_dims(c.spec).total());
    summaries.push_back(model_summary(c.spec));
  }

  const auto n = static_cast<long>(R);
#pragma omp parallel for schedule(dynamic) if (n > 1 && !omp_in_parallel())
  for (long r = 0; r < n; ++r) {
    try {
      SimDesign design = config.design;
      design.seed = derive_seed(config.design.seed, static_cast<std::uint64_t>(r));
      const Dataset data = simulate_dataset(config.true_spec, config.true_theta, design);
      std::map<std::string, PooledStart> pooled;
      for (std::size_t c = 0; c < C; ++c) {
        const ModelSpec& spec = config.candidates[c].spec;
        double v = std::numeric_limits<double>::quiet_NaN();
        try {
          std::string key = spec.structural;
          for (auto t : spec.transforms) key += std::string(":") + transform_name(t);
          auto it = pooled.find(key);
          if (it == pooled.end()) it = pooled.emplace(key, pooled_start(data, spec)).first;
          FitOptions fo = config.fit;
          fo.standard_errors = false;
          fo.seed = derive_seed(config.design.seed, static_cast<std::uint64_t>(r), c + 1);
          const FitResult fit = fit_ml(data, spec, default_init(spec, it->second), fo);
          if (fit.converged) v = criterion(fit, config.criterion).value;
        } catch (const Error&) {
        }
        values[r][c] = v;
      }
    } catch (...) {
      errors[r] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  McResult out;
  out.replicates = R;
  out.selected_count.assign(C, 0);
  for (const auto& c : config.candidates) out.labels.push_back(c.label);
  for (std::size_t r = 0; r < R; ++r) {
    const int best = select_best(values[r], sizes, summaries);
    if (best < 0)
      ++out.failed;
    else
      ++out.selected_count[best];
    for (std::size_t c = 0; c < C; ++c)
      out.detail.push_back({r, out.labels[c], values[r][c], static_cast<int>(c) == best});
  }
  return out;
}

void write_frequency_csv(std::ostream& out, const McResult& result) {
  out << "candidate,selected_count,frequency\n";
  for (std::size_t c = 0; c < result.labels.size(); ++c)
    out << csv_quote(result.labels[c]) << ',' << result.selected_count[c] << ','
        << format_double(result.frequency(c)) << '\n';
  out << "failed," << result.failed << ',' << format_double(result.failed_fraction()) << '\n';
}

void write_detail_csv(std::ostream& out, const McResult& result) {
  out << "replicate,candidate,criterion_value,selected\n";
  for (const auto& row : result.detail)
    out << row.replicate << ',' << csv_quote(row.candidate) << ','
        << format_double(row.criterion_value) << ',' << (row.selected ? 1 : 0) << '\n';
}

}  // namespace popbic
