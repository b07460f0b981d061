#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "popbic/criteria.hpp"
#include "popbic/dataset.hpp"
#include "popbic/estimation.hpp"
#include "popbic/model.hpp"
#include "popbic/selection.hpp"
#include "popbic/theta.hpp"

namespace popbic {

// Subject-level covariate drawn as N(mean, sd).
struct CovariateGenerator {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
};

struct SimDesign {
  std::size_t N = 20;
  std::vector<double> times{1, 2, 4, 7, 10, 15, 20, 30, 40};
  double dose = 100.0;
  double tinf = 1.0;  // infusion duration, for infusion models
  double tD = 0.0;    // dosing time
  std::uint64_t seed = 1;
  std::vector<CovariateGenerator> covariates;
};

// Throws InputError when N == 0 or times are not strictly increasing.
void validate_design(const SimDesign& design);

// Subject i draws from its own stream derive_seed(design.seed, i). When
// `psi_out` is given it receives each subject's psi (all d components).
Dataset simulate_dataset(const ModelSpec& spec, const ThetaVector& theta, const SimDesign& design,
                         std::vector<Eigen::VectorXd>* psi_out = nullptr);

struct McCandidate {
  std::string label;
  ModelSpec spec;
};

struct McConfig {
  std::size_t replicates = 100;
  ModelSpec true_spec;
  ThetaVector true_theta;
  std::vector<McCandidate> candidates;
  CriterionKind criterion = CriterionKind::BIC_V;
  SimDesign design;  // design.seed is the master seed
  FitOptions fit;
};

struct McDetailRow {
  std::size_t replicate = 0;
  std::string candidate;
  double criterion_value = std::numeric_limits<double>::quiet_NaN();  // NaN when the fit failed
  bool selected = false;
};

struct McResult {
  std::vector<std::string> labels;
  std::vector<std::size_t> selected_count;  // per candidate
  std::size_t failed = 0;                   // replicates where every candidate failed
  std::size_t replicates = 0;
  std::vector<McDetailRow> detail;          // replicate-major, candidate order

  double frequency(std::size_t c) const;
  double failed_fraction() const;
  std::size_t index_of(const std::string& label) const;
};

// Replicate r simulates with seed derive_seed(master, r) and runs in
// parallel; results do not depend on thread count or execution order.
McResult mc_selection_study(const McConfig& config);

void write_frequency_csv(std::ostream& out, const McResult& result);
void write_detail_csv(std::ostream& out, const McResult& result);

}  // namespace popbic
