#pragma once

// Covariance-structure enumeration, covariate moves and the alternating
// stepwise search over (covariance pattern, covariate map).

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "popbic/criteria.hpp"
#include "popbic/dataset.hpp"
#include "popbic/estimation.hpp"
#include "popbic/model.hpp"

namespace popbic {

enum class CovMode { DiagonalOnly, Full, FixedDiagonal };

const char* cov_mode_name(CovMode mode);
CovMode parse_cov_mode(const std::string& name);

// Patterns ordered by number of active entries, then lexicographically by
// the sorted list of active entry indices (variance k is entry k, pair p is
// entry d + p). FixedDiagonal enumerates the correlation masks over the
// random set `active`. Throws TooManyStructures when d > cap.
std::vector<CovariancePattern> enumerate_cov_structures(int d, CovMode mode,
                                                        const std::vector<bool>& active = {},
                                                        int cap = 4);

enum class Direction { Forward, Backward, Both };

const char* direction_name(Direction d);
Direction parse_direction(const std::string& name);

// Every map one (parameter, covariate) inclusion away from `current`, ordered
// by parameter index then covariate name. Covariate lists stay sorted.
std::vector<CovariateMap> covariate_moves(const CovariateMap& current,
                                          const std::vector<std::string>& pool, bool add);

// Argmin over candidates: ties within `tol` go to fewer parameters, then to
// the lexicographically smaller summary. Returns -1 when no value is finite.
int select_best(const std::vector<double>& values, const std::vector<std::size_t>& sizes,
                const std::vector<std::string>& summaries, double tol = 1e-6);

enum class Phase { Covariance, Covariate, Correlation };

const char* phase_name(Phase p);

struct CandidateRecord {
  std::string summary;
  ModelSpec spec;
  bool ok = false;  // fit succeeded and converged
  double value = std::numeric_limits<double>::quiet_NaN();
  std::size_t parameters = 0;
  std::string message;  // why the fit was excluded
};

struct TraceStep {
  int step = 0;
  Phase phase = Phase::Covariance;
  std::vector<CandidateRecord> candidates;
  int selected = -1;      // argmin of the step
  bool accepted = false;  // the argmin replaced the incumbent
};

struct SelectionTrace {
  CriterionKind kind = CriterionKind::BIC_joint;
  std::vector<TraceStep> steps;
  ModelSpec final_spec;
  FitResult final_fit;
  double final_value = 0.0;
};

struct SearchOptions {
  Direction direction = Direction::Forward;
  std::optional<CovariateMap> start;  // overrides the direction's default start
  CovMode cov_mode = CovMode::DiagonalOnly;
  std::vector<bool> fixed_active;     // for CovMode::FixedDiagonal
  ErrorModelSpec error;
  FitOptions fit;
  double tol = 1e-6;
  int max_steps = 50;
  int cap = 4;
};

// Alternates a covariance phase (all patterns, covariates fixed) with a
// covariate phase (one-move neighbours, pattern fixed). A move is accepted
// only when it improves the incumbent criterion by more than opts.tol.
// Candidates whose fit fails are recorded and skipped.
SelectionTrace stepwise_select(const Dataset& data, const std::string& structural,
                               const std::vector<Transform>& transforms,
                               const std::vector<std::string>& pool, CriterionKind kind,
                               const SearchOptions& opts = {});

// Tries every correlation mask over the random set of the trace's final
// model, appends a correlation step, and updates the final model when a
// mask improves the criterion by more than opts.tol.
void refine_correlations(SelectionTrace& trace, const Dataset& data,
                         const SearchOptions& opts = {});

// Same search starting from a bare model; returns the incumbent unless a
// correlation mask is strictly better.
ModelSpec refine_correlations(const ModelSpec& incumbent, const Dataset& data, CriterionKind kind,
                              const SearchOptions& opts = {});

// step,phase,candidate,criterion,value,selected,accepted
void write_trace_csv(std::ostream& out, const SelectionTrace& trace);

}  // namespace popbic
