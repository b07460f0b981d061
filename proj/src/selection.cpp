#include "popbic/selection.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include "popbic/errors.hpp"
#include "popbic/rng.hpp"

namespace popbic {

const char* cov_mode_name(CovMode mode) {
  switch (mode) {
    case CovMode::DiagonalOnly:
      return "diagonal";
    case CovMode::Full:
      return "full";
    case CovMode::FixedDiagonal:
      return "fixed-diagonal";
  }
  return "diagonal";
}

CovMode parse_cov_mode(const std::string& name) {
  if (name == "diagonal" || name == "diagonal-only") return CovMode::DiagonalOnly;
  if (name == "full") return CovMode::Full;
  if (name == "fixed-diagonal") return CovMode::FixedDiagonal;
  throw InputError("cov_mode", "unknown cov_mode '" + name +
                                   "' (expected diagonal, full or fixed-diagonal)");
}

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::Forward:
      return "forward";
    case Direction::Backward:
      return "backward";
    case Direction::Both:
      return "both";
  }
  return "forward";
}

Direction parse_direction(const std::string& name) {
  if (name == "forward") return Direction::Forward;
  if (name == "backward") return Direction::Backward;
  if (name == "both") return Direction::Both;
  throw InputError("direction", "unknown direction '" + name +
                                    "' (expected forward, backward or both)");
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Covariance:
      return "covariance";
    case Phase::Covariate:
      return "covariate";
    case Phase::Correlation:
      return "correlation";
  }
  return "covariance";
}

namespace {

std::vector<int> active_entries(const CovariancePattern& p) {
  std::vector<int> out;
  for (int k = 0; k < p.d; ++k)
    if (p.diag[k]) out.push_back(k);
  for (std::size_t q = 0; q < p.offdiag.size(); ++q)
    if (p.offdiag[q]) out.push_back(p.d + static_cast<int>(q));
  return out;
}

// All correlation masks over the random set of `base`.
void add_correlation_masks(const CovariancePattern& base, std::vector<CovariancePattern>& out) {
  std::vector<std::size_t> pairs;
  for (int k = 1; k < base.d; ++k)
    for (int l = 0; l < k; ++l)
      if (base.diag[k] && base.diag[l]) pairs.push_back(pair_index(k, l));
  const std::size_t count = std::size_t{1} << pairs.size();
  for (std::size_t mask = 0; mask < count; ++mask) {
    CovariancePattern p = base;
    std::fill(p.offdiag.begin(), p.offdiag.end(), false);
    for (std::size_t b = 0; b < pairs.size(); ++b)
      if (mask & (std::size_t{1} << b)) p.offdiag[pairs[b]] = true;
    out.push_back(std::move(p));
  }
}

}  // namespace

std::vector<CovariancePattern> enumerate_cov_structures(int d, CovMode mode,
                                                        const std::vector<bool>& active, int cap) {
  if (d < 1) throw InputError("d", "need at least one parameter");
  if (d > cap)
    throw TooManyStructures("covariance enumeration over " + std::to_string(d) +
                            " parameters exceeds the cap of " + std::to_string(cap));
  std::vector<CovariancePattern> out;
  switch (mode) {
    case CovMode::DiagonalOnly:
      for (unsigned mask = 0; mask < (1u << d); ++mask) {
        std::vector<bool> diag(d);
        for (int k = 0; k < d; ++k) diag[k] = mask & (1u << k);
        out.push_back(CovariancePattern::diagonal(diag));
      }
      break;
    case CovMode::Full:
      for (unsigned mask = 0; mask < (1u << d); ++mask) {
        std::vector<bool> diag(d);
        for (int k = 0; k < d; ++k) diag[k] = mask & (1u << k);
        add_correlation_masks(CovariancePattern::diagonal(diag), out);
      }
      break;
    case CovMode::FixedDiagonal:
      if (active.size() != static_cast<std::size_t>(d))
        throw InputError("fixed_active", "fixed-diagonal mode needs one flag per parameter");
      add_correlation_masks(CovariancePattern::diagonal(active), out);
      break;
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    const auto ea = active_entries(a), eb = active_entries(b);
    if (ea.size() != eb.size()) return ea.size() < eb.size();
    return ea < eb;
  });
  return out;
}

std::vector<CovariateMap> covariate_moves(const CovariateMap& current,
                                          const std::vector<std::string>& pool, bool add) {
  std::vector<std::string> names = pool;
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::vector<CovariateMap> out;
  for (std::size_t k = 0; k < current.size(); ++k) {
    if (add) {
      for (const auto& c : names) {
        if (current.contains(k, c)) continue;
        CovariateMap m = current;
        auto& t = m.terms[k];
        t.insert(std::upper_bound(t.begin(), t.end(), c), c);
        out.push_back(std::move(m));
      }
    } else {
      std::vector<std::string> present = current.terms[k];
      std::sort(present.begin(), present.end());
      for (const auto& c : present) {
        CovariateMap m = current;
        auto& t = m.terms[k];
        t.erase(std::find(t.begin(), t.end(), c));
        out.push_back(std::move(m));
      }
    }
  }
  return out;
}

int select_best(const std::vector<double>& values, const std::vector<std::size_t>& sizes,
                const std::vector<std::string>& summaries, double tol) {
  double min = std::numeric_limits<double>::infinity();
  for (double v : values)
    if (std::isfinite(v)) min = std::min(min, v);
  if (!std::isfinite(min)) return -1;
  int best = -1;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] > min + tol) continue;
    if (best < 0 || sizes[i] < sizes[best] ||
        (sizes[i] == sizes[best] && summaries[i] < summaries[best]))
      best = static_cast<int>(i);
  }
  return best;
}

namespace {

struct CachedFit {
  bool ok = false;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::size_t parameters = 0;
  std::string message;
  FitResult fit;
};

// Fits candidate models once each, keyed by model summary.
class Evaluator {
 public:
  Evaluator(const Dataset& data, CriterionKind kind, const SearchOptions& opts,
            const PooledStart& pooled)
      : data_(data), kind_(kind), opts_(opts), pooled_(pooled) {}

  std::vector<CandidateRecord> evaluate(const std::vector<ModelSpec>& specs) {
    std::vector<std::string> keys;
    std::vector<std::size_t> todo;
    std::set<std::string> queued;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      keys.push_back(model_summary(specs[i]));
      if (!cache_.count(keys[i]) && queued.insert(keys[i]).second) todo.push_back(i);
    }
    std::vector<CachedFit> fits(todo.size());
    const auto n = static_cast<long>(todo.size());
#pragma omp parallel for schedule(dynamic) if (n > 1 && !omp_in_parallel())
    for (long j = 0; j < n; ++j) fits[j] = fit_one(specs[todo[j]], keys[todo[j]]);
    for (std::size_t j = 0; j < todo.size(); ++j) cache_[keys[todo[j]]] = std::move(fits[j]);

    std::vector<CandidateRecord> out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& c = cache_.at(keys[i]);
      CandidateRecord r;
      r.summary = keys[i];
      r.spec = specs[i];
      r.ok = c.ok;
      r.value = c.value;
      r.parameters = c.parameters;
      r.message = c.message;
      out.push_back(std::move(r));
    }
    return out;
  }

  const FitResult& fit(const std::string& key) const { return cache_.at(key).fit; }

 private:
  CachedFit fit_one(const ModelSpec& spec, const std::string& key) const {
    CachedFit out;
    out.parameters = theta_dims(spec).total();
    FitOptions fo = opts_.fit;
    fo.standard_errors = false;
    fo.seed = derive_seed(opts_.fit.seed, fnv1a(key));
    try {
      out.fit = fit_ml(data_, spec, default_init(spec, pooled_), fo);
      if (out.fit.converged) {
        out.ok = true;
        out.value = criterion(out.fit, kind_).value;
      } else {
        out.message = "not converged (" + out.fit.status + ")";
      }
    } catch (const std::exception& e) {
      out.message = e.what();
    }
    return out;
  }

  const Dataset& data_;
  CriterionKind kind_;
  const SearchOptions& opts_;
  const PooledStart& pooled_;
  std::map<std::string, CachedFit> cache_;
};

int best_of(const std::vector<CandidateRecord>& records, double tol) {
  std::vector<double> values;
  std::vector<std::size_t> sizes;
  std::vector<std::string> summaries;
  for (const auto& r : records) {
    values.push_back(r.ok ? r.value : std::numeric_limits<double>::quiet_NaN());
    sizes.push_back(r.parameters);
    summaries.push_back(r.summary);
  }
  return select_best(values, sizes, summaries, tol);
}

ModelSpec make_spec(const std::string& structural, const std::vector<Transform>& transforms,
                    const CovariateMap& map, const CovariancePattern& pattern,
                    const ErrorModelSpec& error) {
  ModelSpec s;
  s.structural = structural;
  s.transforms = transforms;
  s.covariates = map;
  s.pattern = validate_pattern(pattern);
  s.error = error;
  return s;
}

PooledStart pooled_for(const Dataset& data, const std::string& structural,
                       const std::vector<Transform>& transforms, const ErrorModelSpec& error) {
  const int d = static_cast<int>(transforms.size());
  return pooled_start(data, make_spec(structural, transforms, CovariateMap(d),
                                      CovariancePattern(d), error));
}

// Shared by stepwise_select and refine_correlations.
struct Search {
  const Dataset& data;
  CriterionKind kind;
  const SearchOptions& opts;
  PooledStart pooled;
  Evaluator eval;
  SelectionTrace trace;
  CandidateRecord incumbent;
  bool has_incumbent = false;

  Search(const Dataset& d, CriterionKind k, const SearchOptions& o, PooledStart p)
      : data(d), kind(k), opts(o), pooled(std::move(p)), eval(d, k, o, pooled) {
    trace.kind = k;
  }

  // Records one step; returns whether the incumbent changed.
  bool step(Phase phase, const std::vector<ModelSpec>& specs) {
    TraceStep st;
    st.step = static_cast<int>(trace.steps.size()) + 1;
    st.phase = phase;
    st.candidates = eval.evaluate(specs);
    st.selected = best_of(st.candidates, opts.tol);
    if (st.selected >= 0) {
      const auto& best = st.candidates[st.selected];
      if (!has_incumbent) {
        incumbent = best;
        has_incumbent = true;
      } else if (best.value < incumbent.value - opts.tol) {
        incumbent = best;
        st.accepted = true;
      }
    }
    trace.steps.push_back(std::move(st));
    return trace.steps.back().accepted;
  }

  void finish() {
    if (!has_incumbent)
      throw NonFiniteObjective("every candidate model failed to fit in the first step");
    trace.final_spec = incumbent.spec;
    trace.final_value = incumbent.value;
    trace.final_fit = eval.fit(incumbent.summary);
    if (opts.fit.standard_errors) standard_errors(trace.final_fit, data, opts.fit);
  }

  void correlation_step() {
    const auto& base = incumbent.spec;
    std::vector<ModelSpec> specs;
    for (const auto& p : enumerate_cov_structures(base.pattern.d(), CovMode::FixedDiagonal,
                                                  base.pattern.get().diag, opts.cap))
      specs.push_back(make_spec(base.structural, base.transforms, base.covariates, p, base.error));
    step(Phase::Correlation, specs);
  }
};

}  // namespace

SelectionTrace stepwise_select(const Dataset& data, const std::string& structural,
                               const std::vector<Transform>& transforms,
                               const std::vector<std::string>& pool, CriterionKind kind,
                               const SearchOptions& opts) {
  const int d = static_cast<int>(transforms.size());
  for (const auto& c : pool)
    if (data.covariate_index(c) < 0)
      throw InputError(c, "covariate '" + c + "' is not a column of the dataset");

  CovariateMap map(d);
  if (opts.start) {
    map = *opts.start;
  } else if (opts.direction == Direction::Backward) {
    for (auto& t : map.terms) {
      t = pool;
      std::sort(t.begin(), t.end());
      t.erase(std::unique(t.begin(), t.end()), t.end());
    }
  }
  const auto patterns = enumerate_cov_structures(d, opts.cov_mode, opts.fixed_active, opts.cap);
  auto covariance_specs = [&](const CovariateMap& m) {
    std::vector<ModelSpec> specs;
    for (const auto& p : patterns) specs.push_back(make_spec(structural, transforms, m, p, opts.error));
    return specs;
  };

  Search search(data, kind, opts, pooled_for(data, structural, transforms, opts.error));
  search.step(Phase::Covariance, covariance_specs(map));
  if (!search.has_incumbent)
    throw NonFiniteObjective("every covariance structure failed to fit in the first step");

  while (static_cast<int>(search.trace.steps.size()) < opts.max_steps) {
    const auto& inc = search.incumbent.spec;
    std::vector<CovariateMap> moves;
    if (opts.direction != Direction::Backward)
      moves = covariate_moves(inc.covariates, pool, true);
    if (opts.direction != Direction::Forward) {
      auto rm = covariate_moves(inc.covariates, pool, false);
      moves.insert(moves.end(), rm.begin(), rm.end());
    }
    if (moves.empty()) break;
    std::vector<ModelSpec> specs;
    for (const auto& m : moves)
      specs.push_back(make_spec(structural, transforms, m, inc.pattern, opts.error));
    if (!search.step(Phase::Covariate, specs)) break;
    if (static_cast<int>(search.trace.steps.size()) >= opts.max_steps) break;
    search.step(Phase::Covariance, covariance_specs(search.incumbent.spec.covariates));
  }
  search.finish();
  return std::move(search.trace);
}

void refine_correlations(SelectionTrace& trace, const Dataset& data, const SearchOptions& opts) {
  const ModelSpec& base = trace.final_spec;
  Search search(data, trace.kind, opts,
                pooled_for(data, base.structural, base.transforms, base.error));
  CandidateRecord inc;
  inc.summary = model_summary(base);
  inc.spec = base;
  inc.ok = true;
  inc.value = trace.final_value;
  inc.parameters = theta_dims(base).total();
  search.incumbent = inc;
  search.has_incumbent = true;
  search.trace.steps = std::move(trace.steps);
  search.correlation_step();
  trace.steps = std::move(search.trace.steps);
  if (trace.steps.back().accepted) {
    search.finish();
    trace.final_spec = search.trace.final_spec;
    trace.final_fit = std::move(search.trace.final_fit);
    trace.final_value = search.trace.final_value;
  }
}

ModelSpec refine_correlations(const ModelSpec& incumbent, const Dataset& data, CriterionKind kind,
                              const SearchOptions& opts) {
  Search search(data, kind, opts,
                pooled_for(data, incumbent.structural, incumbent.transforms, incumbent.error));
  search.step(Phase::Covariance, {incumbent});
  if (!search.has_incumbent) throw NonFiniteObjective("the incumbent model failed to fit");
  search.correlation_step();
  return search.incumbent.spec;
}

void write_trace_csv(std::ostream& out, const SelectionTrace& trace) {
  out << "step,phase,candidate,criterion,value,selected,accepted\n";
  for (const auto& st : trace.steps)
    for (std::size_t i = 0; i < st.candidates.size(); ++i) {
      const auto& c = st.candidates[i];
      const bool sel = static_cast<int>(i) == st.selected;
      out << st.step << ',' << phase_name(st.phase) << ',' << csv_quote(c.summary) << ','
          << criterion_name(trace.kind) << ','
          << (c.ok ? format_double(c.value) : std::string("NA")) << ',' << (sel ? 1 : 0) << ','
          << (sel && st.accepted ? 1 : 0) << '\n';
    }
}

}  // namespace popbic
