#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace popbic {

struct Observation {
  double time = 0.0;
  std::vector<double> regressors;  // aligned with Dataset::regressor_names()
  double y = 0.0;
};

struct Subject {
  std::string id;
  std::vector<Observation> observations;
  std::vector<double> covariates;  // aligned with Dataset::covariate_names()
};

// Repeated measurements for N subjects. Subjects are kept sorted by id and
// observations by time so that every reduction runs in a canonical order.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::string> regressor_names, std::vector<std::string> covariate_names,
          std::vector<Subject> subjects);

  const std::vector<std::string>& regressor_names() const noexcept { return regressor_names_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  const std::vector<Subject>& subjects() const noexcept { return subjects_; }
  const Subject& subject(std::size_t i) const { return subjects_.at(i); }

  std::size_t size() const noexcept { return subjects_.size(); }
  std::size_t n_total() const noexcept { return n_total_; }

  // -1 when absent
  int regressor_index(const std::string& name) const;
  int covariate_index(const std::string& name) const;

  // Copy with covariate `name` multiplied by `factor`.
  Dataset with_scaled_covariate(const std::string& name, double factor) const;
  // Copy with only the listed subjects (by position).
  Dataset subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<std::string> regressor_names_;
  std::vector<std::string> covariate_names_;
  std::vector<Subject> subjects_;
  std::size_t n_total_ = 0;
};

// Long-format CSV: `id,time,y`, then regressor columns, then covariates.
// Columns listed in `regressor_names` are regressors; every other column is a
// subject-level covariate and must be constant within a subject.
Dataset read_dataset_csv(std::istream& in, const std::vector<std::string>& regressor_names);
Dataset read_dataset_csv(const std::string& path, const std::vector<std::string>& regressor_names);
void write_dataset_csv(std::ostream& out, const Dataset& data);

// Shortest round-trip decimal representation, used for every numeric output.
std::string format_double(double x);

std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_quote(const std::string& field);

}  // namespace popbic
