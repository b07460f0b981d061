#include "popbic/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "popbic/errors.hpp"

namespace popbic {

Dataset::Dataset(std::vector<std::string> regressor_names,
                 std::vector<std::string> covariate_names, std::vector<Subject> subjects)
    : regressor_names_(std::move(regressor_names)),
      covariate_names_(std::move(covariate_names)),
      subjects_(std::move(subjects)) {
  std::set<std::string> ids;
  for (auto& s : subjects_) {
    if (!ids.insert(s.id).second) throw InputError("id", "duplicate subject id '" + s.id + "'");
    if (s.observations.empty())
      throw InputError("id", "subject '" + s.id + "' has no observations");
    if (s.covariates.size() != covariate_names_.size())
      throw InputError("covariates", "subject '" + s.id + "' does not carry every covariate");
    for (std::size_t c = 0; c < s.covariates.size(); ++c)
      if (!std::isfinite(s.covariates[c]))
        throw InputError(covariate_names_[c],
                         "missing or non-finite covariate '" + covariate_names_[c] +
                             "' for subject '" + s.id + "'");
    for (const auto& o : s.observations) {
      if (!std::isfinite(o.time))
        throw InputError("time", "non-finite time for subject '" + s.id + "'");
      if (!std::isfinite(o.y)) throw InputError("y", "non-finite y for subject '" + s.id + "'");
      if (o.regressors.size() != regressor_names_.size())
        throw InputError("regressors", "regressor count mismatch for subject '" + s.id + "'");
    }
    std::stable_sort(s.observations.begin(), s.observations.end(),
                     [](const Observation& a, const Observation& b) { return a.time < b.time; });
    n_total_ += s.observations.size();
  }
  std::sort(subjects_.begin(), subjects_.end(),
            [](const Subject& a, const Subject& b) { return a.id < b.id; });
}

int Dataset::regressor_index(const std::string& name) const {
  auto it = std::find(regressor_names_.begin(), regressor_names_.end(), name);
  return it == regressor_names_.end() ? -1 : static_cast<int>(it - regressor_names_.begin());
}

int Dataset::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
  return it == covariate_names_.end() ? -1 : static_cast<int>(it - covariate_names_.begin());
}

Dataset Dataset::with_scaled_covariate(const std::string& name, double factor) const {
  const int c = covariate_index(name);
  if (c < 0) throw InputError(name, "unknown covariate '" + name + "'");
  auto subjects = subjects_;
  for (auto& s : subjects) s.covariates[c] *= factor;
  return Dataset(regressor_names_, covariate_names_, std::move(subjects));
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  std::vector<Subject> subjects;
  subjects.reserve(indices.size());
  for (auto i : indices) subjects.push_back(subjects_.at(i));
  return Dataset(regressor_names_, covariate_names_, std::move(subjects));
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    auto b = f.find_first_not_of(" \t");
    auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

namespace {

double parse_number(const std::string& text, const std::string& column, std::size_t line_no) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, value);
  if (text.empty() || res.ec != std::errc() || res.ptr != last)
    throw InputError(column, "column '" + column + "' line " + std::to_string(line_no) +
                                 ": cannot parse '" + text + "' as a number");
  return value;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in, const std::vector<std::string>& regressor_names) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("header", "empty dataset: header row required");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "time" || header[2] != "y")
    throw InputError("header", "dataset header must start with id,time,y");

  std::vector<int> reg_cols(regressor_names.size(), -1);
  std::vector<std::string> cov_names;
  std::vector<int> cov_cols;
  for (std::size_t c = 3; c < header.size(); ++c) {
    auto it = std::find(regressor_names.begin(), regressor_names.end(), header[c]);
    if (it != regressor_names.end()) {
      reg_cols[it - regressor_names.begin()] = static_cast<int>(c);
    } else {
      if (std::find(cov_names.begin(), cov_names.end(), header[c]) != cov_names.end())
        throw InputError(header[c], "duplicate column '" + header[c] + "'");
      cov_names.push_back(header[c]);
      cov_cols.push_back(static_cast<int>(c));
    }
  }
  for (std::size_t r = 0; r < regressor_names.size(); ++r)
    if (reg_cols[r] < 0)
      throw InputError(regressor_names[r],
                       "dataset lacks regressor column '" + regressor_names[r] + "'");

  std::map<std::string, Subject> by_id;
  std::vector<std::string> order;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw InputError("row", "line " + std::to_string(line_no) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(header.size()));
    const std::string& id = fields[0];
    if (id.empty()) throw InputError("id", "empty id on line " + std::to_string(line_no));
    Observation obs;
    obs.time = parse_number(fields[1], "time", line_no);
    obs.y = parse_number(fields[2], "y", line_no);
    for (int col : reg_cols) obs.regressors.push_back(parse_number(fields[col], header[col], line_no));

    std::vector<double> covs;
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      const auto& text = fields[cov_cols[c]];
      if (text.empty() || text == "NA" || text == ".")
        throw InputError(cov_names[c], "missing value for covariate '" + cov_names[c] +
                                           "' on line " + std::to_string(line_no));
      covs.push_back(parse_number(text, cov_names[c], line_no));
    }

    auto it = by_id.find(id);
    if (it == by_id.end()) {
      Subject s;
      s.id = id;
      s.covariates = covs;
      it = by_id.emplace(id, std::move(s)).first;
      order.push_back(id);
    } else {
      for (std::size_t c = 0; c < covs.size(); ++c)
        if (covs[c] != it->second.covariates[c])
          throw InputError(cov_names[c], "covariate '" + cov_names[c] +
                                             "' varies within subject '" + id + "'");
    }
    it->second.observations.push_back(std::move(obs));
  }

  std::vector<Subject> subjects;
  subjects.reserve(order.size());
  for (const auto& id : order) subjects.push_back(std::move(by_id.at(id)));
  return Dataset(regressor_names, cov_names, std::move(subjects));
}

Dataset read_dataset_csv(const std::string& path, const std::vector<std::string>& regressor_names) {
  std::ifstream in(path);
  if (!in) throw InputError("data", "cannot open dataset '" + path + "'");
  return read_dataset_csv(in, regressor_names);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "id,time,y";
  for (const auto& r : data.regressor_names()) out << ',' << csv_quote(r);
  for (const auto& c : data.covariate_names()) out << ',' << csv_quote(c);
  out << '\n';
  for (const auto& s : data.subjects()) {
    for (const auto& o : s.observations) {
      out << csv_quote(s.id) << ',' << format_double(o.time) << ',' << format_double(o.y);
      for (double r : o.regressors) out << ',' << format_double(r);
      for (double c : s.covariates) out << ',' << format_double(c);
      out << '\n';
    }
  }
}

}  // namespace popbic
