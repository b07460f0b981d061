#include <doctest.h>

#include <sstream>

#include "popbic/errors.hpp"
#include "popbic/model.hpp"
#include "support.hpp"

using namespace popbic;
using namespace testsupport;

namespace {

CovariancePattern pattern3(std::vector<bool> diag, std::vector<std::pair<int, int>> pairs = {}) {
  auto p = CovariancePattern::diagonal(std::move(diag));
  for (auto [k, l] : pairs) p.set_correlated(k, l);
  return p;
}

}  // namespace

TEST_CASE("validate_pattern accepts diagonal patterns") {
  CHECK_NOTHROW(validate_pattern(pattern3({true, true, true})));
}

TEST_CASE("validate_pattern rejects a correlation with a fixed parameter") {
  CHECK_THROWS_AS(validate_pattern(pattern3({true, false, true}, {{0, 1}})), OffdiagWithoutDiag);
}

TEST_CASE("validate_pattern accepts the ka~V structure") {
  const auto v = validate_pattern(pattern3({true, true, true}, {{0, 2}}));
  CHECK(v.get().correlated(2, 0));
  CHECK(count_vec_omega(v) == 4);
}

TEST_CASE("validate_pattern matches the subset rule on every mask up to d = 4") {
  for (int d = 1; d <= 4; ++d) {
    const int pairs = d * (d - 1) / 2;
    for (unsigned dm = 0; dm < (1u << d); ++dm)
      for (unsigned om = 0; om < (1u << pairs); ++om) {
        CovariancePattern p(d);
        for (int k = 0; k < d; ++k) p.diag[k] = dm & (1u << k);
        for (int q = 0; q < pairs; ++q) p.offdiag[q] = om & (1u << q);
        bool legal = true;
        for (int k = 1; k < d; ++k)
          for (int l = 0; l < k; ++l)
            if (p.correlated(k, l) && !(p.diag[k] && p.diag[l])) legal = false;
        if (legal)
          CHECK_NOTHROW(validate_pattern(p));
        else
          CHECK_THROWS_AS(validate_pattern(p), OffdiagWithoutDiag);
      }
  }
}

TEST_CASE("count_vec_omega counts free covariance parameters") {
  CHECK(count_vec_omega(pattern3({false, false, false})) == 0);
  CHECK(count_vec_omega(pattern3({true, true, true})) == 3);
  CHECK(count_vec_omega(pattern3({true, true, true}, {{0, 2}})) == 4);
  // one more active entry adds exactly one
  auto p = pattern3({true, true, true}, {{0, 2}});
  p.set_correlated(1, 2);
  CHECK(count_vec_omega(p) == 5);
}

TEST_CASE("theta_dims counting") {
  SUBCASE("three random parameters, additive error") {
    const auto d = theta_dims(oral_spec({true, true, true}));
    CHECK(d.theta_R() == 6);
    CHECK(d.theta_F() == 1);
  }
  SUBCASE("two-compartment model with fixed Q carrying one covariate, combined error") {
    CovariateMap map(4);
    map.terms[0] = {"sexe"};
    auto spec = make_spec("twocpt_infusion",
                          {Transform::Log, Transform::Log, Transform::Log, Transform::Log},
                          {false, true, true, true}, ErrorKind::Combined, map);
    const auto d = theta_dims(spec);
    CHECK(d.theta_F() == 4);
    CHECK(d.beta_R == 3);
    CHECK(d.vec_omega == 3);
  }
  SUBCASE("no random effects") {
    CovariateMap map(3);
    map.terms[2] = {"w"};
    const auto spec = make_spec("onecpt_oral", {Transform::Log, Transform::Log, Transform::Log},
                                {false, false, false}, ErrorKind::Additive, map);
    const auto d = theta_dims(spec);
    CHECK(d.theta_R() == 0);
    CHECK(d.theta_F() == 4 + 1);
    CHECK(d.total() == packed_size(spec));
  }
}

TEST_CASE("dataset CSV round trip and canonical ordering") {
  std::istringstream in(
      "id,time,y,dose,w\n"
      "b,2,1.5,100,70\n"
      "a,1,2.0,100,60\n"
      "b,1,1.0,100,70\n");
  const Dataset data = read_dataset_csv(in, {"dose"});
  REQUIRE(data.size() == 2);
  CHECK(data.n_total() == 3);
  CHECK(data.subject(0).id == "a");
  CHECK(data.subject(1).observations[0].time == 1.0);
  CHECK(data.covariate_names() == std::vector<std::string>{"w"});
  std::ostringstream out;
  write_dataset_csv(out, data);
  std::istringstream again(out.str());
  const Dataset back = read_dataset_csv(again, {"dose"});
  std::ostringstream out2;
  write_dataset_csv(out2, back);
  CHECK(out.str() == out2.str());
}

TEST_CASE("missing covariate value is an input error naming the column") {
  std::istringstream in("id,time,y,ClCr\n1,1,2.0,NA\n");
  try {
    read_dataset_csv(in, {});
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(e.field() == "ClCr");
  }
}

TEST_CASE("covariates must be constant within a subject") {
  std::istringstream in("id,time,y,w\n1,1,2.0,60\n1,2,2.0,61\n");
  CHECK_THROWS_AS(read_dataset_csv(in, {}), InputError);
}

TEST_CASE("header must start with id,time,y") {
  std::istringstream in("time,id,y\n1,1,2\n");
  CHECK_THROWS_AS(read_dataset_csv(in, {}), InputError);
}

TEST_CASE("validate_against_dataset names a missing covariate") {
  CovariateMap map(3);
  map.terms[1] = {"ClCr"};
  const auto spec = make_spec("onecpt_oral", {Transform::Log, Transform::Log, Transform::Log},
                              {false, false, true}, ErrorKind::Additive, map);
  std::istringstream in("id,time,y,dose,w\n1,1,2.0,100,60\n");
  const Dataset data = read_dataset_csv(in, {"dose"});
  try {
    validate_against_dataset(spec, data);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(e.field() == "ClCr");
    CHECK(std::string(e.what()).find("ClCr") != std::string::npos);
  }
}

TEST_CASE("model summary format") {
  auto spec = oral_spec({true, false, true});
  spec.pattern = validate_pattern(pattern3({true, false, true}, {{0, 2}}));
  spec.covariates.terms[2] = {"w"};
  CHECK(model_summary(spec) == "Omega{ka,V|ka~V} C{ka() k() V(w)}");
}
