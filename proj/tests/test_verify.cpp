#include <gtest/gtest.h>

#include "liv/verify.hpp"

namespace liv {
namespace {

TEST(Verify, Prop1Passes) {
  const VerifyReport r = run_verification("prop1", {});
  ASSERT_EQ(r.checks.size(), 1u);
  EXPECT_TRUE(r.passed()) << r.to_json().dump(2);
  EXPECT_EQ(r.checks[0].cases, 100);
}

TEST(Verify, CorruptLossFailsProp1) {
  const VerifyReport r = run_verification("prop1", {.seed = 0, .corrupt_loss = true});
  EXPECT_FALSE(r.passed());
}

TEST(Verify, GradcheckPassesAndCorruptionIsCaught) {
  const std::vector<CheckResult> good = check_gradients({}, 4, 8);
  ASSERT_EQ(good.size(), gradcheck_variants().size());
  for (const auto& c : good) EXPECT_TRUE(c.passed) << c.to_json().dump();
  const std::vector<CheckResult> bad = check_gradients({.seed = 0, .corrupt_loss = true}, 4, 8);
  for (const auto& c : bad) EXPECT_FALSE(c.passed) << c.name;
}

TEST(Verify, InvariantsPass) {
  for (const auto& c : check_invariants({.seed = 3}, 100)) EXPECT_TRUE(c.passed) << c.to_json().dump();
  for (const auto& c : check_round_trips({.seed = 3})) EXPECT_TRUE(c.passed) << c.name;
}

TEST(Verify, UnknownSuiteRejected) {
  EXPECT_FALSE(is_known_suite("everything"));
  EXPECT_THROW(run_verification("everything", {}), Error);
}

TEST(Verify, ReportJsonCarriesMargins) {
  CheckResult c{"x", true, 0.25, 1.0, 3};
  const Json j = c.to_json();
  EXPECT_DOUBLE_EQ(j.at("margin").get<double>(), 0.75);
  VerifyReport empty{"prop1", 0, {}};
  EXPECT_FALSE(empty.passed());
}

}  // namespace
}  // namespace liv
