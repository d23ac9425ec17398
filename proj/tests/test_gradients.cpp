#include <gtest/gtest.h>

#include "gradient_suite.hpp"

namespace {

TEST(GradientSuite, EveryOpPassesOnThreeShapes) {
  const auto cases = aar::test::op_gradient_suite();
  EXPECT_GE(cases.size(), 3u * 19u);
  for (const auto& c : cases) EXPECT_LT(c.error, c.tolerance) << c.name;
}

TEST(GradientSuite, CompositeClosures) {
  for (const auto& c : aar::test::composite_gradient_suite()) EXPECT_LT(c.error, c.tolerance) << c.name;
}

}  // namespace
