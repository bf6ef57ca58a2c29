#include <doctest.h>

#include "adabn/gradcheck.hpp"

using namespace adabn;

TEST_CASE("layer gradcheck suite stays within tolerance") {
  const GradCheckReport r = gradcheck_layers(31337, 40);
  CHECK(r.passed);
  for (const auto& g : r.groups) {
    CAPTURE(g.name);
    CHECK(g.max_rel <= 1e-5);
  }
  // All four parameter groups were exercised.
  CHECK(r.groups.size() == 4);
}

TEST_CASE("whole-model gradcheck stays within tolerance") {
  const GradCheckReport r = gradcheck_model(424242, 4);
  CHECK(r.passed);
  bool saw_psi = false;
  for (const auto& g : r.groups) {
    CAPTURE(g.name);
    CHECK(g.max_rel <= 1e-5);
    if (g.name == "psi") saw_psi = true;
  }
  CHECK(saw_psi);
}

TEST_CASE("gradcheck is reproducible for a pinned seed") {
  const GradCheckReport a = gradcheck_layers(7, 5);
  const GradCheckReport b = gradcheck_layers(7, 5);
  REQUIRE(a.groups.size() == b.groups.size());
  for (std::size_t i = 0; i < a.groups.size(); ++i)
    CHECK(a.groups[i].max_rel == b.groups[i].max_rel);
}
