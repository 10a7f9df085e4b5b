#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace pam;

TEST(GradientSuite, EveryOpMatchesCentralDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u})
    for (const auto& op : oracle::gradient_cases(seed)) EXPECT_LT(op.worst, 1e-4) << op.name;
}

TEST(AttentionOracle, MatchesNaiveTripleLoop) {
  const auto r = oracle::attention_oracle(200, 3);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(LossContracts, Hold) {
  const auto r = oracle::loss_contracts(300, 4);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(EngineClosure, OracleStubsReproduceTruth) {
  const auto r = oracle::engine_closure(8, 17);
  EXPECT_TRUE(r.pass) << r.detail;
}
