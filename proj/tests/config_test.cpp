// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/config.hpp"

#include <gtest/gtest.h>

namespace fringeforge {
namespace {

TEST(Config, SectionsPrefixKeys) {
  const auto kv = parse_config_text("seed = 3  # run seed\n\n[attack]\nkappa=10\n[eval]\n modes = dodge \n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"seed", "3"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"attack.kappa", "10"}));
  EXPECT_EQ(kv[2], (std::pair<std::string, std::string>{"eval.modes", "dodge"}));
}

TEST(Config, MalformedLinesAreParseErrors) {
  try {
    parse_config_text("seed 3\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Parse);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("[attack\n"), Error);
}

TEST(Config, UnknownKeyIsNamed) {
  RunConfig c;
  try {
    apply_setting(c, "attack.kapa", "3");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    EXPECT_NE(std::string(e.what()).find("attack.kapa"), std::string::npos);
  }
}

TEST(Config, BadValueNamesKey) {
  RunConfig c;
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"attack.iterations", "ten"}, {"attack.tiv", "maybe"}, {"faces.gamma", "-1"}, {"attack.mode", "hide"}}) {
    try {
      apply_setting(c, k, v);
      FAIL() << k;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
      EXPECT_NE(std::string(e.what()).find(k), std::string::npos);
    }
  }
}

TEST(Config, TypedValuesApply) {
  RunConfig c;
  apply_overrides(c, {"attack.kappa=12.5", "attack.tiv=off", "faces.gamma=2.5", "attack.assumed_gamma=none",
                      "train.widths=16,32,16", "seed=0x10", "attack.distance=l2", "attack.algorithm=phase_superposition"});
  EXPECT_EQ(c.attack.kappa, 12.5);
  EXPECT_FALSE(c.attack.tiv);
  ASSERT_TRUE(c.faces.gamma);
  EXPECT_EQ(c.faces.gamma->gamma, 2.5);
  EXPECT_FALSE(c.attack.assumed_gamma);
  EXPECT_EQ(c.train.widths, (std::vector<int>{16, 32, 16}));
  EXPECT_EQ(c.seed, 16u);
  EXPECT_EQ(c.attack.distance, DistanceKind::L2);
  EXPECT_EQ(c.algorithm, AlgorithmKind::PhaseSuperposition);
  EXPECT_THROW(apply_overrides(c, {"attack.kappa"}), Error);
}

TEST(Config, DumpRoundTripsExactly) {
  RunConfig c;
  apply_overrides(c, {"attack.alpha=0.1", "attack.transforms.sigma_angle=0.17453292519943295", "faces.gamma=2.5",
                      "attack.assumed_gamma=2.4999999999999996", "eval.modes=impersonate"});
  const std::string dump = render_config(c);
  RunConfig back;
  for (const auto& [k, v] : parse_config_text(dump)) apply_setting(back, k, v);
  EXPECT_EQ(render_config(back), dump);
  EXPECT_EQ(config_hash(back), config_hash(c));
  // Every key appears once.
  for (const std::string& k : config_keys()) EXPECT_NE(dump.find(k + " = "), std::string::npos) << k;
}

TEST(Config, HashIgnoresSeedOnly) {
  RunConfig a, b;
  b.seed = 99;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.attack.kappa = 1.0;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ModesAndExpression) {
  RunConfig c;
  EXPECT_EQ(eval_modes(c), (std::vector<AttackMode>{AttackMode::Dodge, AttackMode::Impersonate}));
  EXPECT_EQ(attack_expression(c), c.faces.expressions);
  apply_setting(c, "eval.modes", "");
  EXPECT_THROW(eval_modes(c), Error);
}

}  // namespace
}  // namespace fringeforge
