#include "matchlike/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>

#include "service_fixtures.hpp"
#include "test_blocks.hpp"

namespace matchlike {
namespace {

using BlockMap = std::map<std::string, BlockHandle, std::less<>>;

BlockMap make_blocks(Registry& reg, const std::vector<std::string>& ids) {
  BlockMap out;
  for (const auto& id : ids) out[id] = reg.register_block(id, "model", {testing::constant_predict(1)});
  return out;
}

std::vector<std::string> ids_of(const RunnableNode& node) {
  std::vector<std::string> out;
  for (const auto& b : node.flatten()) out.push_back(b->id());
  return out;
}

Error parse_error(std::string_view text, const BlockMap& blocks) {
  try {
    parse_chain_expression(text, blocks);
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error for " << text;
  return Error(ErrorCode::InvalidConfig, "accepted");
}

TEST(ChainExpression, EnsembleShape) {
  Registry reg;
  auto blocks = make_blocks(reg, {"dataset", "nn1", "nn2", "agg", "guard"});
  const RunnableNode node = parse_chain_expression("dataset | ParallelBlock(nn1, nn2) | agg | guard", blocks);
  const RunnableNode expected =
      blocks["dataset"] | compose_parallel({blocks["nn1"], blocks["nn2"]}) | blocks["agg"] | blocks["guard"];
  EXPECT_TRUE(node == expected);
  ASSERT_EQ(node.kind(), RunnableNode::Kind::Chain);
  EXPECT_EQ(node.right().block()->id(), "guard");
  EXPECT_EQ(node.left().left().right().kind(), RunnableNode::Kind::Parallel);
  EXPECT_EQ(ids_of(node), (std::vector<std::string>{"dataset", "nn1", "nn2", "agg", "guard"}));
}

TEST(ChainExpression, PipeIsLeftAssociative) {
  Registry reg;
  auto blocks = make_blocks(reg, {"a", "b", "c"});
  const RunnableNode node = parse_chain_expression("a|b  |\n c", blocks);
  EXPECT_TRUE(node == compose_sequential(compose_sequential(blocks["a"], blocks["b"]), blocks["c"]));
  EXPECT_EQ(ids_of(node), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(ChainExpression, Errors) {
  Registry reg;
  auto blocks = make_blocks(reg, {"a", "b"});
  Error e = parse_error("ParallelBlock(a)", blocks);
  EXPECT_EQ(e.code(), ErrorCode::ParseError);
  EXPECT_EQ(e.position(), 15u);

  e = parse_error("a | zed", blocks);
  EXPECT_EQ(e.code(), ErrorCode::UnknownBlockId);
  EXPECT_EQ(e.detail(), "zed");
  EXPECT_EQ(e.position(), 4u);

  for (const char* bad : {"", "a |", "a b", "| a", "ParallelBlock a, b)", "ParallelBlock(a, b", "a | (b)"}) {
    EXPECT_EQ(parse_error(bad, blocks).code(), ErrorCode::ParseError) << bad;
  }
}

RunnableNode random_tree(std::vector<BlockHandle> pool, std::mt19937& rng, int depth) {
  std::uniform_int_distribution<int> coin(0, 2);
  auto term = [&]() -> RunnableNode {
    if (depth > 0 && pool.size() >= 2 && coin(rng) == 0) {
      const std::size_t n = std::min<std::size_t>(pool.size(), std::uniform_int_distribution<std::size_t>(2, 3)(rng));
      const std::size_t take = std::uniform_int_distribution<std::size_t>(n, pool.size())(rng);
      std::vector<std::vector<BlockHandle>> parts(n);
      for (std::size_t i = 0; i < take; ++i) {
        parts[i < n ? i : std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)].push_back(pool.back());
        pool.pop_back();
      }
      std::vector<RunnableNode> branches;
      for (auto& part : parts) branches.push_back(random_tree(std::move(part), rng, depth - 1));
      return compose_parallel(std::move(branches));
    }
    BlockHandle b = pool.back();
    pool.pop_back();
    return b;
  };
  RunnableNode node = term();
  while (!pool.empty()) node = compose_sequential(std::move(node), term());
  return node;
}

TEST(ChainExpression, FormatRoundTripOnRandomTrees) {
  Registry reg;
  std::vector<std::string> names;
  for (int i = 0; i < 16; ++i) names.push_back("b" + std::to_string(i));
  auto blocks = make_blocks(reg, names);
  std::mt19937 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<BlockHandle> pool;
    for (const auto& [id, b] : blocks) pool.push_back(b);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::uniform_int_distribution<std::size_t>(1, pool.size())(rng));
    const RunnableNode tree = random_tree(pool, rng, 3);
    const std::string text = format_chain_expression(tree);
    const RunnableNode back = parse_chain_expression(text, blocks);
    EXPECT_TRUE(back == tree) << text;
    EXPECT_EQ(format_chain_expression(back), text);
  }
}

using testing::build_fixture;
using testing::fixture_config;

std::optional<ErrorCode> config_error(const Json& config) {
  try {
    build_fixture(config);
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

TEST(Config, BuildsFixtures) {
  auto built = testing::build_named("loan_config.json");
  EXPECT_EQ(built->seed, 7u);
  EXPECT_EQ(ids_of(built->pipeline->root()),
            (std::vector<std::string>{"dataset", "filter", "nn1", "nn2", "agg", "guard", "stop"}));
  EXPECT_EQ(built->models.size(), 2u);
}

TEST(Config, RejectsInvalidConfigs) {
  const Json base = fixture_config("threshold_config.json");
  auto with = [&](const std::function<void(Json&)>& edit) {
    Json c = base;
    edit(c);
    return c;
  };
  EXPECT_EQ(config_error(with([](Json& c) { c["extra"] = 1; })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c.erase("chain"); })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["seed"] = -1; })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["chain"] = "dataset | nothing"; })), ErrorCode::UnknownBlockId);
  EXPECT_EQ(config_error(with([](Json& c) { c["chain"] = "dataset | | model"; })), ErrorCode::ParseError);
  EXPECT_EQ(config_error(with([](Json& c) { c["blocks"][2]["model"] = "forest"; })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["blocks"][1]["id"] = "Not A Slug"; })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["blocks"].push_back(c["blocks"][3]); })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["blocks"].push_back({{"id", "b"}, {"kind", "bias"}, {"model", "x"}}); })),
            ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["blocks"][0]["kind"] = "teleporter"; })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["dataset"]["path"] = "missing.csv"; })), ErrorCode::InvalidConfig);
  EXPECT_EQ(config_error(with([](Json& c) { c["blocks"][1]["rules"] = {"IF income >> 3 THEN"}; })),
            ErrorCode::ParseError);
  EXPECT_TRUE(config_error(with([](Json& c) { c["blocks"][1]["rules"] = {"IF salary < 0 THEN REJECT('x')"}; })));
}

TEST(Config, SeedOverrideAndSavedModels) {
  const Json config = fixture_config("loan_config.json");
  BuildOptions options;
  options.base_dir = MATCHLIKE_TEST_DATA;
  options.seed_override = 99;
  auto a = build_pipeline(config, options);
  EXPECT_EQ(a->seed, 99u);

  const auto dir = std::filesystem::temp_directory_path() / "matchlike_config_test_models";
  std::filesystem::create_directories(dir);
  for (const auto& [id, state] : a->models) {
    std::ofstream(dir / (id + ".json")) << model_document(id, *state->current()).dump();
  }
  options.seed_override = 1;
  options.models_dir = dir.string();
  auto b = build_pipeline(config, options);
  for (const auto& [id, state] : a->models) {
    EXPECT_EQ(model_document(id, *state->current()), model_document(id, *b->models.at(id)->current())) << id;
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace matchlike
