#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "mbsvd/dataio.hpp"
#include "support.hpp"

using namespace mbsvd;
using mbsvd::testing::Gen;

namespace {

const std::vector<std::string> kNames{"view", "cart", "favorite", "purchase"};

InteractionDataset parse(const std::string& text, const std::vector<std::string>& names = kNames) {
  std::istringstream in(text);
  return parse_interactions(in, names);
}

std::string random_log(Gen& gen, std::size_t users, std::size_t items, std::size_t lines) {
  std::ostringstream os;
  for (std::size_t n = 0; n < lines; ++n)
    os << gen.index(0, users - 1) * 7 + 3 << '\t' << gen.index(0, items - 1) * 5 << '\t'
       << kNames[gen.index(0, kNames.size() - 1)] << '\n';
  return os.str();
}

}  // namespace

TEST(Parse, SingleLine) {
  const auto ds = parse("0\t5\tpurchase\n");
  ASSERT_EQ(ds.records.size(), 1u);
  EXPECT_EQ(ds.records[0], (InteractionRecord{0, 0, 3, Role::train}));
  EXPECT_EQ(ds.num_users, 1u);
  EXPECT_EQ(ds.num_items, 1u);
  EXPECT_EQ(ds.num_behaviors, 4u);
  EXPECT_EQ(ds.item_ids, std::vector<std::uint64_t>{5});
}

TEST(Parse, DuplicatesCollapse) {
  const auto ds = parse("1\t2\tview\n1\t2\tview\n");
  EXPECT_EQ(ds.records.size(), 1u);
}

TEST(Parse, CommentsBlankLinesAndCarriageReturns) {
  const auto ds = parse("# header\n\n4\t9\tcart\r\n");
  ASSERT_EQ(ds.records.size(), 1u);
  EXPECT_EQ(ds.records[0].behavior, 1u);
}

TEST(Parse, MalformedLineNamesLine) {
  try {
    parse("0\t5\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    EXPECT_EQ(e.code(), ExitCode::input_error);
  }
  try {
    parse("0\t5\tview\nx\t5\tview\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse("-1\t5\tview\n"), ParseError);
  EXPECT_THROW(parse("1\t5\tview\textra\n"), ParseError);
}

TEST(Parse, UnknownBehaviorAndEmptyInput) {
  EXPECT_THROW(parse("0\t1\tclick\n"), UnknownBehaviorError);
  EXPECT_THROW(parse(""), EmptyDatasetError);
  EXPECT_THROW(parse("# only a comment\n"), EmptyDatasetError);
}

TEST(Parse, CompactionIsBijectiveProperty) {
  Gen gen(21);
  for (int c = 0; c < 100; ++c) {
    const std::string text = random_log(gen, gen.index(1, 20), gen.index(1, 20), gen.index(1, 60));
    const auto ds = parse(text);
    std::set<std::tuple<std::uint64_t, std::uint64_t, std::string>> original, recovered;
    std::istringstream in(text);
    std::uint64_t u, i;
    std::string b;
    while (in >> u >> i >> b) original.insert({u, i, b});
    for (const auto& r : ds.records) {
      ASSERT_LT(r.user, ds.num_users);
      ASSERT_LT(r.item, ds.num_items);
      ASSERT_LT(r.behavior, ds.num_behaviors);
      recovered.insert({ds.user_ids[r.user], ds.item_ids[r.item], ds.behavior_names[r.behavior]});
    }
    EXPECT_EQ(original, recovered);
    EXPECT_EQ(ds.records.size(), original.size());
    std::set<std::uint32_t> users, items;
    for (const auto& r : ds.records) {
      users.insert(r.user);
      items.insert(r.item);
    }
    EXPECT_EQ(users.size(), ds.num_users);
    EXPECT_EQ(items.size(), ds.num_items);
  }
}

namespace {

InteractionDataset purchases(const std::vector<std::size_t>& per_user) {
  std::ostringstream os;
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    for (std::size_t n = 0; n < per_user[u]; ++n) os << u << '\t' << n << "\tpurchase\n";
    os << u << '\t' << 0 << "\tview\n";
  }
  auto ds = parse(os.str());
  ds.target_behavior = 3;
  return ds;
}

}  // namespace

TEST(Split, FiveTargetRecordsHoldOutTwo) {
  const auto out = split(purchases({5}), {5, 2, 1});
  std::map<Role, int> roles;
  for (const auto& r : out.dataset.records)
    if (r.behavior == 3) ++roles[r.role];
  EXPECT_EQ(roles[Role::train], 3);
  EXPECT_EQ(roles[Role::valid], 1);
  EXPECT_EQ(roles[Role::test], 1);
  EXPECT_EQ(out.qualified_users, 1u);
}

TEST(Split, BelowThresholdStaysTrain) {
  const auto out = split(purchases({2}), {});
  EXPECT_TRUE(out.degenerate());
  EXPECT_EQ(out.dataset.count(Role::train), out.dataset.records.size());
}

TEST(Split, SameSeedSameRoles) {
  const auto ds = purchases({5, 9, 3, 12});
  EXPECT_EQ(split(ds, {5, 2, 42}).dataset, split(ds, {5, 2, 42}).dataset);
}

TEST(Split, RejectsBadSpec) {
  const auto ds = purchases({5});
  EXPECT_THROW(split(ds, {5, 1, 0}), ConfigError);
  EXPECT_THROW(split(ds, {2, 2, 0}), ConfigError);
  auto no_target = ds;
  no_target.target_behavior.reset();
  EXPECT_THROW(split(no_target, {}), ConfigError);
}

TEST(Split, PreservesRecordsAndHoldsOutTargetOnlyProperty) {
  Gen gen(22);
  for (int c = 0; c < 100; ++c) {
    std::vector<std::size_t> counts(gen.index(1, 10));
    for (auto& n : counts) n = gen.index(0, 12);
    counts[0] = std::max<std::size_t>(counts[0], 1);
    const auto ds = purchases(counts);
    const std::size_t threshold = gen.index(3, 8);
    const auto out = split(ds, {threshold, 2, gen.index(0, 1000)});

    auto strip = [](std::vector<InteractionRecord> v) {
      for (auto& r : v) r.role = Role::train;
      return v;
    };
    EXPECT_EQ(strip(out.dataset.records), ds.records);
    std::map<std::uint32_t, std::pair<int, int>> held;
    for (const auto& r : out.dataset.records) {
      if (r.role == Role::train) continue;
      EXPECT_EQ(r.behavior, 3u);
      (r.role == Role::valid ? held[r.user].first : held[r.user].second) += 1;
    }
    for (std::size_t u = 0; u < counts.size(); ++u) {
      const auto h = held[static_cast<std::uint32_t>(u)];
      const int expect = counts[u] >= threshold ? 1 : 0;
      EXPECT_EQ(h.first, expect);
      EXPECT_EQ(h.second, expect);
    }
  }
}

TEST(SplitRecords, RoundTripThroughTextAndManifest) {
  auto out = split(purchases({6, 7, 1}), {5, 2, 3}).dataset;
  std::ostringstream os;
  write_split_records(os, out);
  const auto meta = dataset_from_manifest(dataset_manifest(out));
  std::istringstream in(os.str());
  auto reloaded = meta;
  reloaded.records = parse_split_records(in, meta);
  EXPECT_EQ(reloaded, out);
}

TEST(Manifest, CountsAndSplitSizes) {
  const auto ds = split(purchases({5, 5}), {5, 2, 0}).dataset;
  const auto j = dataset_manifest(ds);
  EXPECT_EQ(j["M"], 2);
  EXPECT_EQ(j["N"], 5);
  EXPECT_EQ(j["K"], 4);
  EXPECT_EQ(j["target_behavior"], "purchase");
  EXPECT_EQ(j["counts"]["purchase"], 10);
  EXPECT_EQ(j["counts"]["view"], 2);
  EXPECT_EQ(j["split_sizes"]["valid"], 2);
  EXPECT_EQ(j["split_sizes"]["test"], 2);
  EXPECT_EQ(j["split_sizes"]["train"], 8);
  EXPECT_THROW(dataset_from_manifest(nlohmann::json::object()), StateError);
}

TEST(DropBehavior, ReindexesRemainingBehaviors) {
  const auto ds = purchases({3, 2});
  const auto out = drop_behavior(ds, "view");
  EXPECT_EQ(out.num_behaviors, 3u);
  EXPECT_EQ(out.behavior_names, (std::vector<std::string>{"cart", "favorite", "purchase"}));
  EXPECT_EQ(out.target_behavior, 2u);
  for (const auto& r : out.records) EXPECT_EQ(r.behavior, 2u);
  EXPECT_THROW(drop_behavior(ds, "purchase"), ConfigError);
  EXPECT_THROW(drop_behavior(ds, "click"), UnknownBehaviorError);
  auto single = parse("0\t0\tpurchase\n", {"purchase"});
  EXPECT_THROW(drop_behavior(single, "purchase"), ConfigError);
}
