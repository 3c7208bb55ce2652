#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "palt/kg.hpp"
#include "palt/log.hpp"
#include "test_support.hpp"

namespace palt {
namespace {

using ::testing::HasSubstr;
using testing::data_dir;
using testing::fresh_dir;
using testing::make_kg;
using testing::write_file;

std::vector<std::string> words_of(const Tokenizer& tok, const std::vector<std::int64_t>& ids) {
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(tok.token(id));
  return out;
}

std::filesystem::path tiny_dataset(const std::string& train, const std::string& dev = "",
                                   const std::string& test = "a\tr\tb\n") {
  const auto dir = fresh_dir("kg");
  write_file(dir / "entity2text.tsv", "a\talpha\nb\tbeta\nc\tgamma\n");
  write_file(dir / "relation2text.tsv", "r\trelated to\n");
  write_file(dir / "train.tsv", train);
  write_file(dir / "dev.tsv", dev);
  write_file(dir / "test.tsv", test);
  return dir;
}

TEST(Load, UmlsCounts) {
  const auto kg = KnowledgeGraph::load(data_dir() / "umls");
  EXPECT_EQ(kg.num_entities(), 135);
  EXPECT_EQ(kg.num_relations(), 46);
  EXPECT_EQ(kg.train().size(), 5216u);
  EXPECT_EQ(kg.dev().size(), 652u);
  EXPECT_EQ(kg.test().size(), 661u);
  EXPECT_EQ(kg.summary(), "135 entities, 46 relations, 5216/652/661 train/dev/test facts");
}

TEST(Load, EmptyDevFileIsValid) {
  const auto kg = KnowledgeGraph::load(tiny_dataset("a\tr\tc\n"));
  EXPECT_TRUE(kg.dev().empty());
  EXPECT_EQ(kg.train().size(), 1u);
}

TEST(Load, TwoFieldLineNamesFileAndLine) {
  const auto dir = tiny_dataset("a\tr\tc\nb\tr\n");
  try {
    KnowledgeGraph::load(dir);
    FAIL() << "expected a parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_THAT(e.what(), HasSubstr("train.tsv:2"));
  }
}

TEST(Load, RejectsUnknownIdsDuplicatesAndMissingFiles) {
  EXPECT_THROW(KnowledgeGraph::load(tiny_dataset("a\tr\tzzz\n")), std::runtime_error);
  EXPECT_THROW(KnowledgeGraph::load(tiny_dataset("a\tr\tc\t2\n")), std::runtime_error);
  const auto dup = tiny_dataset("a\tr\tc\n");
  write_file(dup / "entity2text.tsv", "a\talpha\na\tagain\nb\tbeta\nc\tgamma\n");
  try {
    KnowledgeGraph::load(dup);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_THAT(e.what(), HasSubstr("entity2text.tsv:2"));
  }
  const auto missing = tiny_dataset("a\tr\tc\n");
  std::filesystem::remove(missing / "test.tsv");
  try {
    KnowledgeGraph::load(missing);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_THAT(e.what(), HasSubstr("test.tsv"));
  }
  EXPECT_THROW(KnowledgeGraph::load("/nonexistent/palt"), std::runtime_error);
}

TEST(Load, LabeledSplitsAndMembershipExcludeNegatives) {
  const auto kg = KnowledgeGraph::load(tiny_dataset("a\tr\tc\n", "a\tr\ta\t0\nb\tr\tb\t1\n",
                                                    "a\tr\tb\t1\nc\tr\tc\t0\n"));
  ASSERT_TRUE(kg.dev()[0].label.has_value());
  EXPECT_FALSE(*kg.dev()[0].label);
  EXPECT_TRUE(kg.contains(*kg.entities().find("b"), 0, *kg.entities().find("b")));
  EXPECT_FALSE(kg.contains(*kg.entities().find("a"), 0, *kg.entities().find("a")));
  EXPECT_FALSE(kg.contains(*kg.entities().find("c"), 0, *kg.entities().find("c")));
}

TEST(Load, EveryFactRoundTripsToItsLine) {
  for (const char* name : {"umls", "umls_tc"}) {
    const auto dir = data_dir() / name;
    const auto kg = KnowledgeGraph::load(dir);
    for (auto split : {Split::kTrain, Split::kDev, Split::kTest}) {
      std::ifstream in(dir / (std::string(split_name(split)) + ".tsv"));
      std::string line;
      std::size_t i = 0;
      while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ASSERT_LT(i, kg.split(split).size());
        EXPECT_EQ(kg.to_tsv_line(kg.split(split)[i]), line) << name << " " << split_name(split);
        ++i;
      }
      EXPECT_EQ(i, kg.split(split).size());
    }
  }
}

TEST(Load, MembershipIsExactlyTheUnionAndAdjacencyAgrees) {
  const auto kg = KnowledgeGraph::load(data_dir() / "umls");
  std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> all;
  for (auto split : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& f : kg.split(split)) all.insert({f.head, f.relation, f.tail});
  }
  EXPECT_EQ(kg.membership_size(), all.size());
  std::size_t members = 0, tails = 0, heads = 0;
  for (std::int64_t h = 0; h < kg.num_entities(); ++h) {
    for (std::int64_t r = 0; r < kg.num_relations(); ++r) {
      for (std::int64_t t = 0; t < kg.num_entities(); ++t) {
        const bool in = all.count({h, r, t}) != 0;
        EXPECT_EQ(kg.contains(h, r, t), in);
        members += in ? 1 : 0;
      }
      tails += kg.tails_of(h, r).size();
      heads += kg.heads_of(r, h).size();
      for (auto t : kg.tails_of(h, r)) EXPECT_TRUE(all.count({h, r, t}));
      for (auto x : kg.heads_of(r, h)) EXPECT_TRUE(all.count({x, r, h}));
    }
  }
  EXPECT_EQ(members, all.size());
  EXPECT_EQ(tails, all.size());
  EXPECT_EQ(heads, all.size());
}

TEST(Tokenize, Examples) {
  const Tokenizer tok({"clothes", "evening", "of", "type", "x"});
  EXPECT_EQ(words_of(tok, tok.tokenize("Evening Clothes")),
            (std::vector<std::string>{"evening", "clothes"}));
  EXPECT_TRUE(tok.tokenize("").empty());
  EXPECT_EQ(words_of(tok, tok.tokenize("type_of-x")),
            (std::vector<std::string>{"type", "of", "x"}));
  EXPECT_EQ(tok.tokenize("unknown"), (std::vector<std::int64_t>{Tokenizer::kUnk}));
}

TEST(Tokenize, NeverProducesReservedIds) {
  const auto kg = KnowledgeGraph::load(data_dir() / "umls");
  const auto tok = Tokenizer::from_kg(kg);
  for (const auto* v : {&kg.entities(), &kg.relations()}) {
    for (const auto& text : v->texts) {
      for (auto id : tok.tokenize(text)) {
        EXPECT_GT(id, Tokenizer::kSep);
        EXPECT_FALSE(tok.is_prompt(id));
      }
    }
  }
  // "[CLS]" typed as text is just the word "cls"
  for (auto id : tok.tokenize("[CLS] [SEP] [PAD]")) EXPECT_EQ(id, Tokenizer::kUnk);
}

KnowledgeGraph chaplin_kg(const std::string& relation_text = "is a") {
  return make_kg({{"chaplin", "Chaplin"}, {"screenwriter", "screenwriter"}},
                 {{"profession", relation_text}}, {{"chaplin", "profession", "screenwriter"}});
}

TEST(Cloze, ChaplinExample) {
  const auto kg = chaplin_kg();
  const auto tok = Tokenizer::from_kg(kg);
  const auto c = build_cloze(kg.train()[0], kg, tok, 64);
  EXPECT_EQ(tok.render(c.token_ids), "[CLS] chaplin is a [SEP] screenwriter [SEP]");
  EXPECT_EQ(c.segment_ids, (std::vector<std::int64_t>{0, 0, 0, 0, 0, 1, 1}));
}

TEST(Cloze, EmptyRelationDescriptionThrows) {
  const auto kg = chaplin_kg("");
  const auto tok = Tokenizer::from_kg(kg);
  EXPECT_THROW(build_cloze(kg.train()[0], kg, tok, 64), std::invalid_argument);
}

TEST(Cloze, LongHeadTruncatedFromTheRight) {
  std::vector<std::int64_t> head(100);
  for (int i = 0; i < 100; ++i) head[i] = 10 + i;
  const std::vector<std::int64_t> relation = {200, 201}, tail = {300, 301, 302};
  const auto c = build_cloze({}, head, relation, tail, 64);
  ASSERT_EQ(c.size(), 64u);
  // 64 = [CLS] + head + relation + [SEP] + tail + [SEP]
  const std::size_t kept = 64 - 3 - relation.size() - tail.size();
  EXPECT_TRUE(std::equal(head.begin(), head.begin() + kept, c.token_ids.begin() + 1));
  EXPECT_EQ(c.token_ids[1 + kept], 200);
  EXPECT_TRUE(std::equal(tail.begin(), tail.end(), c.token_ids.end() - 4));
}

TEST(Cloze, TailTruncatedOnlyAfterHeadIsDown) {
  const std::vector<std::int64_t> head = {10, 11}, relation = {20}, tail(20, 30);
  const auto c = build_cloze({}, head, relation, tail, 10);
  // head keeps one token, tail gets the rest
  EXPECT_EQ(c.size(), 10u);
  EXPECT_EQ(c.token_ids[1], 10);
  EXPECT_EQ(c.token_ids[2], 20);
  EXPECT_EQ(c.token_ids[3], Tokenizer::kSep);
  EXPECT_THROW(build_cloze({}, head, std::vector<std::int64_t>(8, 20), tail, 10),
               std::length_error);
}

TEST(Prompts, ZeroPatternLeavesClozeUnchanged) {
  const auto kg = chaplin_kg();
  const auto tok = Tokenizer::from_kg(kg);
  const auto c = build_cloze(kg.train()[0], kg, tok, 64);
  const auto p = insert_prompts(c, {0, 0, 0}, tok, 64);
  EXPECT_EQ(p.token_ids, c.token_ids);
  EXPECT_EQ(p.segment_ids, c.segment_ids);
}

TEST(Prompts, TwoBeforeHead) {
  const auto kg = chaplin_kg();
  const auto tok = Tokenizer::from_kg(kg);
  const auto p = insert_prompts(build_cloze(kg.train()[0], kg, tok, 64), {2, 0, 0}, tok, 64);
  EXPECT_EQ(tok.render(p.token_ids), "[CLS] <p0> <p1> chaplin is a [SEP] screenwriter [SEP]");
  EXPECT_EQ(p.prompt_mask, (std::vector<std::uint8_t>{0, 1, 1, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(p.segment_ids, (std::vector<std::int64_t>{0, 0, 0, 0, 0, 0, 0, 1, 1}));
}

TEST(Prompts, OneAtEachPosition) {
  const auto kg = chaplin_kg();
  const auto tok = Tokenizer::from_kg(kg);
  const auto c = build_cloze(kg.train()[0], kg, tok, 64);
  ASSERT_EQ(c.size(), 7u);
  const auto p = insert_prompts(c, {1, 1, 1}, tok, 64);
  ASSERT_EQ(p.size(), 10u);
  EXPECT_EQ(tok.render(p.token_ids),
            "[CLS] <p0> chaplin is a <p1> [SEP] screenwriter <p2> [SEP]");
  EXPECT_EQ(p.segment_ids, (std::vector<std::int64_t>{0, 0, 0, 0, 0, 0, 0, 1, 1, 1}));
  EXPECT_THROW(insert_prompts(c, {1, 1, 1}, tok, 9), std::length_error);
}

TEST(Cloze, WellFormedForEveryUmlsFact) {
  const auto kg = KnowledgeGraph::load(data_dir() / "umls");
  const auto tok = Tokenizer::from_kg(kg);
  const ClozeBuilder builder(kg, tok, 32, {2, 0, 0});
  for (auto split : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const auto& f : kg.split(split)) {
      const auto c = builder.build(f);
      ASSERT_LE(static_cast<std::int64_t>(c.size()), 32);
      EXPECT_EQ(c.token_ids[0], Tokenizer::kCls);
      EXPECT_EQ(std::count(c.token_ids.begin(), c.token_ids.end(), Tokenizer::kCls), 1);
      EXPECT_EQ(std::count(c.token_ids.begin(), c.token_ids.end(), Tokenizer::kSep), 2);
      EXPECT_EQ(c.token_ids.back(), Tokenizer::kSep);
      EXPECT_TRUE(std::is_sorted(c.segment_ids.begin(), c.segment_ids.end()));
      EXPECT_EQ(c.segment_ids.front(), 0);
      EXPECT_EQ(c.segment_ids.back(), 1);
    }
  }
  EXPECT_EQ(builder.longest(), 20);
}

TEST(Negatives, ZeroRequestedIsEmpty) {
  const auto kg = chaplin_kg();
  Rng rng(1);
  EXPECT_TRUE(sample_negatives(kg.train()[0], Slot::kHead, 0, kg, rng).empty());
}

TEST(Negatives, OnlyUnlistedCorruptionReturned) {
  const auto kg = make_kg({{"A", "a"}, {"B", "b"}, {"C", "c"}}, {{"r", "r"}},
                          {{"A", "r", "B"}, {"C", "r", "B"}});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto neg = sample_negatives(kg.train()[0], Slot::kHead, 1, kg, rng);
    ASSERT_EQ(neg.size(), 1u);
    EXPECT_EQ(kg.entities().ids[neg[0].head], "B");
    EXPECT_EQ(neg[0].relation, 0);
    EXPECT_EQ(kg.entities().ids[neg[0].tail], "B");
  }
}

TEST(Negatives, SingleRelationPoolThrows) {
  const auto kg = chaplin_kg();
  Rng rng(2);
  EXPECT_THROW(sample_negatives(kg.train()[0], Slot::kRelation, 1, kg, rng), std::invalid_argument);
}

TEST(Negatives, ExhaustedPoolWarnsAndReturnsFewer) {
  set_warnings_quiet(true);
  const auto kg = make_kg({{"A", "a"}, {"B", "b"}}, {{"r", "r"}}, {{"A", "r", "B"}, {"B", "r", "B"}});
  Rng rng(3);
  const auto before = warning_count();
  EXPECT_TRUE(sample_negatives(kg.train()[0], Slot::kHead, 2, kg, rng).empty());
  EXPECT_EQ(warning_count(), before + 1);
  set_warnings_quiet(false);
}

TEST(Negatives, TenThousandDrawsAreValid) {
  // random KG: 40 entities, 5 relations, 600 train facts
  Rng build(4);
  std::vector<std::pair<std::string, std::string>> ents, rels;
  for (int i = 0; i < 40; ++i) ents.push_back({"e" + std::to_string(i), "entity " + std::to_string(i)});
  for (int i = 0; i < 5; ++i) rels.push_back({"r" + std::to_string(i), "rel " + std::to_string(i)});
  std::set<std::vector<std::string>> facts;
  while (facts.size() < 600) {
    facts.insert({"e" + std::to_string(build.uniform_int(40)), "r" + std::to_string(build.uniform_int(5)),
                  "e" + std::to_string(build.uniform_int(40))});
  }
  const auto kg = make_kg(ents, rels, {facts.begin(), facts.end()});
  Rng rng(5);
  int drawn = 0;
  while (drawn < 10000) {
    const auto& f = kg.train()[static_cast<std::size_t>(rng.uniform_int(600))];
    const Slot slot = static_cast<Slot>(rng.uniform_int(3));
    for (const auto& n : sample_negatives(f, slot, 5, kg, rng)) {
      EXPECT_FALSE(kg.in_train(n));
      EXPECT_NE(n.at(slot), f.at(slot));
      for (auto other : {Slot::kHead, Slot::kRelation, Slot::kTail}) {
        if (other != slot) {
          EXPECT_EQ(n.at(other), f.at(other));
        }
      }
      ++drawn;
    }
  }
}

}  // namespace
}  // namespace palt
