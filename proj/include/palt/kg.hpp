#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "palt/adapter.hpp"
#include "palt/rng.hpp"

namespace palt {

enum class Slot { kHead, kRelation, kTail };
std::string_view slot_name(Slot slot);

enum class Split { kTrain, kDev, kTest };
std::string_view split_name(Split split);
/// "train", "dev" or "test"; throws std::invalid_argument otherwise.
Split parse_split(std::string_view name);

struct Fact {
  std::int64_t head = 0;
  std::int64_t relation = 0;
  std::int64_t tail = 0;
  /// Present in labeled (triplet classification) splits.
  std::optional<bool> label;

  bool operator==(const Fact&) const = default;
  /// Copy with `slot` replaced by `id`; the label is dropped.
  Fact with(Slot slot, std::int64_t id) const;
  std::int64_t at(Slot slot) const;
};

/// Dense id <-> string id <-> description.
struct Vocabulary {
  std::vector<std::string> ids;
  std::vector<std::string> texts;
  std::unordered_map<std::string, std::int64_t> index;

  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
  /// Appends; throws std::invalid_argument on a duplicate id.
  void add(std::string id, std::string text);
  std::optional<std::int64_t> find(std::string_view id) const;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Fact> train,
                 std::vector<Fact> dev, std::vector<Fact> test);

  /// Reads train.tsv, dev.tsv, test.tsv, entity2text.tsv and relation2text.tsv.
  /// Errors name the offending file and line.
  static KnowledgeGraph load(const std::filesystem::path& dir);

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  std::int64_t num_entities() const { return entities_.size(); }
  std::int64_t num_relations() const { return relations_.size(); }

  const std::vector<Fact>& split(Split s) const;
  const std::vector<Fact>& train() const { return train_; }
  const std::vector<Fact>& dev() const { return dev_; }
  const std::vector<Fact>& test() const { return test_; }

  /// Membership over the union of all splits (negative-labeled facts excluded).
  bool contains(std::int64_t h, std::int64_t r, std::int64_t t) const;
  bool contains(const Fact& f) const { return contains(f.head, f.relation, f.tail); }
  /// Membership over the train split only.
  bool in_train(std::int64_t h, std::int64_t r, std::int64_t t) const;
  bool in_train(const Fact& f) const { return in_train(f.head, f.relation, f.tail); }
  std::size_t membership_size() const { return all_.size(); }

  /// Known tails of (h, r, ?) and heads of (?, r, t) over all splits, ascending.
  const std::vector<std::int64_t>& tails_of(std::int64_t h, std::int64_t r) const;
  const std::vector<std::int64_t>& heads_of(std::int64_t r, std::int64_t t) const;

  std::string to_tsv_line(const Fact& f) const;
  /// "135 entities, 46 relations, 5216/652/661 train/dev/test facts"
  std::string summary() const;

 private:
  void index();
  std::uint64_t key(std::int64_t h, std::int64_t r, std::int64_t t) const;
  std::uint64_t pair_key(std::int64_t a, std::int64_t b) const;

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Fact> train_, dev_, test_;
  std::unordered_set<std::uint64_t> all_;
  std::unordered_set<std::uint64_t> train_set_;
  std::unordered_map<std::uint64_t, std::vector<std::int64_t>> tails_;
  std::unordered_map<std::uint64_t, std::vector<std::int64_t>> heads_;
};

/// Whitespace and punctuation tokenizer with reserved special and prompt ids.
///
/// Ids: [PAD]=0, [UNK]=1, [CLS]=2, [SEP]=3, then the sorted word list. Prompt
/// token i maps to size() + i, outside the text vocabulary.
class Tokenizer {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;
  static constexpr std::int64_t kCls = 2;
  static constexpr std::int64_t kSep = 3;

  Tokenizer() : Tokenizer(std::vector<std::string>{}) {}
  explicit Tokenizer(std::vector<std::string> words);
  /// Vocabulary from every entity and relation description.
  static Tokenizer from_kg(const KnowledgeGraph& kg);

  /// Lowercased pieces split at every non-alphanumeric ASCII character.
  static std::vector<std::string> split(std::string_view text);
  std::vector<std::int64_t> tokenize(std::string_view text) const;

  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
  std::int64_t prompt_id(int i) const { return size() + i; }
  bool is_prompt(std::int64_t id) const { return id >= size(); }
  const std::string& token(std::int64_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<std::int64_t> find(std::string_view word) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Human-readable rendering; prompt ids print as <pN>.
  std::string render(const std::vector<std::int64_t>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

struct ClozeInput {
  std::vector<std::int64_t> token_ids;
  std::vector<std::int64_t> segment_ids;
  std::vector<std::uint8_t> prompt_mask;
  Fact fact;

  std::size_t size() const { return token_ids.size(); }
};

/// "[CLS] head relation [SEP] tail [SEP]" with sentence A in segment 0.
/// Over-long inputs lose head tokens first, then tail tokens; relation tokens
/// are never dropped. `reserve` leaves room for prompts inserted later.
ClozeInput build_cloze(const Fact& fact, const KnowledgeGraph& kg, const Tokenizer& tok,
                       std::int64_t max_seq_len, int reserve = 0);

/// Lower-level form on already tokenized descriptions.
ClozeInput build_cloze(const Fact& fact, std::vector<std::int64_t> head,
                       const std::vector<std::int64_t>& relation,
                       std::vector<std::int64_t> tail, std::int64_t max_seq_len, int reserve = 0);

/// Inserts pattern.before_head prompts after [CLS], pattern.after_relation before
/// the first [SEP] and pattern.after_tail before the final [SEP]. Prompts are
/// numbered left to right and take the segment of the sentence they sit in.
ClozeInput insert_prompts(const ClozeInput& cloze, const PromptPattern& pattern,
                          const Tokenizer& tok, std::int64_t max_seq_len);

/// Caches tokenized descriptions and builds prompted clozes.
class ClozeBuilder {
 public:
  ClozeBuilder(const KnowledgeGraph& kg, const Tokenizer& tok, std::int64_t max_seq_len,
               PromptPattern pattern = {});

  ClozeInput build(const Fact& fact) const;
  const PromptPattern& pattern() const { return pattern_; }
  std::int64_t max_seq_len() const { return max_seq_len_; }
  /// Longest prompted cloze over every (head, relation, tail) description combination.
  std::int64_t longest() const;

 private:
  const Tokenizer* tok_;
  std::int64_t max_seq_len_;
  PromptPattern pattern_;
  std::vector<std::vector<std::int64_t>> entity_tokens_;
  std::vector<std::vector<std::int64_t>> relation_tokens_;
};

/// `n` corruptions of `slot`, each rejected and redrawn while it is a train
/// fact. Gives up after 100 * n draws and returns what it has, with a warning.
std::vector<Fact> sample_negatives(const Fact& fact, Slot slot, int n, const KnowledgeGraph& kg,
                                   Rng& rng);

}  // namespace palt
