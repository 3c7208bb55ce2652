#include "palt/kg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "palt/log.hpp"

namespace palt {
namespace {

const std::vector<std::int64_t> kNoIds;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  auto in = open(path);
  Vocabulary v;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    line = strip_cr(line);
    if (blank(line)) continue;
    const auto fields = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 2 || fields[0].empty()) {
      throw std::runtime_error(where + ": expected 'id<TAB>description', got " +
                               std::to_string(fields.size()) + " field(s)");
    }
    try {
      v.add(fields[0], fields[1]);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  return v;
}

std::vector<Fact> read_facts(const std::filesystem::path& path, const Vocabulary& entities,
                             const Vocabulary& relations) {
  auto in = open(path);
  std::vector<Fact> facts;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    line = strip_cr(line);
    if (blank(line)) continue;
    const auto fields = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 3 && fields.size() != 4) {
      throw std::runtime_error(where + ": expected 3 or 4 tab-separated fields, got " +
                               std::to_string(fields.size()));
    }
    auto lookup = [&](const Vocabulary& v, const std::string& id, const char* what) {
      const auto found = v.find(id);
      if (!found) throw std::runtime_error(where + ": unknown " + what + " '" + id + "'");
      return *found;
    };
    Fact f;
    f.head = lookup(entities, fields[0], "entity");
    f.relation = lookup(relations, fields[1], "relation");
    f.tail = lookup(entities, fields[2], "entity");
    if (fields.size() == 4) {
      if (fields[3] == "1") {
        f.label = true;
      } else if (fields[3] == "0") {
        f.label = false;
      } else {
        throw std::runtime_error(where + ": label must be 0 or 1, got '" + fields[3] + "'");
      }
    }
    facts.push_back(f);
  }
  return facts;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::string_view slot_name(Slot slot) {
  switch (slot) {
    case Slot::kHead: return "head";
    case Slot::kRelation: return "relation";
    case Slot::kTail: return "tail";
  }
  return "unknown";
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, dev or test)");
}

Fact Fact::with(Slot slot, std::int64_t id) const {
  Fact f{head, relation, tail, std::nullopt};
  switch (slot) {
    case Slot::kHead: f.head = id; break;
    case Slot::kRelation: f.relation = id; break;
    case Slot::kTail: f.tail = id; break;
  }
  return f;
}

std::int64_t Fact::at(Slot slot) const {
  switch (slot) {
    case Slot::kHead: return head;
    case Slot::kRelation: return relation;
    case Slot::kTail: return tail;
  }
  return -1;
}

void Vocabulary::add(std::string id, std::string text) {
  if (index.count(id) != 0) throw std::invalid_argument("duplicate id '" + id + "'");
  index.emplace(id, size());
  ids.push_back(std::move(id));
  texts.push_back(std::move(text));
}

std::optional<std::int64_t> Vocabulary::find(std::string_view id) const {
  const auto it = index.find(std::string(id));
  if (it == index.end()) return std::nullopt;
  return it->second;
}

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Fact> train,
                               std::vector<Fact> dev, std::vector<Fact> test)
    : entities_(std::move(entities)),
      relations_(std::move(relations)),
      train_(std::move(train)),
      dev_(std::move(dev)),
      test_(std::move(test)) {
  for (const auto* split : {&train_, &dev_, &test_}) {
    for (const auto& f : *split) {
      if (f.head < 0 || f.head >= num_entities() || f.tail < 0 || f.tail >= num_entities() ||
          f.relation < 0 || f.relation >= num_relations()) {
        throw std::out_of_range("fact (" + std::to_string(f.head) + ", " +
                                std::to_string(f.relation) + ", " + std::to_string(f.tail) +
                                ") has ids outside the vocabularies");
      }
    }
  }
  index();
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("dataset directory not found: " + dir.string());
  }
  Vocabulary entities = read_vocabulary(dir / "entity2text.tsv");
  Vocabulary relations = read_vocabulary(dir / "relation2text.tsv");
  auto train = read_facts(dir / "train.tsv", entities, relations);
  auto dev = read_facts(dir / "dev.tsv", entities, relations);
  auto test = read_facts(dir / "test.tsv", entities, relations);
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(train),
                        std::move(dev), std::move(test));
}

std::uint64_t KnowledgeGraph::key(std::int64_t h, std::int64_t r, std::int64_t t) const {
  const auto e = static_cast<std::uint64_t>(num_entities());
  const auto nr = static_cast<std::uint64_t>(num_relations());
  return (static_cast<std::uint64_t>(h) * nr + static_cast<std::uint64_t>(r)) * e +
         static_cast<std::uint64_t>(t);
}

std::uint64_t KnowledgeGraph::pair_key(std::int64_t a, std::int64_t b) const {
  const auto width = static_cast<std::uint64_t>(std::max(num_entities(), num_relations()));
  return static_cast<std::uint64_t>(a) * width + static_cast<std::uint64_t>(b);
}

void KnowledgeGraph::index() {
  all_.clear();
  train_set_.clear();
  tails_.clear();
  heads_.clear();
  for (const auto* split : {&train_, &dev_, &test_}) {
    for (const auto& f : *split) {
      if (f.label.has_value() && !*f.label) continue;
      if (!all_.insert(key(f.head, f.relation, f.tail)).second) continue;
      tails_[pair_key(f.head, f.relation)].push_back(f.tail);
      heads_[pair_key(f.relation, f.tail)].push_back(f.head);
    }
  }
  for (const auto& f : train_) {
    if (f.label.has_value() && !*f.label) continue;
    train_set_.insert(key(f.head, f.relation, f.tail));
  }
  for (auto& [k, v] : tails_) std::sort(v.begin(), v.end());
  for (auto& [k, v] : heads_) std::sort(v.begin(), v.end());
}

const std::vector<Fact>& KnowledgeGraph::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train_;
    case Split::kDev: return dev_;
    case Split::kTest: return test_;
  }
  return train_;
}

bool KnowledgeGraph::contains(std::int64_t h, std::int64_t r, std::int64_t t) const {
  return all_.count(key(h, r, t)) != 0;
}

bool KnowledgeGraph::in_train(std::int64_t h, std::int64_t r, std::int64_t t) const {
  return train_set_.count(key(h, r, t)) != 0;
}

const std::vector<std::int64_t>& KnowledgeGraph::tails_of(std::int64_t h, std::int64_t r) const {
  const auto it = tails_.find(pair_key(h, r));
  return it == tails_.end() ? kNoIds : it->second;
}

const std::vector<std::int64_t>& KnowledgeGraph::heads_of(std::int64_t r, std::int64_t t) const {
  const auto it = heads_.find(pair_key(r, t));
  return it == heads_.end() ? kNoIds : it->second;
}

std::string KnowledgeGraph::to_tsv_line(const Fact& f) const {
  std::string line = entities_.ids.at(f.head) + "\t" + relations_.ids.at(f.relation) + "\t" +
                     entities_.ids.at(f.tail);
  if (f.label.has_value()) line += *f.label ? "\t1" : "\t0";
  return line;
}

std::string KnowledgeGraph::summary() const {
  std::ostringstream os;
  os << num_entities() << " entities, " << num_relations() << " relations, " << train_.size()
     << "/" << dev_.size() << "/" << test_.size() << " train/dev/test facts";
  return os.str();
}

Tokenizer::Tokenizer(std::vector<std::string> words) {
  tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  for (auto& w : words) {
    if (w.empty() || std::find(tokens_.begin(), tokens_.begin() + 4, w) != tokens_.begin() + 4) {
      continue;
    }
    tokens_.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace(tokens_[i], static_cast<std::int64_t>(i));
  }
}

Tokenizer Tokenizer::from_kg(const KnowledgeGraph& kg) {
  std::set<std::string> words;
  for (const auto* v : {&kg.entities(), &kg.relations()}) {
    for (const auto& text : v->texts) {
      for (auto& w : split(text)) words.insert(std::move(w));
    }
  }
  return Tokenizer(std::vector<std::string>(words.begin(), words.end()));
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<std::int64_t> Tokenizer::tokenize(std::string_view text) const {
  std::vector<std::int64_t> ids;
  for (const auto& w : split(text)) {
    const auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

std::optional<std::int64_t> Tokenizer::find(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Tokenizer::render(const std::vector<std::int64_t>& ids) const {
  std::string out;
  for (const auto id : ids) {
    if (!out.empty()) out += ' ';
    if (is_prompt(id)) {
      out += "<p" + std::to_string(id - size()) + ">";
    } else {
      out += token(id);
    }
  }
  return out;
}

ClozeInput build_cloze(const Fact& fact, std::vector<std::int64_t> head,
                       const std::vector<std::int64_t>& relation, std::vector<std::int64_t> tail,
                       std::int64_t max_seq_len, int reserve) {
  if (relation.empty()) {
    throw std::invalid_argument("cloze: relation " + std::to_string(fact.relation) +
                                " has an empty description");
  }
  if (tail.empty()) {
    throw std::invalid_argument("cloze: tail entity " + std::to_string(fact.tail) +
                                " has an empty description");
  }
  const auto budget = max_seq_len - 3 - reserve;
  const auto r = static_cast<std::int64_t>(relation.size());
  auto h = static_cast<std::int64_t>(head.size());
  auto t = static_cast<std::int64_t>(tail.size());
  if (h + r + t > budget) {
    const auto keep_head = std::max<std::int64_t>(std::min<std::int64_t>(h, 1), budget - r - t);
    h = std::min(h, keep_head);
    head.resize(static_cast<std::size_t>(h));
  }
  if (h + r + t > budget) {
    t = std::max<std::int64_t>(budget - h - r, 0);
    tail.resize(static_cast<std::size_t>(t));
  }
  if (tail.empty() || h + r + t > budget) {
    throw std::length_error("cloze: relation of " + std::to_string(r) +
                            " tokens leaves no room within max_seq_len " +
                            std::to_string(max_seq_len) + " (" + std::to_string(reserve) +
                            " reserved for prompts)");
  }
  ClozeInput c;
  c.fact = fact;
  c.token_ids.push_back(Tokenizer::kCls);
  c.token_ids.insert(c.token_ids.end(), head.begin(), head.end());
  c.token_ids.insert(c.token_ids.end(), relation.begin(), relation.end());
  c.token_ids.push_back(Tokenizer::kSep);
  const std::size_t first_b = c.token_ids.size();
  c.token_ids.insert(c.token_ids.end(), tail.begin(), tail.end());
  c.token_ids.push_back(Tokenizer::kSep);
  c.segment_ids.assign(c.token_ids.size(), 0);
  std::fill(c.segment_ids.begin() + static_cast<std::ptrdiff_t>(first_b), c.segment_ids.end(), 1);
  c.prompt_mask.assign(c.token_ids.size(), 0);
  return c;
}

ClozeInput build_cloze(const Fact& fact, const KnowledgeGraph& kg, const Tokenizer& tok,
                       std::int64_t max_seq_len, int reserve) {
  return build_cloze(fact, tok.tokenize(kg.entities().texts.at(fact.head)),
                     tok.tokenize(kg.relations().texts.at(fact.relation)),
                     tok.tokenize(kg.entities().texts.at(fact.tail)), max_seq_len, reserve);
}

ClozeInput insert_prompts(const ClozeInput& cloze, const PromptPattern& pattern,
                          const Tokenizer& tok, std::int64_t max_seq_len) {
  if (pattern.before_head < 0 || pattern.after_relation < 0 || pattern.after_tail < 0) {
    throw std::invalid_argument("prompt pattern " + pattern.to_string() + " has negative counts");
  }
  const auto& ids = cloze.token_ids;
  std::vector<std::size_t> seps;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == Tokenizer::kSep) seps.push_back(i);
  }
  if (ids.empty() || ids.front() != Tokenizer::kCls || seps.size() != 2 ||
      seps.back() != ids.size() - 1) {
    throw std::invalid_argument("insert_prompts: cloze is not [CLS] ... [SEP] ... [SEP]: " +
                                tok.render(ids));
  }
  const auto new_len = static_cast<std::int64_t>(ids.size()) + pattern.total();
  if (new_len > max_seq_len) {
    throw std::length_error("insert_prompts: prompted length " + std::to_string(new_len) +
                            " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  ClozeInput out;
  out.fact = cloze.fact;
  int next = 0;
  auto copy = [&](std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i) {
      out.token_ids.push_back(ids[i]);
      out.segment_ids.push_back(cloze.segment_ids[i]);
      out.prompt_mask.push_back(cloze.prompt_mask[i]);
    }
  };
  auto prompts = [&](int count, std::int64_t segment) {
    for (int i = 0; i < count; ++i) {
      out.token_ids.push_back(tok.prompt_id(next++));
      out.segment_ids.push_back(segment);
      out.prompt_mask.push_back(1);
    }
  };
  copy(0, 1);
  prompts(pattern.before_head, 0);
  copy(1, seps[0]);
  prompts(pattern.after_relation, 0);
  copy(seps[0], seps[1]);
  prompts(pattern.after_tail, 1);
  copy(seps[1], ids.size());
  return out;
}

ClozeBuilder::ClozeBuilder(const KnowledgeGraph& kg, const Tokenizer& tok,
                           std::int64_t max_seq_len, PromptPattern pattern)
    : tok_(&tok), max_seq_len_(max_seq_len), pattern_(pattern) {
  for (const auto& text : kg.entities().texts) entity_tokens_.push_back(tok.tokenize(text));
  for (const auto& text : kg.relations().texts) relation_tokens_.push_back(tok.tokenize(text));
}

ClozeInput ClozeBuilder::build(const Fact& fact) const {
  const ClozeInput plain =
      build_cloze(fact, entity_tokens_.at(fact.head), relation_tokens_.at(fact.relation),
                  entity_tokens_.at(fact.tail), max_seq_len_, pattern_.total());
  if (pattern_.total() == 0) return plain;
  return insert_prompts(plain, pattern_, *tok_, max_seq_len_);
}

std::int64_t ClozeBuilder::longest() const {
  std::size_t e = 0;
  std::size_t r = 0;
  for (const auto& t : entity_tokens_) e = std::max(e, t.size());
  for (const auto& t : relation_tokens_) r = std::max(r, t.size());
  return static_cast<std::int64_t>(2 * e + r + 3) + pattern_.total();
}

std::vector<Fact> sample_negatives(const Fact& fact, Slot slot, int n, const KnowledgeGraph& kg,
                                   Rng& rng) {
  if (n < 0) throw std::invalid_argument("sample_negatives: n must be >= 0");
  const std::int64_t pool =
      slot == Slot::kRelation ? kg.num_relations() : kg.num_entities();
  const std::int64_t current = fact.at(slot);
  if (pool - 1 <= 0) {
    throw std::invalid_argument("sample_negatives: no candidate " + std::string(slot_name(slot)) +
                                " other than the original (pool size " + std::to_string(pool) +
                                ")");
  }
  std::vector<Fact> out;
  if (n == 0) return out;
  const long max_attempts = 100L * n;
  long attempts = 0;
  while (static_cast<int>(out.size()) < n && attempts < max_attempts) {
    ++attempts;
    auto id = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(pool - 1)));
    if (id >= current) ++id;
    const Fact neg = fact.with(slot, id);
    if (kg.in_train(neg)) continue;
    out.push_back(neg);
  }
  if (static_cast<int>(out.size()) < n) {
    log_warning("sample_negatives: only " + std::to_string(out.size()) + " of " +
                std::to_string(n) + " " + std::string(slot_name(slot)) +
                " negatives found for fact (" + std::to_string(fact.head) + ", " +
                std::to_string(fact.relation) + ", " + std::to_string(fact.tail) + ") after " +
                std::to_string(attempts) + " draws");
  }
  return out;
}

}  // namespace palt
