#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "dmc/datagen.hpp"
#include "dmc/error.hpp"

using namespace dmc;
namespace fs = std::filesystem;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected dmc::Error");
  return ErrorKind::NumericalFailure;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("dmc_test_datagen_" + name); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Decodes a sentence back to its concept multiset via the inverse surface map.
std::multiset<ConceptId> decode(const ConceptLexicon& lex, Language lang, const TokenSequence& s) {
  const auto& surface = lang == Language::A ? lex.surface_a : lex.surface_b;
  std::map<TokenId, ConceptId> inverse;
  for (ConceptId c = 0; c < surface.size(); ++c) inverse[surface[c]] = c;
  std::multiset<ConceptId> out;
  for (TokenId t : s) {
    auto it = inverse.find(t);
    if (it != inverse.end()) out.insert(it->second);
  }
  return out;
}

const ConceptLexicon& lexicon() {
  static const ConceptLexicon lex = ConceptLexicon::make(120, 15, 5);
  return lex;
}

}  // namespace

TEST_CASE("lexicon is a pair of bijections with disjoint function tokens") {
  const auto& lex = lexicon();
  for (const auto* surf : {&lex.surface_a, &lex.surface_b}) {
    CHECK(surf->size() == 120);
    CHECK(std::set<TokenId>(surf->begin(), surf->end()).size() == 120);
  }
  std::set<TokenId> concept_a(lex.surface_a.begin(), lex.surface_a.end());
  for (TokenId f : lex.function_a) CHECK(concept_a.count(f) == 0);
  CHECK(lex.function_a.size() == 15);
  CHECK(lex.vocab_size(Language::A) == 135);
  CHECK(lex.vocab_size(Language::B) == 135);
  CHECK(lex.surface_a != lex.surface_b);
  CHECK(ConceptLexicon::make(120, 15, 5) == lex);

  const auto path = temp_path("lex.json");
  save_lexicon_json(lex, path);
  CHECK(load_lexicon_json(path) == lex);
  fs::remove(path);
}

TEST_CASE("word order permutations") {
  CHECK(word_order_permutation(WordOrder::Identity, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK(word_order_permutation(WordOrder::Reverse, 3) == std::vector<std::size_t>{2, 1, 0});
  const auto rot = word_order_permutation(WordOrder::RotateHalf, 4);
  CHECK(std::set<std::size_t>(rot.begin(), rot.end()).size() == 4);
  CHECK(parse_word_order("reverse") == WordOrder::Reverse);
  CHECK(kind_of([] { parse_word_order("sideways"); }) == ErrorKind::ConfigInvalid);
}

TEST_CASE("parallel corpus construction") {
  const auto& lex = lexicon();
  const ParallelCorpusSpec spec{300, 50, 50, {3, 10, 0.2}};
  const auto c = gen_parallel_corpus(lex, spec, 7);
  CHECK(c == gen_parallel_corpus(lex, spec, 7));
  CHECK_FALSE(c == gen_parallel_corpus(lex, spec, 8));
  CHECK(c.pairs.size() == 400);
  CHECK(c.indices(Split::Train).size() == 300);
  CHECK(c.side(Language::B, Split::Test).size() == 50);
  CHECK(c.vocab_size_a == lex.vocab_size(Language::A));

  std::set<ConceptSet> seen;
  for (const auto& p : c.pairs) {
    const std::multiset<ConceptId> truth(p.concepts.begin(), p.concepts.end());
    CHECK(decode(lex, Language::A, p.a) == truth);
    CHECK(decode(lex, Language::B, p.b) == truth);
    CHECK(p.concepts.size() >= 3);
    CHECK(p.concepts.size() <= 10);
    // concept sets never repeat, so splits cannot share a sentence meaning
    CHECK(seen.insert(concept_set(p.concepts)).second);
  }
}

TEST_CASE("noise-free identity rendering keeps lengths equal") {
  const auto lex = ConceptLexicon::make(120, 15, 5, WordOrder::Identity, WordOrder::Identity);
  const auto c = gen_parallel_corpus(lex, {100, 10, 10, {3, 10, 0.0}}, 3);
  for (const auto& p : c.pairs) {
    CHECK(p.a.size() == p.b.size());
    for (std::size_t i = 0; i < p.a.size(); ++i) CHECK(p.a[i] == lex.surface_a[p.concepts[i]]);
  }
  const auto rev = ConceptLexicon::make(120, 15, 5, WordOrder::Identity, WordOrder::Reverse);
  const auto cr = gen_parallel_corpus(rev, {20, 1, 1, {3, 10, 0.0}}, 3);
  for (const auto& p : cr.pairs) {
    for (std::size_t i = 0; i < p.b.size(); ++i) CHECK(p.b[i] == rev.surface_b[p.concepts[p.concepts.size() - 1 - i]]);
  }
}

TEST_CASE("gold translation is the unique maximum-jaccard match") {
  const auto& lex = lexicon();
  const auto c = gen_parallel_corpus(lex, {200, 100, 100, {3, 10, 0.1}}, 11);
  const auto idx = c.indices(Split::Test);
  for (std::size_t i : idx) {
    const auto si = concept_set(c.pairs[i].concepts);
    for (std::size_t j : idx) {
      if (i == j) continue;
      CHECK(jaccard(si, concept_set(c.pairs[j].concepts)) < 1.0);
    }
  }
}

TEST_CASE("generator argument errors") {
  const auto& lex = lexicon();
  CHECK(kind_of([&] { gen_parallel_corpus(lex, {0, 0, 0, {}}, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([&] { gen_parallel_corpus(lex, {10, 1, 1, {3, 61, 0.1}}, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([&] { gen_parallel_corpus(lex, {10, 1, 1, {5, 4, 0.1}}, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([&] { gen_parallel_corpus(lex, {10, 1, 1, {3, 8, 1.0}}, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([&] { gen_mining_corpus(lex, 10, 10, 0.0, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([&] { gen_mining_corpus(lex, 10, 10, 1.0, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([&] { gen_sts_pairs(lex, 0, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([&] { gen_nli_triples(lex, 0, 1); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([] { ConceptLexicon::make(1, 5, 1); }) == ErrorKind::ConfigInvalid);
}

TEST_CASE("mining corpus gold pairs and overlap bound") {
  const auto& lex = lexicon();
  const auto m = gen_mining_corpus(lex, 200, 150, 0.1, 3);
  CHECK(m.side_a.size() == 200);
  CHECK(m.side_b.size() == 150);
  CHECK(m.gold_pairs.size() == 15);
  CHECK(m == gen_mining_corpus(lex, 200, 150, 0.1, 3));
  std::set<std::pair<std::size_t, std::size_t>> gold(m.gold_pairs.begin(), m.gold_pairs.end());
  for (const auto& [i, j] : m.gold_pairs) {
    CHECK(concept_set(m.concepts_a[i]) == concept_set(m.concepts_b[j]));
    CHECK(decode(lex, Language::A, m.side_a[i]) == decode(lex, Language::B, m.side_b[j]));
  }
  // brute-force overlap scan, independent of audit_mining_overlap
  double worst = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto a = concept_set(m.concepts_a[i]);
    for (std::size_t j = 0; j < 150; ++j) {
      if (gold.count({i, j})) continue;
      const auto b = concept_set(m.concepts_b[j]);
      std::vector<ConceptId> common;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
      worst = std::max(worst, static_cast<double>(common.size()) / std::min(a.size(), b.size()));
    }
  }
  CHECK(worst < 0.5);
  CHECK_FALSE(audit_mining_overlap(m).has_value());
  CHECK(overlap_fraction({1, 2, 3, 4}, {3, 4}) == 1.0);
  CHECK(overlap_fraction({1, 2}, {3, 4, 5}) == 0.0);
}

TEST_CASE("mining corpus respects the exclusion set") {
  const auto& lex = lexicon();
  const auto c = gen_parallel_corpus(lex, {200, 20, 20, {3, 10, 0.1}}, 1);
  std::set<ConceptSet> exclude;
  for (const auto& p : c.pairs) exclude.insert(concept_set(p.concepts));
  const auto m = gen_mining_corpus(lex, 100, 100, 0.2, 2, {3, 10, 0.1}, &exclude);
  for (const auto& s : m.concepts_a) CHECK(exclude.count(concept_set(s)) == 0);
  for (const auto& s : m.concepts_b) CHECK(exclude.count(concept_set(s)) == 0);
}

TEST_CASE("sts pairs and nli triples") {
  const auto& lex = lexicon();
  const auto sts = gen_sts_pairs(lex, 300, 4);
  CHECK(sts == gen_sts_pairs(lex, 300, 4));
  bool saw_zero = false, saw_one = false;
  for (const auto& p : sts) {
    const auto a = concept_set(p.concepts1), b = concept_set(p.concepts2);
    CHECK(p.gold_sim == doctest::Approx(jaccard(a, b)).epsilon(1e-15));
    CHECK(p.gold_sim >= 0.0);
    CHECK(p.gold_sim <= 1.0);
    CHECK(decode(lex, Language::A, p.sent1) == std::multiset<ConceptId>(p.concepts1.begin(), p.concepts1.end()));
    saw_zero |= p.gold_sim == 0.0;
    saw_one |= p.gold_sim == 1.0;
  }
  CHECK(saw_zero);
  CHECK(jaccard({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(jaccard({1, 2}, {3}) == 0.0);

  const auto nli = gen_nli_triples(lex, 300, 5);
  std::map<NliLabel, int> counts;
  for (const auto& t : nli) {
    CHECK(t.label == nli_label_rule(concept_set(t.premise_concepts), concept_set(t.hypothesis_concepts)));
    ++counts[t.label];
  }
  CHECK(counts[NliLabel::Entailment] == 100);
  CHECK(counts[NliLabel::Neutral] == 100);
  CHECK(counts[NliLabel::Contradiction] == 100);
  (void)saw_one;
}

TEST_CASE("nli label rule") {
  CHECK(nli_label_rule({1, 2, 3}, {1, 3}) == NliLabel::Entailment);
  CHECK(nli_label_rule({1, 2, 3}, {4, 5}) == NliLabel::Contradiction);
  CHECK(nli_label_rule({1, 2, 3}, {1, 2, 3}) == NliLabel::Neutral);
  CHECK(nli_label_rule({1, 2, 3}, {3, 4}) == NliLabel::Neutral);
  CHECK(parse_nli_label("entailment") == NliLabel::Entailment);
  CHECK(kind_of([] { parse_nli_label("maybe"); }) == ErrorKind::InvalidLabel);
}

TEST_CASE("tsv round trips") {
  const auto& lex = lexicon();
  const auto c = gen_parallel_corpus(lex, {50, 5, 5, {3, 8, 0.1}}, 1);
  const auto path = temp_path("corpus.tsv");
  save_tsv(c, path);
  CHECK(load_tsv(path, std::make_pair(c.vocab_size_a, c.vocab_size_b)) == c);
  const auto inferred = load_tsv(path);
  CHECK(inferred.pairs == c.pairs);

  const auto sts = gen_sts_pairs(lex, 20, 2);
  save_sts_tsv(sts, path);
  CHECK(load_sts_tsv(path) == sts);

  const auto nli = gen_nli_triples(lex, 20, 2);
  save_nli_tsv(nli, path);
  CHECK(load_nli_tsv(path) == nli);

  const auto m = gen_mining_corpus(lex, 30, 40, 0.2, 2);
  save_mining_tsv(m, path);
  CHECK(load_mining_tsv(path, std::make_pair(m.vocab_size_a, m.vocab_size_b)) == m);
  fs::remove(path);
}

TEST_CASE("tsv errors") {
  const auto path = temp_path("bad.tsv");
  write_file(path, "");
  CHECK(kind_of([&] { load_tsv(path); }) == ErrorKind::EmptyCorpus);
  CHECK(kind_of([&] { load_sts_tsv(path); }) == ErrorKind::EmptyCorpus);

  std::string text;
  for (int i = 0; i < 6; ++i) text += "1 2\t3 4\t0 1\ttrain\n";
  text += "1 2\t3 4\ttrain\n";
  write_file(path, text);
  try {
    load_tsv(path);
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(std::string(e.what()).find(":7:") != std::string::npos);
  }

  write_file(path, "1 x\t3 4\t0 1\ttrain\n");
  CHECK(kind_of([&] { load_tsv(path); }) == ErrorKind::ParseError);
  write_file(path, "1 2\t3 4\t0 1\tholdout\n");
  CHECK(kind_of([&] { load_tsv(path); }) == ErrorKind::ParseError);
  write_file(path, "1 20\t3 4\t0 1\ttrain\n");
  CHECK(kind_of([&] { load_tsv(path, std::make_pair(10, 10)); }) == ErrorKind::TokenOutOfRange);
  fs::remove(path);
  CHECK(kind_of([&] { load_tsv(path); }) == ErrorKind::IoError);
}
