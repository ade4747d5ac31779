#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string_view>
#include <utility>
#include <vector>

#include "dmc/encoder.hpp"

namespace dmc {

using ConceptId = std::uint32_t;
using ConceptSeq = std::vector<ConceptId>;
// Sorted distinct concept ids; identity of a sentence's meaning.
using ConceptSet = std::vector<ConceptId>;

ConceptSet concept_set(const ConceptSeq& seq);
double jaccard(const ConceptSet& a, const ConceptSet& b);
std::size_t intersection_size(const ConceptSet& a, const ConceptSet& b);

enum class WordOrder { Identity, Reverse, RotateHalf };
std::string_view to_string(WordOrder order) noexcept;
WordOrder parse_word_order(std::string_view name);
/// Applies the word-order permutation to a sequence of length n.
std::vector<std::size_t> word_order_permutation(WordOrder order, std::size_t n);

enum class Language { A, B };

// Two surface vocabularies over one shared concept inventory. Token ids of a
// language: concept surface forms plus a disjoint set of function tokens.
struct ConceptLexicon {
  std::size_t concept_count = 0;
  std::vector<TokenId> surface_a;  // concept -> token, language A
  std::vector<TokenId> surface_b;
  std::vector<TokenId> function_a;
  std::vector<TokenId> function_b;
  WordOrder order_a = WordOrder::Identity;
  WordOrder order_b = WordOrder::Reverse;

  std::size_t vocab_size(Language lang) const;

  static ConceptLexicon make(std::size_t concept_count, std::size_t function_count,
                             std::uint64_t seed, WordOrder order_a = WordOrder::Identity,
                             WordOrder order_b = WordOrder::Reverse);

  bool operator==(const ConceptLexicon&) const = default;
};

void save_lexicon_json(const ConceptLexicon& lexicon, const std::filesystem::path& path);
ConceptLexicon load_lexicon_json(const std::filesystem::path& path);

struct SentenceShape {
  std::size_t len_min = 3;
  std::size_t len_max = 12;
  double noise_rate = 0.1;  // probability of a function token after each content token
};

enum class Split { Train, Validation, Test };
std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view name);

struct ParallelPair {
  TokenSequence a;
  TokenSequence b;
  ConceptSeq concepts;
  Split split = Split::Train;

  bool operator==(const ParallelPair&) const = default;
};

struct ParallelCorpus {
  std::vector<ParallelPair> pairs;
  std::size_t vocab_size_a = 0;
  std::size_t vocab_size_b = 0;

  std::vector<std::size_t> indices(Split split) const;
  std::vector<TokenSequence> side(Language lang, Split split) const;

  bool operator==(const ParallelCorpus&) const = default;
};

struct ParallelCorpusSpec {
  std::size_t n_train = 5000;
  std::size_t n_validation = 500;
  std::size_t n_test = 1000;
  SentenceShape shape;
};

/// Renders a concept sequence in one language: surface map, word order, noise.
TokenSequence render_sentence(const ConceptLexicon& lexicon, Language lang,
                              const ConceptSeq& concepts, double noise_rate,
                              std::mt19937_64& rng);

/// Every concept set occurs at most once across all splits, so each sentence's
/// translation is its unique maximum-Jaccard match. Throws ConfigInvalid.
ParallelCorpus gen_parallel_corpus(const ConceptLexicon& lexicon, const ParallelCorpusSpec& spec,
                                   std::uint64_t seed);

struct MiningCorpus {
  std::vector<TokenSequence> side_a;
  std::vector<TokenSequence> side_b;
  std::vector<ConceptSeq> concepts_a;
  std::vector<ConceptSeq> concepts_b;
  std::vector<std::pair<std::size_t, std::size_t>> gold_pairs;
  double parallel_fraction = 0.0;
  std::size_t vocab_size_a = 0;
  std::size_t vocab_size_b = 0;

  bool operator==(const MiningCorpus&) const = default;
};

/// Cross-side overlap that separates non-gold pairs: |A n B| / min(|A|, |B|).
double overlap_fraction(const ConceptSet& a, const ConceptSet& b);

/// floor(parallel_fraction * min(n_a, n_b)) gold pairs; every non-gold cross pair
/// has overlap_fraction < 0.5. Concept sets in `exclude` are never emitted.
MiningCorpus gen_mining_corpus(const ConceptLexicon& lexicon, std::size_t n_a, std::size_t n_b,
                               double parallel_fraction, std::uint64_t seed,
                               const SentenceShape& shape = {},
                               const std::set<ConceptSet>* exclude = nullptr);

/// Brute-force audit of the non-gold overlap bound; returns the worst violation or nullopt.
std::optional<std::pair<std::size_t, std::size_t>> audit_mining_overlap(const MiningCorpus& corpus);

struct StsPair {
  TokenSequence sent1;
  TokenSequence sent2;
  ConceptSeq concepts1;
  ConceptSeq concepts2;
  double gold_sim = 0.0;

  bool operator==(const StsPair&) const = default;
};

enum class NliLabel { Entailment = 0, Neutral = 1, Contradiction = 2 };
std::string_view to_string(NliLabel label) noexcept;
NliLabel parse_nli_label(std::string_view name);

/// entailment: hyp a strict subset of prem; contradiction: disjoint; neutral otherwise.
NliLabel nli_label_rule(const ConceptSet& premise, const ConceptSet& hypothesis);

struct NliTriple {
  TokenSequence premise;
  TokenSequence hypothesis;
  ConceptSeq premise_concepts;
  ConceptSeq hypothesis_concepts;
  NliLabel label = NliLabel::Neutral;

  bool operator==(const NliTriple&) const = default;
};

/// Monolingual (language A) pairs with gold_sim = Jaccard of concept sets.
std::vector<StsPair> gen_sts_pairs(const ConceptLexicon& lexicon, std::size_t n, std::uint64_t seed,
                                   const SentenceShape& shape = {});

/// Monolingual (language A) triples, labels stratified round-robin.
std::vector<NliTriple> gen_nli_triples(const ConceptLexicon& lexicon, std::size_t n,
                                       std::uint64_t seed, const SentenceShape& shape = {});

// TSV files. Parallel: side_a<TAB>side_b<TAB>concepts<TAB>split; STS:
// sent1<TAB>sent2<TAB>concepts1<TAB>concepts2<TAB>gold_sim; NLI:
// premise<TAB>hypothesis<TAB>concepts_p<TAB>concepts_h<TAB>label; mining: rows
// "a<TAB>tokens<TAB>concepts", "b<TAB>tokens<TAB>concepts", "gold<TAB>i<TAB>j".
// Token and concept lists are space-separated integers.
void save_tsv(const ParallelCorpus& corpus, const std::filesystem::path& path);
/// Vocab sizes default to (max token id + 1) per side when not given.
ParallelCorpus load_tsv(const std::filesystem::path& path,
                        std::optional<std::pair<std::size_t, std::size_t>> vocab_sizes = {});

void save_sts_tsv(const std::vector<StsPair>& pairs, const std::filesystem::path& path);
std::vector<StsPair> load_sts_tsv(const std::filesystem::path& path);

void save_nli_tsv(const std::vector<NliTriple>& triples, const std::filesystem::path& path);
std::vector<NliTriple> load_nli_tsv(const std::filesystem::path& path);

void save_mining_tsv(const MiningCorpus& corpus, const std::filesystem::path& path);
MiningCorpus load_mining_tsv(const std::filesystem::path& path,
                             std::optional<std::pair<std::size_t, std::size_t>> vocab_sizes = {});

}  // namespace dmc
