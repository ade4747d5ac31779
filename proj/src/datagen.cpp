#include "dmc/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "dmc/error.hpp"

namespace dmc {

ConceptSet concept_set(const ConceptSeq& seq) {
  ConceptSet s(seq.begin(), seq.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

std::size_t intersection_size(const ConceptSet& a, const ConceptSet& b) {
  std::size_t n = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

double jaccard(const ConceptSet& a, const ConceptSet& b) {
  const std::size_t inter = intersection_size(a, b);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double overlap_fraction(const ConceptSet& a, const ConceptSet& b) {
  const std::size_t m = std::min(a.size(), b.size());
  return m == 0 ? 0.0 : static_cast<double>(intersection_size(a, b)) / static_cast<double>(m);
}

std::string_view to_string(WordOrder order) noexcept {
  switch (order) {
    case WordOrder::Identity: return "identity";
    case WordOrder::Reverse: return "reverse";
    case WordOrder::RotateHalf: return "rotate_half";
  }
  return "identity";
}

WordOrder parse_word_order(std::string_view name) {
  if (name == "identity") return WordOrder::Identity;
  if (name == "reverse") return WordOrder::Reverse;
  if (name == "rotate_half") return WordOrder::RotateHalf;
  throw Error(ErrorKind::ConfigInvalid, "word order: unknown value '" + std::string(name) + "'");
}

std::vector<std::size_t> word_order_permutation(WordOrder order, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  switch (order) {
    case WordOrder::Identity: break;
    case WordOrder::Reverse: std::reverse(p.begin(), p.end()); break;
    case WordOrder::RotateHalf: std::rotate(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n / 2), p.end()); break;
  }
  return p;
}

std::size_t ConceptLexicon::vocab_size(Language lang) const {
  return lang == Language::A ? surface_a.size() + function_a.size()
                             : surface_b.size() + function_b.size();
}

ConceptLexicon ConceptLexicon::make(std::size_t concept_count, std::size_t function_count,
                                    std::uint64_t seed, WordOrder order_a, WordOrder order_b) {
  if (concept_count < 2) throw Error(ErrorKind::ConfigInvalid, "concept_count must be >= 2");
  if (function_count < 1) throw Error(ErrorKind::ConfigInvalid, "function_count must be >= 1");
  std::mt19937_64 rng(seed);
  ConceptLexicon lex;
  lex.concept_count = concept_count;
  lex.order_a = order_a;
  lex.order_b = order_b;
  const std::size_t vocab = concept_count + function_count;
  auto assign = [&](std::vector<TokenId>& surface, std::vector<TokenId>& function) {
    std::vector<TokenId> ids(vocab);
    std::iota(ids.begin(), ids.end(), TokenId{0});
    std::shuffle(ids.begin(), ids.end(), rng);
    surface.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(concept_count));
    function.assign(ids.begin() + static_cast<std::ptrdiff_t>(concept_count), ids.end());
  };
  assign(lex.surface_a, lex.function_a);
  assign(lex.surface_b, lex.function_b);
  return lex;
}

void save_lexicon_json(const ConceptLexicon& lexicon, const std::filesystem::path& path) {
  nlohmann::json j;
  j["concept_count"] = lexicon.concept_count;
  j["surface_a"] = lexicon.surface_a;
  j["surface_b"] = lexicon.surface_b;
  j["function_a"] = lexicon.function_a;
  j["function_b"] = lexicon.function_b;
  j["order_a"] = to_string(lexicon.order_a);
  j["order_b"] = to_string(lexicon.order_b);
  j["vocab_size_a"] = lexicon.vocab_size(Language::A);
  j["vocab_size_b"] = lexicon.vocab_size(Language::B);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

ConceptLexicon load_lexicon_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    ConceptLexicon lex;
    lex.concept_count = j.at("concept_count").get<std::size_t>();
    lex.surface_a = j.at("surface_a").get<std::vector<TokenId>>();
    lex.surface_b = j.at("surface_b").get<std::vector<TokenId>>();
    lex.function_a = j.at("function_a").get<std::vector<TokenId>>();
    lex.function_b = j.at("function_b").get<std::vector<TokenId>>();
    lex.order_a = parse_word_order(j.at("order_a").get<std::string>());
    lex.order_b = parse_word_order(j.at("order_b").get<std::string>());
    if (lex.surface_a.size() != lex.concept_count || lex.surface_b.size() != lex.concept_count) {
      throw Error(ErrorKind::ParseError, path.string() + ": surface map size != concept_count");
    }
    return lex;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw Error(ErrorKind::ParseError, "unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> ParallelCorpus::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<TokenSequence> ParallelCorpus::side(Language lang, Split split) const {
  std::vector<TokenSequence> out;
  for (const auto& p : pairs) {
    if (p.split == split) out.push_back(lang == Language::A ? p.a : p.b);
  }
  return out;
}

namespace {

void check_shape(const SentenceShape& shape, std::size_t concept_count) {
  if (shape.len_min < 1 || shape.len_min > shape.len_max) {
    throw Error(ErrorKind::ConfigInvalid, "len_range: need 1 <= len_min <= len_max");
  }
  if (shape.len_max > concept_count / 2) {
    throw Error(ErrorKind::ConfigInvalid, "len_range: len_max too large for the concept inventory");
  }
  if (!(shape.noise_rate >= 0.0 && shape.noise_rate < 1.0)) {
    throw Error(ErrorKind::ConfigInvalid, "noise_rate must lie in [0, 1)");
  }
}

std::size_t sample_length(const SentenceShape& shape, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(shape.len_min, shape.len_max)(rng);
}

// `count` distinct concepts, none of them in `avoid` (sorted).
ConceptSeq sample_concepts(std::size_t count, std::size_t concept_count, const ConceptSet& avoid,
                           std::mt19937_64& rng) {
  std::uniform_int_distribution<ConceptId> pick(0, static_cast<ConceptId>(concept_count - 1));
  ConceptSeq out;
  out.reserve(count);
  while (out.size() < count) {
    const ConceptId c = pick(rng);
    if (std::find(out.begin(), out.end(), c) != out.end()) continue;
    if (std::binary_search(avoid.begin(), avoid.end(), c)) continue;
    out.push_back(c);
  }
  return out;
}

constexpr std::size_t kMaxRejections = 1'000'000;

}  // namespace

TokenSequence render_sentence(const ConceptLexicon& lexicon, Language lang,
                              const ConceptSeq& concepts, double noise_rate,
                              std::mt19937_64& rng) {
  const auto& surface = lang == Language::A ? lexicon.surface_a : lexicon.surface_b;
  const auto& function = lang == Language::A ? lexicon.function_a : lexicon.function_b;
  const auto order = word_order_permutation(lang == Language::A ? lexicon.order_a : lexicon.order_b,
                                            concepts.size());
  std::bernoulli_distribution insert(noise_rate);
  std::uniform_int_distribution<std::size_t> pick_fn(0, function.size() - 1);
  TokenSequence out;
  out.reserve(concepts.size() * 2);
  for (std::size_t pos : order) {
    out.push_back(surface.at(concepts[pos]));
    if (noise_rate > 0.0 && insert(rng)) out.push_back(function[pick_fn(rng)]);
  }
  return out;
}

ParallelCorpus gen_parallel_corpus(const ConceptLexicon& lexicon, const ParallelCorpusSpec& spec,
                                   std::uint64_t seed) {
  check_shape(spec.shape, lexicon.concept_count);
  const std::size_t total = spec.n_train + spec.n_validation + spec.n_test;
  if (total < 1) throw Error(ErrorKind::ConfigInvalid, "n_pairs must be >= 1");
  std::mt19937_64 rng(seed);
  ParallelCorpus corpus;
  corpus.vocab_size_a = lexicon.vocab_size(Language::A);
  corpus.vocab_size_b = lexicon.vocab_size(Language::B);
  corpus.pairs.reserve(total);
  std::set<ConceptSet> seen;
  std::size_t rejections = 0;
  const ConceptSet none;
  while (corpus.pairs.size() < total) {
    const std::size_t i = corpus.pairs.size();
    ConceptSeq concepts = sample_concepts(sample_length(spec.shape, rng), lexicon.concept_count, none, rng);
    if (!seen.insert(concept_set(concepts)).second) {
      if (++rejections > kMaxRejections) throw Error(ErrorKind::ConfigInvalid, "concept inventory exhausted");
      continue;
    }
    ParallelPair p;
    p.a = render_sentence(lexicon, Language::A, concepts, spec.shape.noise_rate, rng);
    p.b = render_sentence(lexicon, Language::B, concepts, spec.shape.noise_rate, rng);
    p.split = i < spec.n_train ? Split::Train
              : i < spec.n_train + spec.n_validation ? Split::Validation
                                                     : Split::Test;
    p.concepts = std::move(concepts);
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

MiningCorpus gen_mining_corpus(const ConceptLexicon& lexicon, std::size_t n_a, std::size_t n_b,
                               double parallel_fraction, std::uint64_t seed,
                               const SentenceShape& shape, const std::set<ConceptSet>* exclude) {
  if (!(parallel_fraction > 0.0 && parallel_fraction < 1.0)) {
    throw Error(ErrorKind::ConfigInvalid, "parallel_fraction must lie in (0, 1)");
  }
  if (n_a < 1 || n_b < 1) throw Error(ErrorKind::ConfigInvalid, "mining sides must be non-empty");
  check_shape(shape, lexicon.concept_count);
  std::mt19937_64 rng(seed);
  const std::size_t n_gold =
      static_cast<std::size_t>(parallel_fraction * static_cast<double>(std::min(n_a, n_b)));

  std::vector<ConceptSeq> seq_a, seq_b;
  std::vector<ConceptSet> set_a, set_b;
  std::set<ConceptSet> used;
  const ConceptSet none;
  std::size_t rejections = 0;

  auto separated = [](const ConceptSet& s, const std::vector<ConceptSet>& others) {
    return std::all_of(others.begin(), others.end(),
                       [&](const ConceptSet& o) { return overlap_fraction(s, o) < 0.5; });
  };
  // Gold pairs occupy slots [0, n_gold) on both sides before shuffling.
  auto draw = [&](bool to_a, bool to_b) {
    for (;;) {
      if (++rejections > kMaxRejections) {
        throw Error(ErrorKind::ConfigInvalid, "cannot satisfy the mining overlap bound; enlarge the lexicon");
      }
      ConceptSeq seq = sample_concepts(sample_length(shape, rng), lexicon.concept_count, none, rng);
      ConceptSet s = concept_set(seq);
      if (used.count(s) || (exclude && exclude->count(s))) continue;
      if (to_a && !separated(s, set_b)) continue;
      if (to_b && !separated(s, set_a)) continue;
      used.insert(s);
      if (to_a) {
        seq_a.push_back(seq);
        set_a.push_back(s);
      }
      if (to_b) {
        seq_b.push_back(seq);
        set_b.push_back(s);
      }
      return;
    }
  };
  for (std::size_t g = 0; g < n_gold; ++g) draw(true, true);
  while (seq_a.size() < n_a || seq_b.size() < n_b) {
    if (seq_a.size() < n_a) draw(true, false);
    if (seq_b.size() < n_b) draw(false, true);
  }

  std::vector<std::size_t> perm_a(n_a), perm_b(n_b);
  std::iota(perm_a.begin(), perm_a.end(), 0);
  std::iota(perm_b.begin(), perm_b.end(), 0);
  std::shuffle(perm_a.begin(), perm_a.end(), rng);
  std::shuffle(perm_b.begin(), perm_b.end(), rng);

  MiningCorpus out;
  out.parallel_fraction = parallel_fraction;
  out.vocab_size_a = lexicon.vocab_size(Language::A);
  out.vocab_size_b = lexicon.vocab_size(Language::B);
  out.side_a.resize(n_a);
  out.side_b.resize(n_b);
  out.concepts_a.resize(n_a);
  out.concepts_b.resize(n_b);
  // perm maps new position -> original slot
  std::vector<std::size_t> pos_a(n_a), pos_b(n_b);
  for (std::size_t p = 0; p < n_a; ++p) pos_a[perm_a[p]] = p;
  for (std::size_t p = 0; p < n_b; ++p) pos_b[perm_b[p]] = p;
  for (std::size_t p = 0; p < n_a; ++p) {
    out.concepts_a[p] = seq_a[perm_a[p]];
    out.side_a[p] = render_sentence(lexicon, Language::A, out.concepts_a[p], shape.noise_rate, rng);
  }
  for (std::size_t p = 0; p < n_b; ++p) {
    out.concepts_b[p] = seq_b[perm_b[p]];
    out.side_b[p] = render_sentence(lexicon, Language::B, out.concepts_b[p], shape.noise_rate, rng);
  }
  for (std::size_t g = 0; g < n_gold; ++g) out.gold_pairs.emplace_back(pos_a[g], pos_b[g]);
  std::sort(out.gold_pairs.begin(), out.gold_pairs.end());
  return out;
}

std::optional<std::pair<std::size_t, std::size_t>> audit_mining_overlap(const MiningCorpus& corpus) {
  std::set<std::pair<std::size_t, std::size_t>> gold(corpus.gold_pairs.begin(), corpus.gold_pairs.end());
  std::vector<ConceptSet> sb;
  for (const auto& c : corpus.concepts_b) sb.push_back(concept_set(c));
  for (std::size_t i = 0; i < corpus.concepts_a.size(); ++i) {
    const auto sa = concept_set(corpus.concepts_a[i]);
    for (std::size_t j = 0; j < sb.size(); ++j) {
      if (gold.count({i, j})) continue;
      if (overlap_fraction(sa, sb[j]) >= 0.5) return std::make_pair(i, j);
    }
  }
  return std::nullopt;
}

std::string_view to_string(NliLabel label) noexcept {
  switch (label) {
    case NliLabel::Entailment: return "entailment";
    case NliLabel::Neutral: return "neutral";
    case NliLabel::Contradiction: return "contradiction";
  }
  return "neutral";
}

NliLabel parse_nli_label(std::string_view name) {
  if (name == "entailment") return NliLabel::Entailment;
  if (name == "neutral") return NliLabel::Neutral;
  if (name == "contradiction") return NliLabel::Contradiction;
  throw Error(ErrorKind::InvalidLabel, "unknown NLI label '" + std::string(name) + "'");
}

NliLabel nli_label_rule(const ConceptSet& premise, const ConceptSet& hypothesis) {
  const std::size_t inter = intersection_size(premise, hypothesis);
  if (inter == 0) return NliLabel::Contradiction;
  if (inter == hypothesis.size() && hypothesis.size() < premise.size()) return NliLabel::Entailment;
  return NliLabel::Neutral;
}

std::vector<StsPair> gen_sts_pairs(const ConceptLexicon& lexicon, std::size_t n, std::uint64_t seed,
                                   const SentenceShape& shape) {
  if (n < 1) throw Error(ErrorKind::ConfigInvalid, "n must be >= 1");
  check_shape(shape, lexicon.concept_count);
  std::mt19937_64 rng(seed);
  std::vector<StsPair> out;
  out.reserve(n);
  const ConceptSet none;
  for (std::size_t i = 0; i < n; ++i) {
    StsPair p;
    p.concepts1 = sample_concepts(sample_length(shape, rng), lexicon.concept_count, none, rng);
    const std::size_t len1 = p.concepts1.size();
    const std::size_t shared = std::uniform_int_distribution<std::size_t>(0, len1)(rng);
    const std::size_t len2 =
        std::uniform_int_distribution<std::size_t>(std::max({shared, shape.len_min, std::size_t{1}}),
                                                   std::max(shared, shape.len_max))(rng);
    ConceptSeq keep = p.concepts1;
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(shared);
    const ConceptSet avoid = concept_set(p.concepts1);
    ConceptSeq fresh = sample_concepts(len2 - shared, lexicon.concept_count, avoid, rng);
    p.concepts2 = keep;
    p.concepts2.insert(p.concepts2.end(), fresh.begin(), fresh.end());
    std::shuffle(p.concepts2.begin(), p.concepts2.end(), rng);
    p.sent1 = render_sentence(lexicon, Language::A, p.concepts1, shape.noise_rate, rng);
    p.sent2 = render_sentence(lexicon, Language::A, p.concepts2, shape.noise_rate, rng);
    p.gold_sim = jaccard(concept_set(p.concepts1), concept_set(p.concepts2));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<NliTriple> gen_nli_triples(const ConceptLexicon& lexicon, std::size_t n,
                                       std::uint64_t seed, const SentenceShape& shape) {
  if (n < 1) throw Error(ErrorKind::ConfigInvalid, "n must be >= 1");
  check_shape(shape, lexicon.concept_count);
  std::mt19937_64 rng(seed);
  const std::size_t prem_min = std::max<std::size_t>(shape.len_min, 2);
  const std::size_t prem_max = std::max(prem_min, shape.len_max);
  std::vector<NliTriple> out;
  out.reserve(n);
  const ConceptSet none;
  for (std::size_t i = 0; i < n; ++i) {
    const auto target = static_cast<NliLabel>(i % 3);
    NliTriple t;
    t.premise_concepts = sample_concepts(
        std::uniform_int_distribution<std::size_t>(prem_min, prem_max)(rng), lexicon.concept_count, none, rng);
    const std::size_t plen = t.premise_concepts.size();
    const ConceptSet avoid = concept_set(t.premise_concepts);
    ConceptSeq shuffled = t.premise_concepts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    switch (target) {
      case NliLabel::Entailment: {
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, plen - 1)(rng);
        t.hypothesis_concepts.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
        break;
      }
      case NliLabel::Contradiction:
        t.hypothesis_concepts = sample_concepts(sample_length(shape, rng), lexicon.concept_count, avoid, rng);
        break;
      case NliLabel::Neutral: {
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, plen - 1)(rng);
        const std::size_t extra = std::uniform_int_distribution<std::size_t>(1, std::max<std::size_t>(1, plen - k))(rng);
        t.hypothesis_concepts.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
        const auto fresh = sample_concepts(extra, lexicon.concept_count, avoid, rng);
        t.hypothesis_concepts.insert(t.hypothesis_concepts.end(), fresh.begin(), fresh.end());
        std::shuffle(t.hypothesis_concepts.begin(), t.hypothesis_concepts.end(), rng);
        break;
      }
    }
    t.label = nli_label_rule(avoid, concept_set(t.hypothesis_concepts));
    t.premise = render_sentence(lexicon, Language::A, t.premise_concepts, shape.noise_rate, rng);
    t.hypothesis = render_sentence(lexicon, Language::A, t.hypothesis_concepts, shape.noise_rate, rng);
    out.push_back(std::move(t));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace dmc
