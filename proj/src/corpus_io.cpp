#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "dmc/datagen.hpp"
#include "dmc/error.hpp"

namespace dmc {
namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      cols.push_back(line.substr(start));
      return cols;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

class LineError {
 public:
  LineError(const std::filesystem::path& path, std::size_t line) : path_(path), line_(line) {}
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::ParseError, path_.string() + ":" + std::to_string(line_) + ": " + what);
  }

 private:
  const std::filesystem::path& path_;
  std::size_t line_;
};

template <typename Int>
std::vector<Int> parse_ints(std::string_view field, const LineError& err, bool allow_empty = false) {
  std::vector<Int> out;
  const char* p = field.data();
  const char* end = field.data() + field.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    Int v{};
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (next < end && *next != ' ')) err.fail("bad integer list '" + std::string(field) + "'");
    out.push_back(v);
    p = next;
  }
  if (out.empty() && !allow_empty) err.fail("empty integer list");
  return out;
}

template <typename Int>
std::size_t parse_index(std::string_view field, const LineError& err) {
  const auto v = parse_ints<Int>(field, err);
  if (v.size() != 1) err.fail("expected a single integer");
  return static_cast<std::size_t>(v[0]);
}

double parse_double(std::string_view field, const LineError& err) {
  double v = 0.0;
  auto [next, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || next != field.data() + field.size()) err.fail("bad number '" + std::string(field) + "'");
  return v;
}

template <typename Int>
std::string join(const std::vector<Int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(xs[i]);
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

// Calls fn(cols, err) for each non-empty line; throws EmptyCorpus when none.
template <typename Fn>
void for_each_row(const std::filesystem::path& path, std::size_t expected_cols, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const LineError err(path, lineno);
    const auto cols = split_tabs(line);
    if (expected_cols != 0 && cols.size() != expected_cols) {
      err.fail("expected " + std::to_string(expected_cols) + " columns, found " + std::to_string(cols.size()));
    }
    fn(cols, err);
    ++rows;
  }
  if (in.bad()) throw Error(ErrorKind::IoError, "read failed for " + path.string());
  if (rows == 0) throw Error(ErrorKind::EmptyCorpus, path.string() + " contains no records");
}

std::size_t max_token_plus_one(const std::vector<TokenSequence>& seqs) {
  std::size_t m = 0;
  for (const auto& s : seqs) {
    for (TokenId t : s) m = std::max<std::size_t>(m, t + 1);
  }
  return m;
}

void check_vocab(const std::vector<TokenSequence>& seqs, std::size_t vocab, const std::filesystem::path& path) {
  if (max_token_plus_one(seqs) > vocab) {
    throw Error(ErrorKind::TokenOutOfRange, path.string() + ": token id exceeds vocab size " + std::to_string(vocab));
  }
}

}  // namespace

void save_tsv(const ParallelCorpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& p : corpus.pairs) {
    out << join(p.a) << '\t' << join(p.b) << '\t' << join(p.concepts) << '\t' << to_string(p.split) << '\n';
  }
  close_out(out, path);
}

ParallelCorpus load_tsv(const std::filesystem::path& path,
                        std::optional<std::pair<std::size_t, std::size_t>> vocab_sizes) {
  ParallelCorpus corpus;
  for_each_row(path, 4, [&](const auto& cols, const LineError& err) {
    ParallelPair p;
    p.a = parse_ints<TokenId>(cols[0], err);
    p.b = parse_ints<TokenId>(cols[1], err);
    p.concepts = parse_ints<ConceptId>(cols[2], err);
    try {
      p.split = parse_split(cols[3]);
    } catch (const Error&) {
      err.fail("unknown split '" + std::string(cols[3]) + "'");
    }
    corpus.pairs.push_back(std::move(p));
  });
  std::vector<TokenSequence> as, bs;
  for (const auto& p : corpus.pairs) {
    as.push_back(p.a);
    bs.push_back(p.b);
  }
  if (vocab_sizes) {
    check_vocab(as, vocab_sizes->first, path);
    check_vocab(bs, vocab_sizes->second, path);
    corpus.vocab_size_a = vocab_sizes->first;
    corpus.vocab_size_b = vocab_sizes->second;
  } else {
    corpus.vocab_size_a = max_token_plus_one(as);
    corpus.vocab_size_b = max_token_plus_one(bs);
  }
  return corpus;
}

void save_sts_tsv(const std::vector<StsPair>& pairs, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& p : pairs) {
    out << join(p.sent1) << '\t' << join(p.sent2) << '\t' << join(p.concepts1) << '\t'
        << join(p.concepts2) << '\t' << format_double(p.gold_sim) << '\n';
  }
  close_out(out, path);
}

std::vector<StsPair> load_sts_tsv(const std::filesystem::path& path) {
  std::vector<StsPair> pairs;
  for_each_row(path, 5, [&](const auto& cols, const LineError& err) {
    StsPair p;
    p.sent1 = parse_ints<TokenId>(cols[0], err);
    p.sent2 = parse_ints<TokenId>(cols[1], err);
    p.concepts1 = parse_ints<ConceptId>(cols[2], err);
    p.concepts2 = parse_ints<ConceptId>(cols[3], err);
    p.gold_sim = parse_double(cols[4], err);
    pairs.push_back(std::move(p));
  });
  return pairs;
}

void save_nli_tsv(const std::vector<NliTriple>& triples, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& t : triples) {
    out << join(t.premise) << '\t' << join(t.hypothesis) << '\t' << join(t.premise_concepts) << '\t'
        << join(t.hypothesis_concepts) << '\t' << to_string(t.label) << '\n';
  }
  close_out(out, path);
}

std::vector<NliTriple> load_nli_tsv(const std::filesystem::path& path) {
  std::vector<NliTriple> triples;
  for_each_row(path, 5, [&](const auto& cols, const LineError& err) {
    NliTriple t;
    t.premise = parse_ints<TokenId>(cols[0], err);
    t.hypothesis = parse_ints<TokenId>(cols[1], err);
    t.premise_concepts = parse_ints<ConceptId>(cols[2], err);
    t.hypothesis_concepts = parse_ints<ConceptId>(cols[3], err);
    try {
      t.label = parse_nli_label(cols[4]);
    } catch (const Error&) {
      err.fail("unknown NLI label '" + std::string(cols[4]) + "'");
    }
    triples.push_back(std::move(t));
  });
  return triples;
}

void save_mining_tsv(const MiningCorpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "fraction\t" << format_double(corpus.parallel_fraction) << '\n';
  for (std::size_t i = 0; i < corpus.side_a.size(); ++i) {
    out << "a\t" << join(corpus.side_a[i]) << '\t' << join(corpus.concepts_a[i]) << '\n';
  }
  for (std::size_t j = 0; j < corpus.side_b.size(); ++j) {
    out << "b\t" << join(corpus.side_b[j]) << '\t' << join(corpus.concepts_b[j]) << '\n';
  }
  for (const auto& [i, j] : corpus.gold_pairs) out << "gold\t" << i << '\t' << j << '\n';
  close_out(out, path);
}

MiningCorpus load_mining_tsv(const std::filesystem::path& path,
                             std::optional<std::pair<std::size_t, std::size_t>> vocab_sizes) {
  MiningCorpus corpus;
  for_each_row(path, 0, [&](const auto& cols, const LineError& err) {
    const auto tag = cols[0];
    if (tag == "fraction" && cols.size() == 2) {
      corpus.parallel_fraction = parse_double(cols[1], err);
    } else if ((tag == "a" || tag == "b") && cols.size() == 3) {
      auto tokens = parse_ints<TokenId>(cols[1], err);
      auto concepts = parse_ints<ConceptId>(cols[2], err);
      if (tag == "a") {
        corpus.side_a.push_back(std::move(tokens));
        corpus.concepts_a.push_back(std::move(concepts));
      } else {
        corpus.side_b.push_back(std::move(tokens));
        corpus.concepts_b.push_back(std::move(concepts));
      }
    } else if (tag == "gold" && cols.size() == 3) {
      corpus.gold_pairs.emplace_back(parse_index<std::uint64_t>(cols[1], err),
                                     parse_index<std::uint64_t>(cols[2], err));
    } else {
      err.fail("unrecognized mining row '" + std::string(tag) + "' with " + std::to_string(cols.size()) + " columns");
    }
  });
  if (corpus.side_a.empty() || corpus.side_b.empty()) {
    throw Error(ErrorKind::EmptySide, path.string() + ": a mining side is empty");
  }
  for (const auto& [i, j] : corpus.gold_pairs) {
    if (i >= corpus.side_a.size() || j >= corpus.side_b.size()) {
      throw Error(ErrorKind::ParseError, path.string() + ": gold pair index out of range");
    }
  }
  if (vocab_sizes) {
    check_vocab(corpus.side_a, vocab_sizes->first, path);
    check_vocab(corpus.side_b, vocab_sizes->second, path);
    corpus.vocab_size_a = vocab_sizes->first;
    corpus.vocab_size_b = vocab_sizes->second;
  } else {
    corpus.vocab_size_a = max_token_plus_one(corpus.side_a);
    corpus.vocab_size_b = max_token_plus_one(corpus.side_b);
  }
  return corpus;
}

}  // namespace dmc
