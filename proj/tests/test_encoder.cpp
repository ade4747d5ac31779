#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dmc/encoder.hpp"
#include "dmc/error.hpp"
#include "oracles.hpp"

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

EncoderParams tiny(std::uint64_t seed, std::size_t vocab = 10, std::size_t d_emb = 4, std::size_t d_out = 3) {
  std::mt19937_64 rng(seed);
  auto p = EncoderParams::random(vocab, d_emb, d_out, rng);
  std::normal_distribution<double> n(0, 0.3);
  for (auto& b : p.proj_bias) b = n(rng);
  return p;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("dmc_test_encoder_" + name);
}

}  // namespace

TEST_CASE("pooling examples") {
  EncoderParams p(4, 2, 2);
  p.embedding_table = DenseMatrix(4, 2);
  p.embedding_table(1, 0) = 1;
  p.embedding_table(1, 1) = -2;
  p.embedding_table(2, 0) = 3;
  p.embedding_table(2, 1) = 0;
  const TokenSequence two{1, 2};
  CHECK(pool_embeddings(p, two, PoolingMode::Max) == DenseVector{3, 0});
  CHECK(pool_embeddings(p, two, PoolingMode::Mean) == DenseVector{2, -1});
  CHECK(pool_embeddings(p, two, PoolingMode::FirstToken) == DenseVector{1, -2});

  const auto q = tiny(1);
  const TokenSequence one{7};
  const auto pooled = pool_embeddings(q, one, PoolingMode::Mean);
  for (std::size_t k = 0; k < q.d_emb(); ++k) CHECK(pooled[k] == q.embedding_table(7, k));
}

TEST_CASE("encode output is unit norm and deterministic") {
  std::mt19937_64 rng(2);
  const auto p = tiny(2, 10, 8, 8);
  for (auto mode : {PoolingMode::Mean, PoolingMode::Max, PoolingMode::FirstToken}) {
    for (const auto& s : oracle::random_batch(50, 10, 9, rng)) {
      const auto h = encode(p, s, mode);
      CHECK(h.size() == 8);
      CHECK(std::abs(l2_norm(h) - 1.0) <= 1e-12);
      CHECK(h == encode(p, s, mode));
    }
  }
}

TEST_CASE("encode errors") {
  const auto p = tiny(3);
  CHECK(kind_of([&] { encode(p, TokenSequence{1, 10}, PoolingMode::Mean); }) == ErrorKind::TokenOutOfRange);
  CHECK(kind_of([&] { encode(p, TokenSequence{}, PoolingMode::Mean); }) == ErrorKind::DegenerateInput);
  EncoderParams zero(3, 2, 2);  // zero weights and bias: tanh(0) = 0 cannot be normalized
  CHECK(kind_of([&] { encode(zero, TokenSequence{0}, PoolingMode::Mean); }) == ErrorKind::ZeroVector);
}

TEST_CASE("encode_batch matches encode and reports the batch index") {
  std::mt19937_64 rng(4);
  const auto p = tiny(4, 10, 6, 5);
  CHECK(encode_batch(p, std::vector<TokenSequence>{}, PoolingMode::Mean).empty());
  const std::vector<TokenSequence> one{{1, 2, 3}};
  const auto single = encode_batch(p, one, PoolingMode::Mean);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == encode(p, one[0], PoolingMode::Mean));

  const auto batch = oracle::random_batch(37, 10, 6, rng);
  for (unsigned threads : {1u, 2u, 4u}) {
    const auto out = encode_batch(p, batch, PoolingMode::Max, threads);
    REQUIRE(out.size() == batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) CHECK(out[i] == encode(p, batch[i], PoolingMode::Max));
  }

  auto bad = batch;
  bad[5] = {99};
  try {
    encode_batch(p, bad, PoolingMode::Mean);
    FAIL("expected TokenOutOfRange");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TokenOutOfRange);
    CHECK(std::string(e.what()).find("5") != std::string::npos);
  }
}

TEST_CASE("mean and max pooling ignore token order, first token does not") {
  std::mt19937_64 rng(6);
  const auto p = tiny(6, 10, 4, 4);
  int first_changed = 0;
  for (auto s : oracle::random_batch(40, 10, 8, rng)) {
    if (s.size() < 2) continue;
    auto r = s;
    std::reverse(r.begin(), r.end());
    CHECK(l2_norm(DenseVector(encode(p, s, PoolingMode::Max))) == doctest::Approx(1.0));
    const auto a = encode(p, s, PoolingMode::Mean), b = encode(p, r, PoolingMode::Mean);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-12);
    CHECK(encode(p, s, PoolingMode::Max) == encode(p, r, PoolingMode::Max));
    if (s.front() != s.back()) first_changed += encode(p, s, PoolingMode::FirstToken) != encode(p, r, PoolingMode::FirstToken);
  }
  CHECK(first_changed > 0);
}

TEST_CASE("encode_backward trivial cases") {
  const auto p = tiny(7);
  const std::vector<TokenSequence> batch{{1, 2}, {2, 3, 3}};
  const std::vector<DenseVector> zeros(2, DenseVector(3, 0.0));
  const auto g0 = encode_backward(p, batch, PoolingMode::Mean, zeros);
  for (auto t : g0.tensors()) {
    for (double x : t) CHECK(x == 0.0);
  }
  const std::vector<DenseVector> ones(2, DenseVector(3, 1.0));
  const auto g = encode_backward(p, batch, PoolingMode::Mean, ones);
  for (std::size_t row : {0, 4, 9}) {
    for (std::size_t k = 0; k < p.d_emb(); ++k) CHECK(g.embedding_table(row, k) == 0.0);
  }
  CHECK(kind_of([&] { encode_backward(p, batch, PoolingMode::Mean, std::vector<DenseVector>(1, DenseVector(3))); }) ==
        ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { encode_backward(p, batch, PoolingMode::Mean, std::vector<DenseVector>(2, DenseVector(2))); }) ==
        ErrorKind::ShapeMismatch);
}

TEST_CASE("encode_backward matches finite differences") {
  for (auto mode : {PoolingMode::Mean, PoolingMode::Max, PoolingMode::FirstToken}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 rng(100 + seed);
      auto p = tiny(seed, 10, 4, 3);
      const auto batch = oracle::random_batch(2, 10, 5, rng);
      std::vector<DenseVector> up;
      for (int i = 0; i < 2; ++i) up.push_back(oracle::random_unit(3, rng));
      const auto g = encode_backward(p, batch, mode, up);
      auto f = [&] {
        double s = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) s += oracle::naive_dot(up[i], encode(p, batch[i], mode));
        return s;
      };
      const auto res = oracle::check_params(p, g, f);
      CHECK(res.checked == p.parameter_count());
      CHECK(res.max_rel < 1e-6);
    }
  }
}

TEST_CASE("accumulate_encode_backward adds onto existing gradients") {
  std::mt19937_64 rng(8);
  const auto p = tiny(8);
  const auto batch = oracle::random_batch(3, 10, 4, rng);
  std::vector<DenseVector> up;
  for (int i = 0; i < 3; ++i) up.push_back(oracle::random_unit(3, rng));
  const auto once = encode_backward(p, batch, PoolingMode::Mean, up);
  auto acc = once;
  accumulate_encode_backward(p, batch, PoolingMode::Mean, up, acc);
  auto a = acc.tensors();
  auto o = once.tensors();
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < a[t].size(); ++i) CHECK(a[t][i] == doctest::Approx(2 * o[t][i]));
  }
}

TEST_CASE("normalization jacobian matches finite differences") {
  // d/dz of g . (z / ||z||) = (g - (g.h) h) / ||z||
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 20; ++t) {
    DenseVector z(5), g(5);
    for (auto& x : z) x = n(rng);
    for (auto& x : g) x = n(rng);
    const double nz = l2_norm(z);
    const auto h = l2_normalize(z);
    const double gh = oracle::naive_dot(g, h);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double analytic = (g[i] - gh * h[i]) / nz;
      const double numeric = oracle::central_difference([&] { return oracle::naive_dot(g, l2_normalize(z)); }, z[i]);
      CHECK(oracle::rel_error(analytic, numeric) < 1e-6);
    }
  }
}

TEST_CASE("checkpoint round trip and layout") {
  const auto a = tiny(10, 10, 4, 3);
  const auto b = tiny(11, 12, 4, 3);
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(path, a, b);
  const auto [la, lb] = load_checkpoint(path);
  CHECK(la == a);
  CHECK(lb == b);

  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "DMC1");
  unsigned char le[8];
  in.read(reinterpret_cast<char*>(le), 8);
  CHECK(le[0] == 10);
  for (int i = 1; i < 8; ++i) CHECK(le[i] == 0);
  const auto expected = 4 + 2 * 3 * 8 + 8 * (a.parameter_count() + b.parameter_count());
  CHECK(fs::file_size(path) == expected);
  in.close();

  fs::resize_file(path, expected - 3);
  CHECK(kind_of([&] { load_checkpoint(path); }) == ErrorKind::ParseError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOPE1234";
  }
  CHECK(kind_of([&] { load_checkpoint(path); }) == ErrorKind::ParseError);
  fs::remove(path);
  CHECK(kind_of([&] { load_checkpoint(temp_path("missing.bin")); }) == ErrorKind::IoError);
}

TEST_CASE("pooling names") {
  CHECK(parse_pooling("mean") == PoolingMode::Mean);
  CHECK(parse_pooling("max") == PoolingMode::Max);
  CHECK(parse_pooling("first") == PoolingMode::FirstToken);
  CHECK(parse_pooling("cls") == PoolingMode::FirstToken);
  CHECK(to_string(PoolingMode::Max) == "max");
  CHECK(kind_of([] { parse_pooling("sum"); }) == ErrorKind::ConfigInvalid);
}
