#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "reviewlens/classify/encoder.hpp"
#include "reviewlens/classify/head.hpp"
#include "reviewlens/nn/adamw.hpp"
#include "reviewlens/nn/bert.hpp"
#include "reviewlens/nn/safetensors.hpp"
#include "reviewlens/nn/wordpiece.hpp"
#include "support/tempdir.hpp"

using namespace reviewlens;
using namespace reviewlens::nn;
using reviewlens::testing::TempDir;

namespace {

BertConfig small_config() {
  BertConfig cfg;
  cfg.vocab_size = 20;
  cfg.hidden_size = 8;
  cfg.num_hidden_layers = 2;
  cfg.num_attention_heads = 2;
  cfg.intermediate_size = 16;
  cfg.max_position_embeddings = 10;
  cfg.type_vocab_size = 2;
  return cfg;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

}  // namespace

TEST(Gelu, ExactErfForm) {
  Matrix<double> x(1, 3);
  x << -1.0, 0.0, 2.0;
  const auto y = gelu<double>(x);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(y(0, i), 0.5 * x(0, i) * (1 + std::erf(x(0, i) / std::sqrt(2.0))), 1e-15);
}

TEST(Sigmoid, StableAtExtremes) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_GT(sigmoid(-800.0), -1e-300);
  EXPECT_LE(sigmoid(800.0), 1.0);
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0f)));
}

TEST(BertEncoder, GradientMatchesFiniteDifferences) {
  auto enc = BertEncoder<double>::random(small_config(), 3, 0.5);
  const std::vector<int> ids{2, 5, 7, 5, 3};
  RowVector<double> w(8);
  for (int i = 0; i < 8; ++i) w(i) = 0.3 * i - 1;
  // Scalar objective touching the CLS row linearly and another row quadratically.
  auto objective = [&] {
    const auto H = enc.forward(ids);
    return (H.row(0) * w.transpose())(0) + 0.1 * H.row(2).sum() * H.row(2).sum();
  };
  BertEncoder<double>::Cache cache;
  const auto H = enc.forward(ids, &cache);
  Matrix<double> dH = Matrix<double>::Zero(H.rows(), H.cols());
  dH.row(0) = w;
  dH.row(2).setConstant(0.2 * H.row(2).sum());
  for (auto* p : enc.parameters()) p->zero_grad();
  enc.backward(cache, dH);
  double max_rel = 0;
  for (auto* p : enc.parameters()) {
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(p->value.size(), 6); ++k) {
      const Eigen::Index idx = (k * 7919) % p->value.size();
      const double old = p->value.data()[idx];
      const double h = 1e-6;
      p->value.data()[idx] = old + h;
      const double up = objective();
      p->value.data()[idx] = old - h;
      const double down = objective();
      p->value.data()[idx] = old;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[idx];
      if (std::abs(numeric) + std::abs(analytic) > 1e-9) max_rel = std::max(max_rel, relative_error(numeric, analytic));
    }
  }
  EXPECT_LT(max_rel, 1e-5);
}

TEST(BertEncoder, PooledIsFirstRowAndDeterministic) {
  const auto enc = BertEncoder<float>::random(small_config(), 4, 0.2);
  const std::vector<int> ids{2, 9, 3};
  const auto H = enc.forward(ids);
  EXPECT_EQ(enc.pooled(ids), H.row(0));
  EXPECT_EQ(enc.pooled(ids), enc.pooled(ids));
}

TEST(BertEncoder, RejectsTooLongInput) {
  const auto enc = BertEncoder<float>::random(small_config(), 4, 0.2);
  EXPECT_THROW(enc.forward(std::vector<int>(11, 5)), Error);
}

TEST(Adapter, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  auto adapter = classify::Adapter<double>::fresh("a", 6, 4, rng);
  fill_normal(adapter.down.weight.value, rng, 0.5);
  fill_normal(adapter.up.weight.value, rng, 0.5);
  fill_normal(adapter.down.bias.value, rng, 0.5);
  Matrix<double> h(3, 6);
  fill_normal(h, rng, 1.0);
  Matrix<double> w(3, 6);
  fill_normal(w, rng, 1.0);
  auto objective = [&] { return adapter.forward(h).cwiseProduct(w).sum(); };
  classify::Adapter<double>::Cache cache;
  adapter.forward(h, &cache);
  std::vector<Param<double>*> params;
  adapter.collect(params);
  for (auto* p : params) p->zero_grad();
  const Matrix<double> dh = adapter.backward(cache, w);
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double old = p->value.data()[i];
      p->value.data()[i] = old + 1e-6;
      const double up = objective();
      p->value.data()[i] = old - 1e-6;
      const double down = objective();
      p->value.data()[i] = old;
      EXPECT_LT(relative_error((up - down) / 2e-6, p->grad.data()[i]), 1e-6) << p->name;
    }
  }
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const double old = h.data()[i];
    h.data()[i] = old + 1e-6;
    const double up = objective();
    h.data()[i] = old - 1e-6;
    const double down = objective();
    h.data()[i] = old;
    EXPECT_LT(relative_error((up - down) / 2e-6, dh.data()[i]), 1e-6);
  }
}

TEST(AdamW, SingleStepMatchesHandComputation) {
  Param<double> w("w", 1, 1, true);
  Param<double> b("b", 1, 1, false);
  w.value(0, 0) = 1.0;
  b.value(0, 0) = 1.0;
  AdamW<double> opt({&w, &b}, {0.1, 0.5});
  w.grad(0, 0) = 2.0;
  b.grad(0, 0) = 2.0;
  opt.step();
  // Bias-corrected first step moves by lr * g / (|g| + eps); decay only on w.
  const double adam = 0.1 * 2.0 / (2.0 + 1e-8);
  EXPECT_NEAR(w.value(0, 0), 1.0 * (1 - 0.1 * 0.5) - adam, 1e-12);
  EXPECT_NEAR(b.value(0, 0), 1.0 - adam, 1e-12);
}

TEST(WordPiece, SplitsPiecesAndKeepsSpecialTokens) {
  const WordPieceTokenizer tok({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "method", "##s", "h", "-", "index",
                                "."});
  EXPECT_EQ(tok.basic_tokenize("The methods [UNK] h-index."),
            (std::vector<std::string>{"the", "methods", "[UNK]", "h", "-", "index", "."}));
  const auto ids = tok.encode("The methods [UNK] h-index.", 64);
  EXPECT_EQ(ids, (std::vector<int>{2, 5, 6, 7, 1, 8, 9, 10, 11, 3}));
  EXPECT_EQ(tok.encode("zzz", 64), (std::vector<int>{2, 1, 3}));
  EXPECT_EQ(tok.encode("the the the the", 4), (std::vector<int>{2, 5, 5, 3}));
  EXPECT_EQ(tok.encode("a [SEP] b", 8), (std::vector<int>{2, 1, 3, 1, 3}));
}

TEST(Safetensors, RoundTrip) {
  TempDir dir("st");
  std::map<std::string, TensorData> tensors;
  tensors["b"] = {{3}, {1.5F, -2.0F, 0.25F}};
  tensors["a.weight"] = {{2, 2}, {1, 2, 3, 4}};
  write_safetensors(dir / "m.safetensors", tensors);
  const auto back = read_safetensors(dir / "m.safetensors");
  ASSERT_EQ(back.size(), 2U);
  EXPECT_EQ(back.at("b").values, tensors["b"].values);
  EXPECT_EQ(back.at("a.weight").shape, (std::vector<std::int64_t>{2, 2}));
}

TEST(Safetensors, ReadsHalfPrecision) {
  TempDir dir("st16");
  const std::string header = R"({"x":{"dtype":"F16","shape":[2],"data_offsets":[0,4]}})";
  std::string bytes(8, '\0');
  const std::uint64_t len = header.size();
  std::memcpy(bytes.data(), &len, 8);
  bytes += header;
  const std::uint16_t one = 0x3C00, minus_two = 0xC000;
  bytes.append(reinterpret_cast<const char*>(&one), 2);
  bytes.append(reinterpret_cast<const char*>(&minus_two), 2);
  dir.write("h.safetensors", bytes);
  const auto t = read_safetensors(dir / "h.safetensors");
  EXPECT_EQ(t.at("x").values, (std::vector<float>{1.0F, -2.0F}));
}

TEST(Encoder, SaveLoadRoundTrip) {
  TempDir dir("enc");
  const auto enc = classify::make_fixture_encoder({"alpha", "beta"}, 1, 16, 1, 2, 32);
  classify::save_encoder(enc, dir / "org/model");
  const auto back = classify::load_encoder(dir.path(), "org/model");
  EXPECT_EQ(back.hidden_dim(), 16);
  EXPECT_EQ(back.max_tokens, 32);
  EXPECT_EQ(back.network.pooled(back.token_ids("alpha beta")), enc.network.pooled(enc.token_ids("alpha beta")));
}

TEST(Encoder, MissingModelErrors) {
  TempDir dir("enc");
  try {
    classify::load_encoder(dir.path(), "allenai/specter2_base");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ModelNotFound);
  }
  std::filesystem::create_directories(dir / "partial");
  dir.write("partial/config.json", "{}");
  try {
    classify::load_encoder(dir.path(), "partial");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OfflineCacheMiss);
  }
}

TEST(Encoder, AcceptsPrefixedCheckpointNames) {
  TempDir dir("enc");
  const auto enc = classify::make_fixture_encoder({"alpha"}, 2, 8, 1, 2, 16);
  classify::save_encoder(enc, dir / "m");
  auto tensors = read_safetensors(dir / "m/model.safetensors");
  std::map<std::string, TensorData> renamed;
  for (auto& [name, t] : tensors) renamed["bert." + name] = t;
  write_safetensors(dir / "m/model.safetensors", renamed);
  const auto back = classify::load_encoder(dir.path(), "m");
  EXPECT_EQ(back.network.pooled(back.token_ids("alpha")), enc.network.pooled(enc.token_ids("alpha")));
}
