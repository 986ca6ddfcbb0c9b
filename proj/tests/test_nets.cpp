#include <gtest/gtest.h>

#include "cobra/nets.hpp"

using namespace cobra;
using namespace cobra::nets;

TEST(Nets, ForwardShapesAndRanges) {
  for (auto kind : {EncoderKind::small_cnn, EncoderKind::resnet18}) {
    ModelConfig cfg;
    cfg.encoder = kind;
    cfg.input = {3, 32, 32};
    cfg.proj_dim = 16;
    auto model = make_model(cfg, 1);
    model->eval();
    torch::NoGradGuard g;
    const auto out = model->forward(torch::rand({4, 3, 32, 32}));
    EXPECT_EQ(out.z.sizes(), (std::vector<std::int64_t>{4, 16}));
    EXPECT_EQ(out.logits.sizes(), (std::vector<std::int64_t>{4, 2}));
    EXPECT_TRUE(torch::allclose(out.z.norm(2, 1), torch::ones({4}), 1e-4, 1e-5));
    EXPECT_TRUE(((out.p_anom > 0) & (out.p_anom < 1)).all().item<bool>());
    EXPECT_TRUE(torch::allclose(out.p_anom, out.logits.softmax(1).select(1, 1)));
  }
}

TEST(Nets, InitIsSeeded) {
  ModelConfig cfg;
  cfg.input = {1, 28, 28};
  EXPECT_EQ(model_fingerprint(*make_model(cfg, 3)), model_fingerprint(*make_model(cfg, 3)));
  EXPECT_NE(model_fingerprint(*make_model(cfg, 3)), model_fingerprint(*make_model(cfg, 4)));
}

TEST(Nets, RejectsWrongInput) {
  ModelConfig cfg;
  cfg.input = {1, 28, 28};
  auto model = make_model(cfg, 0);
  EXPECT_THROW(model->forward(torch::rand({2, 3, 28, 28})), ValidationError);
  EXPECT_THROW(model->forward(torch::rand({1, 28, 28})), ValidationError);
  cfg.proj_dim = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Nets, ConfigJsonRoundTrip) {
  ModelConfig cfg;
  cfg.encoder = EncoderKind::resnet18;
  cfg.proj_dim = 64;
  cfg.input = {3, 64, 64};
  const auto back = ModelConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.encoder, cfg.encoder);
  EXPECT_EQ(back.proj_dim, 64);
  EXPECT_EQ(back.input, cfg.input);
}

TEST(Nets, TransformClassifierShapes) {
  TransformClassifier c(EncoderKind::small_cnn, InputShape{1, 28, 28}, 12);
  c->eval();
  torch::NoGradGuard g;
  const auto x = torch::rand({5, 1, 28, 28});
  EXPECT_EQ(c->logits(x).sizes(), (std::vector<std::int64_t>{5, 12}));
  EXPECT_EQ(c->embed(x).size(1), c->embed_dim());
}

TEST(Nets, ChunkedMatchesWholeBatch) {
  const auto x = torch::rand({10, 3});
  const auto y = chunked(x, 3, [](const torch::Tensor& t) { return t * 2; });
  EXPECT_TRUE(torch::equal(y, x * 2));
}
