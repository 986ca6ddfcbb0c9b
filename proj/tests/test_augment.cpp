#include <gtest/gtest.h>

#include <set>

#include "cobra/augment.hpp"

using namespace cobra;
using namespace cobra::augment;

namespace {

torch::Tensor image(std::int64_t seed, std::int64_t c = 1, std::int64_t s = 28) {
  torch::manual_seed(seed);
  return torch::rand({c, s, s});
}

torch::Tensor apply_one(const TransformSpec& spec, const torch::Tensor& img, Seed seed, SampleLog* log,
                        const torch::Tensor& donors = {}) {
  const std::vector<TransformSpec> seq{spec};
  return apply_hard_sequence_to(img, seq, seed, donors.defined() ? donors : img.unsqueeze(0), log);
}

torch::Tensor crop(const torch::Tensor& img, const Region& r) {
  return img.slice(1, r.top, r.top + r.height).slice(2, r.left, r.left + r.width);
}

torch::Tensor mask_of(const torch::Tensor& img, const Region& r) {
  auto m = torch::zeros_like(img, torch::kBool);
  m.slice(1, r.top, r.top + r.height).slice(2, r.left, r.left + r.width).fill_(true);
  return m;
}

}  // namespace

TEST(Augment, JigsawMovesTilesByRecordedPermutation) {
  const auto img = image(1);
  for (Seed s = 0; s < 10; ++s) {
    SampleLog log;
    const auto out = apply_one(TransformSpec::defaults(TransformId::jigsaw), img, s, &log);
    ASSERT_EQ(log.size(), 1u);
    const auto& perm = log[0].permutation;
    ASSERT_EQ(perm.size(), 4u);
    std::vector<int> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3}));
    EXPECT_NE(perm, (std::vector<int>{0, 1, 2, 3}));
    for (int k = 0; k < 4; ++k) {
      const Region dst{(k / 2) * 14, (k % 2) * 14, 14, 14};
      const Region src{(perm[k] / 2) * 14, (perm[k] % 2) * 14, 14, 14};
      EXPECT_TRUE(torch::equal(crop(out, dst), crop(img, src)));
    }
  }
}

TEST(Augment, CutoutFillsOnlyItsBox) {
  const auto img = image(2, 3);
  SampleLog log;
  const auto spec = TransformSpec::defaults(TransformId::cutout).with("fill", 0.25);
  const auto out = apply_one(spec, img, 4, &log);
  const auto r = *log[0].region;
  EXPECT_EQ(r.height, 7);  // 0.25 * 28
  EXPECT_TRUE(torch::allclose(crop(out, r), torch::full_like(crop(out, r), 0.25)));
  const auto m = mask_of(img, r);
  EXPECT_TRUE(torch::equal(out.masked_select(~m), img.masked_select(~m)));
}

TEST(Augment, CutpasteCopiesSourcePatch) {
  const auto img = image(3);
  for (Seed s = 0; s < 5; ++s) {
    SampleLog log;
    const auto out = apply_one(TransformSpec::defaults(TransformId::cutpaste), img, s, &log);
    const auto src = *log[0].source, dst = *log[0].region;
    EXPECT_TRUE(torch::equal(crop(out, dst), crop(img, src)));
    const auto m = mask_of(img, dst);
    EXPECT_TRUE(torch::equal(out.masked_select(~m), img.masked_select(~m)));
  }
}

TEST(Augment, CutmixTakesDonorBox) {
  const auto img = image(4);
  const auto donors = torch::stack({image(5), image(6)});
  SampleLog log;
  const auto out = apply_one(TransformSpec::defaults(TransformId::cutmix), img, 7, &log, donors);
  const auto r = *log[0].region;
  EXPECT_TRUE(torch::equal(crop(out, r), crop(donors[*log[0].donor], r)));
}

TEST(Augment, MixupIsConvexCombination) {
  const auto img = image(7);
  const auto donors = torch::stack({image(8), image(9)});
  SampleLog log;
  const auto out = apply_one(TransformSpec::defaults(TransformId::mixup), img, 3, &log, donors);
  const double lam = *log[0].mix_weight;
  EXPECT_GE(lam, 0.0);
  EXPECT_LE(lam, 1.0);
  EXPECT_TRUE(torch::allclose(out, lam * img + (1 - lam) * donors[*log[0].donor], 1e-5, 1e-6));
}

TEST(Augment, CropsRespectAreaRange) {
  const auto img = image(10);
  for (auto id : {TransformId::intense_crop, TransformId::extreme_crop}) {
    const auto spec = TransformSpec::defaults(id);
    for (Seed s = 0; s < 20; ++s) {
      SampleLog log;
      const auto out = apply_one(spec, img, s, &log);
      EXPECT_EQ(out.sizes(), img.sizes());
      const double frac = static_cast<double>(log[0].region->area()) / (28.0 * 28.0);
      EXPECT_GE(frac, spec.param("min_area") - 0.08);
      EXPECT_LE(frac, spec.param("max_area") + 0.08);
    }
  }
}

TEST(Augment, PinnedParametersGiveIdentity) {
  const auto img = image(11);
  const auto rot = TransformSpec::defaults(TransformId::rotation).with("min_deg", 0.0).with("max_deg", 0.0);
  EXPECT_TRUE(torch::allclose(apply_one(rot, img, 1, nullptr), img, 1e-5, 1e-6));
  const auto noise = TransformSpec::defaults(TransformId::noise_injection).with("std", 0.0);
  EXPECT_TRUE(torch::allclose(apply_one(noise, img, 1, nullptr), img, 1e-6, 1e-7));
}

TEST(Augment, EveryTransformStaysInRangeAndIsSeeded) {
  const auto x = torch::rand({4, 3, 32, 32});
  for (const auto& spec : default_bank()) {
    const std::vector<TransformSpec> seq{spec};
    const auto a = apply_hard_sequence(x, seq, 42);
    const auto b = apply_hard_sequence(x, seq, 42);
    const auto c = apply_hard_sequence(x, seq, 43);
    EXPECT_EQ(a.sizes(), x.sizes()) << to_string(spec.id);
    EXPECT_TRUE(torch::equal(a, b)) << to_string(spec.id);
    EXPECT_FALSE(torch::equal(a, c)) << to_string(spec.id);
    EXPECT_GE(a.min().item<float>(), 0.f) << to_string(spec.id);
    EXPECT_LE(a.max().item<float>(), 1.f) << to_string(spec.id);
    EXPECT_FALSE(torch::equal(a, x)) << to_string(spec.id);
  }
}

TEST(Augment, WorkersDoNotChangeOutput) {
  const auto x = torch::rand({6, 1, 28, 28});
  const auto seq = sample_hard_sequence(5, default_bank());
  EXPECT_TRUE(torch::equal(apply_hard_sequence(x, seq, 9, nullptr, 1), apply_hard_sequence(x, seq, 9, nullptr, 3)));
}

TEST(Augment, SequenceSampling) {
  const auto bank = default_bank();
  for (Seed s = 0; s < 50; ++s) {
    const auto seq = sample_hard_sequence(s, bank);
    EXPECT_GE(seq.size(), 2u);
    EXPECT_LT(seq.size(), bank.size());
    std::set<TransformId> ids;
    for (const auto& t : seq) ids.insert(t.id);
    EXPECT_EQ(ids.size(), seq.size());
  }
  const std::vector<TransformSpec> two{TransformSpec::defaults(TransformId::jigsaw),
                                       TransformSpec::defaults(TransformId::cutout)};
  EXPECT_EQ(sample_hard_sequence(1, two).size(), 2u);
}

TEST(Augment, ValidationRejectsBadSpecs) {
  EXPECT_NO_THROW(validate(TransformSpec::defaults(TransformId::elastic)));
  EXPECT_THROW(validate(TransformSpec::defaults(TransformId::rotation).with("min_deg", 200)), ValidationError);
  EXPECT_THROW(validate(TransformSpec::defaults(TransformId::rotation).with("speed", 1)), ValidationError);
  EXPECT_THROW(validate(TransformSpec::defaults(TransformId::cutpaste).with("min_side", 0.4).with("max_side", 0.2)),
               ValidationError);
  EXPECT_THROW(parse_transform_id("solarize"), ValidationError);
}

TEST(Augment, LightViewsAreSeededAndBounded) {
  const auto x = torch::rand({5, 3, 32, 32});
  LightViewSpec spec;
  spec.seed = 3;
  std::vector<LightLog> logs;
  const auto a = apply_light_view(x, spec, &logs);
  const auto b = apply_light_view(x, spec);
  spec.seed = 4;
  const auto c = apply_light_view(x, spec);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_FALSE(torch::equal(a, c));
  EXPECT_EQ(a.sizes(), x.sizes());
  EXPECT_GE(a.min().item<float>(), 0.f);
  EXPECT_LE(a.max().item<float>(), 1.f);
  ASSERT_EQ(logs.size(), 5u);
  for (const auto& log : logs) {
    for (const auto& rec : log) {
      if (rec.op != LightOp::random_crop || !rec.crop) continue;
      const double frac = static_cast<double>(rec.crop->area()) / (32.0 * 32.0);
      EXPECT_GE(frac, 0.8 - 0.06);
      EXPECT_LE(frac, 1.0);
    }
  }
}

TEST(Augment, EmptyLightViewIsIdentity) {
  const auto x = torch::rand({2, 1, 28, 28});
  LightViewSpec spec;
  spec.ops.clear();
  EXPECT_TRUE(torch::equal(apply_light_view(x, spec), x));
}
