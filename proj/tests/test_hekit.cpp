#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedalign/aggregation.hpp"
#include "fedalign/hekit.hpp"

using namespace fedalign;
using namespace fedalign::he;

namespace {

// Multiplies by decrypting both sides and re-encrypting: a plaintext shortcut.
class LeakyCipher : public Cipher {
 public:
  CipherHandle enc(double x) const override { return inner_.enc(x); }
  double dec(const CipherHandle& h) const override { return inner_.dec(h); }
  CipherHandle add(const CipherHandle& a, const CipherHandle& b) const override { return inner_.add(a, b); }
  CipherHandle sub(const CipherHandle& a, const CipherHandle& b) const override { return inner_.sub(a, b); }
  CipherHandle mul(const CipherHandle& a, const CipherHandle& b) const override {
    return inner_.enc(inner_.dec(a) * inner_.dec(b));
  }
  double tolerance() const override { return inner_.tolerance(); }

 private:
  TransparentCipher inner_;
};

// Tags every subtraction result with PLAIN.
class PlainTagCipher : public Cipher {
 public:
  CipherHandle enc(double x) const override { return inner_.enc(x); }
  double dec(const CipherHandle& h) const override { return inner_.dec(h); }
  CipherHandle add(const CipherHandle& a, const CipherHandle& b) const override { return inner_.add(a, b); }
  CipherHandle sub(const CipherHandle& a, const CipherHandle& b) const override {
    auto t = combine(a, b, OpTag::Plain);
    return make_handle(payload(inner_.sub(a, b)), std::move(t));
  }
  CipherHandle mul(const CipherHandle& a, const CipherHandle& b) const override { return inner_.mul(a, b); }
  double tolerance() const override { return inner_.tolerance(); }

 private:
  TransparentCipher inner_;
};

std::vector<ClientUpdate> random_updates(Rng& rng, std::size_t k, std::size_t n, double mag) {
  std::vector<ClientUpdate> out;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-mag, mag);
    out.push_back({"c" + std::to_string(i), {RealVec(std::move(v)), "c"}, 1 + rng.uniform_int(50), 0.0});
  }
  return out;
}

}  // namespace

TEST(TransparentCipher, Examples) {
  const auto c = transparent_cipher();
  EXPECT_EQ(c.dec(c.enc(0.5)), 0.5);
  EXPECT_NEAR(c.dec(c.mul(c.enc(0.2), c.enc(0.1))), 0.02, 1.0 / FixedPointCodec::kDefaultScale);
  EXPECT_EQ(c.dec(c.sub(c.enc(1), c.enc(1))), 0.0);
  EXPECT_EQ(c.enc(0.5).trace(), std::vector<OpTag>{OpTag::Enc});
  const auto m = c.mul(c.enc(1), c.add(c.enc(2), c.enc(3)));
  EXPECT_EQ(m.trace(), (std::vector<OpTag>{OpTag::Enc, OpTag::Enc, OpTag::Enc, OpTag::Add, OpTag::Mul}));
}

TEST(TransparentCipher, RoundTripIsRoundedScale) {
  const auto c = transparent_cipher();
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const double x = rng.uniform(-1000, 1000);
    const double s = static_cast<double>(FixedPointCodec::kDefaultScale);
    EXPECT_EQ(c.dec(c.enc(x)), std::round(x * s) / s);
    EXPECT_LE(std::fabs(c.dec(c.enc(x)) - x), c.tolerance());
  }
}

TEST(EncVec, RoundTripZeroAndOverflow) {
  const auto c = transparent_cipher();
  Rng rng(5);
  std::vector<double> v(20);
  for (auto& x : v) x = rng.uniform(-50, 50);
  const RealVec rv(v);
  const auto hs = enc_vec(c, rv);
  for (const auto& h : hs) EXPECT_EQ(h.trace(), std::vector<OpTag>{OpTag::Enc});
  const RealVec back = dec_vec(c, hs);
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_LE(std::fabs(back[k] - v[k]), c.tolerance());
  EXPECT_EQ(dec_vec(c, enc_vec(c, RealVec::zeros(5))), RealVec::zeros(5));
  try {
    enc_vec(c, RealVec{1.0, 1e9});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OverflowAtScale);
  }
}

TEST(TransparentCipher, OperatorOverflowDetected) {
  const auto c = transparent_cipher();
  const auto big = c.enc(1000);
  try {
    c.mul(big, big);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OverflowAtScale);
  }
}

TEST(TransparentCipher, Homomorphism) {
  const auto c = transparent_cipher();
  const double tol = 2.0 / FixedPointCodec::kDefaultScale;
  Rng rng(6);
  for (int t = 0; t < 2000; ++t) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    EXPECT_NEAR(c.dec(c.add(c.enc(x), c.enc(y))), x + y, tol);
    EXPECT_NEAR(c.dec(c.sub(c.enc(x), c.enc(y))), x - y, tol);
    EXPECT_NEAR(c.dec(c.mul(c.enc(x), c.enc(y))), x * y, tol);
  }
}

TEST(FixedPointCodec, ScaleMustBePowerOfTwo) {
  EXPECT_THROW(FixedPointCodec(1000), Error);
  EXPECT_THROW(FixedPointCodec(0), Error);
  EXPECT_EQ(FixedPointCodec(1 << 10).scale(), 1 << 10);
}

TEST(FixedPointCodec, ProductRoundsHalfAwayFromZero) {
  const FixedPointCodec codec(4);
  // 3*2/4 = 1.5 -> 2; -3*2/4 = -1.5 -> -2.
  EXPECT_EQ(codec.rescale_product(3, 2), 2);
  EXPECT_EQ(codec.rescale_product(-3, 2), -2);
  EXPECT_EQ(codec.rescale_product(5, 1), 1);
}

TEST(EncryptedAggregate, MatchesPlaintextPipeline) {
  const auto c = transparent_cipher();
  Rng data(7);
  double worst = 0.0;
  for (int t = 0; t < 60; ++t) {
    const std::size_t k = 1 + data.uniform_int(4);
    const auto ups = random_updates(data, k, 1 + data.uniform_int(10), 1.0);
    AlignConfig cfg;
    cfg.weighting = t % 2 ? Weighting::uniform : Weighting::sample_weighted;
    cfg.accumulate = t % 3 != 0;
    cfg.target = t % 5 == 0 ? AlignTarget::current : AlignTarget::original;
    Rng rng(static_cast<std::uint64_t>(t));
    const auto rep = aggregate_aligned(ups, cfg, rng);

    std::vector<std::vector<CipherHandle>> enc;
    for (const auto& u : ups) enc.push_back(enc_vec(c, u.gradient.values));
    const auto out =
        aligned_aggregate_encrypted(enc, cfg.lambda, rep.tested_pairs, c, rep.weights, cfg.accumulate, cfg.target);
    const RealVec got = dec_vec(c, out.aggregated);
    for (std::size_t q = 0; q < got.size(); ++q) {
      worst = std::max(worst, std::fabs(got[q] - rep.aggregated.values[q]));
    }
    EXPECT_TRUE(out.audit.only_allowed_tags);
    EXPECT_EQ(out.audit.plaintext_accesses, 0u);
    EXPECT_EQ(out.audit.count(OpTag::Dec), 0u);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(EncryptedAggregate, ErrorWithinQuantizationBoundAtCoarseScale) {
  // Without conflicts at scale S the uniform pipeline rounds each input,
  // the 1/K constant and the final product once:
  //   |err| <= (0.5 + 0.5 * |sum g| + 0.5) / S.
  const std::int64_t scale = std::int64_t{1} << 20;
  const auto c = transparent_cipher(scale);
  Rng data(21);
  for (int t = 0; t < 500; ++t) {
    const std::size_t k = 1 + data.uniform_int(4);
    std::vector<std::vector<CipherHandle>> enc;
    std::vector<double> sum(3, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> v(3);
      for (std::size_t q = 0; q < 3; ++q) {
        v[q] = data.uniform(0, 1);
        sum[q] += v[q];
      }
      enc.push_back(enc_vec(c, RealVec(v)));
    }
    const auto out = aligned_aggregate_encrypted(enc, 0.1, {}, c, std::vector<double>(k, 1.0 / k));
    const RealVec got = dec_vec(c, out.aggregated);
    for (std::size_t q = 0; q < 3; ++q) {
      const double bound = (1.0 + 0.5 * sum[q]) / static_cast<double>(scale);
      EXPECT_LE(std::fabs(got[q] - sum[q] / k), bound);
    }
  }
}

TEST(EncryptedAggregate, NoConflictIsEncryptedAverage) {
  const auto c = transparent_cipher();
  const std::vector<RealVec> gs{RealVec{1, 0.5}, RealVec{0.25, 2}, RealVec{0, 1}};
  std::vector<std::vector<CipherHandle>> enc;
  for (const auto& g : gs) enc.push_back(enc_vec(c, g));
  const std::vector<TestedPair> schedule{{0, 1, 1.0, false}, {1, 2, 2.0, false}};
  const std::vector<double> w(3, 1.0 / 3.0);
  const auto out = aligned_aggregate_encrypted(enc, 0.1, schedule, c, w);
  const RealVec got = dec_vec(c, out.aggregated);
  EXPECT_NEAR(got[0], 1.25 / 3, 1e-6);
  EXPECT_NEAR(got[1], 3.5 / 3, 1e-6);
  for (const auto& h : out.aggregated) {
    for (OpTag tag : h.trace()) EXPECT_TRUE(is_allowed(tag));
  }
}

TEST(EncryptedAggregate, EveryOutputTraceUsesAllowedTags) {
  const auto c = transparent_cipher();
  Rng data(8);
  const auto ups = random_updates(data, 4, 5, 2.0);
  Rng rng(1);
  const auto rep = aggregate_aligned(ups, {}, rng);
  ASSERT_FALSE(rep.conflict_pairs.empty());
  std::vector<std::vector<CipherHandle>> enc;
  for (const auto& u : ups) enc.push_back(enc_vec(c, u.gradient.values));
  const auto out = aligned_aggregate_encrypted(enc, 0.1, rep.tested_pairs, c, rep.weights);
  for (const auto& h : out.aggregated) {
    ASSERT_FALSE(h.trace().empty());
    EXPECT_EQ(h.trace().front(), OpTag::Enc);
    for (OpTag tag : h.trace()) EXPECT_TRUE(is_allowed(tag));
  }
  EXPECT_GT(out.audit.count(OpTag::Mul), 0u);
  EXPECT_GT(out.audit.count(OpTag::Sub), 0u);
  EXPECT_EQ(out.audit.coordinates, 5u);
}

TEST(EncryptedAggregate, PlaintextShortcutIsCaught) {
  const LeakyCipher leaky;
  const auto ups = std::vector<RealVec>{RealVec{1, 0}, RealVec{-1, 0}};
  std::vector<std::vector<CipherHandle>> enc;
  for (const auto& g : ups) enc.push_back(enc_vec(leaky, g));
  const std::vector<TestedPair> schedule{{0, 1, -1.0, true}, {1, 0, -1.0, true}};
  try {
    aligned_aggregate_encrypted(enc, 0.1, schedule, leaky, {0.5, 0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TraceViolation);
  }
}

TEST(EncryptedAggregate, DisallowedTagIsCaught) {
  const PlainTagCipher plain;
  std::vector<std::vector<CipherHandle>> enc{enc_vec(plain, RealVec{1, 0}), enc_vec(plain, RealVec{-1, 0})};
  const std::vector<TestedPair> schedule{{0, 1, -1.0, true}};
  try {
    aligned_aggregate_encrypted(enc, 0.1, schedule, plain, {0.5, 0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TraceViolation);
  }
}

TEST(TraceAuditor, DecryptionWhileSealedIsViolation) {
  const auto c = transparent_cipher();
  TraceAuditor au(c);
  const auto h = au.enc(1.0);
  EXPECT_EQ(au.dec(h), 1.0);
  au.seal();
  try {
    au.dec(h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TraceViolation);
  }
  EXPECT_EQ(au.audit().plaintext_accesses, 1u);
}

TEST(EncryptedAggregate, ErrorPaths) {
  const auto c = transparent_cipher();
  std::vector<std::vector<CipherHandle>> enc{enc_vec(c, RealVec{1, 0}), enc_vec(c, RealVec{1})};
  EXPECT_THROW(aligned_aggregate_encrypted(enc, 0.1, {}, c, {0.5, 0.5}), Error);
  EXPECT_THROW(aligned_aggregate_encrypted({}, 0.1, {}, c, {}), Error);
  std::vector<std::vector<CipherHandle>> ok{enc_vec(c, RealVec{1}), enc_vec(c, RealVec{2})};
  EXPECT_THROW(aligned_aggregate_encrypted(ok, 0.7, {}, c, {0.5, 0.5}), Error);
  const std::vector<TestedPair> bad{{0, 5, -1.0, true}};
  EXPECT_THROW(aligned_aggregate_encrypted(ok, 0.1, bad, c, {0.5, 0.5}), Error);
}
