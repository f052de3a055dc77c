#pragma once

// Homomorphic-operator facade. The server-side alignment arithmetic is run
// purely through Cipher::add/sub/mul on opaque handles, and every handle
// carries the operator lineage that produced it so an auditor can prove no
// plaintext arithmetic happened between the clients' ENC and the final DEC.
//
// The reference TransparentCipher is a fixed-point carrier with exact
// operator semantics and no secrecy. Any real scheme plugs in behind the
// same interface.
//
// Conflict tests need a sign comparison, which an add/sub/mul algebra cannot
// provide. The per-pair decisions are therefore an input (a TestedPair
// schedule produced by a trusted comparator) and only the alignment and
// averaging arithmetic runs on handles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedalign/aggregation.hpp"
#include "fedalign/error.hpp"
#include "fedalign/numcore.hpp"

namespace fedalign::he {

enum class OpTag : std::uint8_t { Enc, Add, Sub, Mul, Dec, Plain };

inline constexpr std::array<OpTag, 4> kAllowedTags{OpTag::Enc, OpTag::Add, OpTag::Sub, OpTag::Mul};

inline constexpr bool is_allowed(OpTag t) { return t == OpTag::Enc || t == OpTag::Add || t == OpTag::Sub || t == OpTag::Mul; }

inline std::string to_string(OpTag t) {
  switch (t) {
    case OpTag::Enc: return "ENC";
    case OpTag::Add: return "ADD";
    case OpTag::Sub: return "SUB";
    case OpTag::Mul: return "MUL";
    case OpTag::Dec: return "DEC";
    case OpTag::Plain: return "PLAIN";
  }
  return "?";
}

class Cipher;

// Opaque ciphertext plus its operator lineage. Only Cipher implementations
// can read or build the payload.
class CipherHandle {
 public:
  const std::vector<OpTag>& trace() const noexcept { return trace_; }

 private:
  friend class Cipher;
  CipherHandle(std::int64_t payload, std::vector<OpTag> trace) : payload_(payload), trace_(std::move(trace)) {}

  std::int64_t payload_ = 0;
  std::vector<OpTag> trace_;
};

class Cipher {
 public:
  virtual ~Cipher() = default;

  virtual CipherHandle enc(double x) const = 0;
  virtual double dec(const CipherHandle& h) const = 0;
  virtual CipherHandle add(const CipherHandle& a, const CipherHandle& b) const = 0;
  virtual CipherHandle sub(const CipherHandle& a, const CipherHandle& b) const = 0;
  virtual CipherHandle mul(const CipherHandle& a, const CipherHandle& b) const = 0;

  // Round-trip bound |dec(enc(x)) - x|.
  virtual double tolerance() const = 0;

 protected:
  static std::int64_t payload(const CipherHandle& h) noexcept { return h.payload_; }

  static CipherHandle make_handle(std::int64_t payload, std::vector<OpTag> trace) {
    return CipherHandle(payload, std::move(trace));
  }

  // Lineage of a binary operator result: a's trace, b's trace, then the op.
  static std::vector<OpTag> combine(const CipherHandle& a, const CipherHandle& b, OpTag op) {
    std::vector<OpTag> t;
    t.reserve(a.trace().size() + b.trace().size() + 1);
    t.insert(t.end(), a.trace().begin(), a.trace().end());
    t.insert(t.end(), b.trace().begin(), b.trace().end());
    t.push_back(op);
    return t;
  }
};

// Reals as integers scaled by a power of two. Encoded magnitudes are capped
// at 2^40 so that a product of two encodings always fits before rescaling.
// The default scale 2^24 keeps an aggregation pipeline (encode, weight,
// rescale) below 1e-6 absolute error; representable range is +-65536.
class FixedPointCodec {
 public:
  static constexpr std::int64_t kDefaultScale = std::int64_t{1} << 24;
  static constexpr std::int64_t kMaxEncoded = std::int64_t{1} << 40;

  explicit FixedPointCodec(std::int64_t scale = kDefaultScale) : scale_(scale) {
    if (scale <= 0 || (scale & (scale - 1)) != 0) {
      throw Error(ErrorKind::InvalidSpec, "fixed-point scale must be a positive power of two");
    }
  }

  std::int64_t scale() const noexcept { return scale_; }

  std::int64_t encode(double x) const {
    if (!std::isfinite(x)) throw Error(ErrorKind::NonFiniteResult, "cannot encode a non-finite value");
    const double scaled = x * static_cast<double>(scale_);
    if (std::fabs(scaled) > static_cast<double>(kMaxEncoded)) {
      throw Error(ErrorKind::OverflowAtScale, "value " + std::to_string(x) + " exceeds the codec range at scale " +
                                                  std::to_string(scale_));
    }
    return std::llround(scaled);
  }

  double decode(std::int64_t v) const { return static_cast<double>(v) / static_cast<double>(scale_); }

  std::int64_t checked(__int128 v) const {
    if (v > kMaxEncoded || v < -kMaxEncoded) {
      throw Error(ErrorKind::OverflowAtScale, "operator result exceeds the codec range");
    }
    return static_cast<std::int64_t>(v);
  }

  // a*b/scale rounded half away from zero; exactly one rescale per product.
  std::int64_t rescale_product(std::int64_t a, std::int64_t b) const {
    const __int128 p = static_cast<__int128>(a) * b;
    const __int128 half = scale_ / 2;
    const __int128 q = p >= 0 ? (p + half) / scale_ : -((-p + half) / scale_);
    return checked(q);
  }

 private:
  std::int64_t scale_;
};

// dec(enc(x)) == round(x*scale)/scale; operators are exact integer arithmetic.
class TransparentCipher : public Cipher {
 public:
  explicit TransparentCipher(FixedPointCodec codec = FixedPointCodec{}) : codec_(codec) {}

  CipherHandle enc(double x) const override { return make_handle(codec_.encode(x), {OpTag::Enc}); }

  double dec(const CipherHandle& h) const override { return codec_.decode(payload(h)); }

  CipherHandle add(const CipherHandle& a, const CipherHandle& b) const override {
    return make_handle(codec_.checked(static_cast<__int128>(payload(a)) + payload(b)), combine(a, b, OpTag::Add));
  }

  CipherHandle sub(const CipherHandle& a, const CipherHandle& b) const override {
    return make_handle(codec_.checked(static_cast<__int128>(payload(a)) - payload(b)), combine(a, b, OpTag::Sub));
  }

  CipherHandle mul(const CipherHandle& a, const CipherHandle& b) const override {
    return make_handle(codec_.rescale_product(payload(a), payload(b)), combine(a, b, OpTag::Mul));
  }

  double tolerance() const override { return 1.0 / static_cast<double>(codec_.scale()); }

  const FixedPointCodec& codec() const noexcept { return codec_; }

 private:
  FixedPointCodec codec_;
};

inline TransparentCipher transparent_cipher(std::int64_t scale = FixedPointCodec::kDefaultScale) {
  return TransparentCipher(FixedPointCodec(scale));
}

inline std::vector<CipherHandle> enc_vec(const Cipher& cipher, const RealVec& v) {
  std::vector<CipherHandle> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(cipher.enc(x));
  return out;
}

inline RealVec dec_vec(const Cipher& cipher, std::span<const CipherHandle> v) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& h : v) out.push_back(cipher.dec(h));
  return RealVec(std::move(out));
}

struct TraceAudit {
  std::array<std::size_t, 6> op_counts{};  // indexed by OpTag
  std::size_t coordinates = 0;
  std::size_t max_trace_length = 0;
  std::size_t plaintext_accesses = 0;
  bool only_allowed_tags = true;

  std::size_t count(OpTag t) const { return op_counts[static_cast<std::size_t>(t)]; }
};

// Forwards to another Cipher while checking every result's lineage. While
// sealed, dec() is a violation.
class TraceAuditor : public Cipher {
 public:
  explicit TraceAuditor(const Cipher& inner) : inner_(inner) {}

  void seal() noexcept { sealed_ = true; }
  void unseal() noexcept { sealed_ = false; }
  const TraceAudit& audit() const noexcept { return audit_; }

  CipherHandle enc(double x) const override {
    CipherHandle h = inner_.enc(x);
    if (h.trace().size() != 1 || h.trace().front() != OpTag::Enc) violation("enc produced a non-[ENC] trace");
    bump(OpTag::Enc);
    return h;
  }

  double dec(const CipherHandle& h) const override {
    if (sealed_) {
      ++audit_.plaintext_accesses;
      violation("decryption requested inside the sealed server computation");
    }
    return inner_.dec(h);
  }

  CipherHandle add(const CipherHandle& a, const CipherHandle& b) const override {
    return checked(a, b, inner_.add(a, b), OpTag::Add);
  }
  CipherHandle sub(const CipherHandle& a, const CipherHandle& b) const override {
    return checked(a, b, inner_.sub(a, b), OpTag::Sub);
  }
  CipherHandle mul(const CipherHandle& a, const CipherHandle& b) const override {
    return checked(a, b, inner_.mul(a, b), OpTag::Mul);
  }

  double tolerance() const override { return inner_.tolerance(); }

  // Every tag in every handle must come from the allowed operator set.
  void audit_outputs(std::span<const CipherHandle> outputs) {
    for (const auto& h : outputs) {
      ++audit_.coordinates;
      audit_.max_trace_length = std::max(audit_.max_trace_length, h.trace().size());
      if (h.trace().empty() || h.trace().front() != OpTag::Enc) violation("output lineage does not start at ENC");
      for (OpTag t : h.trace()) {
        if (!is_allowed(t)) {
          audit_.only_allowed_tags = false;
          violation("output lineage contains " + to_string(t));
        }
      }
    }
  }

 private:
  [[noreturn]] static void violation(const std::string& what) { throw Error(ErrorKind::TraceViolation, what); }

  void bump(OpTag t) const { ++audit_.op_counts[static_cast<std::size_t>(t)]; }

  CipherHandle checked(const CipherHandle& a, const CipherHandle& b, CipherHandle result, OpTag op) const {
    const auto& t = result.trace();
    const std::size_t na = a.trace().size();
    const std::size_t nb = b.trace().size();
    const bool lineage_ok = t.size() == na + nb + 1 && t.back() == op &&
                            std::equal(a.trace().begin(), a.trace().end(), t.begin()) &&
                            std::equal(b.trace().begin(), b.trace().end(), t.begin() + static_cast<std::ptrdiff_t>(na));
    if (!lineage_ok) violation(to_string(op) + " result does not descend from its operands");
    for (OpTag tag : t) {
      if (!is_allowed(tag)) {
        audit_.only_allowed_tags = false;
        violation(to_string(op) + " result carries disallowed tag " + to_string(tag));
      }
    }
    bump(op);
    return result;
  }

  const Cipher& inner_;
  bool sealed_ = false;
  mutable TraceAudit audit_;
};

struct EncryptedAggregate {
  std::vector<CipherHandle> aggregated;
  std::vector<std::vector<CipherHandle>> aligned;
  TraceAudit audit;
};

// Replays the alignment arithmetic on ciphertexts:
//   E(h_i) <- E(base_i) - E(2)*E(lambda)*(E(base_i) - E(t_j))
// for every conflicting entry of `schedule` (in order), then the weighted sum.
// Uniform weights are applied as one multiplication of the sum by E(1/K).
inline EncryptedAggregate aligned_aggregate_encrypted(const std::vector<std::vector<CipherHandle>>& enc_grads,
                                                      double lambda, std::span<const TestedPair> schedule,
                                                      const Cipher& cipher, const std::vector<double>& weights,
                                                      bool accumulate = true,
                                                      AlignTarget target = AlignTarget::original) {
  if (enc_grads.empty()) throw Error(ErrorKind::EmptyUpdateSet, "no encrypted gradients");
  if (!(lambda > 0.0 && lambda <= 0.5)) throw Error(ErrorKind::InvalidLambda, "lambda must lie in (0, 0.5]");
  const std::size_t k = enc_grads.size();
  const std::size_t n = enc_grads.front().size();
  for (const auto& g : enc_grads) detail::require_same_length(g.size(), n, "aligned_aggregate_encrypted");
  detail::require_same_length(weights.size(), k, "aligned_aggregate_encrypted weights");

  TraceAuditor au(cipher);
  au.seal();

  const auto& original = enc_grads;
  std::vector<std::vector<CipherHandle>> working = enc_grads;
  const CipherHandle two_lambda = au.mul(au.enc(2.0), au.enc(lambda));

  for (const TestedPair& p : schedule) {
    if (p.i >= k || p.j >= k || p.i == p.j) throw Error(ErrorKind::InvalidSpec, "schedule references an invalid pair");
    if (!p.conflict) continue;
    const auto& base = accumulate ? working[p.i] : original[p.i];
    const auto& toward = target == AlignTarget::original ? original[p.j] : working[p.j];
    std::vector<CipherHandle> next;
    next.reserve(n);
    for (std::size_t c = 0; c < n; ++c) {
      next.push_back(au.sub(base[c], au.mul(two_lambda, au.sub(base[c], toward[c]))));
    }
    working[p.i] = std::move(next);
  }

  bool uniform = true;
  for (double w : weights) uniform = uniform && w == weights.front();

  std::vector<CipherHandle> agg;
  agg.reserve(n);
  if (uniform) {
    const CipherHandle ew = au.enc(weights.front());
    for (std::size_t c = 0; c < n; ++c) {
      CipherHandle acc = working[0][c];
      for (std::size_t i = 1; i < k; ++i) acc = au.add(acc, working[i][c]);
      agg.push_back(au.mul(ew, acc));
    }
  } else {
    std::vector<CipherHandle> ew;
    for (double w : weights) ew.push_back(au.enc(w));
    for (std::size_t c = 0; c < n; ++c) {
      CipherHandle acc = au.mul(ew[0], working[0][c]);
      for (std::size_t i = 1; i < k; ++i) acc = au.add(acc, au.mul(ew[i], working[i][c]));
      agg.push_back(std::move(acc));
    }
  }

  au.audit_outputs(agg);
  au.unseal();
  return {std::move(agg), std::move(working), au.audit()};
}

}  // namespace fedalign::he
