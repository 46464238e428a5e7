#include "capauth/jose.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/ec.h>
#include <openssl/ecdsa.h>
#include <openssl/evp.h>
#include <openssl/param_build.h>
#include <openssl/rsa.h>
#include <openssl/sha.h>

#include <array>
#include <cstring>
#include <stdexcept>

#include "capauth/base64url.hpp"

namespace capauth::jose {

namespace {

[[noreturn]] void crypto_fail(const char* what) {
    throw std::runtime_error(std::string("openssl failure: ") + what);
}

EvpKeyHandle wrap_pkey(EVP_PKEY* p) {
    if (p == nullptr) crypto_fail("null EVP_PKEY");
    return EvpKeyHandle(p, EVP_PKEY_free);
}

struct BnDeleter {
    void operator()(BIGNUM* b) const { BN_clear_free(b); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;

struct BnCtxDeleter {
    void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxDeleter>;

std::array<uint8_t, 32> sha256(std::string_view data) {
    std::array<uint8_t, 32> out{};
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(),
           out.data());
    return out;
}

std::string hex_lower(std::span<const uint8_t> data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

// Deterministic byte stream for seeded key generation: SHA-256 over
// (seed digest || domain tag || block counter).
class DetRng {
public:
    DetRng(std::string_view seed, std::string_view domain) {
        std::string material(seed);
        material += '\0';
        material += domain;
        state_ = sha256(material);
    }

    void fill(uint8_t* out, size_t n) {
        while (n > 0) {
            if (pos_ == buf_.size()) refill();
            size_t take = std::min(n, buf_.size() - pos_);
            std::memcpy(out, buf_.data() + pos_, take);
            pos_ += take;
            out += take;
            n -= take;
        }
    }

    std::vector<uint8_t> bytes(size_t n) {
        std::vector<uint8_t> out(n);
        fill(out.data(), n);
        return out;
    }

private:
    void refill() {
        std::string block(reinterpret_cast<const char*>(state_.data()),
                          state_.size());
        for (int i = 7; i >= 0; --i)
            block.push_back(static_cast<char>((counter_ >> (i * 8)) & 0xff));
        auto digest = sha256(block);
        buf_.assign(digest.begin(), digest.end());
        pos_ = 0;
        ++counter_;
    }

    std::array<uint8_t, 32> state_{};
    uint64_t counter_ = 0;
    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
};

const std::vector<uint64_t>& small_primes() {
    static const std::vector<uint64_t> primes = [] {
        constexpr size_t limit = 1 << 16;
        std::vector<bool> sieve(limit, true);
        std::vector<uint64_t> out;
        for (size_t i = 2; i < limit; ++i) {
            if (!sieve[i]) continue;
            out.push_back(i);
            for (size_t j = i * i; j < limit; j += i) sieve[j] = false;
        }
        return out;
    }();
    return primes;
}

bool miller_rabin(const BIGNUM* n, DetRng& rng, BN_CTX* ctx, int rounds) {
    BnPtr n1(BN_dup(n));
    BN_sub_word(n1.get(), 1);
    BnPtr d(BN_dup(n1.get()));
    int s = 0;
    while (!BN_is_odd(d.get())) {
        BN_rshift1(d.get(), d.get());
        ++s;
    }
    BnPtr n3(BN_dup(n));
    BN_sub_word(n3.get(), 3);
    BnPtr a(BN_new());
    BnPtr x(BN_new());
    size_t nbytes = static_cast<size_t>(BN_num_bytes(n));
    for (int round = 0; round < rounds; ++round) {
        // Base in [2, n-2], drawn deterministically.
        auto raw = rng.bytes(nbytes + 8);
        BN_bin2bn(raw.data(), static_cast<int>(raw.size()), a.get());
        BN_mod(a.get(), a.get(), n3.get(), ctx);
        BN_add_word(a.get(), 2);
        if (!BN_mod_exp(x.get(), a.get(), d.get(), n, ctx)) crypto_fail("BN_mod_exp");
        if (BN_is_one(x.get()) || BN_cmp(x.get(), n1.get()) == 0) continue;
        bool witness = true;
        for (int i = 0; i < s - 1; ++i) {
            if (!BN_mod_sqr(x.get(), x.get(), n, ctx)) crypto_fail("BN_mod_sqr");
            if (BN_cmp(x.get(), n1.get()) == 0) {
                witness = false;
                break;
            }
        }
        if (witness) return false;
    }
    return true;
}

// Deterministic probable-prime search for seeded RSA generation. Also
// requires gcd(e, p-1) == 1 so the public exponent is usable.
BnPtr det_prime(int bits, DetRng& rng, BN_CTX* ctx, const BIGNUM* e) {
    size_t nbytes = static_cast<size_t>(bits / 8);
    BnPtr cand(BN_new());
    BnPtr p1(BN_new());
    BnPtr g(BN_new());
    for (;;) {
        auto raw = rng.bytes(nbytes);
        raw[0] |= 0xC0;  // top two bits: product of two such primes keeps full width
        raw[nbytes - 1] |= 0x01;
        BN_bin2bn(raw.data(), static_cast<int>(raw.size()), cand.get());
        bool divisible = false;
        for (uint64_t p : small_primes()) {
            if (BN_mod_word(cand.get(), p) == 0) {
                divisible = true;
                break;
            }
        }
        if (divisible) continue;
        if (!miller_rabin(cand.get(), rng, ctx, 64)) continue;
        BN_copy(p1.get(), cand.get());
        BN_sub_word(p1.get(), 1);
        BN_gcd(g.get(), p1.get(), e, ctx);
        if (!BN_is_one(g.get())) continue;
        return cand;
    }
}

std::string bn_to_b64(const BIGNUM* bn, int pad_to = 0) {
    int len = pad_to > 0 ? pad_to : BN_num_bytes(bn);
    std::vector<uint8_t> buf(static_cast<size_t>(len));
    if (pad_to > 0) {
        if (BN_bn2binpad(bn, buf.data(), len) < 0) crypto_fail("BN_bn2binpad");
    } else {
        BN_bn2bin(bn, buf.data());
    }
    return b64url::encode(buf);
}

Result<BnPtr, KeyError> bn_from_member(const json& jwk, const char* name) {
    auto it = jwk.find(name);
    if (it == jwk.end() || !it->is_string()) return KeyError::MissingMember;
    auto bytes = b64url::decode(it->get_ref<const std::string&>());
    if (!bytes) return KeyError::MalformedKey;
    BnPtr bn(BN_bin2bn(bytes->data(), static_cast<int>(bytes->size()), nullptr));
    if (!bn) return KeyError::CryptoFailure;
    return bn;
}

constexpr int kP521CoordBytes = 66;
constexpr size_t kEd25519KeyBytes = 32;

EvpKeyHandle rsa_from_parts(const BIGNUM* n, const BIGNUM* e, const BIGNUM* d,
                            const BIGNUM* p, const BIGNUM* q, const BIGNUM* dp,
                            const BIGNUM* dq, const BIGNUM* qi) {
    OSSL_PARAM_BLD* bld = OSSL_PARAM_BLD_new();
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_N, n);
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_E, e);
    if (d) OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_D, d);
    if (p) OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_FACTOR1, p);
    if (q) OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_FACTOR2, q);
    if (dp) OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_EXPONENT1, dp);
    if (dq) OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_EXPONENT2, dq);
    if (qi) OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_COEFFICIENT1, qi);
    OSSL_PARAM* params = OSSL_PARAM_BLD_to_param(bld);
    OSSL_PARAM_BLD_free(bld);
    if (!params) crypto_fail("OSSL_PARAM_BLD_to_param");

    EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new_from_name(nullptr, "RSA", nullptr);
    EVP_PKEY* pkey = nullptr;
    int selection = d ? EVP_PKEY_KEYPAIR : EVP_PKEY_PUBLIC_KEY;
    if (!ctx || EVP_PKEY_fromdata_init(ctx) <= 0 ||
        EVP_PKEY_fromdata(ctx, &pkey, selection, params) <= 0) {
        EVP_PKEY_CTX_free(ctx);
        OSSL_PARAM_free(params);
        crypto_fail("RSA fromdata");
    }
    EVP_PKEY_CTX_free(ctx);
    OSSL_PARAM_free(params);
    return wrap_pkey(pkey);
}

EvpKeyHandle ec_p521_from_parts(const BIGNUM* d,
                                std::span<const uint8_t> pub_point) {
    OSSL_PARAM_BLD* bld = OSSL_PARAM_BLD_new();
    OSSL_PARAM_BLD_push_utf8_string(bld, OSSL_PKEY_PARAM_GROUP_NAME, "P-521", 0);
    OSSL_PARAM_BLD_push_octet_string(bld, OSSL_PKEY_PARAM_PUB_KEY,
                                     pub_point.data(), pub_point.size());
    if (d) OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_PRIV_KEY, d);
    OSSL_PARAM* params = OSSL_PARAM_BLD_to_param(bld);
    OSSL_PARAM_BLD_free(bld);
    if (!params) crypto_fail("OSSL_PARAM_BLD_to_param");

    EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr);
    EVP_PKEY* pkey = nullptr;
    int selection = d ? EVP_PKEY_KEYPAIR : EVP_PKEY_PUBLIC_KEY;
    if (!ctx || EVP_PKEY_fromdata_init(ctx) <= 0 ||
        EVP_PKEY_fromdata(ctx, &pkey, selection, params) <= 0) {
        EVP_PKEY_CTX_free(ctx);
        OSSL_PARAM_free(params);
        crypto_fail("EC fromdata");
    }
    EVP_PKEY_CTX_free(ctx);
    OSSL_PARAM_free(params);
    return wrap_pkey(pkey);
}

std::vector<uint8_t> uncompressed_point(const BIGNUM* x, const BIGNUM* y) {
    std::vector<uint8_t> out(1 + 2 * kP521CoordBytes);
    out[0] = 0x04;
    if (BN_bn2binpad(x, out.data() + 1, kP521CoordBytes) < 0 ||
        BN_bn2binpad(y, out.data() + 1 + kP521CoordBytes, kP521CoordBytes) < 0)
        crypto_fail("BN_bn2binpad");
    return out;
}

BnPtr get_bn_param(EVP_PKEY* pkey, const char* name) {
    BIGNUM* bn = nullptr;
    if (EVP_PKEY_get_bn_param(pkey, name, &bn) <= 0) crypto_fail(name);
    return BnPtr(bn);
}

json public_jwk_of(SignatureAlgorithm alg, EVP_PKEY* pkey) {
    json jwk = json::object();
    switch (alg) {
        case SignatureAlgorithm::EdDSA: {
            std::array<uint8_t, kEd25519KeyBytes> raw{};
            size_t len = raw.size();
            if (EVP_PKEY_get_raw_public_key(pkey, raw.data(), &len) <= 0 ||
                len != raw.size())
                crypto_fail("raw public key");
            jwk["kty"] = "OKP";
            jwk["crv"] = "Ed25519";
            jwk["x"] = b64url::encode(std::span<const uint8_t>(raw));
            break;
        }
        case SignatureAlgorithm::RS256:
        case SignatureAlgorithm::PS256: {
            auto n = get_bn_param(pkey, OSSL_PKEY_PARAM_RSA_N);
            auto e = get_bn_param(pkey, OSSL_PKEY_PARAM_RSA_E);
            jwk["kty"] = "RSA";
            jwk["n"] = bn_to_b64(n.get());
            jwk["e"] = bn_to_b64(e.get());
            break;
        }
        case SignatureAlgorithm::ES512: {
            auto x = get_bn_param(pkey, OSSL_PKEY_PARAM_EC_PUB_X);
            auto y = get_bn_param(pkey, OSSL_PKEY_PARAM_EC_PUB_Y);
            jwk["kty"] = "EC";
            jwk["crv"] = "P-521";
            jwk["x"] = bn_to_b64(x.get(), kP521CoordBytes);
            jwk["y"] = bn_to_b64(y.get(), kP521CoordBytes);
            break;
        }
    }
    return jwk;
}

const EVP_MD* digest_for(SignatureAlgorithm alg) {
    switch (alg) {
        case SignatureAlgorithm::EdDSA: return nullptr;
        case SignatureAlgorithm::RS256:
        case SignatureAlgorithm::PS256: return EVP_sha256();
        case SignatureAlgorithm::ES512: return EVP_sha512();
    }
    return nullptr;
}

bool alg_matches_kty(SignatureAlgorithm alg, std::string_view kty) {
    switch (alg) {
        case SignatureAlgorithm::EdDSA: return kty == "OKP";
        case SignatureAlgorithm::RS256:
        case SignatureAlgorithm::PS256: return kty == "RSA";
        case SignatureAlgorithm::ES512: return kty == "EC";
    }
    return false;
}

std::vector<uint8_t> ecdsa_der_to_raw(std::span<const uint8_t> der) {
    const unsigned char* p = der.data();
    ECDSA_SIG* sig = d2i_ECDSA_SIG(nullptr, &p, static_cast<long>(der.size()));
    if (!sig) crypto_fail("d2i_ECDSA_SIG");
    const BIGNUM* r = nullptr;
    const BIGNUM* s = nullptr;
    ECDSA_SIG_get0(sig, &r, &s);
    std::vector<uint8_t> raw(2 * kP521CoordBytes);
    int ok1 = BN_bn2binpad(r, raw.data(), kP521CoordBytes);
    int ok2 = BN_bn2binpad(s, raw.data() + kP521CoordBytes, kP521CoordBytes);
    ECDSA_SIG_free(sig);
    if (ok1 < 0 || ok2 < 0) crypto_fail("BN_bn2binpad");
    return raw;
}

std::optional<std::vector<uint8_t>> ecdsa_raw_to_der(
    std::span<const uint8_t> raw) {
    if (raw.size() != 2 * kP521CoordBytes) return std::nullopt;
    ECDSA_SIG* sig = ECDSA_SIG_new();
    BIGNUM* r = BN_bin2bn(raw.data(), kP521CoordBytes, nullptr);
    BIGNUM* s = BN_bin2bn(raw.data() + kP521CoordBytes, kP521CoordBytes, nullptr);
    if (!sig || !r || !s || ECDSA_SIG_set0(sig, r, s) != 1) {
        ECDSA_SIG_free(sig);
        return std::nullopt;
    }
    int len = i2d_ECDSA_SIG(sig, nullptr);
    if (len <= 0) {
        ECDSA_SIG_free(sig);
        return std::nullopt;
    }
    std::vector<uint8_t> der(static_cast<size_t>(len));
    unsigned char* out = der.data();
    i2d_ECDSA_SIG(sig, &out);
    ECDSA_SIG_free(sig);
    return der;
}

std::vector<uint8_t> sign_bytes(SignatureAlgorithm alg, EVP_PKEY* pkey,
                                std::string_view data) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) crypto_fail("EVP_MD_CTX_new");
    EVP_PKEY_CTX* pctx = nullptr;
    if (EVP_DigestSignInit(ctx, &pctx, digest_for(alg), nullptr, pkey) <= 0) {
        EVP_MD_CTX_free(ctx);
        crypto_fail("EVP_DigestSignInit");
    }
    if (alg == SignatureAlgorithm::PS256) {
        if (EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING) <= 0 ||
            EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_DIGEST) <= 0) {
            EVP_MD_CTX_free(ctx);
            crypto_fail("PSS params");
        }
    }
    size_t len = 0;
    const auto* in = reinterpret_cast<const unsigned char*>(data.data());
    if (EVP_DigestSign(ctx, nullptr, &len, in, data.size()) <= 0) {
        EVP_MD_CTX_free(ctx);
        crypto_fail("EVP_DigestSign size");
    }
    std::vector<uint8_t> sig(len);
    if (EVP_DigestSign(ctx, sig.data(), &len, in, data.size()) <= 0) {
        EVP_MD_CTX_free(ctx);
        crypto_fail("EVP_DigestSign");
    }
    sig.resize(len);
    EVP_MD_CTX_free(ctx);
    if (alg == SignatureAlgorithm::ES512) sig = ecdsa_der_to_raw(sig);
    return sig;
}

bool verify_bytes(SignatureAlgorithm alg, EVP_PKEY* pkey, std::string_view data,
                  std::span<const uint8_t> signature) {
    std::vector<uint8_t> der;
    if (alg == SignatureAlgorithm::ES512) {
        auto converted = ecdsa_raw_to_der(signature);
        if (!converted) return false;
        der = std::move(*converted);
        signature = der;
    }
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) crypto_fail("EVP_MD_CTX_new");
    EVP_PKEY_CTX* pctx = nullptr;
    if (EVP_DigestVerifyInit(ctx, &pctx, digest_for(alg), nullptr, pkey) <= 0) {
        EVP_MD_CTX_free(ctx);
        return false;
    }
    if (alg == SignatureAlgorithm::PS256) {
        if (EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING) <= 0 ||
            EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_DIGEST) <= 0) {
            EVP_MD_CTX_free(ctx);
            return false;
        }
    }
    int rc = EVP_DigestVerify(ctx, signature.data(), signature.size(),
                              reinterpret_cast<const unsigned char*>(data.data()),
                              data.size());
    EVP_MD_CTX_free(ctx);
    return rc == 1;
}

}  // namespace

std::string to_string(SignatureAlgorithm alg) {
    switch (alg) {
        case SignatureAlgorithm::EdDSA: return "EdDSA";
        case SignatureAlgorithm::RS256: return "RS256";
        case SignatureAlgorithm::PS256: return "PS256";
        case SignatureAlgorithm::ES512: return "ES512";
    }
    return "?";
}

std::optional<SignatureAlgorithm> parse_algorithm(std::string_view name) {
    if (name == "EdDSA") return SignatureAlgorithm::EdDSA;
    if (name == "RS256") return SignatureAlgorithm::RS256;
    if (name == "PS256") return SignatureAlgorithm::PS256;
    if (name == "ES512") return SignatureAlgorithm::ES512;
    return std::nullopt;
}

std::string to_string(KeyError err) {
    switch (err) {
        case KeyError::UnsupportedAlgorithm: return "unsupported_algorithm";
        case KeyError::MalformedKey: return "malformed_key";
        case KeyError::MissingMember: return "missing_member";
        case KeyError::CryptoFailure: return "crypto_failure";
    }
    return "?";
}

std::string to_string(VerifyError err) {
    switch (err) {
        case VerifyError::MalformedCompact: return "malformed_compact";
        case VerifyError::MalformedBase64: return "malformed_base64";
        case VerifyError::MalformedJson: return "malformed_json";
        case VerifyError::UnsupportedAlgorithm: return "unsupported_algorithm";
        case VerifyError::SignatureMismatch: return "signature_mismatch";
    }
    return "?";
}

Result<PublicKey, KeyError> PublicKey::from_jwk(const json& jwk) {
    if (!jwk.is_object()) return KeyError::MalformedKey;
    auto kty_it = jwk.find("kty");
    if (kty_it == jwk.end() || !kty_it->is_string())
        return KeyError::MissingMember;
    const std::string kty = kty_it->get<std::string>();

    if (kty == "OKP") {
        auto crv = jwk.find("crv");
        if (crv == jwk.end() || *crv != "Ed25519")
            return KeyError::UnsupportedAlgorithm;
        auto x = jwk.find("x");
        if (x == jwk.end() || !x->is_string()) return KeyError::MissingMember;
        auto raw = b64url::decode(x->get_ref<const std::string&>());
        if (!raw || raw->size() != kEd25519KeyBytes)
            return KeyError::MalformedKey;
        EVP_PKEY* pkey = EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr,
                                                     raw->data(), raw->size());
        if (!pkey) return KeyError::MalformedKey;
        return PublicKey(jwk, kty, wrap_pkey(pkey));
    }
    if (kty == "RSA") {
        auto n = bn_from_member(jwk, "n");
        if (!n) return n.error();
        auto e = bn_from_member(jwk, "e");
        if (!e) return e.error();
        try {
            auto pkey = rsa_from_parts(n.value().get(), e.value().get(), nullptr,
                                       nullptr, nullptr, nullptr, nullptr, nullptr);
            return PublicKey(jwk, kty, std::move(pkey));
        } catch (const std::runtime_error&) {
            return KeyError::MalformedKey;
        }
    }
    if (kty == "EC") {
        auto crv = jwk.find("crv");
        if (crv == jwk.end() || *crv != "P-521")
            return KeyError::UnsupportedAlgorithm;
        auto x = bn_from_member(jwk, "x");
        if (!x) return x.error();
        auto y = bn_from_member(jwk, "y");
        if (!y) return y.error();
        try {
            auto point = uncompressed_point(x.value().get(), y.value().get());
            auto pkey = ec_p521_from_parts(nullptr, point);
            return PublicKey(jwk, kty, std::move(pkey));
        } catch (const std::runtime_error&) {
            return KeyError::MalformedKey;
        }
    }
    return KeyError::UnsupportedAlgorithm;
}

json KeyPair::private_jwk() const {
    json jwk = public_jwk_;
    jwk["alg"] = to_string(alg_);
    switch (alg_) {
        case SignatureAlgorithm::EdDSA: {
            std::array<uint8_t, kEd25519KeyBytes> raw{};
            size_t len = raw.size();
            if (EVP_PKEY_get_raw_private_key(pkey_.get(), raw.data(), &len) <= 0)
                crypto_fail("raw private key");
            jwk["d"] = b64url::encode(std::span<const uint8_t>(raw.data(), len));
            break;
        }
        case SignatureAlgorithm::RS256:
        case SignatureAlgorithm::PS256: {
            jwk["d"] = bn_to_b64(get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_RSA_D).get());
            jwk["p"] = bn_to_b64(get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_RSA_FACTOR1).get());
            jwk["q"] = bn_to_b64(get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_RSA_FACTOR2).get());
            jwk["dp"] = bn_to_b64(get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_RSA_EXPONENT1).get());
            jwk["dq"] = bn_to_b64(get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_RSA_EXPONENT2).get());
            jwk["qi"] = bn_to_b64(get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_RSA_COEFFICIENT1).get());
            break;
        }
        case SignatureAlgorithm::ES512: {
            jwk["d"] = bn_to_b64(get_bn_param(pkey_.get(), OSSL_PKEY_PARAM_PRIV_KEY).get(),
                                 kP521CoordBytes);
            break;
        }
    }
    return jwk;
}

Result<KeyPair, KeyError> KeyPair::from_private_jwk(const json& jwk) {
    if (!jwk.is_object()) return KeyError::MalformedKey;
    auto kty_it = jwk.find("kty");
    if (kty_it == jwk.end() || !kty_it->is_string())
        return KeyError::MissingMember;
    const std::string kty = kty_it->get<std::string>();

    SignatureAlgorithm alg;
    if (auto alg_it = jwk.find("alg"); alg_it != jwk.end() && alg_it->is_string()) {
        auto parsed = parse_algorithm(alg_it->get<std::string>());
        if (!parsed) return KeyError::UnsupportedAlgorithm;
        alg = *parsed;
    } else if (kty == "OKP") {
        alg = SignatureAlgorithm::EdDSA;
    } else if (kty == "EC") {
        alg = SignatureAlgorithm::ES512;
    } else if (kty == "RSA") {
        alg = SignatureAlgorithm::RS256;
    } else {
        return KeyError::UnsupportedAlgorithm;
    }
    if (!alg_matches_kty(alg, kty)) return KeyError::MalformedKey;

    try {
        if (kty == "OKP") {
            if (auto crv = jwk.find("crv"); crv == jwk.end() || *crv != "Ed25519")
                return KeyError::UnsupportedAlgorithm;
            auto d = jwk.find("d");
            if (d == jwk.end() || !d->is_string()) return KeyError::MissingMember;
            auto raw = b64url::decode(d->get_ref<const std::string&>());
            if (!raw || raw->size() != kEd25519KeyBytes)
                return KeyError::MalformedKey;
            EVP_PKEY* pkey = EVP_PKEY_new_raw_private_key(
                EVP_PKEY_ED25519, nullptr, raw->data(), raw->size());
            if (!pkey) return KeyError::MalformedKey;
            auto handle = wrap_pkey(pkey);
            json pub = public_jwk_of(alg, handle.get());
            return KeyPair(alg, std::move(pub), std::move(handle));
        }
        if (kty == "RSA") {
            auto n = bn_from_member(jwk, "n");
            auto e = bn_from_member(jwk, "e");
            auto d = bn_from_member(jwk, "d");
            if (!n) return n.error();
            if (!e) return e.error();
            if (!d) return d.error();
            BnPtr p, q, dp, dq, qi;
            if (jwk.contains("p")) {
                auto take = [&](const char* m) -> Result<BnPtr, KeyError> {
                    return bn_from_member(jwk, m);
                };
                auto rp = take("p"), rq = take("q"), rdp = take("dp"),
                     rdq = take("dq"), rqi = take("qi");
                if (!rp || !rq || !rdp || !rdq || !rqi)
                    return KeyError::MalformedKey;
                p = std::move(rp).value();
                q = std::move(rq).value();
                dp = std::move(rdp).value();
                dq = std::move(rdq).value();
                qi = std::move(rqi).value();
            }
            auto handle = rsa_from_parts(n.value().get(), e.value().get(),
                                         d.value().get(), p.get(), q.get(),
                                         dp.get(), dq.get(), qi.get());
            json pub = public_jwk_of(alg, handle.get());
            return KeyPair(alg, std::move(pub), std::move(handle));
        }
        if (kty == "EC") {
            if (auto crv = jwk.find("crv"); crv == jwk.end() || *crv != "P-521")
                return KeyError::UnsupportedAlgorithm;
            auto x = bn_from_member(jwk, "x");
            auto y = bn_from_member(jwk, "y");
            auto d = bn_from_member(jwk, "d");
            if (!x) return x.error();
            if (!y) return y.error();
            if (!d) return d.error();
            auto point = uncompressed_point(x.value().get(), y.value().get());
            auto handle = ec_p521_from_parts(d.value().get(), point);
            json pub = public_jwk_of(alg, handle.get());
            return KeyPair(alg, std::move(pub), std::move(handle));
        }
    } catch (const std::runtime_error&) {
        return KeyError::MalformedKey;
    }
    return KeyError::UnsupportedAlgorithm;
}

namespace {

EvpKeyHandle seeded_ed25519(DetRng& rng) {
    auto raw = rng.bytes(kEd25519KeyBytes);
    EVP_PKEY* pkey = EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr,
                                                  raw.data(), raw.size());
    return wrap_pkey(pkey);
}

EvpKeyHandle seeded_p521(DetRng& rng) {
    EC_GROUP* group = EC_GROUP_new_by_curve_name(NID_secp521r1);
    if (!group) crypto_fail("EC_GROUP_new_by_curve_name");
    const BIGNUM* order = EC_GROUP_get0_order(group);
    BnCtxPtr ctx(BN_CTX_new());
    BnPtr d(BN_new());
    for (;;) {
        auto raw = rng.bytes(static_cast<size_t>(kP521CoordBytes));
        BN_bin2bn(raw.data(), static_cast<int>(raw.size()), d.get());
        BN_mask_bits(d.get(), 521);
        if (!BN_is_zero(d.get()) && BN_cmp(d.get(), order) < 0) break;
    }
    EC_POINT* pub = EC_POINT_new(group);
    if (!pub || EC_POINT_mul(group, pub, d.get(), nullptr, nullptr, ctx.get()) != 1)
        crypto_fail("EC_POINT_mul");
    std::vector<uint8_t> point(1 + 2 * kP521CoordBytes);
    size_t written = EC_POINT_point2oct(group, pub, POINT_CONVERSION_UNCOMPRESSED,
                                        point.data(), point.size(), ctx.get());
    EC_POINT_free(pub);
    EC_GROUP_free(group);
    if (written != point.size()) crypto_fail("EC_POINT_point2oct");
    return ec_p521_from_parts(d.get(), point);
}

EvpKeyHandle seeded_rsa2048(DetRng& rng) {
    BnCtxPtr ctx(BN_CTX_new());
    BnPtr e(BN_new());
    BN_set_word(e.get(), 65537);
    BnPtr p = det_prime(1024, rng, ctx.get(), e.get());
    BnPtr q = det_prime(1024, rng, ctx.get(), e.get());
    while (BN_cmp(p.get(), q.get()) == 0) q = det_prime(1024, rng, ctx.get(), e.get());
    if (BN_cmp(p.get(), q.get()) < 0) std::swap(p, q);

    BnPtr n(BN_new()), p1(BN_new()), q1(BN_new()), g(BN_new()), lambda(BN_new());
    BN_mul(n.get(), p.get(), q.get(), ctx.get());
    BN_copy(p1.get(), p.get());
    BN_sub_word(p1.get(), 1);
    BN_copy(q1.get(), q.get());
    BN_sub_word(q1.get(), 1);
    BN_gcd(g.get(), p1.get(), q1.get(), ctx.get());
    BN_mul(lambda.get(), p1.get(), q1.get(), ctx.get());
    BN_div(lambda.get(), nullptr, lambda.get(), g.get(), ctx.get());

    BnPtr d(BN_mod_inverse(nullptr, e.get(), lambda.get(), ctx.get()));
    if (!d) crypto_fail("BN_mod_inverse");
    BnPtr dp(BN_new()), dq(BN_new());
    BN_mod(dp.get(), d.get(), p1.get(), ctx.get());
    BN_mod(dq.get(), d.get(), q1.get(), ctx.get());
    BnPtr qi(BN_mod_inverse(nullptr, q.get(), p.get(), ctx.get()));
    if (!qi) crypto_fail("BN_mod_inverse qi");

    return rsa_from_parts(n.get(), e.get(), d.get(), p.get(), q.get(), dp.get(),
                          dq.get(), qi.get());
}

}  // namespace

KeyPair generate_keypair(SignatureAlgorithm alg,
                         std::optional<std::string_view> seed) {
    EvpKeyHandle pkey;
    if (seed) {
        DetRng rng(*seed, to_string(alg));
        switch (alg) {
            case SignatureAlgorithm::EdDSA: pkey = seeded_ed25519(rng); break;
            case SignatureAlgorithm::RS256:
            case SignatureAlgorithm::PS256: pkey = seeded_rsa2048(rng); break;
            case SignatureAlgorithm::ES512: pkey = seeded_p521(rng); break;
        }
    } else {
        EVP_PKEY* raw = nullptr;
        switch (alg) {
            case SignatureAlgorithm::EdDSA:
                raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "ED25519");
                break;
            case SignatureAlgorithm::RS256:
            case SignatureAlgorithm::PS256:
                raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA", size_t{2048});
                break;
            case SignatureAlgorithm::ES512:
                raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-521");
                break;
        }
        pkey = wrap_pkey(raw);
    }
    json pub = public_jwk_of(alg, pkey.get());
    return KeyPair(alg, std::move(pub), std::move(pkey));
}

Result<std::string, KeyError> thumbprint(const json& jwk) {
    if (!jwk.is_object()) return KeyError::MalformedKey;
    auto kty_it = jwk.find("kty");
    if (kty_it == jwk.end() || !kty_it->is_string())
        return KeyError::MissingMember;
    const std::string kty = kty_it->get<std::string>();

    std::vector<const char*> members;
    if (kty == "OKP") {
        members = {"crv", "kty", "x"};
    } else if (kty == "RSA") {
        members = {"e", "kty", "n"};
    } else if (kty == "EC") {
        members = {"crv", "kty", "x", "y"};
    } else {
        return KeyError::UnsupportedAlgorithm;
    }

    // nlohmann objects iterate in lexicographic key order, which is exactly
    // the canonical member order the thumbprint needs.
    json canonical = json::object();
    for (const char* m : members) {
        auto it = jwk.find(m);
        if (it == jwk.end() || !it->is_string()) return KeyError::MissingMember;
        canonical[m] = *it;
    }
    auto digest = sha256(canonical.dump());
    return hex_lower(digest);
}

SignedEnvelope sign_envelope(json header, const json& claims, const KeyPair& key) {
    if (!header.is_object() || !claims.is_object())
        throw std::invalid_argument("header and claims must be JSON objects");
    const std::string alg_name = to_string(key.algorithm());
    if (auto it = header.find("alg"); it != header.end()) {
        if (*it != alg_name)
            throw std::invalid_argument("header alg does not match signing key");
    } else {
        header["alg"] = alg_name;
    }

    SignedEnvelope env;
    env.header = std::move(header);
    env.claims = claims;
    std::string signing_input = b64url::encode(env.header.dump());
    signing_input += '.';
    signing_input += b64url::encode(env.claims.dump());
    env.signature = sign_bytes(key.algorithm(), key.handle(), signing_input);
    env.compact = signing_input + '.' + b64url::encode(env.signature);
    return env;
}

namespace {

Result<SignedEnvelope, VerifyError> decode_impl(std::string_view compact,
                                                std::string* signing_input) {
    size_t dot1 = compact.find('.');
    if (dot1 == std::string_view::npos) return VerifyError::MalformedCompact;
    size_t dot2 = compact.find('.', dot1 + 1);
    if (dot2 == std::string_view::npos) return VerifyError::MalformedCompact;
    if (compact.find('.', dot2 + 1) != std::string_view::npos)
        return VerifyError::MalformedCompact;

    std::string_view h = compact.substr(0, dot1);
    std::string_view c = compact.substr(dot1 + 1, dot2 - dot1 - 1);
    std::string_view s = compact.substr(dot2 + 1);

    auto header_bytes = b64url::decode_string(h);
    auto claims_bytes = b64url::decode_string(c);
    auto sig_bytes = b64url::decode(s);
    if (!header_bytes || !claims_bytes || !sig_bytes)
        return VerifyError::MalformedBase64;

    json header = json::parse(*header_bytes, nullptr, false);
    json claims = json::parse(*claims_bytes, nullptr, false);
    if (header.is_discarded() || claims.is_discarded() || !header.is_object() ||
        !claims.is_object())
        return VerifyError::MalformedJson;

    if (signing_input) {
        signing_input->assign(compact.substr(0, dot2));
    }
    SignedEnvelope env;
    env.header = std::move(header);
    env.claims = std::move(claims);
    env.signature = std::move(*sig_bytes);
    env.compact = std::string(compact);
    return env;
}

}  // namespace

Result<SignedEnvelope, VerifyError> decode_envelope(std::string_view compact) {
    return decode_impl(compact, nullptr);
}

Result<SignedEnvelope, VerifyError> verify_envelope(std::string_view compact,
                                                    const PublicKey& key) {
    std::string signing_input;
    auto decoded = decode_impl(compact, &signing_input);
    if (!decoded) return decoded.error();
    SignedEnvelope env = std::move(decoded).value();

    auto alg_it = env.header.find("alg");
    if (alg_it == env.header.end() || !alg_it->is_string())
        return VerifyError::UnsupportedAlgorithm;
    auto alg = parse_algorithm(alg_it->get<std::string>());
    if (!alg) return VerifyError::UnsupportedAlgorithm;
    if (!alg_matches_kty(*alg, key.kty()))
        return VerifyError::SignatureMismatch;
    if (!verify_bytes(*alg, key.handle(), signing_input, env.signature))
        return VerifyError::SignatureMismatch;
    return env;
}

Result<SignedEnvelope, VerifyError> verify_envelope(std::string_view compact,
                                                    const json& public_jwk) {
    auto key = PublicKey::from_jwk(public_jwk);
    if (!key) return VerifyError::SignatureMismatch;
    return verify_envelope(compact, key.value());
}

}  // namespace capauth::jose
