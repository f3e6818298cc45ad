#include "tycoon/crypto.hpp"

#include <sodium.h>

#include <stdexcept>

namespace tycoon::crypto {

namespace {

void ensure_sodium() {
  static const int status = sodium_init();
  if (status < 0) throw std::runtime_error("libsodium initialisation failed");
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

std::optional<Bytes> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) return std::nullopt;
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    const int hi = hex_value(hex[i]), lo = hex_value(hex[i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

std::optional<PublicKey> PublicKey::from_bytes(std::span<const std::uint8_t> raw) {
  if (raw.size() != kPublicKeySize) return std::nullopt;
  ensure_sodium();
  // Reject small-order and non-canonical encodings up front.
  if (crypto_core_ed25519_is_valid_point(raw.data()) != 1) return std::nullopt;
  PublicKey key;
  std::copy(raw.begin(), raw.end(), key.bytes.begin());
  return key;
}

std::optional<PublicKey> PublicKey::from_hex(std::string_view hex) {
  auto raw = crypto::from_hex(hex);
  if (!raw) return std::nullopt;
  return from_bytes(*raw);
}

std::optional<Signature> Signature::from_bytes(std::span<const std::uint8_t> raw) {
  if (raw.size() != kSignatureSize) return std::nullopt;
  Signature sig;
  std::copy(raw.begin(), raw.end(), sig.bytes.begin());
  return sig;
}

Digest digest(std::span<const std::uint8_t> data) {
  ensure_sodium();
  Digest out;
  crypto_generichash(out.data(), out.size(), data.data(), data.size(), nullptr, 0);
  return out;
}

Ed25519Signer::Ed25519Signer(const Seed& seed) : seed_(seed) {
  ensure_sodium();
  crypto_sign_seed_keypair(public_.bytes.data(), secret_.data(), seed_.data());
}

Ed25519Signer::~Ed25519Signer() {
  sodium_memzero(secret_.data(), secret_.size());
  sodium_memzero(seed_.data(), seed_.size());
}

Ed25519Signer::Ed25519Signer(const Ed25519Signer& other) = default;
Ed25519Signer& Ed25519Signer::operator=(const Ed25519Signer& other) = default;

Ed25519Signer Ed25519Signer::generate() {
  ensure_sodium();
  Seed seed;
  randombytes_buf(seed.data(), seed.size());
  return Ed25519Signer(seed);
}

Ed25519Signer Ed25519Signer::from_label(std::string_view label) {
  const auto* data = reinterpret_cast<const std::uint8_t*>(label.data());
  return Ed25519Signer(digest({data, label.size()}));
}

Ed25519Signer Ed25519Signer::from_seed_hex(std::string_view hex) {
  auto raw = crypto::from_hex(hex);
  if (!raw || raw->size() != kSeedSize) {
    throw std::invalid_argument("signing seed must be 32 bytes of hex");
  }
  Seed seed;
  std::copy(raw->begin(), raw->end(), seed.begin());
  return Ed25519Signer(seed);
}

Signature Ed25519Signer::sign(std::span<const std::uint8_t> message) const {
  Signature sig;
  crypto_sign_detached(sig.bytes.data(), nullptr, message.data(), message.size(), secret_.data());
  return sig;
}

std::string Ed25519Signer::seed_hex() const { return to_hex(seed_); }

bool verify(const PublicKey& key, std::span<const std::uint8_t> message, const Signature& signature) {
  ensure_sodium();
  return crypto_sign_verify_detached(signature.bytes.data(), message.data(), message.size(),
                                     key.bytes.data()) == 0;
}

}  // namespace tycoon::crypto
