#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "tycoon/types.hpp"

namespace tycoon::crypto {

inline constexpr std::size_t kPublicKeySize = 32;
inline constexpr std::size_t kSignatureSize = 64;
inline constexpr std::size_t kSeedSize = 32;
inline constexpr std::size_t kDigestSize = 32;

std::string to_hex(std::span<const std::uint8_t> bytes);
std::optional<Bytes> from_hex(std::string_view hex);

struct PublicKey {
  std::array<std::uint8_t, kPublicKeySize> bytes{};

  // Wrong length or a point libsodium refuses as a verification key gives nullopt.
  static std::optional<PublicKey> from_bytes(std::span<const std::uint8_t> raw);
  static std::optional<PublicKey> from_hex(std::string_view hex);
  std::string hex() const { return to_hex(bytes); }

  auto operator<=>(const PublicKey&) const = default;
};

struct Signature {
  std::array<std::uint8_t, kSignatureSize> bytes{};

  static std::optional<Signature> from_bytes(std::span<const std::uint8_t> raw);

  auto operator<=>(const Signature&) const = default;
};

using Digest = std::array<std::uint8_t, kDigestSize>;

// BLAKE2b-256.
Digest digest(std::span<const std::uint8_t> data);

class Signer {
 public:
  virtual ~Signer() = default;
  virtual Signature sign(std::span<const std::uint8_t> message) const = 0;
  virtual const PublicKey& public_key() const = 0;
};

// Ed25519; signatures are deterministic for a given key and message.
class Ed25519Signer final : public Signer {
 public:
  using Seed = std::array<std::uint8_t, kSeedSize>;

  explicit Ed25519Signer(const Seed& seed);
  ~Ed25519Signer() override;
  Ed25519Signer(const Ed25519Signer& other);
  Ed25519Signer& operator=(const Ed25519Signer& other);

  static Ed25519Signer generate();
  // Key derived from a hash of the label; for tests and simulations only.
  static Ed25519Signer from_label(std::string_view label);
  // Throws std::invalid_argument on malformed seed material.
  static Ed25519Signer from_seed_hex(std::string_view hex);

  Signature sign(std::span<const std::uint8_t> message) const override;
  const PublicKey& public_key() const override { return public_; }
  std::string seed_hex() const;

 private:
  Seed seed_{};
  std::array<std::uint8_t, 64> secret_{};
  PublicKey public_;
};

bool verify(const PublicKey& key, std::span<const std::uint8_t> message, const Signature& signature);

}  // namespace tycoon::crypto
