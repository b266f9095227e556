#include "abd/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "abd/errors.hpp"

namespace abd {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = uniform_open0();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::index(std::uint64_t n) {
  if (n == 0) throw DomainError("Rng::index: empty range");
  // Multiply-shift; bias is below 2^-64 * n.
  __extension__ using u128 = unsigned __int128;
  const u128 prod = static_cast<u128>(engine_()) * n;
  return static_cast<std::uint64_t>(prod >> 64);
}

Rng Rng::split(std::string_view name) {
  return Rng(splitmix64(engine_() ^ fnv1a64(name)));
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw DataError("Rng::deserialize: malformed engine state");
}

std::uint64_t Rng::derive_seed(std::uint64_t root, std::string_view name) {
  return splitmix64(splitmix64(root) ^ fnv1a64(name));
}

}  // namespace abd
