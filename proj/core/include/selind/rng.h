#ifndef SELIND_RNG_H_
#define SELIND_RNG_H_

#include <cstdint>
#include <random>
#include <span>

#include <Eigen/Core>

namespace selind {

// Mixes (seed, stream, index) into an independent 64-bit seed with splitmix64
// finalizers. Used to give every sequence or matrix its own generator so that
// results do not depend on scheduling.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index);

// Named streams keep unrelated draws from sharing a generator.
namespace stream {
inline constexpr std::uint64_t kMatrix = 1;
inline constexpr std::uint64_t kSequence = 2;
inline constexpr std::uint64_t kLagSet = 3;
inline constexpr std::uint64_t kPair = 4;
inline constexpr std::uint64_t kExport = 5;
}  // namespace stream

// Thin wrapper over mt19937_64 with distribution code written out explicitly
// so outputs are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  // Standard exponential, i.e. Gamma(1, 1).
  double exponential();

  // Inverse-CDF draw from an unnormalized nonnegative weight vector.
  int categorical(std::span<const double> weights);
  int categorical(const Eigen::Ref<const Eigen::VectorXd>& weights);

  // Symmetric Dirichlet(1) draw of the given dimension.
  Eigen::VectorXd dirichlet_ones(int dim);

 private:
  std::mt19937_64 engine_;
};

}  // namespace selind

#endif  // SELIND_RNG_H_
