#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brac/env.hpp"
#include "brac/rng.hpp"
#include "brac/tensor.hpp"

namespace brac {

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;
};

/// Minibatch in training precision. `next_actions` holds the logged action
/// taken at s' when the successor transition is in the dataset, otherwise the
/// transition's own action.
struct TransitionBatch {
  Tensor states;        // (B, state_dim)
  Tensor actions;       // (B, action_dim)
  Tensor rewards;       // (B, 1)
  Tensor next_states;   // (B, state_dim)
  Tensor dones;         // (B, 1), 1.0 for terminal
  Tensor next_actions;  // (B, action_dim)
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

/// Columnar store of logged transitions at 32-bit precision.
class OfflineDataset {
 public:
  OfflineDataset() = default;
  OfflineDataset(std::string env_name, std::size_t state_dim, std::size_t action_dim, std::string noise_tag);

  /// Appends one transition, rounding to float.
  void add(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s_next,
           bool done);

  std::size_t size() const { return rewards_.size(); }
  bool empty() const { return rewards_.empty(); }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  const std::string& env_name() const { return env_name_; }
  const std::string& noise_tag() const { return noise_tag_; }

  std::span<const float> state(std::size_t i) const { return {states_.data() + i * state_dim_, state_dim_}; }
  std::span<const float> action(std::size_t i) const { return {actions_.data() + i * action_dim_, action_dim_}; }
  std::span<const float> next_state(std::size_t i) const {
    return {next_states_.data() + i * state_dim_, state_dim_};
  }
  float reward(std::size_t i) const { return rewards_[i]; }
  bool done(std::size_t i) const { return dones_[i] != 0; }
  Transition transition(std::size_t i) const;

  /// Index of the transition that continues from this one's next state, if it
  /// immediately follows in storage.
  std::optional<std::size_t> successor(std::size_t i) const;

  TransitionBatch batch(std::span<const std::size_t> indices) const;
  /// Uniform with replacement. Throws ContractError on an empty dataset.
  TransitionBatch sample_batch(std::size_t batch_size, Rng& rng) const;
  Tensor all_states() const;
  Tensor all_actions() const;

  /// Mean return over complete episodes of exactly `horizon` steps, where
  /// episodes are maximal chains of successor links.
  double average_episode_return(int horizon) const;

  void save(const std::filesystem::path& path) const;
  static OfflineDataset load(const std::filesystem::path& path);
  /// Bytes of one serialized record.
  std::size_t record_size() const { return 4 * (2 * state_dim_ + action_dim_ + 1) + 1; }

  friend bool operator==(const OfflineDataset& a, const OfflineDataset& b);

 private:
  std::string env_name_;
  std::string noise_tag_;
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  std::vector<float> states_;
  std::vector<float> actions_;
  std::vector<float> rewards_;
  std::vector<float> next_states_;
  std::vector<std::uint8_t> dones_;
};

struct NoiseConfig {
  enum class Kind { kNone, kEps, kGauss };
  Kind kind = Kind::kNone;
  /// Epsilon probability or Gaussian standard deviation.
  double param = 0.0;
  /// Transition shares collected by the noisy policy, the clean policy, and a
  /// uniform random walk. Unused for kNone.
  std::array<double, 3> fractions{0.4, 0.4, 0.2};

  /// Parses "none", "eps:P" or "gauss:S".
  static NoiseConfig parse(const std::string& text);
  /// Canonical tag, e.g. "gauss:0.3".
  std::string tag() const;
  /// Per-segment transition counts for a dataset of n transitions.
  std::array<std::size_t, 3> segment_counts(std::size_t n) const;
  void validate() const;
};

/// Maps an observation to an action from the policy being logged.
using BehaviorSource = ActionSelector;

struct CollectStats {
  std::array<std::size_t, 3> segment_counts{0, 0, 0};
  std::size_t episodes = 0;
  std::size_t noisy_actions = 0;  // steps where eps/gauss noise changed the action
};

/// Rolls whole episodes, truncating at each segment's quota. Stored `done` flags
/// mark true terminations only; horizon truncation is not terminal.
OfflineDataset collect(const Environment& env, const BehaviorSource& policy, const NoiseConfig& noise, std::size_t n,
                       Rng& rng, CollectStats* stats = nullptr);

}  // namespace brac
