#include "brac/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "brac/binary_io.hpp"
#include "brac/errors.hpp"

namespace brac {

namespace {

constexpr char kDatasetMagic[8] = {'B', 'R', 'A', 'C', 'D', 'S', '1', '\0'};

template <typename Src>
void append(std::vector<float>& dst, const Src& src) {
  for (double v : src) dst.push_back(static_cast<float>(v));
}

void copy_row(std::span<const float> src, std::span<double> dst) { std::copy(src.begin(), src.end(), dst.begin()); }

}  // namespace

OfflineDataset::OfflineDataset(std::string env_name, std::size_t state_dim, std::size_t action_dim,
                               std::string noise_tag)
    : env_name_(std::move(env_name)),
      noise_tag_(std::move(noise_tag)),
      state_dim_(state_dim),
      action_dim_(action_dim) {
  if (state_dim == 0 || action_dim == 0) throw ConfigError("dataset dimensions must be positive");
}

void OfflineDataset::add(std::span<const double> s, std::span<const double> a, double r,
                         std::span<const double> s_next, bool done) {
  if (s.size() != state_dim_ || s_next.size() != state_dim_ || a.size() != action_dim_) {
    throw ConfigError("OfflineDataset::add: transition dimensions do not match the dataset");
  }
  append(states_, s);
  append(actions_, a);
  rewards_.push_back(static_cast<float>(r));
  append(next_states_, s_next);
  dones_.push_back(done ? 1 : 0);
}

Transition OfflineDataset::transition(std::size_t i) const {
  Transition t;
  t.s.assign(state(i).begin(), state(i).end());
  t.a.assign(action(i).begin(), action(i).end());
  t.r = reward(i);
  t.s_next.assign(next_state(i).begin(), next_state(i).end());
  t.done = done(i);
  return t;
}

std::optional<std::size_t> OfflineDataset::successor(std::size_t i) const {
  if (i + 1 >= size() || done(i)) return std::nullopt;
  const auto a = next_state(i), b = state(i + 1);
  if (!std::equal(a.begin(), a.end(), b.begin())) return std::nullopt;
  return i + 1;
}

TransitionBatch OfflineDataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t n = indices.size();
  TransitionBatch out;
  out.states = Tensor::matrix(n, state_dim_);
  out.actions = Tensor::matrix(n, action_dim_);
  out.rewards = Tensor::matrix(n, 1);
  out.next_states = Tensor::matrix(n, state_dim_);
  out.dones = Tensor::matrix(n, 1);
  out.next_actions = Tensor::matrix(n, action_dim_);
  out.indices.assign(indices.begin(), indices.end());
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t i = indices[b];
    if (i >= size()) throw ContractError("OfflineDataset::batch: index out of range");
    copy_row(state(i), out.states.row(b));
    copy_row(action(i), out.actions.row(b));
    out.rewards[b] = reward(i);
    copy_row(next_state(i), out.next_states.row(b));
    out.dones[b] = done(i) ? 1.0 : 0.0;
    copy_row(action(successor(i).value_or(i)), out.next_actions.row(b));
  }
  return out;
}

TransitionBatch OfflineDataset::sample_batch(std::size_t batch_size, Rng& rng) const {
  if (empty()) throw ContractError("sample_batch: dataset is empty");
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = rng.index(size());
  return batch(idx);
}

Tensor OfflineDataset::all_states() const {
  return Tensor({size(), state_dim_}, std::vector<double>(states_.begin(), states_.end()));
}

Tensor OfflineDataset::all_actions() const {
  return Tensor({size(), action_dim_}, std::vector<double>(actions_.begin(), actions_.end()));
}

double OfflineDataset::average_episode_return(int horizon) const {
  double total = 0.0, partial_reward = 0.0;
  std::size_t complete = 0, steps = 0;
  std::size_t i = 0;
  while (i < size()) {
    double ret = 0.0;
    std::size_t len = 0;
    std::size_t j = i;
    while (true) {
      ret += reward(j);
      ++len;
      const auto next = successor(j);
      if (!next) break;
      j = *next;
    }
    if (static_cast<int>(len) == horizon || done(j)) {
      total += ret;
      ++complete;
    }
    partial_reward += ret;
    steps += len;
    i = j + 1;
  }
  if (complete > 0) return total / static_cast<double>(complete);
  // Only truncated episodes: extrapolate the per-step reward to a full horizon.
  return steps == 0 ? 0.0 : partial_reward / static_cast<double>(steps) * horizon;
}

void OfflineDataset::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kDatasetMagic, 8);
  io::put_string(os, env_name_);
  io::put_u64(os, state_dim_);
  io::put_u64(os, action_dim_);
  io::put_u64(os, size());
  io::put_string(os, noise_tag_);
  for (std::size_t i = 0; i < size(); ++i) {
    for (float v : state(i)) io::put_f32(os, v);
    for (float v : action(i)) io::put_f32(os, v);
    io::put_f32(os, rewards_[i]);
    for (float v : next_state(i)) io::put_f32(os, v);
    os.put(static_cast<char>(dones_[i]));
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

OfflineDataset OfflineDataset::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset " + path.string());
  char magic[8];
  io::read_exact(is, magic, 8, "dataset magic");
  if (!std::equal(magic, magic + 8, kDatasetMagic)) {
    throw FormatError(path.string() + ": bad magic, not a dataset file of this version");
  }
  std::string env = io::get_string(is, "env name", 256);
  const std::uint64_t sd = io::get_u64(is, "state dim");
  const std::uint64_t adim = io::get_u64(is, "action dim");
  const std::uint64_t count = io::get_u64(is, "count");
  std::string tag = io::get_string(is, "noise tag", 256);
  if (sd == 0 || adim == 0 || sd > 4096 || adim > 4096) throw FormatError("implausible dataset dimensions");
  try {
    const std::unique_ptr<Environment> e = make_env(env);
    if (e->state_dim() != sd || e->action_dim() != adim) {
      throw FormatError("dataset dimensions " + std::to_string(sd) + "x" + std::to_string(adim) +
                        " do not match environment " + env);
    }
  } catch (const ConfigError&) {
    // Unknown environment names are allowed; the caller decides.
  }

  OfflineDataset ds(std::move(env), sd, adim, std::move(tag));
  const std::size_t rec = ds.record_size();
  const auto header_end = is.tellg();
  is.seekg(0, std::ios::end);
  const auto file_end = is.tellg();
  is.seekg(header_end);
  const std::uint64_t body = static_cast<std::uint64_t>(file_end - header_end);
  if (body != count * rec) {
    throw FormatError(body < count * rec ? "truncated dataset body" : "trailing bytes after dataset body");
  }
  ds.states_.reserve(count * sd);
  ds.actions_.reserve(count * adim);
  ds.next_states_.reserve(count * sd);
  ds.rewards_.reserve(count);
  ds.dones_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint64_t d = 0; d < sd; ++d) ds.states_.push_back(io::get_f32(is, "state"));
    for (std::uint64_t d = 0; d < adim; ++d) ds.actions_.push_back(io::get_f32(is, "action"));
    ds.rewards_.push_back(io::get_f32(is, "reward"));
    for (std::uint64_t d = 0; d < sd; ++d) ds.next_states_.push_back(io::get_f32(is, "next state"));
    char done = 0;
    io::read_exact(is, &done, 1, "done flag");
    if (done != 0 && done != 1) throw FormatError("done flag must be 0 or 1");
    ds.dones_.push_back(static_cast<std::uint8_t>(done));
  }
  return ds;
}

bool operator==(const OfflineDataset& a, const OfflineDataset& b) {
  auto bits_equal = [](const std::vector<float>& x, const std::vector<float>& y) {
    return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
  };
  return a.env_name_ == b.env_name_ && a.noise_tag_ == b.noise_tag_ && a.state_dim_ == b.state_dim_ &&
         a.action_dim_ == b.action_dim_ && bits_equal(a.states_, b.states_) && bits_equal(a.actions_, b.actions_) &&
         bits_equal(a.rewards_, b.rewards_) && bits_equal(a.next_states_, b.next_states_) && a.dones_ == b.dones_;
}

NoiseConfig NoiseConfig::parse(const std::string& text) {
  NoiseConfig cfg;
  if (text == "none") return cfg;
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("noise must be none, eps:P or gauss:S, got '" + text + "'");
  const std::string kind = text.substr(0, colon);
  if (kind == "eps") {
    cfg.kind = Kind::kEps;
  } else if (kind == "gauss") {
    cfg.kind = Kind::kGauss;
  } else {
    throw ConfigError("unknown noise kind '" + kind + "'");
  }
  try {
    std::size_t used = 0;
    cfg.param = std::stod(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::logic_error&) {
    throw ConfigError("bad noise parameter in '" + text + "'");
  }
  cfg.validate();
  return cfg;
}

std::string NoiseConfig::tag() const {
  if (kind == Kind::kNone) return "none";
  std::ostringstream os;
  os << (kind == Kind::kEps ? "eps:" : "gauss:") << param;
  return os.str();
}

std::array<std::size_t, 3> NoiseConfig::segment_counts(std::size_t n) const {
  if (kind == Kind::kNone) return {0, n, 0};
  const auto part = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  const std::size_t noisy = std::min(n, part(fractions[0]));
  const std::size_t clean = std::min(n - noisy, part(fractions[1]));
  return {noisy, clean, n - noisy - clean};
}

void NoiseConfig::validate() const {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("noise mixture fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("noise mixture fractions must sum to 1");
  if (kind == Kind::kEps && !(param >= 0.0 && param <= 1.0)) throw ConfigError("eps probability must be in [0, 1]");
  if (kind == Kind::kGauss && !(param >= 0.0)) throw ConfigError("gauss sigma must be non-negative");
}

OfflineDataset collect(const Environment& env, const BehaviorSource& policy, const NoiseConfig& noise, std::size_t n,
                       Rng& rng, CollectStats* stats) {
  if (n == 0) throw ConfigError("collect: n must be at least 1");
  noise.validate();
  if (env.horizon() <= 0) throw ConfigError("collect: environment horizon must be positive");
  OfflineDataset ds(env.name(), env.state_dim(), env.action_dim(), noise.tag());
  CollectStats local;
  local.segment_counts = noise.segment_counts(n);
  const ActionBounds& b = env.bounds();

  for (int segment = 0; segment < 3; ++segment) {
    std::size_t quota = local.segment_counts[segment];
    while (quota > 0) {
      EnvState s = env.reset(rng.next_u64());
      ++local.episodes;
      bool done = false;
      while (!done && quota > 0) {
        std::vector<double> a;
        if (segment == 2) {
          a = uniform_action(env, rng);
        } else {
          a = policy(s.obs, rng);
          if (a.size() != env.action_dim()) throw ConfigError("collect: behavior policy returned a wrong-sized action");
          if (segment == 0 && noise.kind == NoiseConfig::Kind::kEps) {
            if (rng.uniform() < noise.param) {
              a = uniform_action(env, rng);
              ++local.noisy_actions;
            }
          } else if (segment == 0 && noise.kind == NoiseConfig::Kind::kGauss) {
            for (double& v : a) v += noise.param * rng.normal();
            ++local.noisy_actions;
          }
        }
        for (std::size_t d = 0; d < a.size(); ++d) a[d] = std::clamp(a[d], b.low[d], b.high[d]);
        StepResult r = env.step(s, a);
        done = r.done;
        // Time-limit truncation is not a terminal state for bootstrapping.
        ds.add(s.obs, a, r.reward, r.next.obs, false);
        s = std::move(r.next);
        --quota;
      }
    }
  }
  if (stats) *stats = local;
  return ds;
}

}  // namespace brac
