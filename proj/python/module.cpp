#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "brac/checks.hpp"
#include "brac/data.hpp"
#include "brac/divergence.hpp"
#include "brac/errors.hpp"
#include "brac/harness.hpp"
#include "brac/trainer.hpp"

namespace py = pybind11;
using namespace brac;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ConfigError("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Tensor& t) {
  const std::size_t r = t.rows(), c = t.size() / std::max<std::size_t>(1, t.rows());
  Array out({r, c});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

nlohmann::json parse(const std::string& s) {
  try {
    return nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_brac, m) {
  m.doc() = "Offline RL lab core";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_ArithmeticError);

  m.def("preset_names", &preset_names);
  m.def(
      "preset_json",
      [](const std::string& algo, std::size_t action_dim, bool desk) {
        TrainerConfig c = preset(algo, action_dim);
        if (desk) apply_desk_scale(c);
        return config_to_json(c).dump();
      },
      py::arg("algo"), py::arg("action_dim"), py::arg("desk") = true);

  m.def("mmd_squared", [](const Array& x, const Array& y, double sigma) {
    return mmd_squared(to_tensor(x), to_tensor(y), sigma);
  });
  m.def("combine", [](const Array& values, const std::string& mode, double lam) {
    const TargetCombiner c = mode == "min" ? TargetCombiner::min() : TargetCombiner::weighted(lam);
    const Tensor out = combine(to_tensor(values), c);
    return std::vector<double>(out.values().begin(), out.values().end());
  }, py::arg("values"), py::arg("mode") = "min", py::arg("lam") = 0.75);
  m.def("spearman", &spearman);
  m.def("run_check", [](const std::string& suite, std::uint64_t seed) {
    checks::SuiteResult r;
    if (suite == "combiner") r = checks::run_combiner_suite();
    else if (suite == "sac-equiv") r = checks::run_sac_equivalence_suite(seed);
    else if (suite == "grad") r = checks::run_grad_suite(100, seed);
    else if (suite == "divergence") r = checks::run_divergence_suite(seed);
    else throw ConfigError("unknown suite '" + suite + "'");
    return py::make_tuple(r.passed, r.lines);
  }, py::arg("suite"), py::arg("seed") = 0);

  py::class_<OfflineDataset>(m, "Dataset")
      .def_static("load", [](const std::string& p) { return OfflineDataset::load(p); })
      .def("save", [](const OfflineDataset& d, const std::string& p) { d.save(p); })
      .def("__len__", &OfflineDataset::size)
      .def_property_readonly("env_name", &OfflineDataset::env_name)
      .def_property_readonly("noise_tag", &OfflineDataset::noise_tag)
      .def_property_readonly("state_dim", &OfflineDataset::state_dim)
      .def_property_readonly("action_dim", &OfflineDataset::action_dim)
      .def("states", [](const OfflineDataset& d) { return to_array(d.all_states()); })
      .def("actions", [](const OfflineDataset& d) { return to_array(d.all_actions()); })
      .def("average_episode_return", &OfflineDataset::average_episode_return)
      .def("__eq__", [](const OfflineDataset& a, const OfflineDataset& b) { return a == b; });

  m.def(
      "collect_controller",
      [](const std::string& env_name, const std::string& noise, std::size_t n, std::uint64_t seed) {
        const auto env = make_env(env_name);
        Rng rng(seed);
        const Environment& e = *env;
        return collect(e, [&e](std::span<const double> obs, Rng&) { return e.reference_action(obs); },
                       NoiseConfig::parse(noise), n, rng);
      },
      py::arg("env"), py::arg("noise"), py::arg("n"), py::arg("seed") = 0);
  m.def("segment_counts", [](const std::string& noise, std::size_t n) {
    return NoiseConfig::parse(noise).segment_counts(n);
  });

  py::class_<TanhGaussianPolicy>(m, "Policy")
      .def_static("load", [](const std::string& p) { return TanhGaussianPolicy::load(p); })
      .def("save", [](const TanhGaussianPolicy& pi, const std::string& p) { pi.save(p); })
      .def_property_readonly("state_dim", &TanhGaussianPolicy::state_dim)
      .def_property_readonly("action_dim", &TanhGaussianPolicy::action_dim)
      .def("mean_action", [](const TanhGaussianPolicy& pi, const Array& s) { return to_array(pi.mean_action(to_tensor(s))); })
      .def("log_prob", [](const TanhGaussianPolicy& pi, const Array& s, const Array& a) {
        const Tensor lp = pi.log_prob(to_tensor(s), to_tensor(a));
        return std::vector<double>(lp.values().begin(), lp.values().end());
      });

  m.def(
      "clone",
      [](const OfflineDataset& d, std::size_t steps, std::vector<std::size_t> hidden, std::uint64_t seed) {
        Rng rng(seed);
        CloneConfig c;
        c.steps = steps;
        c.hidden = std::move(hidden);
        const CloneResult r = clone_behavior(d, c, rng);
        return py::make_tuple(r.policy, r.final_log_likelihood);
      },
      py::arg("dataset"), py::arg("steps") = 10000, py::arg("hidden") = std::vector<std::size_t>{64, 64},
      py::arg("seed") = 0);

  m.def(
      "train_json",
      [](const std::string& config, const OfflineDataset& d, const TanhGaussianPolicy* behavior, std::size_t episodes) {
        const TrainerConfig c = config_from_json(parse(config));
        const auto env = make_env(d.env_name());
        EvalProtocol p;
        p.episodes = episodes;
        py::gil_scoped_release release;
        return train_offline(c, d, behavior, *env, p).to_json().dump();
      },
      py::arg("config"), py::arg("dataset"), py::arg("behavior") = nullptr, py::arg("episodes") = 20);
}
