#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "latentplan/experiment.h"
#include "latentplan/planner.h"
#include "latentplan/value_transform.h"

namespace py = pybind11;
namespace lp = latentplan;

namespace {

py::array_t<float> to_array(const lp::Observation& obs, const std::vector<int64_t>& shape) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<float> out(dims);
  std::copy(obs.begin(), obs.end(), out.mutable_data());
  return out;
}

lp::Action to_action(const lp::Environment& env, const py::object& a) {
  if (!env.action_space().continuous) return lp::Action::discrete(a.cast<int64_t>());
  if (py::isinstance<py::float_>(a) || py::isinstance<py::int_>(a)) {
    return lp::Action::continuous({a.cast<float>()});
  }
  return lp::Action::continuous(a.cast<std::vector<float>>());
}

py::dict eval_dict(const lp::EvalResult& r) {
  py::dict d;
  d["episodes"] = r.episodes;
  d["mean_return"] = r.mean_return;
  d["std_return"] = r.std_return;
  d["success_rate"] = r.success_rate;
  d["policy_mean"] = r.policy_mean;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "latentplan core: environments, value transform, search and the training runner";

  py::register_exception<lp::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<lp::ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<lp::DomainError>(m, "DomainError", PyExc_IndexError);
  py::register_exception<lp::UsageError>(m, "UsageError", PyExc_RuntimeError);
  py::register_exception<lp::IntegrityError>(m, "IntegrityError", PyExc_IOError);

  m.def("contract", &lp::contract, py::arg("x"), py::arg("eps") = 0.001);
  m.def("expand", &lp::expand, py::arg("y"), py::arg("eps") = 0.001);
  m.def(
      "scalar_to_categorical",
      [](double x, int64_t bins) { return lp::scalar_to_categorical(x, bins); }, py::arg("x"),
      py::arg("bins") = 101);
  m.def(
      "categorical_to_scalar",
      [](const std::vector<double>& p) { return lp::categorical_to_scalar(p); }, py::arg("probs"));

  m.def(
      "simnorm",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> x, int64_t group, double tau) {
        if (x.ndim() != 2) throw lp::ShapeError("simnorm: expected a 2-D array");
        std::vector<double> v(x.data(), x.data() + x.size());
        auto t = lp::Tensor<double>::from({x.shape(0), x.shape(1)}, std::move(v));
        const auto y = lp::simnorm(t, group, tau);
        py::array_t<double> out({x.shape(0), x.shape(1)});
        std::copy(y.values().begin(), y.values().end(), out.mutable_data());
        return out;
      },
      py::arg("x"), py::arg("group") = 8, py::arg("tau") = 1.0);

  py::class_<lp::Environment>(m, "Environment")
      .def(
          "reset",
          [](lp::Environment& e, uint64_t seed) { return to_array(e.reset(seed), e.observation_shape()); },
          py::arg("seed") = 0)
      .def("step",
           [](lp::Environment& e, const py::object& a) {
             const auto r = e.step(to_action(e, a));
             return py::make_tuple(to_array(r.obs, e.observation_shape()), r.reward, r.done, r.truncated);
           })
      .def_property_readonly("num_actions", [](const lp::Environment& e) { return e.action_space().n; })
      .def_property_readonly("continuous",
                             [](const lp::Environment& e) { return e.action_space().continuous; })
      .def_property_readonly("observation_shape", &lp::Environment::observation_shape)
      .def_property_readonly("max_episode_steps", &lp::Environment::max_episode_steps)
      .def_property_readonly("done", &lp::Environment::done)
      .def("success", &lp::Environment::success)
      .def_property_readonly("name", &lp::Environment::name);

  py::class_<lp::VisualMatch, lp::Environment>(m, "VisualMatch")
      .def(py::init([](int64_t memory_length, int64_t reward_steps, int64_t num_apples) {
             return lp::VisualMatch({.memory_length = memory_length,
                                     .reward_steps = reward_steps,
                                     .num_apples = num_apples,
                                     .four_directions = false,
                                     .forced_target = std::nullopt});
           }),
           py::arg("memory_length") = 2, py::arg("reward_steps") = 15, py::arg("num_apples") = 5)
      .def_property_readonly("target", [](const lp::VisualMatch& v) { return static_cast<int>(v.target()); });

  py::class_<lp::ChainMdp, lp::Environment>(m, "ChainMdp")
      .def(py::init([](int64_t length, int64_t start) {
             return lp::ChainMdp({.length = length, .start = start, .max_steps = 0});
           }),
           py::arg("length") = 3, py::arg("start") = 0);

  py::class_<lp::DiscreteBandit, lp::Environment>(m, "DiscreteBandit")
      .def(py::init<std::vector<double>>(), py::arg("arm_means"));

  py::class_<lp::ContinuousBandit, lp::Environment>(m, "ContinuousBandit")
      .def(py::init<double, double>(), py::arg("optimum") = 0.3, py::arg("radius") = 0.05);

  m.def(
      "oracle_search",
      [](const lp::Environment& env, int64_t num_simulations, uint64_t seed, bool normalize_q) {
        lp::SearchConfig cfg;
        cfg.num_simulations = num_simulations;
        cfg.continuous = env.action_space().continuous;
        cfg.normalize_q = normalize_q;
        lp::OracleModel model(env);
        lp::Rng rng(seed);
        const auto r = lp::run_search(model, env.action_space().n, cfg, rng, false);
        py::dict d;
        d["visits"] = r.visits;
        d["q"] = r.q;
        d["policy"] = r.policy;
        d["root_value"] = r.root_value;
        std::vector<py::object> actions;
        for (const auto& a : r.actions) {
          actions.push_back(cfg.continuous ? py::cast(a.values) : py::cast(a.index));
        }
        d["actions"] = actions;
        return d;
      },
      py::arg("env"), py::arg("num_simulations") = 50, py::arg("seed") = 0,
      py::arg("normalize_q") = true,
      "Tree search with the environment itself as the model (exact rewards, uniform priors).");

  m.def(
      "resolve_config", [](const std::string& json) { return lp::config_to_json(lp::parse_config(json)); },
      py::arg("config_json"), "Validates a JSON config and returns it with all derived fields.");

  m.def(
      "run_experiment",
      [](const std::string& json, bool resume) {
        const auto cfg = lp::parse_config(json);
        lp::RunSummary s;
        {
          py::gil_scoped_release release;
          s = lp::run_experiment(cfg, {.resume = resume, .quiet = true});
        }
        py::dict d;
        d["status"] = s.status;
        d["env_steps"] = s.env_steps;
        d["train_steps"] = s.train_steps;
        d["wall_seconds"] = s.wall_seconds;
        d["best_success"] = s.best_success;
        d["final_eval"] = eval_dict(s.final_eval);
        return d;
      },
      py::arg("config_json"), py::arg("resume") = false);

  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, int64_t episodes, uint64_t seed) {
        const auto run = lp::load_run_checkpoint(checkpoint);
        const auto& cfg = run.config;
        auto env = cfg.tasks.at(0).make();
        if (cfg.model.encoder == lp::EncoderKind::kMlp && env->observation_size() < cfg.model.obs_size()) {
          env = std::make_unique<lp::PaddedEnv>(std::move(env), cfg.model.obs_size());
        }
        const bool use_target = cfg.train.target_mode != lp::TargetMode::kNone;
        return eval_dict(lp::evaluate(*run.online, use_target ? run.target.get() : nullptr, *env,
                                      cfg.search, episodes, 0, seed));
      },
      py::arg("checkpoint"), py::arg("episodes") = 10, py::arg("seed") = 0);
}
