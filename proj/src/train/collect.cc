#include <ostream>

#include "latentplan/planner.h"
#include "latentplan/training.h"

namespace latentplan {

template <std::floating_point T>
std::vector<GameSegment> collect_experience(Environment& env, const WorldModel<T>& model,
                                            const WorldModel<T>* target, const SearchConfig& cfg,
                                            const CollectOptions& opts, Rng& rng) {
  if (model.training()) throw UsageError("collect_experience: model must be in eval mode");
  const auto space = env.action_space();
  if (space.continuous != cfg.continuous) {
    throw ConfigError("collect_experience: search and environment disagree on action type");
  }
  LatentPlanner<T> planner(model, opts.use_target_values ? target : nullptr, opts.task,
                           cfg.context_steps);
  std::vector<GameSegment> out;
  for (int64_t e = 0; e < opts.episodes; ++e) {
    GameSegment seg;
    seg.task = opts.task;
    Observation obs = env.reset(rng());
    planner.begin_episode();
    while (true) {
      planner.observe(obs);
      if (opts.trace) *opts.trace << "{\"episode\":" << e << ",\"step\":" << planner.step() << "}\n";
      auto res = run_search(planner, space.n, cfg, rng, opts.add_noise, opts.trace);
      const size_t pick = choose_action(res.policy, cfg.temperature, rng);
      Transition tr;
      tr.obs = std::move(obs);
      tr.action = res.actions[pick];
      tr.policy = std::move(res.policy);
      tr.root_value = res.root_value;
      if (cfg.continuous) tr.sampled_actions = std::move(res.actions);
      const auto step = env.step(tr.action);
      tr.reward = step.reward;
      tr.done = step.done;
      planner.commit(tr.action);
      seg.steps.push_back(std::move(tr));
      obs = step.obs;
      if (step.done) break;
    }
    seg.final_obs = std::move(obs);
    seg.success = env.success();
    out.push_back(std::move(seg));
  }
  return out;
}

template std::vector<GameSegment> collect_experience<float>(Environment&, const WorldModel<float>&,
                                                            const WorldModel<float>*,
                                                            const SearchConfig&,
                                                            const CollectOptions&, Rng&);
template std::vector<GameSegment> collect_experience<double>(Environment&,
                                                             const WorldModel<double>&,
                                                             const WorldModel<double>*,
                                                             const SearchConfig&,
                                                             const CollectOptions&, Rng&);

}  // namespace latentplan
