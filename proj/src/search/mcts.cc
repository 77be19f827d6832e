#include "latentplan/mcts.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "json.hpp"

namespace latentplan {

void SearchConfig::validate() const {
  if (num_simulations < 1) throw ConfigError("search: num_simulations must be >= 1");
  if (!(discount >= 0 && discount < 1)) throw ConfigError("search: discount must be in [0, 1)");
  if (temperature < 0) throw ConfigError("search: temperature must be >= 0");
  if (c1 < 0 || c2 <= 0) throw ConfigError("search: c1 must be >= 0 and c2 > 0");
  if (dirichlet_alpha <= 0) throw ConfigError("search: dirichlet_alpha must be > 0");
  if (dirichlet_weight < 0 || dirichlet_weight > 1) {
    throw ConfigError("search: dirichlet_weight must be in [0, 1]");
  }
  if (continuous && num_sampled_actions < 2) {
    throw ConfigError("search: num_sampled_actions must be >= 2 in continuous mode");
  }
  if (context_steps < 1) throw ConfigError("search: context_steps must be >= 1");
}

void MinMaxStats::update(double v) {
  lo_ = std::min(lo_, v);
  hi_ = std::max(hi_, v);
}

double MinMaxStats::normalize(double v) const {
  if (hi_ > lo_) return (v - lo_) / (hi_ - lo_);
  return v;
}

double puct_score(const SearchNode& node, size_t edge, const SearchConfig& cfg,
                  const MinMaxStats* bounds) {
  int64_t total = 0;
  for (const auto& e : node.edges) total += e.visits;
  const auto& e = node.edges[edge];
  double q = 0.0;
  if (e.visits > 0) q = bounds ? bounds->normalize(e.q) : e.q;
  const double n = static_cast<double>(total);
  const double explore = e.prior * std::sqrt(n) / (1.0 + static_cast<double>(e.visits)) *
                         (cfg.c1 + std::log((n + cfg.c2 + 1.0) / cfg.c2));
  return q + explore;
}

size_t select_child(const SearchNode& node, const SearchConfig& cfg, const MinMaxStats* bounds) {
  if (!node.expanded()) throw UsageError("select_child: node is not expanded");
  size_t best = 0;
  double best_score = puct_score(node, 0, cfg, bounds);
  for (size_t i = 1; i < node.edges.size(); ++i) {
    const double s = puct_score(node, i, cfg, bounds);
    if (s > best_score || (s == best_score && node.edges[i].prior > node.edges[best].prior)) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

void backup(SearchTree& tree, std::span<const PathStep> path, double leaf_value,
            const SearchConfig& cfg) {
  double g = leaf_value;
  for (size_t k = path.size(); k-- > 0;) {
    auto& node = tree.nodes[static_cast<size_t>(path[k].node)];
    auto& e = node.edges[path[k].edge];
    g = e.reward + cfg.discount * g;
    e.q = (static_cast<double>(e.visits) * e.q + g) / static_cast<double>(e.visits + 1);
    ++e.visits;
    ++node.visits;
    tree.bounds.update(g);
  }
}

void mix_root_noise(SearchNode& root, std::span<const double> eta, double weight) {
  if (eta.size() != root.edges.size()) throw ShapeError("root noise: size mismatch");
  for (size_t i = 0; i < eta.size(); ++i) {
    root.edges[i].prior = (1.0 - weight) * root.edges[i].prior + weight * eta[i];
  }
}

void apply_root_noise(SearchNode& root, double alpha, double weight, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> eta(root.edges.size());
  double total = 0;
  for (double& x : eta) total += x = gamma(rng);
  if (total <= 0) return;  // all draws underflowed; leave priors alone
  for (double& x : eta) x /= total;
  mix_root_noise(root, eta, weight);
}

std::vector<double> improved_policy(std::span<const int64_t> visits, double temperature) {
  if (temperature < 0) throw UsageError("improved_policy: temperature must be >= 0");
  const auto top = std::max_element(visits.begin(), visits.end());
  if (top == visits.end() || *top <= 0) throw UsageError("improved_policy: no visits");
  std::vector<double> pi(visits.size(), 0.0);
  if (temperature == 0) {
    pi[static_cast<size_t>(top - visits.begin())] = 1.0;
    return pi;
  }
  const double log_top = std::log(static_cast<double>(*top));
  double total = 0;
  for (size_t i = 0; i < visits.size(); ++i) {
    if (visits[i] > 0) {
      total += pi[i] = std::exp((std::log(static_cast<double>(visits[i])) - log_top) / temperature);
    }
  }
  for (double& p : pi) p /= total;
  return pi;
}

double gaussian_log_density(std::span<const float> a, std::span<const double> mu,
                            std::span<const double> sigma) {
  double lp = 0;
  for (size_t d = 0; d < mu.size(); ++d) {
    const double z = (static_cast<double>(a[d]) - mu[d]) / sigma[d];
    lp += -0.5 * z * z - std::log(sigma[d]) - 0.5 * std::log(2 * std::numbers::pi);
  }
  return lp;
}

SampledActions sample_continuous_actions(std::span<const double> mu, std::span<const double> sigma,
                                         int64_t k, Rng& rng) {
  if (k < 2) throw UsageError("sample_continuous_actions: k must be >= 2");
  if (mu.size() != sigma.size() || mu.empty()) throw ShapeError("sample: mu/sigma mismatch");
  SampledActions out;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int64_t i = 0; i < k; ++i) {
    std::vector<float> a(mu.size());
    for (size_t d = 0; d < mu.size(); ++d) {
      a[d] = static_cast<float>(mu[d] + sigma[d] * normal(rng));
    }
    out.log_density.push_back(gaussian_log_density(a, mu, sigma));
    out.actions.push_back(Action::continuous(std::move(a)));
  }
  return out;
}

namespace {

SearchNode make_node(const Prediction& p, int64_t depth, int64_t num_actions,
                     const SearchConfig& cfg, Rng& rng) {
  SearchNode node;
  node.depth = depth;
  node.visits = 1;
  node.terminal = p.terminal;
  node.value = p.terminal ? 0.0 : p.value;
  if (p.terminal) return node;
  if (cfg.continuous) {
    auto s = sample_continuous_actions(p.mu, p.sigma, cfg.num_sampled_actions, rng);
    const double prior = 1.0 / static_cast<double>(cfg.num_sampled_actions);
    for (size_t i = 0; i < s.actions.size(); ++i) {
      node.edges.push_back({.action = std::move(s.actions[i]), .prior = prior,
                            .log_density = s.log_density[i]});
    }
  } else {
    if (static_cast<int64_t>(p.prior.size()) != num_actions) {
      throw ShapeError("search: model returned " + std::to_string(p.prior.size()) +
                       " priors for " + std::to_string(num_actions) + " actions");
    }
    for (int64_t a = 0; a < num_actions; ++a) {
      node.edges.push_back({.action = Action::discrete(a), .prior = p.prior[a]});
    }
  }
  return node;
}

nlohmann::json action_json(const Action& a) {
  if (!a.values.empty()) return a.values;
  return a.index;
}

}  // namespace

SearchResult run_search(SearchModel& model, int64_t num_actions, const SearchConfig& cfg,
                        Rng& rng, bool add_noise, std::ostream* trace) {
  cfg.validate();
  SearchResult res;
  SearchTree& tree = res.tree;
  const Prediction root_pred = model.root();
  if (root_pred.terminal) throw UsageError("run_search: root state is terminal");
  tree.nodes.push_back(make_node(root_pred, 0, num_actions, cfg, rng));
  if (add_noise) apply_root_noise(tree.nodes[0], cfg.dirichlet_alpha, cfg.dirichlet_weight, rng);
  const MinMaxStats* bounds = cfg.normalize_q ? &tree.bounds : nullptr;

  std::vector<PathStep> path;
  for (int64_t sim = 0; sim < cfg.num_simulations; ++sim) {
    path.clear();
    int64_t node = 0;
    double leaf_value = 0.0;
    while (true) {
      SearchNode& n = tree.nodes[static_cast<size_t>(node)];
      if (n.terminal) {
        ++n.visits;
        break;
      }
      const size_t e = select_child(n, cfg, bounds);
      path.push_back({node, e});
      const int64_t child = n.edges[e].child;
      if (child >= 0) {
        node = child;
        continue;
      }
      const int64_t id = static_cast<int64_t>(tree.nodes.size());
      const Action action = n.edges[e].action;
      const int64_t depth = n.depth + 1;
      const Prediction p = model.expand(node, action, id);
      // `n` may dangle after the push below.
      tree.nodes[static_cast<size_t>(node)].edges[e].child = id;
      tree.nodes[static_cast<size_t>(node)].edges[e].reward = p.reward;
      tree.nodes.push_back(make_node(p, depth, num_actions, cfg, rng));
      leaf_value = tree.nodes.back().value;
      break;
    }
    backup(tree, path, leaf_value, cfg);
    if (trace) {
      nlohmann::json line;
      line["sim"] = sim;
      line["path"] = nlohmann::json::array();
      for (const auto& s : path) {
        line["path"].push_back(
            action_json(tree.nodes[static_cast<size_t>(s.node)].edges[s.edge].action));
      }
      line["leaf_value"] = leaf_value;
      *trace << line.dump() << '\n';
    }
  }

  const SearchNode& root = tree.nodes[0];
  int64_t total = 0;
  double weighted = 0;
  for (const auto& e : root.edges) {
    res.actions.push_back(e.action);
    res.visits.push_back(e.visits);
    res.q.push_back(e.q);
    total += e.visits;
    weighted += static_cast<double>(e.visits) * e.q;
  }
  res.policy = improved_policy(res.visits, cfg.temperature);
  res.root_value = weighted / static_cast<double>(total);
  res.network_value = root.value;
  if (trace) {
    nlohmann::json line;
    std::vector<double> prior;
    for (const auto& e : root.edges) prior.push_back(e.prior);
    line["root"] = {{"visits", res.visits}, {"q", res.q}, {"prior", prior},
                    {"policy", res.policy}, {"value", res.root_value}};
    *trace << line.dump() << '\n';
  }
  return res;
}

size_t choose_action(std::span<const double> policy, double temperature, Rng& rng) {
  if (policy.empty()) throw UsageError("choose_action: empty policy");
  if (temperature == 0) {
    return static_cast<size_t>(std::max_element(policy.begin(), policy.end()) - policy.begin());
  }
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (size_t i = 0; i < policy.size(); ++i) {
    u -= policy[i];
    if (u < 0) return i;
  }
  for (size_t i = policy.size(); i-- > 0;) {
    if (policy[i] > 0) return i;
  }
  return 0;
}

}  // namespace latentplan
