#pragma once

// PUCT tree search over a pluggable model. Nodes are identified by dense ids
// (root = 0, assigned in creation order) so models can keep per-node state
// in parallel arrays.

#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "latentplan/errors.h"
#include "latentplan/tensor.h"
#include "latentplan/types.h"

namespace latentplan {

struct SearchConfig {
  int64_t num_simulations = 50;
  double c1 = 1.25;
  double c2 = 19652.0;
  double discount = 0.997;
  double dirichlet_alpha = 0.3;
  double dirichlet_weight = 0.25;
  double temperature = 0.25;  // 0 = argmax
  bool continuous = false;
  int64_t num_sampled_actions = 20;
  bool normalize_q = true;
  int64_t context_steps = 18;  // H_infer

  void validate() const;  // throws ConfigError
};

// Model output for one node.
struct Prediction {
  std::vector<double> prior;      // discrete action priors (ignored when continuous)
  std::vector<double> mu, sigma;  // continuous proposal
  double value = 0.0;             // leaf value used for backup
  double reward = 0.0;            // predicted reward on the edge into the node
  bool terminal = false;          // absorbing: no children, backs up 0
};

class SearchModel {
 public:
  virtual ~SearchModel() = default;
  // Starts a new tree rooted at the current state; the root gets id 0.
  virtual Prediction root() = 0;
  // Expands node `child` reached from `parent` by `action`.
  virtual Prediction expand(int64_t parent, const Action& action, int64_t child) = 0;
};

struct EdgeStats {
  Action action;
  double prior = 0.0;
  int64_t visits = 0;
  double q = 0.0;
  double reward = 0.0;
  int64_t child = -1;
  double log_density = 0.0;  // continuous proposal density of the action
};

struct SearchNode {
  std::vector<EdgeStats> edges;
  int64_t visits = 0;
  int64_t depth = 0;
  double value = 0.0;  // model value at creation
  bool terminal = false;
  bool expanded() const { return !edges.empty(); }
};

class MinMaxStats {
 public:
  void update(double v);
  double normalize(double v) const;

 private:
  double lo_ = std::numeric_limits<double>::infinity();
  double hi_ = -std::numeric_limits<double>::infinity();
};

struct SearchTree {
  std::vector<SearchNode> nodes;
  MinMaxStats bounds;
};

// Q + P sqrt(sum N) / (1 + N) (c1 + log((sum N + c2 + 1) / c2)), with Q
// min-max normalized when requested; unvisited edges use Q = 0.
double puct_score(const SearchNode& node, size_t edge, const SearchConfig& cfg,
                  const MinMaxStats* bounds);
// Argmax of puct_score; ties go to the larger prior, then the smaller index.
size_t select_child(const SearchNode& node, const SearchConfig& cfg, const MinMaxStats* bounds);

struct PathStep {
  int64_t node;
  size_t edge;
};
// Backs up the leaf value along the path (root first). Edge k receives
// sum_i gamma^i r_{k+1+i} + gamma^(l-k) v.
void backup(SearchTree& tree, std::span<const PathStep> path, double leaf_value,
            const SearchConfig& cfg);

// P <- (1-w) P + w eta.
void mix_root_noise(SearchNode& root, std::span<const double> eta, double weight);
void apply_root_noise(SearchNode& root, double alpha, double weight, Rng& rng);

// N^(1/T) normalized; T = 0 is one-hot on the most visited (smallest index
// on ties). Throws UsageError when no visits were made.
std::vector<double> improved_policy(std::span<const int64_t> visits, double temperature);

struct SampledActions {
  std::vector<Action> actions;
  std::vector<double> log_density;  // log N(a; mu, sigma^2), summed over dims
};
SampledActions sample_continuous_actions(std::span<const double> mu, std::span<const double> sigma,
                                         int64_t k, Rng& rng);
double gaussian_log_density(std::span<const float> a, std::span<const double> mu,
                            std::span<const double> sigma);

struct SearchResult {
  std::vector<Action> actions;  // root candidate actions
  std::vector<int64_t> visits;
  std::vector<double> q;
  std::vector<double> policy;   // improved policy over `actions`
  double root_value = 0.0;      // visit-weighted root Q
  double network_value = 0.0;   // model value at the root
  SearchTree tree;
};

// Runs cfg.num_simulations select/expand/backup iterations. Root noise is
// applied when `add_noise`. Writes one JSON line per simulation plus a final
// root table to `trace` when non-null.
SearchResult run_search(SearchModel& model, int64_t num_actions, const SearchConfig& cfg,
                        Rng& rng, bool add_noise, std::ostream* trace = nullptr);

// Draws from the improved policy (argmax when temperature is 0).
size_t choose_action(std::span<const double> policy, double temperature, Rng& rng);

}  // namespace latentplan
