#pragma once

#include "pertnet/models.hpp"
#include "pertnet/optim.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace pertnet {

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

/// Suppress the classes that scored highest on the ORIGINAL sample. The
/// indices are computed once from the original scores and stay fixed for the
/// whole optimization; leave `indices` empty to have optimize_perturbation
/// fill them.
struct SuppressTopK {
    int k = 5;
    std::vector<int> indices;
};

/// Drive one chosen class's score toward 1.
struct MaximizeClass {
    int target_class = 0;
};

struct LossMode {
    std::variant<SuppressTopK, MaximizeClass> objective = SuppressTopK{};
    float lambda = 1.0f;  // weight of the proximity term, >= 0
};

/// Indices of the k largest scores, descending by score; ties prefer the
/// lower index. k must be in [1, length(y)].
std::vector<int> top_k_indices(const Tensor& y, int k);

/// Everything one differentiable evaluation of the objective exposes.
struct PerturbLoss {
    Var loss;                   // scalar objective
    Var perturbed;              // P(X)
    Var scores;                 // M(P(X))
    std::vector<Var> p_leaves;  // P's trainable parameter leaves
};

/// Eq. 1 style objective: sum of M(P(X)) at `indices` plus lambda times the
/// per-element-mean L1 distance between X and P(X). Differentiable w.r.t.
/// P's parameters.
PerturbLoss loss_suppress(Tape& t, const ClassifierM& m, const GeneratorP& p, const Tensor& x,
                          std::span<const int> indices, float lambda);

/// Eq. 2 style objective: (1 - M(P(X))_target) plus the same proximity term.
PerturbLoss loss_target(Tape& t, const ClassifierM& m, const GeneratorP& p, const Tensor& x,
                        int target_class, float lambda);

// ---------------------------------------------------------------------------
// Per-sample optimization
// ---------------------------------------------------------------------------

struct PerturbConfig {
    LossMode mode{};
    int epochs = 500;
    float threshold = 0.2f;  // converged := min loss < threshold
    AdamConfig adam{};
    std::uint32_t seed = 0;  // echoed into results/reports; the procedure itself is deterministic
};

struct ScoreEntry {
    int class_index = 0;
    float score = 0.0f;
};

struct PerturbationResult {
    Tensor perturbed;              // X' at the minimum-loss epoch
    Tensor delta;                  // X - X', exact
    Tensor abs_delta;              // |delta|
    std::vector<float> loss_history;  // one entry per completed epoch
    std::vector<ScoreEntry> original_topk;   // frozen indices with original scores
    std::vector<ScoreEntry> perturbed_topk;  // top-k of the perturbed sample's scores
    float min_loss = 0.0f;
    int best_epoch = -1;
    bool converged = false;
    bool aborted = false;     // a non-finite loss or gradient stopped the run early
    int aborted_epoch = -1;   // epoch at which the abort happened
    std::uint32_t seed = 0;
};

/// Builds a fresh identity-initialized P and optimizes it against the frozen
/// classifier. Returns the state at the epoch of minimum loss. A non-finite
/// loss or gradient aborts the run, keeping the partial history and the best
/// epoch seen so far.
PerturbationResult optimize_perturbation(const ClassifierM& m, const Tensor& x,
                                         const PerturbConfig& config);

// ---------------------------------------------------------------------------
// Difference maps and sparsity
// ---------------------------------------------------------------------------

/// (delta, |delta|) with delta = x - x_perturbed, elementwise and exact.
std::pair<Tensor, Tensor> difference_map(const Tensor& x, const Tensor& x_perturbed);

struct SparsityMetrics {
    double sparse_fraction = 0.0;  // share of |delta| below rel_threshold * max|delta|
    double mean_abs = 0.0;
    double max_abs = 0.0;
};

/// rel_threshold must lie in (0,1). A zero delta map counts as fully sparse.
SparsityMetrics sparsity_metrics(const Tensor& delta, double rel_threshold);

// ---------------------------------------------------------------------------
// Adversarial data augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    int rounds = 1;
    PerturbConfig perturb{};
    FitConfig finetune{};
    double stop_fraction = 0.05;  // stop early when the convergence rate drops below this
};

struct ReviewEntry {
    int round = 0;
    int sample = 0;
    int label = 0;
    bool converged = false;
    float min_loss = 0.0f;
    float mean_abs_delta = 0.0f;
};

struct AugmentRound {
    double convergence_rate = 0.0;     // fraction of training samples whose attack converged
    double clean_test_accuracy = 0.0;  // accuracy on the untouched test split after this round
    bool stopped_early = false;        // convergence rate fell below stop_fraction
};

struct AugmentReport {
    std::vector<AugmentRound> rounds;
    std::vector<ReviewEntry> review_manifest;  // every perturbed sample, for human inspection
};

/// Per round: attack every training sample with the configured perturbation,
/// fine-tune m on (perturbed sample, original label) pairs, and re-evaluate
/// on the clean test split. Stops early once the attack's convergence rate
/// drops below stop_fraction. m is modified in place.
AugmentReport augment_retrain(ClassifierM& m, const std::vector<Tensor>& train_x,
                              const std::vector<int>& train_y, const std::vector<Tensor>& test_x,
                              const std::vector<int>& test_y, const AugmentConfig& config);

}  // namespace pertnet
