#include "pertnet/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pertnet {
namespace {

void check_lambda(float lambda) {
    if (!(lambda >= 0.0f) || !std::isfinite(lambda)) {
        throw std::invalid_argument("perturb loss: lambda must be finite and >= 0, got " +
                                    std::to_string(lambda));
    }
}

void check_suppress_indices(std::span<const int> indices, int num_classes) {
    if (indices.empty()) {
        throw std::invalid_argument("loss_suppress: empty index list");
    }
    if (static_cast<int>(indices.size()) > num_classes - 1) {
        throw std::invalid_argument("loss_suppress: cannot suppress " +
                                    std::to_string(indices.size()) + " of " +
                                    std::to_string(num_classes) +
                                    " classes; at most C-1 may be suppressed");
    }
    for (const int i : indices) {
        if (i < 0 || i >= num_classes) {
            throw std::invalid_argument("loss_suppress: class index " + std::to_string(i) +
                                        " out of range for " + std::to_string(num_classes) +
                                        " classes");
        }
    }
}

/// Shared assembly for both objectives: score_term + lambda * l1(X, P(X)).
PerturbLoss assemble_loss(Tape& t, const ClassifierM& m, const GeneratorP& p, const Tensor& x,
                          const LossMode& mode) {
    check_lambda(mode.lambda);
    PerturbLoss out;
    out.p_leaves = generator_leaves(t, p, true);
    Var xin = t.leaf(x, false);
    out.perturbed = generator_forward(t, p, out.p_leaves, xin);
    out.scores = classifier_forward(t, m, out.perturbed);

    Var score_term{};
    if (const auto* s = std::get_if<SuppressTopK>(&mode.objective)) {
        check_suppress_indices(s->indices, m.num_classes);
        score_term = pick_sum(t, out.scores, s->indices);
    } else {
        const int target = std::get<MaximizeClass>(mode.objective).target_class;
        if (target < 0 || target >= m.num_classes) {
            throw std::invalid_argument("loss_target: class index " + std::to_string(target) +
                                        " out of range for " + std::to_string(m.num_classes) +
                                        " classes");
        }
        const int idx[1] = {target};
        score_term = affine(t, pick_sum(t, out.scores, idx), -1.0f, 1.0f);
    }
    Var proximity = l1_distance(t, xin, out.perturbed);
    out.loss = add(t, score_term, mul_scalar(t, proximity, mode.lambda));
    return out;
}

double mean_abs(const Tensor& t) {
    return t.flat().abs().cast<double>().sum() / static_cast<double>(t.size());
}

}  // namespace

std::vector<int> top_k_indices(const Tensor& y, int k) {
    if (y.rank() != 1) {
        throw std::invalid_argument("top_k_indices: scores must be rank-1, got shape " +
                                    shape_str(y.shape()));
    }
    const int n = static_cast<int>(y.size());
    if (k <= 0 || k > n) {
        throw std::invalid_argument("top_k_indices: k must be in [1," + std::to_string(n) +
                                    "], got " + std::to_string(k));
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    // stable_sort keeps ascending index order inside equal-score groups.
    std::stable_sort(order.begin(), order.end(),
                     [&y](int a, int b) { return y[a] > y[b]; });
    order.resize(static_cast<std::size_t>(k));
    return order;
}

PerturbLoss loss_suppress(Tape& t, const ClassifierM& m, const GeneratorP& p, const Tensor& x,
                          std::span<const int> indices, float lambda) {
    LossMode mode;
    mode.objective = SuppressTopK{static_cast<int>(indices.size()),
                                  std::vector<int>(indices.begin(), indices.end())};
    mode.lambda = lambda;
    return assemble_loss(t, m, p, x, mode);
}

PerturbLoss loss_target(Tape& t, const ClassifierM& m, const GeneratorP& p, const Tensor& x,
                        int target_class, float lambda) {
    LossMode mode;
    mode.objective = MaximizeClass{target_class};
    mode.lambda = lambda;
    return assemble_loss(t, m, p, x, mode);
}

PerturbationResult optimize_perturbation(const ClassifierM& m, const Tensor& x,
                                         const PerturbConfig& config) {
    if (!m.frozen) {
        throw std::invalid_argument("optimize_perturbation: classifier must be frozen");
    }
    if (config.epochs < 1) {
        throw std::invalid_argument("optimize_perturbation: epochs must be >= 1, got " +
                                    std::to_string(config.epochs));
    }
    if (!std::isfinite(config.threshold)) {
        throw std::invalid_argument("optimize_perturbation: non-finite threshold");
    }
    check_lambda(config.mode.lambda);
    if (x.shape() != sample_shape(m.mode)) {
        throw std::invalid_argument("optimize_perturbation: sample shape " + shape_str(x.shape()) +
                                    " does not match the classifier input " +
                                    shape_str(sample_shape(m.mode)));
    }
    if (!x.all_finite()) {
        throw std::invalid_argument("optimize_perturbation: sample has non-finite values");
    }
    if ((x.flat() < 0.0f).any() || (x.flat() > 1.0f).any()) {
        throw std::invalid_argument("optimize_perturbation: sample values must lie in [0,1]");
    }

    const Tensor original_scores = classifier_scores(m, x);

    // Freeze the suppression indices from the ORIGINAL scores, once.
    LossMode mode = config.mode;
    int table_k = std::min(5, m.num_classes);
    if (auto* s = std::get_if<SuppressTopK>(&mode.objective)) {
        if (s->indices.empty()) {
            if (s->k < 1 || s->k > m.num_classes - 1) {
                throw std::invalid_argument("optimize_perturbation: top-k size " +
                                            std::to_string(s->k) + " must be in [1," +
                                            std::to_string(m.num_classes - 1) + "]");
            }
            s->indices = top_k_indices(original_scores, s->k);
        }
        check_suppress_indices(s->indices, m.num_classes);
        s->k = static_cast<int>(s->indices.size());
        table_k = s->k;
    }

    PerturbationResult result;
    result.seed = config.seed;
    if (const auto* s = std::get_if<SuppressTopK>(&mode.objective)) {
        for (const int i : s->indices) {
            result.original_topk.push_back({i, original_scores[i]});
        }
    } else {
        for (const int i : top_k_indices(original_scores, table_k)) {
            result.original_topk.push_back({i, original_scores[i]});
        }
    }

    GeneratorP p = build_generator(m.mode);
    std::vector<Tensor*> params;
    std::vector<Shape> shapes;
    params.reserve(p.layers.size() * 2);
    for (ConvSpec& s : p.layers) {
        params.push_back(&s.weight);
        params.push_back(&s.bias);
        shapes.push_back(s.weight.shape());
        shapes.push_back(s.bias.shape());
    }
    AdamState opt(config.adam, shapes);

    double best = std::numeric_limits<double>::infinity();
    Tensor best_perturbed;
    Tensor best_scores;
    result.best_epoch = -1;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        try {
            Tape t;
            PerturbLoss pl = assemble_loss(t, m, p, x, mode);
            const float loss_value = t.value(pl.loss).item();
            if (!std::isfinite(loss_value)) {
                throw std::domain_error("optimize_perturbation: non-finite loss");
            }
            result.loss_history.push_back(loss_value);
            if (static_cast<double>(loss_value) < best) {
                best = loss_value;
                result.best_epoch = epoch;
                best_perturbed = t.value(pl.perturbed);
                best_scores = t.value(pl.scores);
            }
            GradMap grads = t.backward(pl.loss);
            std::vector<const Tensor*> gptrs;
            gptrs.reserve(pl.p_leaves.size());
            for (const Var v : pl.p_leaves) gptrs.push_back(&grads.at(v));
            adam_step(opt, params, gptrs);
        } catch (const std::domain_error&) {
            // Non-finite loss, activation, or gradient: keep the partial
            // history and the best epoch seen so far.
            result.aborted = true;
            result.aborted_epoch = epoch;
            break;
        }
    }

    if (result.best_epoch < 0) {
        // Aborted before the first epoch finished; fall back to the identity
        // perturbation so the result tensors stay well-defined.
        best_perturbed = x;
        best_scores = original_scores;
        best = std::numeric_limits<double>::quiet_NaN();
    }
    result.perturbed = best_perturbed;
    auto [delta, abs_delta] = difference_map(x, best_perturbed);
    result.delta = std::move(delta);
    result.abs_delta = std::move(abs_delta);
    result.min_loss = static_cast<float>(best);
    result.converged = result.best_epoch >= 0 && best < static_cast<double>(config.threshold);
    for (const int i : top_k_indices(best_scores, table_k)) {
        result.perturbed_topk.push_back({i, best_scores[i]});
    }
    return result;
}

std::pair<Tensor, Tensor> difference_map(const Tensor& x, const Tensor& x_perturbed) {
    if (!x.same_shape(x_perturbed)) {
        throw std::invalid_argument("difference_map: shape mismatch " + shape_str(x.shape()) +
                                    " vs " + shape_str(x_perturbed.shape()));
    }
    Tensor delta(x.shape(), x.flat() - x_perturbed.flat());
    Tensor abs_delta(x.shape(), delta.flat().abs());
    return {std::move(delta), std::move(abs_delta)};
}

SparsityMetrics sparsity_metrics(const Tensor& delta, double rel_threshold) {
    if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) {
        throw std::invalid_argument("sparsity_metrics: rel_threshold must lie in (0,1), got " +
                                    std::to_string(rel_threshold));
    }
    if (delta.size() == 0) {
        throw std::invalid_argument("sparsity_metrics: empty tensor");
    }
    SparsityMetrics out;
    const Eigen::ArrayXf abs = delta.flat().abs();
    out.max_abs = static_cast<double>(abs.maxCoeff());
    out.mean_abs = abs.cast<double>().sum() / static_cast<double>(delta.size());
    if (out.max_abs == 0.0) {
        out.sparse_fraction = 1.0;
        return out;
    }
    const double cut = rel_threshold * out.max_abs;
    const auto below = (abs.cast<double>() < cut).count();
    out.sparse_fraction = static_cast<double>(below) / static_cast<double>(delta.size());
    return out;
}

AugmentReport augment_retrain(ClassifierM& m, const std::vector<Tensor>& train_x,
                              const std::vector<int>& train_y, const std::vector<Tensor>& test_x,
                              const std::vector<int>& test_y, const AugmentConfig& config) {
    if (train_x.empty()) {
        throw std::invalid_argument("augment_retrain: empty training set");
    }
    if (train_x.size() != train_y.size()) {
        throw std::invalid_argument("augment_retrain: " + std::to_string(train_x.size()) +
                                    " training samples vs " + std::to_string(train_y.size()) +
                                    " labels");
    }
    if (config.rounds < 0) {
        throw std::invalid_argument("augment_retrain: negative round count");
    }
    AugmentReport report;
    if (config.rounds == 0) return report;
    if (test_x.empty() || test_x.size() != test_y.size()) {
        throw std::invalid_argument("augment_retrain: test split missing or mislabeled");
    }

    for (int round = 0; round < config.rounds; ++round) {
        // Attack phase: the classifier is frozen while P is optimized per sample.
        const bool was_frozen = m.frozen;
        m.frozen = true;
        std::vector<Tensor> adversarial;
        adversarial.reserve(train_x.size());
        int converged_count = 0;
        for (std::size_t i = 0; i < train_x.size(); ++i) {
            PerturbationResult res = optimize_perturbation(m, train_x[i], config.perturb);
            converged_count += res.converged ? 1 : 0;
            report.review_manifest.push_back({round, static_cast<int>(i), train_y[i],
                                              res.converged, res.min_loss,
                                              static_cast<float>(mean_abs(res.abs_delta))});
            adversarial.push_back(std::move(res.perturbed));
        }
        m.frozen = was_frozen;

        AugmentRound round_report;
        round_report.convergence_rate =
            static_cast<double>(converged_count) / static_cast<double>(train_x.size());

        if (round_report.convergence_rate < config.stop_fraction) {
            // The attack no longer converges against the current model; further
            // augmentation has nothing to train on.
            round_report.stopped_early = true;
            round_report.clean_test_accuracy = accuracy(m, test_x, test_y);
            report.rounds.push_back(round_report);
            break;
        }

        // Fine-tune on (perturbed sample, original label) pairs.
        m.frozen = false;
        fit_classifier(m, adversarial, train_y, config.finetune);
        m.frozen = was_frozen;
        round_report.clean_test_accuracy = accuracy(m, test_x, test_y);
        report.rounds.push_back(round_report);
    }
    return report;
}

}  // namespace pertnet
