#pragma once

// Linear probabilistic classifier supplying P(y | x) to the uncertainty
// rewards and to the evaluation protocol.
//
// Default mode: multinomial logistic regression with L2 penalty on the
// weights, trained by full-batch gradient descent with backtracking so the
// objective never increases. Above full_batch_limit samples it switches to
// shuffled mini-batches.
//
// Platt mode: one-vs-rest linear models trained on the hinge loss, each
// calibrated with a sigmoid fitted to its decision values; the K sigmoid
// outputs are renormalized into a distribution.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "activegan/autodiff.hpp"
#include "activegan/data.hpp"
#include "activegan/error.hpp"
#include "activegan/metrics.hpp"
#include "activegan/models.hpp"
#include "activegan/rng.hpp"
#include "activegan/tensor.hpp"

namespace activegan {

enum class CalibrationMode { softmax, platt };

inline std::string to_string(CalibrationMode m) { return m == CalibrationMode::softmax ? "softmax" : "platt"; }

inline CalibrationMode parse_calibration(const std::string& s) {
    if (s == "softmax") return CalibrationMode::softmax;
    if (s == "platt") return CalibrationMode::platt;
    throw ValidationError("unknown classifier mode '" + s + "' (expected softmax or platt)");
}

struct ClassifierHyperparams {
    double regularization = 0.001;
    double learning_rate = 1.0;
    std::size_t epochs = 200;
    CalibrationMode mode = CalibrationMode::softmax;
    std::size_t batch_size = 128;
    std::size_t full_batch_limit = 10000;

    void validate() const {
        if (!(regularization >= 0.0)) throw ContractError("classifier regularization must be >= 0");
        if (!(learning_rate > 0.0)) throw ContractError("classifier learning rate must be > 0");
        if (epochs == 0) throw ContractError("classifier needs at least one epoch");
        if (batch_size == 0) throw ContractError("classifier batch size must be positive");
    }
};

class ProbClassifier {
public:
    ProbClassifier() = default;

    ProbClassifier(std::size_t dim, std::size_t num_classes, ClassifierHyperparams hp)
        : hp_(hp), weights_(Shape{dim, num_classes}, 0.0), bias_(Shape{num_classes}, 0.0) {}

    std::size_t dim() const noexcept { return weights_.rank() == 2 ? weights_.dim(0) : 0; }
    std::size_t num_classes() const noexcept { return bias_.size(); }
    const ClassifierHyperparams& hyperparams() const noexcept { return hp_; }
    CalibrationMode mode() const noexcept { return hp_.mode; }

    Tensor& weights() noexcept { return weights_; }
    const Tensor& weights() const noexcept { return weights_; }
    Tensor& bias() noexcept { return bias_; }
    const Tensor& bias() const noexcept { return bias_; }
    std::vector<double>& platt_a() noexcept { return platt_a_; }
    std::vector<double>& platt_b() noexcept { return platt_b_; }
    const std::vector<double>& platt_a() const noexcept { return platt_a_; }
    const std::vector<double>& platt_b() const noexcept { return platt_b_; }

    // Objective value after each training epoch.
    const std::vector<double>& objective_trace() const noexcept { return objective_trace_; }
    std::vector<double>& objective_trace() noexcept { return objective_trace_; }

    // Linear scores x W + b for a [N x d] matrix.
    Tensor scores(const Tensor& x) const {
        check_dim(x);
        Tensor s = matmul_values(x, weights_);
        for (std::size_t r = 0; r < s.rows(); ++r) {
            for (std::size_t c = 0; c < s.cols(); ++c) s.at(r, c) += bias_[c];
        }
        return s;
    }

    // [N x K] posterior rows.
    Tensor predict_proba(const Tensor& x) const {
        Tensor s = scores(x);
        const std::size_t k = num_classes();
        for (std::size_t r = 0; r < s.rows(); ++r) {
            auto row = s.row(r);
            if (hp_.mode == CalibrationMode::softmax) {
                const double mx = *std::max_element(row.begin(), row.end());
                double total = 0.0;
                for (double& v : row) total += v = std::exp(v - mx);
                for (double& v : row) v /= total;
            } else {
                double total = 0.0;
                for (std::size_t c = 0; c < k; ++c) total += row[c] = platt_sigmoid(platt_a_[c] * row[c] + platt_b_[c]);
                if (!(total > 0.0)) {
                    for (double& v : row) v = 1.0 / static_cast<double>(k);
                } else {
                    for (double& v : row) v /= total;
                }
            }
        }
        return s;
    }

    std::vector<double> predict_proba(std::span<const double> x) const {
        Tensor xt(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
        const Tensor p = predict_proba(xt);
        return {p.values().begin(), p.values().end()};
    }

    std::vector<std::size_t> predict(const Tensor& x) const {
        const Tensor p = predict_proba(x);
        std::vector<std::size_t> out(p.rows());
        for (std::size_t r = 0; r < p.rows(); ++r) {
            const auto row = p.row(r);
            out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        }
        return out;
    }

    ParameterSet parameters() const {
        ParameterSet p;
        p.add("weight", weights_);
        p.add("bias", bias_);
        if (hp_.mode == CalibrationMode::platt) {
            p.add("platt_a", Tensor::vector(platt_a_));
            p.add("platt_b", Tensor::vector(platt_b_));
        }
        return p;
    }

    void check_dim(const Tensor& x) const {
        if (x.rank() != 2 || x.cols() != dim()) {
            throw ShapeError("classifier expects [N x " + std::to_string(dim()) + "] features, got " +
                             shape_string(x.shape()));
        }
    }

    // P(y=1 | f) = 1 / (1 + exp(A f + B)) in Platt's sign convention, with
    // the argument already folded in.
    static double platt_sigmoid(double t) { return sigmoid_value(-t); }

private:
    ClassifierHyperparams hp_;
    Tensor weights_{Shape{0, 0}};
    Tensor bias_{Shape{0}};
    std::vector<double> platt_a_;
    std::vector<double> platt_b_;
    std::vector<double> objective_trace_;
};

namespace detail {

// Regularized training objective on the tape. W and b are bound leaves.
inline Var classifier_objective(Var w, Var b, Var x, std::span<const std::size_t> labels, double reg,
                                CalibrationMode mode) {
    Tape& tape = *w.tape();
    Var s = add(matmul(x, w), b);
    Var data_term;
    if (mode == CalibrationMode::softmax) {
        Var log_p = clamp_log(gather_cols(softmax(s), std::vector<std::size_t>(labels.begin(), labels.end())));
        data_term = neg(mean(log_p));
    } else {
        // Sum over classes of the one-vs-rest hinge, averaged over samples.
        Tensor signs(s.shape(), -1.0);
        for (std::size_t r = 0; r < labels.size(); ++r) signs.at(r, labels[r]) = 1.0;
        Var hinge = relu(add_scalar(neg(mul(s, tape.constant(std::move(signs)))), 1.0));
        data_term = scale(sum(hinge), 1.0 / static_cast<double>(labels.size()));
    }
    return add(data_term, scale(sum(square(w)), 0.5 * reg));
}

inline double classifier_objective_value(const Tensor& w, const Tensor& b, const Tensor& x,
                                         std::span<const std::size_t> labels, double reg, CalibrationMode mode) {
    Tape tape;
    return classifier_objective(tape.leaf(w, false), tape.leaf(b, false), tape.constant(x), labels, reg, mode)
        .value()
        .item();
}

// Platt's sigmoid fit on decision values with regularized targets, using
// Newton's method with backtracking (Lin, Lin and Weng's formulation).
inline std::pair<double, double> fit_platt(std::span<const double> f, std::span<const int> y) {
    double prior1 = 0.0, prior0 = 0.0;
    for (int v : y) (v > 0 ? prior1 : prior0) += 1.0;
    const double hi = (prior1 + 1.0) / (prior1 + 2.0);
    const double lo = 1.0 / (prior0 + 2.0);
    std::vector<double> t(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) t[i] = y[i] > 0 ? hi : lo;

    double a = 0.0, b = std::log((prior0 + 1.0) / (prior1 + 1.0));
    auto objective = [&](double A, double B) {
        double fval = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double fa = f[i] * A + B;
            fval += fa >= 0 ? t[i] * fa + std::log1p(std::exp(-fa)) : (t[i] - 1.0) * fa + std::log1p(std::exp(fa));
        }
        return fval;
    };
    double fval = objective(a, b);
    const double sigma = 1e-12;
    for (int it = 0; it < 100; ++it) {
        double h11 = sigma, h22 = sigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double fa = f[i] * a + b;
            double p, q;
            if (fa >= 0) {
                p = std::exp(-fa) / (1.0 + std::exp(-fa));
                q = 1.0 / (1.0 + std::exp(-fa));
            } else {
                p = 1.0 / (1.0 + std::exp(fa));
                q = std::exp(fa) / (1.0 + std::exp(fa));
            }
            const double d2 = p * q;
            h11 += f[i] * f[i] * d2;
            h22 += d2;
            h21 += f[i] * d2;
            const double d1 = t[i] - p;
            g1 += f[i] * d1;
            g2 += d1;
        }
        if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
        const double det = h11 * h22 - h21 * h21;
        const double da = -(h22 * g1 - h21 * g2) / det;
        const double db = -(-h21 * g1 + h11 * g2) / det;
        const double gd = g1 * da + g2 * db;
        double step = 1.0;
        bool moved = false;
        while (step >= 1e-10) {
            const double na = a + step * da, nb = b + step * db;
            const double nf = objective(na, nb);
            if (nf < fval + 1e-4 * step * gd) {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if (!moved) break;
    }
    return {a, b};
}

}  // namespace detail

// Trains from zero-initialized weights. In full-batch mode each epoch is one
// gradient step whose length is halved until the objective does not increase.
inline ProbClassifier train_classifier(const LabeledDataset& data, const ClassifierHyperparams& hp, SeededRng& rng) {
    hp.validate();
    data.validate();
    if (data.empty()) throw ContractError("cannot train a classifier on an empty dataset");
    const auto counts = data.class_counts();
    if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
        throw ContractError("classifier training needs at least two classes present");
    }
    ProbClassifier clf(data.dim(), data.num_classes, hp);
    Tensor& w = clf.weights();
    Tensor& b = clf.bias();

    const bool full_batch = data.size() <= hp.full_batch_limit;
    if (full_batch) {
        double current = detail::classifier_objective_value(w, b, data.features, data.labels, hp.regularization, hp.mode);
        for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
            Tape tape;
            Var wv = tape.leaf(w), bv = tape.leaf(b);
            Var obj = detail::classifier_objective(wv, bv, tape.constant(data.features), data.labels,
                                                   hp.regularization, hp.mode);
            tape.backward(obj);
            const Tensor gw = tape.grad(wv), gb = tape.grad(bv);
            double step = hp.learning_rate;
            for (int halvings = 0; halvings < 40; ++halvings, step *= 0.5) {
                Tensor nw = w, nb = b;
                for (std::size_t i = 0; i < nw.size(); ++i) nw[i] -= step * gw[i];
                for (std::size_t i = 0; i < nb.size(); ++i) nb[i] -= step * gb[i];
                const double next =
                    detail::classifier_objective_value(nw, nb, data.features, data.labels, hp.regularization, hp.mode);
                if (next <= current) {
                    w = std::move(nw);
                    b = std::move(nb);
                    current = next;
                    break;
                }
            }
            clf.objective_trace().push_back(current);
        }
    } else {
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
            rng.shuffle(order);
            for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
                const std::size_t end = std::min(order.size(), start + hp.batch_size);
                const LabeledDataset batch = data.subset(std::span(order).subspan(start, end - start));
                Tape tape;
                Var wv = tape.leaf(w), bv = tape.leaf(b);
                tape.backward(detail::classifier_objective(wv, bv, tape.constant(batch.features), batch.labels,
                                                           hp.regularization, hp.mode));
                const Tensor gw = tape.grad(wv), gb = tape.grad(bv);
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= hp.learning_rate * gw[i];
                for (std::size_t i = 0; i < b.size(); ++i) b[i] -= hp.learning_rate * gb[i];
            }
            clf.objective_trace().push_back(
                detail::classifier_objective_value(w, b, data.features, data.labels, hp.regularization, hp.mode));
        }
    }

    if (hp.mode == CalibrationMode::platt) {
        const Tensor s = clf.scores(data.features);
        for (std::size_t k = 0; k < data.num_classes; ++k) {
            std::vector<double> f(data.size());
            std::vector<int> y(data.size());
            for (std::size_t i = 0; i < data.size(); ++i) {
                f[i] = s.at(i, k);
                y[i] = data.labels[i] == k ? 1 : -1;
            }
            const auto [a, bb] = detail::fit_platt(f, y);
            clf.platt_a().push_back(a);
            clf.platt_b().push_back(bb);
        }
    }
    return clf;
}

// Rebuilds a classifier from its parameter tensors.
inline ProbClassifier classifier_from_parameters(const ParameterSet& p, ClassifierHyperparams hp) {
    auto find = [&](const std::string& n) -> const Tensor& {
        for (std::size_t i = 0; i < p.names.size(); ++i) {
            if (p.names[i] == n) return p.tensors[i];
        }
        throw FormatError("classifier parameters lack '" + n + "'");
    };
    const Tensor& w = find("weight");
    ProbClassifier clf(w.dim(0), w.dim(1), hp);
    clf.weights() = w;
    clf.bias() = find("bias");
    if (hp.mode == CalibrationMode::platt) {
        const Tensor& a = find("platt_a");
        const Tensor& b = find("platt_b");
        clf.platt_a().assign(a.values().begin(), a.values().end());
        clf.platt_b().assign(b.values().begin(), b.values().end());
    }
    return clf;
}

struct GridSearchSpec {
    std::vector<double> regularizations{0.0001, 0.001, 0.01, 0.1};
    std::vector<double> learning_rates{1.0};
    std::size_t folds = 3;
    ClassifierHyperparams base;

    void validate() const {
        if (regularizations.empty() || learning_rates.empty()) throw ContractError("grid search needs at least one candidate per axis");
        if (folds < 2) throw ContractError("grid search needs at least 2 folds");
    }
};

struct GridSearchResult {
    ClassifierHyperparams best;
    double best_score = 0.0;
    struct Row {
        double regularization;
        double learning_rate;
        std::vector<double> fold_scores;
        double mean_score;
    };
    std::vector<Row> rows;  // in candidate order (regularization, then learning rate, ascending)
};

// Stratified fold index per sample: each class is shuffled and dealt
// round-robin, continuing the deal across classes.
inline std::vector<std::size_t> assign_folds(const LabeledDataset& data, std::size_t folds, SeededRng& rng) {
    std::vector<std::size_t> fold(data.size(), 0);
    std::vector<std::vector<std::size_t>> by_class(data.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
    std::size_t next = 0;
    for (auto& idx : by_class) {
        rng.shuffle(idx);
        for (std::size_t i : idx) fold[i] = next++ % folds;
    }
    return fold;
}

// k-fold cross-validated macro F for every (regularization, learning rate)
// pair; ties resolve to lower regularization, then lower learning rate.
inline GridSearchResult grid_search(const LabeledDataset& data, const GridSearchSpec& spec, SeededRng& rng) {
    spec.validate();
    if (data.size() < spec.folds) throw ContractError("dataset too small for " + std::to_string(spec.folds) + " folds");
    auto regs = spec.regularizations;
    auto lrs = spec.learning_rates;
    std::sort(regs.begin(), regs.end());
    std::sort(lrs.begin(), lrs.end());
    const auto fold = assign_folds(data, spec.folds, rng);

    GridSearchResult result;
    bool have_best = false;
    for (double reg : regs) {
        for (double lr : lrs) {
            ClassifierHyperparams hp = spec.base;
            hp.regularization = reg;
            hp.learning_rate = lr;
            GridSearchResult::Row row{reg, lr, {}, 0.0};
            for (std::size_t f = 0; f < spec.folds; ++f) {
                std::vector<std::size_t> tr, va;
                for (std::size_t i = 0; i < data.size(); ++i) (fold[i] == f ? va : tr).push_back(i);
                const LabeledDataset train = data.subset(tr);
                const LabeledDataset valid = data.subset(va);
                SeededRng fold_rng(SeededRng::splitmix(rng.seed() + f));
                double score = 0.0;
                const auto counts = train.class_counts();
                if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) >= 2 && !valid.empty()) {
                    const auto clf = train_classifier(train, hp, fold_rng);
                    score = f_score(clf.predict(valid.features), valid.labels, data.num_classes).macro;
                }
                row.fold_scores.push_back(score);
                row.mean_score += score / static_cast<double>(spec.folds);
            }
            if (!have_best || row.mean_score > result.best_score) {
                result.best = hp;
                result.best_score = row.mean_score;
                have_best = true;
            }
            result.rows.push_back(std::move(row));
        }
    }
    return result;
}

}  // namespace activegan
