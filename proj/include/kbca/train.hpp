#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kbca/dataset.hpp"
#include "kbca/model.hpp"

namespace kbca {

/// First-order adaptive-moment gradient descent with bias correction.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params, const std::vector<Tensor>& grads) {
        if (m_.empty()) {
            for (const auto& [name, t] : params.items()) {
                (void)name;
                m_.push_back(Tensor::zeros(t.shape()));
                v_.push_back(Tensor::zeros(t.shape()));
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& w = params.items()[p].second;
            const Tensor& g = grads[p];
            for (std::size_t i = 0; i < w.numel(); ++i) {
                m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g[i];
                v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g[i] * g[i];
                w[i] -= lr_ * (m_[p][i] / bc1) / (std::sqrt(v_[p][i] / bc2) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

struct EvalResult {
    Metrics metrics;
    std::vector<Prediction> predictions;
    double mean_loss = 0.0;
};

/// Inference-mode pass over a dataset; deterministic.
inline EvalResult evaluate_model(const EmotionModel& model, const Dataset& ds,
                                 const LexiconTable& lex) {
    if (ds.items.empty()) throw DataError("evaluate_model: empty dataset");
    EvalResult res;
    std::vector<int> preds, golds;
    double loss_sum = 0.0;
    for (const auto& item : ds.items) {
        Tape tape;
        ForwardResult fw = model.forward(tape, item, lex, Mode::Infer);
        preds.push_back(static_cast<int>(fw.prediction.label));
        golds.push_back(item.label);
        Var l = model.loss(tape, fw, static_cast<std::size_t>(item.label));
        loss_sum += tape.value(l)[0];
        res.predictions.push_back(fw.prediction);
    }
    res.metrics = compute_metrics(preds, golds, model.cfg.n_classes);
    res.mean_loss = loss_sum / static_cast<double>(ds.items.size());
    return res;
}

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_ua = 0.0;
    double val_wa = 0.0;
    double val_loss = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val_ua = 0.0;
    double best_val_wa = 0.0;
    bool early_stopped = false;
};

/// Minibatch training with early stopping on the validation metric and
/// best-checkpoint restoration. Deterministic given config.seed: the item
/// noise stream is keyed by (epoch, utterance id), not by arrival order.
inline TrainReport train_model(EmotionModel& model, const Dataset& train, const Dataset& val,
                               const LexiconTable& lex, std::ostream* log = nullptr) {
    if (train.items.empty() || val.items.empty())
        throw DataError("train_model: empty train or validation split");
    const ModelConfig& cfg = model.cfg;
    AdamOptimizer opt(cfg.lr);
    Rng run_rng(cfg.seed, 0x7261);

    TrainReport report;
    ParamStore best_params = model.params;
    double best_score = -1e300;
    std::size_t since_best = 0;

    std::vector<std::size_t> order(train.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Tensor> grad_acc;
    for (const auto& [name, t] : model.params.items()) {
        (void)name;
        grad_acc.push_back(Tensor::zeros(t.shape()));
    }

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng = run_rng.substream(epoch);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            std::size_t b1 = std::min(b0 + cfg.batch_size, order.size());
            for (auto& g : grad_acc)
                for (auto& x : g.data()) x = 0.0;
            for (std::size_t bi = b0; bi < b1; ++bi) {
                const Item& item = train.items[order[bi]];
                Rng item_rng = run_rng.substream(Rng::mix(epoch) ^ fnv1a(item.utt));
                Tape tape;
                ForwardResult fw = model.forward(tape, item, lex, Mode::Train, &item_rng);
                Var loss = model.loss(tape, fw, static_cast<std::size_t>(item.label));
                double lv = tape.value(loss)[0];
                if (!std::isfinite(lv))
                    throw NumericError("train_model: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", utt '" + item.utt + "'");
                epoch_loss += lv;
                ++seen;
                tape.backward(loss);
                for (const auto& [pidx, var] : fw.bound_params) {
                    const Tensor& g = tape.grad(var);
                    Tensor& acc = grad_acc[pidx];
                    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
                }
            }
            double inv = 1.0 / static_cast<double>(b1 - b0);
            for (auto& g : grad_acc)
                for (auto& x : g.data()) x *= inv;
            opt.step(model.params, grad_acc);
        }
        epoch_loss /= static_cast<double>(seen);

        EvalResult ev = evaluate_model(model, val, lex);
        EpochStats st{epoch, epoch_loss, ev.metrics.ua, ev.metrics.wa, ev.mean_loss};
        report.epochs.push_back(st);
        if (log) {
            char line[160];
            std::snprintf(line, sizeof line,
                          "epoch %3zu  train_loss %.6f  val_loss %.6f  val_ua %.4f  val_wa %.4f",
                          epoch, st.train_loss, st.val_loss, st.val_ua, st.val_wa);
            *log << line << '\n';
        }

        double score = cfg.early_stop_metric == "loss" ? -ev.mean_loss : ev.metrics.ua;
        if (score > best_score) {
            best_score = score;
            best_params = model.params;
            report.best_epoch = epoch;
            report.best_val_ua = ev.metrics.ua;
            report.best_val_wa = ev.metrics.wa;
            since_best = 0;
        } else if (++since_best > cfg.early_stop_patience) {
            report.early_stopped = true;
            break;
        }
    }
    model.params = best_params;
    return report;
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    double ua_mean = 0.0, ua_std = 0.0;
    double wa_mean = 0.0, wa_std = 0.0;
    std::vector<double> ua_runs, wa_runs;
};

struct AblationConfig {
    std::string name;
    ModelConfig config;
};

/// The fixed comparison grid: deterministic co-attention, hard knowledge
/// injection, BAM with a key-derived prior, and BAM with the lexicon prior.
inline std::vector<AblationConfig> default_ablation_grid(const ModelConfig& base) {
    std::vector<AblationConfig> grid;
    {
        ModelConfig c = base;
        c.variant = Variant::Det;
        c.hard_knowledge = false;
        grid.push_back({"det", c});
    }
    {
        ModelConfig c = base;
        c.variant = Variant::Det;
        c.hard_knowledge = true;
        grid.push_back({"det+hard_knowledge", c});
    }
    {
        ModelConfig c = base;
        c.variant = Variant::Bam;
        c.hard_knowledge = false;
        c.prior_source = PriorSource::Key;
        grid.push_back({"bam+key", c});
    }
    {
        ModelConfig c = base;
        c.variant = Variant::Bam;
        c.hard_knowledge = false;
        c.prior_source = PriorSource::Knowledge;
        grid.push_back({"bam+knowledge", c});
    }
    return grid;
}

/// Trains one configuration and reports test metrics.
inline Metrics run_single(const ModelConfig& cfg, const SplitDataset& split,
                          const LexiconTable& lex) {
    EmotionModel model(cfg);
    model.init(Rng(cfg.seed, 0x696e));
    train_model(model, split.train, split.val, lex);
    return evaluate_model(model, split.test, lex).metrics;
}

/// Runs the grid x repeats with distinct seeds per repeat. Runs may execute
/// in parallel worker slots; each owns its RNG, and rows are assembled in
/// declared config order, so results do not depend on scheduling.
inline std::vector<AblationRow> run_ablation(const std::vector<AblationConfig>& grid,
                                             const SplitDataset& split, const LexiconTable& lex,
                                             std::size_t repeats, std::size_t jobs = 1) {
    struct Task {
        std::size_t row, rep;
        ModelConfig cfg;
    };
    std::vector<Task> tasks;
    for (std::size_t r = 0; r < grid.size(); ++r) {
        for (std::size_t rep = 0; rep < repeats; ++rep) {
            Task t{r, rep, grid[r].config};
            t.cfg.seed = grid[r].config.seed + rep;
            tasks.push_back(std::move(t));
        }
    }
    std::vector<Metrics> results(tasks.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i)
            results[i] = run_single(tasks[i].cfg, split, lex);
    } else {
        std::vector<std::thread> workers;
        std::size_t n_workers = std::min(jobs, tasks.size());
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w]() {
                for (std::size_t i = w; i < tasks.size(); i += n_workers)
                    results[i] = run_single(tasks[i].cfg, split, lex);
            });
        }
        for (auto& th : workers) th.join();
    }

    std::vector<AblationRow> rows;
    for (std::size_t r = 0; r < grid.size(); ++r) {
        AblationRow row;
        row.name = grid[r].name;
        for (std::size_t rep = 0; rep < repeats; ++rep) {
            const Metrics& m = results[r * repeats + rep];
            row.ua_runs.push_back(m.ua);
            row.wa_runs.push_back(m.wa);
        }
        auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
            mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            sd = 0.0;
            for (double x : v) sd += (x - mean) * (x - mean);
            sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
        };
        mean_std(row.ua_runs, row.ua_mean, row.ua_std);
        mean_std(row.wa_runs, row.wa_mean, row.wa_std);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "config,ua_mean,ua_std,wa_mean,wa_std,repeats\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%zu\n", r.name.c_str(), r.ua_mean,
                      r.ua_std, r.wa_mean, r.wa_std, r.ua_runs.size());
        os << buf;
    }
    return os.str();
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-22s %16s %16s\n", "config", "UA", "WA");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-22s %8.4f±%.4f %8.4f±%.4f\n", r.name.c_str(), r.ua_mean,
                      r.ua_std, r.wa_mean, r.wa_std);
        os << buf;
    }
    return os.str();
}

} // namespace kbca
