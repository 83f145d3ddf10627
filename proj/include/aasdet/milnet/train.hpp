#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "../common.hpp"
#include "../eval.hpp"
#include "../straighten.hpp"
#include "adam.hpp"
#include "model.hpp"

namespace aas::mil {

struct TrainConfig {
    MILConfig model;
    double learning_rate = 3e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 50;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    std::size_t slice_count = 50;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    unsigned threads = 1;

    void validate() const {
        model.validate();
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw MilError("learning_rate must be >= 0");
        if (batch_size < 1) throw MilError("batch_size must be >= 1");
        if (epochs < 1) throw MilError("epochs must be >= 1");
        if (slice_count < 1) throw MilError("slice_count must be >= 1");
    }
};

struct TrainExample {
    const StraightenedVolume* volume = nullptr;
    int label = 0;
    std::string id;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    MILModel<float> model;
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

inline std::uint64_t epoch_slice_seed(std::uint64_t seed, std::size_t epoch, const std::string& id) {
    return derive_seed(seed, "slices-epoch-" + std::to_string(epoch), id);
}

inline std::uint64_t validation_seed(std::uint64_t seed, const std::string& id) {
    return derive_seed(seed, "validation", id);
}

struct Evaluation {
    double loss = 0.0;
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> scores;
};

inline Evaluation evaluate_model(const MILModel<float>& m, const std::vector<TrainExample>& set, std::size_t slice_count,
                                 std::uint64_t seed, unsigned threads = 1) {
    Evaluation ev;
    std::vector<int> labels;
    for (const auto& ex : set) {
        const auto p = predict(m, *ex.volume, slice_count, validation_seed(seed, ex.id), threads);
        ev.scores.push_back(p.score);
        labels.push_back(ex.label);
        ev.loss += bce_loss<double>(p.score, ex.label).loss;
    }
    ev.loss /= static_cast<double>(std::max<std::size_t>(set.size(), 1));
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) ev.auc = roc_auc(ev.scores, labels).auc;
    return ev;
}

/// Minibatch training of bags of sampled slices. Slices are redrawn every
/// epoch from a per-epoch seed; the returned model is the one with the lowest
/// validation loss. With learning_rate == 0 nothing is updated, batch-norm
/// running statistics included, and every epoch reuses the first epoch's draws.
inline TrainResult train(const std::vector<TrainExample>& train_set, const std::vector<TrainExample>& val_set,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) throw MilError("train: train and validation sets must be non-empty");
    for (const auto* set : {&train_set, &val_set})
        for (const auto& ex : *set) {
            if (!ex.volume) throw MilError("train: null volume for '" + ex.id + "'");
            if (!ex.volume->normalized) throw MilError("train: volume '" + ex.id + "' is not normalized");
            if (ex.volume->rows == 0 || ex.volume->cols == 0) throw MilError("train: empty slices in '" + ex.id + "'");
            if (ex.label != 0 && ex.label != 1) throw MilError("train: labels must be 0 or 1");
        }

    TrainResult res;
    MILModel<float> model = MILModel<float>::initialize(cfg.model, derive_seed(cfg.seed, "init"));
    const bool frozen = cfg.learning_rate == 0.0;
    AdamState<float> adam;
    const AdamConfig adam_cfg{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon};
    res.model = model;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // A frozen model keeps the first epoch's draws, so its history is constant.
        const std::size_t draw_epoch = frozen ? 1 : epoch;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", std::to_string(draw_epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<Bag<float>> bags;
            std::string batch_desc;
            for (std::size_t k = start; k < end; ++k) {
                const auto& ex = train_set[order[k]];
                const auto seed = epoch_slice_seed(cfg.seed, draw_epoch, ex.id);
                bags.push_back({to_feature_maps<float>(sample_slices(*ex.volume, cfg.slice_count, seed)), ex.label});
                batch_desc += (batch_desc.empty() ? "" : " ") + ex.id + "@" + std::to_string(seed);
            }
            BatchResult<float> br;
            try {
                br = bag_loss<float>(model, bags, BnMode::Train, !frozen, cfg.threads);
            } catch (const MilError& e) {
                throw MilError(std::string("training diverged in epoch ") + std::to_string(epoch) + " (batch seeds: " +
                               batch_desc + "): " + e.what());
            }
            loss_sum += static_cast<double>(br.loss) * static_cast<double>(end - start);
            if (frozen) continue;
            const Params<float>& grads = br.grads;
            adam_step<float>(model.params.groups(), grads.groups(), adam, adam_cfg);
            apply_running_stats(model, br.bn);
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(train_set.size());
        const auto ev = evaluate_model(model, val_set, cfg.slice_count, cfg.seed, cfg.threads);
        st.val_loss = ev.loss;
        st.val_auc = ev.auc;
        if (!std::isfinite(st.train_loss) || !std::isfinite(st.val_loss))
            throw MilError("training diverged in epoch " + std::to_string(epoch));
        res.history.push_back(st);
        if (log)
            *log << "train: epoch " << epoch << " train_loss " << st.train_loss << " val_loss " << st.val_loss
                 << " val_auc " << st.val_auc << " alpha " << model.params.alpha << "\n";
        if (st.val_loss < res.best_val_loss) {
            res.best_val_loss = st.val_loss;
            res.best_epoch = epoch;
            res.model = model;
        } else if (epoch - res.best_epoch >= cfg.patience) {
            break;
        }
    }
    return res;
}

inline void write_history_csv(const std::vector<EpochStats>& h, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw MilError("cannot write '" + path.string() + "'");
    out << "epoch,train_loss,val_loss,val_auc\n";
    for (const auto& e : h)
        out << e.epoch << ',' << aas::detail::format_double(e.train_loss) << ','
            << aas::detail::format_double(e.val_loss) << ','
            << (std::isnan(e.val_auc) ? std::string("nan") : aas::detail::format_double(e.val_auc)) << '\n';
}

}  // namespace aas::mil
