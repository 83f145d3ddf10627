#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "model.hpp"

namespace aas::mil {

struct GradCheckGroup {
    std::string name;
    std::size_t checked = 0;
    std::size_t switched = 0;  // entries whose perturbation flips a relu or max-pool choice
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_error = 0.0;
    double alpha_rel_error = 0.0;

    [[nodiscard]] std::size_t checked() const {
        std::size_t n = 0;
        for (const auto& g : groups) n += g.checked;
        return n;
    }
};

struct GradCheckOptions {
    double eps = 1e-4;
    std::size_t max_per_group = 12;  // sampled entries for larger groups
    // Gradients smaller than this are compared on an absolute scale; float64
    // roundoff in a difference quotient at eps = 1e-4 is around 1e-11.
    double denominator_floor = 1e-5;
    bool fourth_order = true;        // 4-point central stencil; false = 2-point
    bool freeze_pattern = true;      // replay the unperturbed relu/max-pool pattern
    BnMode mode = BnMode::Train;
    std::uint64_t seed = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backprop gradients of the mean bag loss with central differences
/// for every parameter group (a random subset of entries in groups larger than
/// max_per_group). With freeze_pattern the perturbed losses are evaluated on
/// the unperturbed activation pattern, i.e. on the smooth piece of the
/// piecewise-smooth loss that contains the current parameters.
inline GradCheckReport grad_check(const MILModel<double>& model, const std::vector<Bag<double>>& bags,
                                  const GradCheckOptions& opt = {}) {
    ForwardCache<double> base_cache;
    const auto base = bag_loss<double>(model, bags, opt.mode, true, 1, &base_cache);
    const auto pattern = ActivationPattern::from(base_cache);
    const auto analytic = base.grads.groups();
    const auto names = Params<double>::group_names(model.config);
    std::mt19937_64 rng(opt.seed);

    GradCheckReport report;
    MILModel<double> work = model;
    auto groups = work.params.groups();
    for (std::size_t g = 0; g < groups.size(); ++g) {
        GradCheckGroup gr;
        gr.name = names[g];
        std::vector<std::size_t> idx(groups[g].size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (idx.size() > opt.max_per_group) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opt.max_per_group);
        }
        for (std::size_t i : idx) {
            const double orig = groups[g][i];
            bool switched = false;
            auto loss_at = [&](double offset) {
                ForwardCache<double> cache;
                groups[g][i] = orig + offset;
                const double l =
                    bag_loss<double>(work, bags, opt.mode, false, 1, &cache, opt.freeze_pattern ? &pattern : nullptr)
                        .loss;
                groups[g][i] = orig;
                if (!opt.freeze_pattern) switched = switched || !(ActivationPattern::from(cache) == pattern);
                return l;
            };
            const double h = opt.eps;
            double numeric = 0.0;
            if (opt.fourth_order)
                numeric = (-loss_at(2 * h) + 8 * loss_at(h) - 8 * loss_at(-h) + loss_at(-2 * h)) / (12 * h);
            else
                numeric = (loss_at(h) - loss_at(-h)) / (2 * h);
            if (switched) ++gr.switched;
            gr.max_rel_error = std::max(gr.max_rel_error, relative_error(analytic[g][i], numeric, opt.denominator_floor));
            ++gr.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, gr.max_rel_error);
        if (gr.name == "alpha") report.alpha_rel_error = gr.max_rel_error;
        report.groups.push_back(gr);
    }
    return report;
}

}  // namespace aas::mil
