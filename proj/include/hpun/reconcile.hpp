#pragma once

#include <sstream>
#include <vector>

#include "hpun/model.hpp"

namespace hpun {

// Published parameter / multiply-add totals for the three variants at x4,
// 1280x720 HR output: S 246K/12.7G, M 511K/27.7G, L 734K/39.7G.
struct VariantTarget {
    Variant variant;
    double params;
    double multi_adds;
};

inline const std::vector<VariantTarget>& reconcile_targets() {
    static const std::vector<VariantTarget> targets = {
        {Variant::S, 246e3, 12.7e9},
        {Variant::M, 511e3, 27.7e9},
        {Variant::L, 734e3, 39.7e9},
    };
    return targets;
}

struct VariantFit {
    Variant variant = Variant::Custom;
    int64_t channels = 0;
    int64_t params = 0;
    double multi_adds = 0.0;
    double param_dev = 0.0;       // signed fractional deviation from target
    double multi_add_dev = 0.0;
    bool within_tolerance = false;  // |param_dev| <= 15% and |madd_dev| <= 20%
};

struct ReconcileResult {
    PudGroupMode group_mode = PudGroupMode::PER_CHANNEL;
    int64_t pud_kernel = 3;
    bool bias = true;
    std::vector<VariantFit> fits;  // S, M, L
    bool all_within_tolerance = false;
    double score = 0.0;  // sum of absolute deviations, lower is better
};

inline ModelSpec variant_spec(Variant v, int64_t channels, PudGroupMode mode, int64_t pud_kernel,
                              bool bias) {
    ModelSpec s;
    s.variant = v;
    s.channels = channels;
    s.scale = 4;
    switch (v) {
        case Variant::S:
            s.n_hpub = 7;
            s.n_pub_extra = 2;
            break;
        case Variant::L:
            s.n_hpub = 12;
            break;
        default:
            s.n_hpub = 8;
    }
    s.block.channels = channels;
    s.block.pud_group_mode = mode;
    s.block.pud_group_kernel = pud_kernel;
    s.block.bias = bias;
    return s;
}

// Sweeps {group mode} x {PUD kernel 3, 5} x {bias on/off} x per-variant
// channel width in {32, 40, 48, 56, 64} and returns every combination,
// best first. Channel width is chosen per variant: no single shared width
// can satisfy S and M together (the S/M parameter ratio of 246/511 is
// unreachable when both variants share the block parameter formulas).
inline std::vector<ReconcileResult> reconcile_sweep(int64_t hr_w = 1280, int64_t hr_h = 720) {
    const std::vector<int64_t> widths = {32, 40, 48, 56, 64};
    std::vector<ReconcileResult> results;
    for (PudGroupMode mode : {PudGroupMode::PER_CHANNEL, PudGroupMode::FOUR_GROUPS})
        for (int64_t k : {int64_t(3), int64_t(5)})
            for (bool bias : {true, false}) {
                ReconcileResult r;
                r.group_mode = mode;
                r.pud_kernel = k;
                r.bias = bias;
                r.all_within_tolerance = true;
                for (const auto& tgt : reconcile_targets()) {
                    VariantFit best;
                    double best_key = 1e300;
                    for (int64_t c : widths) {
                        const CostReport rep =
                            count_costs(variant_spec(tgt.variant, c, mode, k, bias), hr_w, hr_h);
                        VariantFit f;
                        f.variant = tgt.variant;
                        f.channels = c;
                        f.params = rep.total_params;
                        f.multi_adds = rep.total_multi_adds;
                        f.param_dev = (rep.total_params - tgt.params) / tgt.params;
                        f.multi_add_dev = (rep.total_multi_adds - tgt.multi_adds) / tgt.multi_adds;
                        f.within_tolerance =
                            std::abs(f.param_dev) <= 0.15 && std::abs(f.multi_add_dev) <= 0.20;
                        const double key =
                            std::max(std::abs(f.param_dev) / 0.15, std::abs(f.multi_add_dev) / 0.20);
                        if (key < best_key) {
                            best_key = key;
                            best = f;
                        }
                    }
                    r.all_within_tolerance = r.all_within_tolerance && best.within_tolerance;
                    r.score += std::abs(best.param_dev) + std::abs(best.multi_add_dev);
                    r.fits.push_back(best);
                }
                results.push_back(r);
            }
    std::sort(results.begin(), results.end(), [](const ReconcileResult& a, const ReconcileResult& b) {
        if (a.all_within_tolerance != b.all_within_tolerance) return a.all_within_tolerance;
        return a.score < b.score;
    });
    return results;
}

inline std::string reconcile_report_text(const std::vector<ReconcileResult>& results) {
    std::ostringstream ss;
    ss << "Reconciliation sweep vs published totals (params tol 15%, multi-adds tol 20%)\n";
    ss << "targets: S 246K/12.7G  M 511K/27.7G  L 734K/39.7G at x4, 1280x720 HR\n\n";
    for (size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        ss << (i == 0 ? "* " : "  ") << "mode="
           << (r.group_mode == PudGroupMode::PER_CHANNEL ? "per_channel" : "four_groups")
           << " pud_kernel=" << r.pud_kernel << " bias=" << (r.bias ? "on" : "off")
           << (r.all_within_tolerance ? "  [within tolerance]" : "  [out of tolerance]") << "\n";
        for (const auto& f : r.fits) {
            ss << "      HPUN-" << to_string(f.variant) << ": C=" << f.channels
               << " params=" << f.params << " (" << (f.param_dev >= 0 ? "+" : "")
               << f.param_dev * 100.0 << "%)"
               << " multi_adds=" << f.multi_adds / 1e9 << "G ("
               << (f.multi_add_dev >= 0 ? "+" : "") << f.multi_add_dev * 100.0 << "%)\n";
        }
    }
    ss << "\nChannel width is selected per variant; a single shared width cannot satisfy\n"
          "S and M simultaneously because the target S/M parameter ratio (246/511) is\n"
          "below what any shared-width configuration of this topology can reach.\n";
    return ss.str();
}

}  // namespace hpun
