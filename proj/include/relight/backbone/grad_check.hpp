#ifndef RELIGHT_BACKBONE_GRAD_CHECK_HPP
#define RELIGHT_BACKBONE_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "relight/backbone/tape.hpp"
#include "relight/backbone/ops.hpp"
#include "relight/rng.hpp"

namespace relight {

/// Result of comparing analytic gradients against central finite differences.
struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t skipped = 0;  ///< coordinates whose step crossed a kink (skip_kinks only)
    bool finite = true;
    std::string worst;  // "<input>[<index>]: analytic vs numeric"

    bool passed(double tol) const { return finite && max_rel_error < tol; }
};

struct GradCheckOptions {
    double eps = 1e-5;
    /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
    double abs_floor = 1e-6;
    /// Coordinates checked per input; 0 checks every element.
    std::size_t max_coordinates = 0;
    std::uint64_t seed = 0;
    /// Skip coordinates whose forward and backward one-sided slopes disagree
    /// by more than kink_tol (relative), i.e. where the +-eps step crosses a
    /// ReLU or absolute-value kink. Smooth coordinates are always compared.
    bool skip_kinks = false;
    double kink_tol = 1e-3;
};

namespace detail {

inline std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t limit, Rng& rng)
{
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (limit == 0 || limit >= size)
        return idx;
    for (std::size_t i = 0; i < limit; ++i)
        std::swap(idx[i], idx[i + rng.below(size - i)]);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// True when the one-sided slopes around f0 disagree beyond kink_tol.
inline bool crosses_kink(double fp, double f0, double fm, const GradCheckOptions& opt)
{
    if (!opt.skip_kinks)
        return false;
    const double forward = (fp - f0) / opt.eps, backward = (f0 - fm) / opt.eps;
    return std::abs(forward - backward) > opt.kink_tol * std::max({std::abs(forward), std::abs(backward), opt.abs_floor});
}

inline void accumulate(GradCheckReport& r, double analytic, double numeric, double floor, const std::string& label, std::size_t k)
{
    ++r.coordinates;
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
        r.finite = false;
        return;
    }
    const double abs_err = std::abs(analytic - numeric);
    const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), floor});
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = label + "[" + std::to_string(k) + "]: " + std::to_string(analytic) + " vs " + std::to_string(numeric);
    }
}

} // namespace detail

/// Op signature for grad_check: builds any output from the given input Vars.
using CheckedOp = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Checks d(sum(w * op(inputs)))/d(inputs) for a fixed random projection w.
inline GradCheckReport grad_check(const CheckedOp& op, std::vector<Tensor<double>> inputs, const GradCheckOptions& opt = {})
{
    Rng rng(derive_seed(opt.seed, {0x6772616463ULL}));
    GradCheckReport report;

    Tensor<double> projection;
    auto evaluate = [&](Tape<double>& tape, bool as_variables) {
        std::vector<Var> vars;
        for (const auto& in : inputs)
            vars.push_back(as_variables ? tape.variable(in) : tape.constant(in));
        Var out = op(tape, vars);
        if (projection.empty()) {
            projection = Tensor<double>(tape.shape(out));
            for (auto& w : projection.values())
                w = rng.uniform(-1.0, 1.0);
        }
        return std::pair{ops::dot_constant(tape, out, projection), vars};
    };

    Tape<double> tape;
    auto [root, vars] = evaluate(tape, true);
    if (!tape.value(root).all_finite()) {
        report.finite = false;
        return report;
    }
    tape.backward(root);
    const double f0 = tape.value(root)[0];

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor<double> analytic = tape.has_grad(vars[i]) ? tape.grad(vars[i]) : Tensor<double>(inputs[i].shape());
        for (std::size_t k : detail::pick_coordinates(inputs[i].size(), opt.max_coordinates, rng)) {
            const double orig = inputs[i][k];
            inputs[i][k] = orig + opt.eps;
            Tape<double> plus(false);
            const double fp = plus.value(evaluate(plus, false).first)[0];
            inputs[i][k] = orig - opt.eps;
            Tape<double> minus(false);
            const double fm = minus.value(evaluate(minus, false).first)[0];
            inputs[i][k] = orig;
            if (detail::crosses_kink(fp, f0, fm, opt)) {
                ++report.skipped;
                continue;
            }
            detail::accumulate(report, analytic[k], (fp - fm) / (2.0 * opt.eps), opt.abs_floor, "input" + std::to_string(i), k);
        }
    }
    return report;
}

/// Checks the gradient of a scalar loss with respect to model parameters.
/// `loss` must build its graph on the given tape using tape.param(...).
template <class Params>
GradCheckReport grad_check_parameters(const std::function<Var(Tape<double>&)>& loss, Params& params, const GradCheckOptions& opt = {})
{
    Rng rng(derive_seed(opt.seed, {0x706172616dULL}));
    GradCheckReport report;
    params.zero_grad();
    double f0 = 0.0;
    {
        Tape<double> tape;
        Var root = loss(tape);
        if (!tape.value(root).all_finite()) {
            report.finite = false;
            return report;
        }
        f0 = tape.value(root)[0];
        tape.backward(root);
    }
    auto eval = [&]() {
        Tape<double> tape(false);
        return tape.value(loss(tape))[0];
    };
    for (auto& p : params) {
        for (std::size_t k : detail::pick_coordinates(p.value.size(), opt.max_coordinates, rng)) {
            const double orig = p.value[k];
            p.value[k] = orig + opt.eps;
            const double fp = eval();
            p.value[k] = orig - opt.eps;
            const double fm = eval();
            p.value[k] = orig;
            if (detail::crosses_kink(fp, f0, fm, opt)) {
                ++report.skipped;
                continue;
            }
            detail::accumulate(report, p.grad[k], (fp - fm) / (2.0 * opt.eps), opt.abs_floor, p.name, k);
        }
    }
    params.zero_grad();
    return report;
}

} // namespace relight

#endif // RELIGHT_BACKBONE_GRAD_CHECK_HPP
