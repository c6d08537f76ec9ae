#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "patchrec/error.hpp"
#include "patchrec/tensor.hpp"

namespace patchrec {

struct OptimizerConfig {
    double learning_rate = 1e-3; // peak rate
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double warmup_frac = 0.05;
    bool cosine_decay = true;
    std::size_t total_steps = 1;
};

/// Adam with linear warmup followed by cosine decay to zero.
///
/// Holds first/second moment buffers per parameter; the step counter starts
/// at zero, so the very first update uses the warmup-start learning rate of
/// exactly 0 whenever warmup is enabled.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, OptimizerConfig config)
        : params_(std::move(params)), config_(config) {
        if (config_.total_steps == 0) throw ConfigError("AdamOptimizer: total_steps must be >= 1");
        for (auto& [name, p] : params_) {
            m_.push_back(std::vector<double>(p.numel(), 0.0));
            v_.push_back(std::vector<double>(p.numel(), 0.0));
        }
    }

    std::size_t step_count() const { return step_; }

    /// Learning rate that step `tau` (0-based) will use.
    double effective_lr(std::size_t tau) const {
        const std::size_t warmup_steps =
            static_cast<std::size_t>(config_.warmup_frac * static_cast<double>(config_.total_steps));
        if (warmup_steps > 0 && tau < warmup_steps) {
            return config_.learning_rate * static_cast<double>(tau) /
                   static_cast<double>(warmup_steps);
        }
        if (!config_.cosine_decay) return config_.learning_rate;
        const std::size_t span = config_.total_steps > warmup_steps
                                     ? config_.total_steps - warmup_steps
                                     : 1;
        const double progress =
            static_cast<double>(tau >= warmup_steps ? tau - warmup_steps : 0) /
            static_cast<double>(span);
        return config_.learning_rate * 0.5 *
               (1.0 + std::cos(3.14159265358979323846 * std::min(progress, 1.0)));
    }

    /// Apply one update from the gradients currently stored on the parameters
    /// and advance the step counter. Gradients are then cleared.
    void step() {
        const double lr = effective_lr(step_);
        const double t = static_cast<double>(step_ + 1);
        const double bc1 = 1.0 - std::pow(config_.beta1, t);
        const double bc2 = 1.0 - std::pow(config_.beta2, t);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& p = params_[pi].second;
            auto g = p.grad(); // allocates zeros if nothing accumulated
            for (double gv : g) {
                if (!std::isfinite(gv)) {
                    throw NumericsError("optimizer_step: non-finite gradient in parameter '" +
                                        params_[pi].first + "'");
                }
            }
            auto d = p.data();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < d.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                d[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
        }
        ++step_;
        zero_grad();
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    const OptimizerConfig& config() const { return config_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    OptimizerConfig config_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t step_ = 0;
};

} // namespace patchrec
