#include "claret/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "claret/common.hpp"

namespace claret {

void AdamState::initialize(const ad::ParameterStore& params) {
    m.assign(params.count(), {});
    v.assign(params.count(), {});
    for (size_t p = 0; p < params.count(); ++p) {
        m[p].assign(params.param_at(p).numel(), 0.0);
        v[p].assign(params.param_at(p).numel(), 0.0);
    }
    step = 0;
}

void adam_step(ad::ParameterStore& params, AdamState& state, double lr_t, double weight_decay) {
    if (!state.initialized()) state.initialize(params);
    if (state.m.size() != params.count())
        throw StructureError("optimizer state does not match parameter store");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (size_t p = 0; p < params.count(); ++p) {
        ad::Tensor t = params.param_at(p);
        auto& data = t.data();
        const bool has_grad = t.has_grad();
        const std::vector<double>* grad = has_grad ? &t.node()->grad : nullptr;
        auto& mp = state.m[p];
        auto& vp = state.v[p];
        for (size_t i = 0; i < data.size(); ++i) {
            const double g = grad ? (*grad)[i] : 0.0;
            mp[i] = state.beta1 * mp[i] + (1.0 - state.beta1) * g;
            vp[i] = state.beta2 * vp[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = mp[i] / bc1;
            const double v_hat = vp[i] / bc2;
            double x = data[i];
            x -= lr_t * (m_hat / (std::sqrt(v_hat) + state.eps) + weight_decay * x);
            data[i] = static_cast<double>(static_cast<float>(x));
        }
    }
}

double clip_gradients(ad::ParameterStore& params, double clip_norm) {
    if (clip_norm <= 0.0) throw StructureError("clip_norm must be positive");
    double sq = 0.0;
    for (size_t p = 0; p < params.count(); ++p) {
        ad::Tensor t = params.param_at(p);
        if (!t.has_grad()) continue;
        for (double g : t.node()->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        const double factor = clip_norm / norm;
        for (size_t p = 0; p < params.count(); ++p) {
            ad::Tensor t = params.param_at(p);
            if (!t.has_grad()) continue;
            for (double& g : t.node()->grad) g *= factor;
        }
    }
    return norm;
}

double lr_schedule(size_t step, double lr, double warmup_proportion, size_t max_steps) {
    if (max_steps == 0 || step >= max_steps) return 0.0;
    const size_t warmup = std::max<size_t>(
        1, static_cast<size_t>(std::llround(warmup_proportion * static_cast<double>(max_steps))));
    if (step <= warmup) return lr * static_cast<double>(step) / static_cast<double>(warmup);
    return lr * static_cast<double>(max_steps - step) / static_cast<double>(max_steps - warmup);
}

void quantize_to_float32(ad::ParameterStore& params) {
    for (size_t p = 0; p < params.count(); ++p) {
        for (double& x : params.param_at(p).data())
            x = static_cast<double>(static_cast<float>(x));
    }
}

}  // namespace claret
