#ifndef CLARET_OPTIMIZER_HPP
#define CLARET_OPTIMIZER_HPP

#include <cstddef>
#include <vector>

#include "claret/tensor.hpp"

namespace claret {

// Adam with decoupled weight decay. Moments are kept in double; updated
// parameters are rounded onto the float32 grid so checkpoints (which store
// 32-bit parameters) reload bit-exactly.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    void initialize(const ad::ParameterStore& params);
    bool initialized() const { return !m.empty(); }
};

void adam_step(ad::ParameterStore& params, AdamState& state, double lr_t, double weight_decay);

// Global-norm clipping over every parameter gradient; returns the pre-clip
// norm. Gradients at or under clip_norm pass through unchanged.
double clip_gradients(ad::ParameterStore& params, double clip_norm);

// Linear 0 -> lr over round(warmup_proportion * max_steps) steps, then linear
// decay to 0 at max_steps.
double lr_schedule(size_t step, double lr, double warmup_proportion, size_t max_steps);

void quantize_to_float32(ad::ParameterStore& params);

}  // namespace claret

#endif
