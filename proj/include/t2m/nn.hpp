#pragma once

#include <random>
#include <string>
#include <vector>

#include "t2m/tensor.hpp"

namespace t2m::nn {

using ad::Tape;
using ad::Tensor;

// Named registry of trainable parameters and non-trainable buffers
// (BN running statistics). Registration order is the optimizer order.
class ParamStore {
public:
    Tensor param(const std::string& name, ad::Shape shape, std::vector<double> init);
    Tensor buffer(const std::string& name, ad::Shape shape, std::vector<double> init);

    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<Tensor>& buffers() const { return buffers_; }
    Tensor find(const std::string& name) const;  // null when absent
    std::vector<Tensor> all() const;

private:
    std::vector<Tensor> params_;
    std::vector<Tensor> buffers_;
};

// Weight initializers.
std::vector<double> he_uniform(int64_t fan_in, int64_t count, std::mt19937_64& rng);
std::vector<double> uniform_init(double lo, double hi, int64_t count, std::mt19937_64& rng);

struct ForwardCtx {
    Tape& tape;
    bool train = false;
    std::mt19937_64& rng;  // dropout masks
};

struct Linear {
    Tensor w, b;

    static Linear create(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                         std::mt19937_64& rng, double bias_init = 0.0);
    Tensor forward(Tape& tape, const Tensor& x) const { return ad::linear(tape, x, w, b); }
};

struct BatchNorm {
    Tensor gamma, beta, running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNorm create(ParamStore& store, const std::string& name, int64_t features);
    Tensor forward(const ForwardCtx& ctx, const Tensor& x) const {
        return ad::batch_norm(ctx.tape, x, gamma, beta, running_mean, running_var, momentum, eps,
                              ctx.train);
    }
};

// Pair of fully connected layers: fc1 -> ELU -> dropout -> fc2 -> [BN] -> [ELU].
// Output pairs of a network drop the trailing BN/ELU.
struct MlpPair {
    Linear fc1, fc2;
    BatchNorm bn;
    bool use_bn = true;
    bool final_elu = true;
    double dropout_p = 0.5;

    static MlpPair create(ParamStore& store, const std::string& name, int64_t in, int64_t hidden,
                          int64_t out, std::mt19937_64& rng, bool use_bn = true,
                          bool final_elu = true, double dropout_p = 0.5);
    Tensor forward(const ForwardCtx& ctx, const Tensor& x) const;
};

struct Conv3dLayer {
    Tensor w, b;
    int kernel = 3, stride = 1, pad = 0;

    static Conv3dLayer create(ParamStore& store, const std::string& name, int64_t in_ch,
                              int64_t out_ch, int kernel, int stride, int pad,
                              std::mt19937_64& rng);
    Tensor forward(Tape& tape, const Tensor& x) const {
        return ad::conv3d(tape, x, w, b, kernel, stride, pad);
    }
};

}  // namespace t2m::nn
