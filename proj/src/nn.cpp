#include "t2m/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace t2m::nn {

Tensor ParamStore::param(const std::string& name, ad::Shape shape, std::vector<double> init) {
    for (const Tensor& p : params_)
        if (p->name == name) throw std::runtime_error("duplicate parameter name: " + name);
    Tensor t = ad::make_tensor(std::move(shape), std::move(init), true);
    t->name = name;
    params_.push_back(t);
    return t;
}

Tensor ParamStore::buffer(const std::string& name, ad::Shape shape, std::vector<double> init) {
    Tensor t = ad::make_tensor(std::move(shape), std::move(init), false);
    t->name = name;
    buffers_.push_back(t);
    return t;
}

Tensor ParamStore::find(const std::string& name) const {
    for (const Tensor& p : params_)
        if (p->name == name) return p;
    for (const Tensor& b : buffers_)
        if (b->name == name) return b;
    return nullptr;
}

std::vector<Tensor> ParamStore::all() const {
    std::vector<Tensor> out = params_;
    out.insert(out.end(), buffers_.begin(), buffers_.end());
    return out;
}

std::vector<double> he_uniform(int64_t fan_in, int64_t count, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
    return uniform_init(-bound, bound, count, rng);
}

std::vector<double> uniform_init(double lo, double hi, int64_t count, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(lo, hi);
    std::vector<double> v(static_cast<size_t>(count));
    for (double& x : v) x = uni(rng);
    return v;
}

Linear Linear::create(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                      std::mt19937_64& rng, double bias_init) {
    Linear l;
    l.w = store.param(name + ".w", {in, out}, he_uniform(in, in * out, rng));
    l.b = store.param(name + ".b", {out}, std::vector<double>(out, bias_init));
    return l;
}

BatchNorm BatchNorm::create(ParamStore& store, const std::string& name, int64_t features) {
    BatchNorm bn;
    bn.gamma = store.param(name + ".gamma", {features}, std::vector<double>(features, 1.0));
    bn.beta = store.param(name + ".beta", {features}, std::vector<double>(features, 0.0));
    bn.running_mean =
        store.buffer(name + ".running_mean", {features}, std::vector<double>(features, 0.0));
    bn.running_var =
        store.buffer(name + ".running_var", {features}, std::vector<double>(features, 1.0));
    return bn;
}

MlpPair MlpPair::create(ParamStore& store, const std::string& name, int64_t in, int64_t hidden,
                        int64_t out, std::mt19937_64& rng, bool use_bn, bool final_elu,
                        double dropout_p) {
    MlpPair m;
    m.fc1 = Linear::create(store, name + ".fc1", in, hidden, rng);
    m.fc2 = Linear::create(store, name + ".fc2", hidden, out, rng);
    m.use_bn = use_bn;
    m.final_elu = final_elu;
    m.dropout_p = dropout_p;
    if (use_bn) m.bn = BatchNorm::create(store, name + ".bn", out);
    return m;
}

Tensor MlpPair::forward(const ForwardCtx& ctx, const Tensor& x) const {
    Tensor h = ad::elu(ctx.tape, fc1.forward(ctx.tape, x));
    if (dropout_p > 0.0) h = ad::dropout(ctx.tape, h, dropout_p, ctx.train, ctx.rng);
    h = fc2.forward(ctx.tape, h);
    if (use_bn) h = bn.forward(ctx, h);
    if (final_elu) h = ad::elu(ctx.tape, h);
    return h;
}

Conv3dLayer Conv3dLayer::create(ParamStore& store, const std::string& name, int64_t in_ch,
                                int64_t out_ch, int kernel, int stride, int pad,
                                std::mt19937_64& rng) {
    Conv3dLayer c;
    const int64_t k3 = static_cast<int64_t>(kernel) * kernel * kernel;
    c.w = store.param(name + ".w", {out_ch, in_ch, kernel, kernel, kernel},
                      he_uniform(in_ch * k3, out_ch * in_ch * k3, rng));
    // Small positive bias keeps ReLU units alive at init.
    c.b = store.param(name + ".b", {out_ch}, std::vector<double>(out_ch, 0.01));
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    return c;
}

}  // namespace t2m::nn
