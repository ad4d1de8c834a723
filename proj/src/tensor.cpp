#include "t2m/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "t2m/point_grid.hpp"

namespace t2m::ad {

namespace {

std::atomic<int64_t> g_live_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};

void account_alloc(int64_t bytes) {
    const int64_t live = g_live_bytes.fetch_add(bytes) + bytes;
    int64_t peak = g_peak_bytes.load();
    while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
    }
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw std::runtime_error(op + ": " + detail);
}

void require(bool cond, const std::string& op, const std::string& detail) {
    if (!cond) shape_error(op, detail);
}

}  // namespace

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

TensorData::TensorData(Shape s, std::vector<double> v, bool rg)
    : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    if (static_cast<int64_t>(values.size()) != numel(shape))
        throw std::runtime_error("tensor: value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
    account_alloc(static_cast<int64_t>(values.size() * sizeof(double)));
}

TensorData::~TensorData() {
    g_live_bytes.fetch_sub(static_cast<int64_t>((values.capacity() + grad.capacity()) *
                                                sizeof(double)));
}

void TensorData::ensure_grad() {
    if (grad.empty()) {
        grad.assign(values.size(), 0.0);
        account_alloc(static_cast<int64_t>(grad.size() * sizeof(double)));
    }
}

void TensorData::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

double TensorData::scalar() const {
    if (values.size() != 1)
        throw std::runtime_error("scalar() on tensor of shape " + shape_str(shape));
    return values[0];
}

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    return std::make_shared<TensorData>(std::move(shape), std::move(values), requires_grad);
}

Tensor zeros(Shape shape, bool requires_grad) {
    std::vector<double> v(static_cast<size_t>(numel(shape)), 0.0);
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor full(Shape shape, double value, bool requires_grad) {
    std::vector<double> v(static_cast<size_t>(numel(shape)), value);
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor scalar_tensor(double value) { return make_tensor({1}, {value}, false); }

int64_t MemStats::live_bytes() { return g_live_bytes.load(); }
int64_t MemStats::peak_bytes() { return g_peak_bytes.load(); }
void MemStats::reset_peak() { g_peak_bytes.store(g_live_bytes.load()); }

Tensor Tape::track(Tensor out, std::vector<Tensor> inputs, std::function<void()> backward) {
    bool needs = false;
    for (const Tensor& in : inputs) needs = needs || in->requires_grad;
    out->requires_grad = needs;
    out->on_tape = true;
    if (needs) nodes_.push_back({std::move(inputs), out, std::move(backward)});
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (loss->size() != 1)
        throw std::runtime_error("backward: loss must be scalar, got shape " +
                                 shape_str(loss->shape));

    // Intermediates reset per call; leaves keep accumulating.
    for (Node& n : nodes_) n.output->zero_grad();
    loss->ensure_grad();
    loss->grad[0] += 1.0;

    std::unordered_set<const TensorData*> active;
    active.insert(loss.get());
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!active.count(it->output.get())) continue;
        it->backward();
        for (const Tensor& in : it->inputs)
            if (in->requires_grad) active.insert(in.get());
    }
}

// ---- elementwise ------------------------------------------------------------

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    require(a->shape == b->shape, op,
            "shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
}

}  // namespace

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] + b->values[i];
    Tensor out = make_tensor(a->shape, std::move(v));
    return t.track(out, {a, b}, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
        }
    });
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] - b->values[i];
    Tensor out = make_tensor(a->shape, std::move(v));
    return t.track(out, {a, b}, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] -= out->grad[i];
        }
    });
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] * b->values[i];
    Tensor out = make_tensor(a->shape, std::move(v));
    return t.track(out, {a, b}, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * b->values[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i] * a->values[i];
        }
    });
}

Tensor scale(Tape& t, const Tensor& a, double s) {
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] * s;
    Tensor out = make_tensor(a->shape, std::move(v));
    return t.track(out, {a}, [a, out, s] {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * s;
    });
}

Tensor sum_all(Tape& t, const Tensor& a) {
    double s = 0.0;
    for (double x : a->values) s += x;
    Tensor out = make_tensor({1}, {s});
    return t.track(out, {a}, [a, out] {
        a->ensure_grad();
        const double g = out->grad[0];
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
}

Tensor reshape(Tape& t, const Tensor& a, Shape shape) {
    require(numel(shape) == a->size(), "reshape",
            "cannot view " + shape_str(a->shape) + " as " + shape_str(shape));
    Tensor out = make_tensor(std::move(shape), a->values);
    return t.track(out, {a}, [a, out] {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
    });
}

Tensor relu(Tape& t, const Tensor& a) {
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] > 0.0 ? a->values[i] : 0.0;
    Tensor out = make_tensor(a->shape, std::move(v));
    return t.track(out, {a}, [a, out] {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i)
            if (a->values[i] > 0.0) a->grad[i] += out->grad[i];
    });
}

Tensor elu(Tape& t, const Tensor& a) {
    std::vector<double> v(a->values.size());
    for (size_t i = 0; i < v.size(); ++i) {
        const double x = a->values[i];
        v[i] = x > 0.0 ? x : std::expm1(x);
    }
    Tensor out = make_tensor(a->shape, std::move(v));
    return t.track(out, {a}, [a, out] {
        a->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) {
            const double x = a->values[i];
            a->grad[i] += out->grad[i] * (x > 0.0 ? 1.0 : std::exp(x));
        }
    });
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
    require(a->shape.size() == 2 && b->shape.size() == 2, "matmul",
            "expects 2-D operands, got " + shape_str(a->shape) + " and " + shape_str(b->shape));
    const int64_t r = a->shape[0], k = a->shape[1], c = b->shape[1];
    require(b->shape[0] == k, "matmul",
            "inner dims differ: " + shape_str(a->shape) + " x " + shape_str(b->shape));

    std::vector<double> v(static_cast<size_t>(r * c), 0.0);
    const double* A = a->values.data();
    const double* B = b->values.data();
    for (int64_t i = 0; i < r; ++i) {
        double* vi = v.data() + i * c;
        const double* Ai = A + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = Ai[kk];
            const double* Bk = B + kk * c;
            for (int64_t j = 0; j < c; ++j) vi[j] += av * Bk[j];
        }
    }
    Tensor out = make_tensor({r, c}, std::move(v));
    return t.track(out, {a, b}, [a, b, out, r, k, c] {
        const double* G = out->grad.data();
        if (a->requires_grad) {
            a->ensure_grad();
            double* dA = a->grad.data();
            const double* B = b->values.data();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) {
                    const double g = G[i * c + j];
                    if (g == 0.0) continue;
                    const double* Bj = B + j;
                    for (int64_t kk = 0; kk < k; ++kk) dA[i * k + kk] += g * Bj[kk * c];
                }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            double* dB = b->grad.data();
            const double* A = a->values.data();
            for (int64_t i = 0; i < r; ++i) {
                const double* Ai = A + i * k;
                const double* Gi = G + i * c;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const double av = Ai[kk];
                    if (av == 0.0) continue;
                    double* dBk = dB + kk * c;
                    for (int64_t j = 0; j < c; ++j) dBk[j] += av * Gi[j];
                }
            }
        }
    });
}

Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x->shape.size() == 2 && w->shape.size() == 2, "linear",
            "expects 2-D x and w, got " + shape_str(x->shape) + " and " + shape_str(w->shape));
    const int64_t r = x->shape[0], in = x->shape[1], outd = w->shape[1];
    require(w->shape[0] == in, "linear",
            "x " + shape_str(x->shape) + " incompatible with w " + shape_str(w->shape));
    require(b->size() == outd, "linear",
            "bias " + shape_str(b->shape) + " incompatible with w " + shape_str(w->shape));

    std::vector<double> v(static_cast<size_t>(r * outd));
    const double* X = x->values.data();
    const double* W = w->values.data();
    const double* B = b->values.data();
    for (int64_t i = 0; i < r; ++i) {
        double* vi = v.data() + i * outd;
        for (int64_t j = 0; j < outd; ++j) vi[j] = B[j];
        const double* Xi = X + i * in;
        for (int64_t kk = 0; kk < in; ++kk) {
            const double xv = Xi[kk];
            if (xv == 0.0) continue;
            const double* Wk = W + kk * outd;
            for (int64_t j = 0; j < outd; ++j) vi[j] += xv * Wk[j];
        }
    }
    Tensor out = make_tensor({r, outd}, std::move(v));
    return t.track(out, {x, w, b}, [x, w, b, out, r, in, outd] {
        const double* G = out->grad.data();
        if (x->requires_grad) {
            x->ensure_grad();
            double* dX = x->grad.data();
            const double* W = w->values.data();
            for (int64_t i = 0; i < r; ++i) {
                const double* Gi = G + i * outd;
                double* dXi = dX + i * in;
                for (int64_t kk = 0; kk < in; ++kk) {
                    const double* Wk = W + kk * outd;
                    double acc = 0.0;
                    for (int64_t j = 0; j < outd; ++j) acc += Gi[j] * Wk[j];
                    dXi[kk] += acc;
                }
            }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            double* dW = w->grad.data();
            const double* X = x->values.data();
            for (int64_t i = 0; i < r; ++i) {
                const double* Xi = X + i * in;
                const double* Gi = G + i * outd;
                for (int64_t kk = 0; kk < in; ++kk) {
                    const double xv = Xi[kk];
                    if (xv == 0.0) continue;
                    double* dWk = dW + kk * outd;
                    for (int64_t j = 0; j < outd; ++j) dWk[j] += xv * Gi[j];
                }
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            double* dB = b->grad.data();
            for (int64_t i = 0; i < r; ++i) {
                const double* Gi = G + i * outd;
                for (int64_t j = 0; j < outd; ++j) dB[j] += Gi[j];
            }
        }
    });
}

// ---- structure ops ----------------------------------------------------------

Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat", "no inputs");
    const int64_t r = parts[0]->rows();
    int64_t total = 0;
    for (const Tensor& p : parts) {
        require(p->shape.size() == 2, "concat", "expects 2-D inputs, got " + shape_str(p->shape));
        require(p->shape[0] == r, "concat",
                "row mismatch: " + shape_str(parts[0]->shape) + " vs " + shape_str(p->shape));
        total += p->shape[1];
    }
    std::vector<double> v(static_cast<size_t>(r * total));
    int64_t off = 0;
    for (const Tensor& p : parts) {
        const int64_t c = p->shape[1];
        for (int64_t i = 0; i < r; ++i)
            std::copy_n(p->values.data() + i * c, c, v.data() + i * total + off);
        off += c;
    }
    Tensor out = make_tensor({r, total}, std::move(v));
    std::vector<Tensor> inputs = parts;
    return t.track(out, inputs, [parts, out, r, total] {
        int64_t off = 0;
        for (const Tensor& p : parts) {
            const int64_t c = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        p->grad[i * c + j] += out->grad[i * total + off + j];
            }
            off += c;
        }
    });
}

Tensor gather_rows(Tape& t, const Tensor& x, const std::vector<int>& idx) {
    require(x->shape.size() == 2, "gather_rows", "expects 2-D input, got " + shape_str(x->shape));
    const int64_t r = x->shape[0], c = x->shape[1];
    for (int i : idx)
        require(i >= 0 && i < r, "gather_rows",
                "index " + std::to_string(i) + " out of range for " + shape_str(x->shape));
    const int64_t k = static_cast<int64_t>(idx.size());
    std::vector<double> v(static_cast<size_t>(k * c));
    for (int64_t s = 0; s < k; ++s)
        std::copy_n(x->values.data() + static_cast<int64_t>(idx[s]) * c, c, v.data() + s * c);
    Tensor out = make_tensor({k, c}, std::move(v));
    return t.track(out, {x}, [x, out, idx, c, k] {
        x->ensure_grad();
        for (int64_t s = 0; s < k; ++s) {
            double* dst = x->grad.data() + static_cast<int64_t>(idx[s]) * c;
            const double* src = out->grad.data() + s * c;
            for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

Tensor scatter_rows(Tape& t, const Tensor& base, const std::vector<int>& idx, const Tensor& rows) {
    require(base->shape.size() == 2 && rows->shape.size() == 2, "scatter_rows",
            "expects 2-D inputs");
    const int64_t c = base->shape[1];
    require(rows->shape[1] == c, "scatter_rows",
            "column mismatch: " + shape_str(base->shape) + " vs " + shape_str(rows->shape));
    require(static_cast<int64_t>(idx.size()) == rows->shape[0], "scatter_rows",
            "index count does not match rows");
    std::vector<double> v = base->values;
    for (size_t s = 0; s < idx.size(); ++s) {
        require(idx[s] >= 0 && idx[s] < base->shape[0], "scatter_rows", "index out of range");
        std::copy_n(rows->values.data() + static_cast<int64_t>(s) * c, c,
                    v.data() + static_cast<int64_t>(idx[s]) * c);
    }
    Tensor out = make_tensor(base->shape, std::move(v));
    return t.track(out, {base, rows}, [base, rows, out, idx, c] {
        if (base->requires_grad) {
            base->ensure_grad();
            std::vector<char> overwritten(base->shape[0], 0);
            for (int i : idx) overwritten[i] = 1;
            for (int64_t i = 0; i < base->shape[0]; ++i) {
                if (overwritten[i]) continue;
                for (int64_t j = 0; j < c; ++j) base->grad[i * c + j] += out->grad[i * c + j];
            }
        }
        if (rows->requires_grad) {
            rows->ensure_grad();
            for (size_t s = 0; s < idx.size(); ++s)
                for (int64_t j = 0; j < c; ++j)
                    rows->grad[static_cast<int64_t>(s) * c + j] +=
                        out->grad[static_cast<int64_t>(idx[s]) * c + j];
        }
    });
}

Tensor segment_sum(Tape& t, const Tensor& x, const std::vector<int>& seg, int64_t n_out) {
    require(x->shape.size() == 2, "segment_sum", "expects 2-D input, got " + shape_str(x->shape));
    const int64_t r = x->shape[0], c = x->shape[1];
    require(static_cast<int64_t>(seg.size()) == r, "segment_sum",
            "segment ids (" + std::to_string(seg.size()) + ") != rows of " + shape_str(x->shape));
    for (int s : seg)
        require(s >= 0 && s < n_out, "segment_sum", "segment id out of range");

    std::vector<std::vector<int>> members(static_cast<size_t>(n_out));
    for (int64_t i = 0; i < r; ++i) members[seg[i]].push_back(static_cast<int>(i));

    // Value-ordered accumulation: result is invariant to row permutation.
    std::vector<double> v(static_cast<size_t>(n_out * c), 0.0);
    std::vector<double> scratch;
    for (int64_t s = 0; s < n_out; ++s) {
        const auto& rows_in = members[s];
        if (rows_in.empty()) continue;
        for (int64_t j = 0; j < c; ++j) {
            scratch.resize(rows_in.size());
            for (size_t m = 0; m < rows_in.size(); ++m)
                scratch[m] = x->values[static_cast<int64_t>(rows_in[m]) * c + j];
            v[s * c + j] = ordered_sum(scratch);
        }
    }
    Tensor out = make_tensor({n_out, c}, std::move(v));
    return t.track(out, {x}, [x, out, seg, c, r] {
        x->ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            const double* g = out->grad.data() + static_cast<int64_t>(seg[i]) * c;
            double* dx = x->grad.data() + i * c;
            for (int64_t j = 0; j < c; ++j) dx[j] += g[j];
        }
    });
}

// ---- convolution ------------------------------------------------------------

Tensor conv3d(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride,
              int pad) {
    require(x->shape.size() == 4, "conv3d", "expects (C,D,H,W) input, got " + shape_str(x->shape));
    require(w->shape.size() == 5, "conv3d",
            "expects (OC,IC,K,K,K) weight, got " + shape_str(w->shape));
    const int64_t C = x->shape[0], D = x->shape[1], H = x->shape[2], W = x->shape[3];
    const int64_t OC = w->shape[0], K = kernel;
    require(w->shape[1] == C, "conv3d",
            "input channels " + std::to_string(C) + " != weight channels " +
                std::to_string(w->shape[1]));
    require(w->shape[2] == K && w->shape[3] == K && w->shape[4] == K, "conv3d",
            "weight " + shape_str(w->shape) + " does not match kernel " + std::to_string(kernel));
    require(b->size() == OC, "conv3d", "bias size mismatch");
    const int64_t OD = (D + 2 * pad - K) / stride + 1;
    const int64_t OH = (H + 2 * pad - K) / stride + 1;
    const int64_t OW = (W + 2 * pad - K) / stride + 1;
    require(OD > 0 && OH > 0 && OW > 0, "conv3d",
            "kernel " + std::to_string(K) + " too large for input " + shape_str(x->shape));

    auto xi = [D, H, W](int64_t ch, int64_t z, int64_t y, int64_t xx) {
        return ((ch * D + z) * H + y) * W + xx;
    };
    auto wi = [C, K](int64_t oc, int64_t ic, int64_t kz, int64_t ky, int64_t kx) {
        return (((oc * C + ic) * K + kz) * K + ky) * K + kx;
    };

    std::vector<double> v(static_cast<size_t>(OC * OD * OH * OW));
    const double* X = x->values.data();
    const double* Wv = w->values.data();
    int64_t o = 0;
    for (int64_t oc = 0; oc < OC; ++oc) {
        for (int64_t oz = 0; oz < OD; ++oz) {
            for (int64_t oy = 0; oy < OH; ++oy) {
                for (int64_t ox = 0; ox < OW; ++ox, ++o) {
                    double acc = b->values[oc];
                    for (int64_t ic = 0; ic < C; ++ic) {
                        for (int64_t kz = 0; kz < K; ++kz) {
                            const int64_t z = oz * stride + kz - pad;
                            if (z < 0 || z >= D) continue;
                            for (int64_t ky = 0; ky < K; ++ky) {
                                const int64_t y = oy * stride + ky - pad;
                                if (y < 0 || y >= H) continue;
                                for (int64_t kx = 0; kx < K; ++kx) {
                                    const int64_t xx = ox * stride + kx - pad;
                                    if (xx < 0 || xx >= W) continue;
                                    acc += X[xi(ic, z, y, xx)] * Wv[wi(oc, ic, kz, ky, kx)];
                                }
                            }
                        }
                    }
                    v[o] = acc;
                }
            }
        }
    }
    Tensor out = make_tensor({OC, OD, OH, OW}, std::move(v));
    return t.track(out, {x, w, b},
                   [x, w, b, out, C, D, H, W, OC, OD, OH, OW, K, stride, pad, xi, wi] {
        const double* G = out->grad.data();
        const bool dx = x->requires_grad, dw = w->requires_grad, db = b->requires_grad;
        if (dx) x->ensure_grad();
        if (dw) w->ensure_grad();
        if (db) b->ensure_grad();
        int64_t o = 0;
        for (int64_t oc = 0; oc < OC; ++oc) {
            for (int64_t oz = 0; oz < OD; ++oz) {
                for (int64_t oy = 0; oy < OH; ++oy) {
                    for (int64_t ox = 0; ox < OW; ++ox, ++o) {
                        const double g = G[o];
                        if (g == 0.0) continue;
                        if (db) b->grad[oc] += g;
                        for (int64_t ic = 0; ic < C; ++ic) {
                            for (int64_t kz = 0; kz < K; ++kz) {
                                const int64_t z = oz * stride + kz - pad;
                                if (z < 0 || z >= D) continue;
                                for (int64_t ky = 0; ky < K; ++ky) {
                                    const int64_t y = oy * stride + ky - pad;
                                    if (y < 0 || y >= H) continue;
                                    for (int64_t kx = 0; kx < K; ++kx) {
                                        const int64_t xx = ox * stride + kx - pad;
                                        if (xx < 0 || xx >= W) continue;
                                        if (dx)
                                            x->grad[xi(ic, z, y, xx)] +=
                                                g * w->values[wi(oc, ic, kz, ky, kx)];
                                        if (dw)
                                            w->grad[wi(oc, ic, kz, ky, kx)] +=
                                                g * x->values[xi(ic, z, y, xx)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

Tensor channels_to_rows(Tape& t, const Tensor& x) {
    require(x->shape.size() == 4, "channels_to_rows",
            "expects (C,D,H,W) input, got " + shape_str(x->shape));
    const int64_t C = x->shape[0];
    const int64_t cells = x->shape[1] * x->shape[2] * x->shape[3];
    std::vector<double> v(static_cast<size_t>(cells * C));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t s = 0; s < cells; ++s) v[s * C + c] = x->values[c * cells + s];
    Tensor out = make_tensor({cells, C}, std::move(v));
    return t.track(out, {x}, [x, out, C, cells] {
        x->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t s = 0; s < cells; ++s) x->grad[c * cells + s] += out->grad[s * C + c];
    });
}

// ---- normalization / regularization ------------------------------------------

Tensor batch_norm(Tape& t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& running_mean, const Tensor& running_var, double momentum,
                  double eps, bool train) {
    require(x->shape.size() == 2, "batch_norm", "expects 2-D input, got " + shape_str(x->shape));
    const int64_t r = x->shape[0], c = x->shape[1];
    require(gamma->size() == c && beta->size() == c && running_mean->size() == c &&
                running_var->size() == c,
            "batch_norm", "parameter size mismatch for input " + shape_str(x->shape));
    require(r > 0, "batch_norm", "empty input");

    std::vector<double> mean(c), var(c);
    if (train) {
        for (int64_t j = 0; j < c; ++j) {
            double m = 0.0;
            for (int64_t i = 0; i < r; ++i) m += x->values[i * c + j];
            m /= static_cast<double>(r);
            double s = 0.0;
            for (int64_t i = 0; i < r; ++i) {
                const double d = x->values[i * c + j] - m;
                s += d * d;
            }
            mean[j] = m;
            var[j] = s / static_cast<double>(r);
            running_mean->values[j] = (1.0 - momentum) * running_mean->values[j] + momentum * m;
            running_var->values[j] = (1.0 - momentum) * running_var->values[j] + momentum * var[j];
        }
    } else {
        mean.assign(running_mean->values.begin(), running_mean->values.end());
        var.assign(running_var->values.begin(), running_var->values.end());
    }

    std::vector<double> inv_std(c);
    for (int64_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);

    std::vector<double> xhat(static_cast<size_t>(r * c)), v(static_cast<size_t>(r * c));
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) {
            const double xh = (x->values[i * c + j] - mean[j]) * inv_std[j];
            xhat[i * c + j] = xh;
            v[i * c + j] = gamma->values[j] * xh + beta->values[j];
        }
    Tensor out = make_tensor(x->shape, std::move(v));
    return t.track(out, {x, gamma, beta},
                   [x, gamma, beta, out, r, c, train, inv_std = std::move(inv_std),
                    xhat = std::move(xhat)] {
        const double* G = out->grad.data();
        if (gamma->requires_grad) {
            gamma->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) gamma->grad[j] += G[i * c + j] * xhat[i * c + j];
        }
        if (beta->requires_grad) {
            beta->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) beta->grad[j] += G[i * c + j];
        }
        if (x->requires_grad) {
            x->ensure_grad();
            if (train) {
                // dx = g/sigma * (dy - mean(dy) - xhat * mean(dy*xhat))
                for (int64_t j = 0; j < c; ++j) {
                    double mg = 0.0, mgx = 0.0;
                    for (int64_t i = 0; i < r; ++i) {
                        mg += G[i * c + j];
                        mgx += G[i * c + j] * xhat[i * c + j];
                    }
                    mg /= static_cast<double>(r);
                    mgx /= static_cast<double>(r);
                    const double a = gamma->values[j] * inv_std[j];
                    for (int64_t i = 0; i < r; ++i)
                        x->grad[i * c + j] +=
                            a * (G[i * c + j] - mg - xhat[i * c + j] * mgx);
                }
            } else {
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        x->grad[i * c + j] += G[i * c + j] * gamma->values[j] * inv_std[j];
            }
        }
    });
}

Tensor dropout(Tape& t, const Tensor& x, double p, bool train, std::mt19937_64& rng) {
    require(p >= 0.0 && p < 1.0, "dropout", "p must be in [0,1)");
    if (!train || p == 0.0) {
        // Identity in eval mode; still tracked so grads flow through.
        Tensor out = make_tensor(x->shape, x->values);
        return t.track(out, {x}, [x, out] {
            x->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
        });
    }
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<char> mask(x->values.size());
    std::vector<double> v(x->values.size());
    for (size_t i = 0; i < v.size(); ++i) {
        mask[i] = uni(rng) >= p;
        v[i] = mask[i] ? x->values[i] * keep_scale : 0.0;
    }
    Tensor out = make_tensor(x->shape, std::move(v));
    return t.track(out, {x}, [x, out, mask = std::move(mask), keep_scale] {
        x->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i)
            if (mask[i]) x->grad[i] += out->grad[i] * keep_scale;
    });
}

// ---- losses ------------------------------------------------------------------

Tensor softmax_ce2(Tape& t, const Tensor& logits, const std::vector<int>& labels,
                   double weight_neg, double weight_pos) {
    require(logits->shape.size() == 2 && logits->shape[1] == 2, "softmax_ce2",
            "expects (r,2) logits, got " + shape_str(logits->shape));
    const int64_t r = logits->shape[0];
    require(static_cast<int64_t>(labels.size()) == r, "softmax_ce2",
            "label count " + std::to_string(labels.size()) + " != rows " + std::to_string(r));
    require(r > 0, "softmax_ce2", "empty input");

    std::vector<double> p1(r), wr(r);
    double total_w = 0.0, loss = 0.0;
    for (int64_t i = 0; i < r; ++i) {
        const double z0 = logits->values[i * 2], z1 = logits->values[i * 2 + 1];
        const double m = std::max(z0, z1);
        const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
        const int y = labels[i];
        require(y == 0 || y == 1, "softmax_ce2", "labels must be 0/1");
        const double w = y == 1 ? weight_pos : weight_neg;
        wr[i] = w;
        total_w += w;
        loss += w * (lse - (y == 1 ? z1 : z0));
        p1[i] = std::exp(z1 - lse);
    }
    loss /= total_w;
    Tensor out = make_tensor({1}, {loss});
    return t.track(out, {logits},
                   [logits, out, labels, r, total_w, p1 = std::move(p1), wr = std::move(wr)] {
        logits->ensure_grad();
        const double g = out->grad[0];
        for (int64_t i = 0; i < r; ++i) {
            const double s = g * wr[i] / total_w;
            const double p = p1[i];
            // d/dz of ce = softmax - onehot
            logits->grad[i * 2] += s * ((1.0 - p) - (labels[i] == 0 ? 1.0 : 0.0));
            logits->grad[i * 2 + 1] += s * (p - (labels[i] == 1 ? 1.0 : 0.0));
        }
    });
}

Tensor softmax2_prob(Tape& t, const Tensor& logits) {
    require(logits->shape.size() == 2 && logits->shape[1] == 2, "softmax2_prob",
            "expects (r,2) logits, got " + shape_str(logits->shape));
    const int64_t r = logits->shape[0];
    std::vector<double> v(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        const double d = logits->values[i * 2 + 1] - logits->values[i * 2];
        v[i] = 1.0 / (1.0 + std::exp(-d));
    }
    Tensor out = make_tensor({r, 1}, std::move(v));
    return t.track(out, {logits}, [logits, out, r] {
        logits->ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            const double p = out->values[i];
            const double g = out->grad[i] * p * (1.0 - p);
            logits->grad[i * 2 + 1] += g;
            logits->grad[i * 2] -= g;
        }
    });
}

Tensor l1(Tape& t, const Tensor& a, const Tensor& b) {
    check_same_shape("l1", a, b);
    double s = 0.0;
    for (size_t i = 0; i < a->values.size(); ++i) s += std::abs(a->values[i] - b->values[i]);
    Tensor out = make_tensor({1}, {s});
    return t.track(out, {a, b}, [a, b, out] {
        const double g = out->grad[0];
        auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->values.size(); ++i)
                a->grad[i] += g * sign(a->values[i] - b->values[i]);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->values.size(); ++i)
                b->grad[i] -= g * sign(a->values[i] - b->values[i]);
        }
    });
}

Tensor bary_points(Tape& t, const Tensor& verts, const std::vector<std::array<int, 3>>& face_idx,
                   const std::vector<std::array<double, 3>>& bary) {
    require(verts->shape.size() == 2 && verts->shape[1] == 3, "bary_points",
            "expects (n,3) vertices, got " + shape_str(verts->shape));
    require(face_idx.size() == bary.size(), "bary_points", "index/bary count mismatch");
    const int64_t n = verts->shape[0];
    const int64_t k = static_cast<int64_t>(face_idx.size());
    std::vector<double> v(static_cast<size_t>(k * 3), 0.0);
    for (int64_t s = 0; s < k; ++s) {
        for (int c = 0; c < 3; ++c) {
            const int vi = face_idx[s][c];
            require(vi >= 0 && vi < n, "bary_points", "vertex index out of range");
            const double w = bary[s][c];
            for (int d = 0; d < 3; ++d) v[s * 3 + d] += w * verts->values[vi * 3 + d];
        }
    }
    Tensor out = make_tensor({k, 3}, std::move(v));
    return t.track(out, {verts}, [verts, out, face_idx, bary, k] {
        verts->ensure_grad();
        for (int64_t s = 0; s < k; ++s)
            for (int c = 0; c < 3; ++c) {
                const int vi = face_idx[s][c];
                const double w = bary[s][c];
                for (int d = 0; d < 3; ++d)
                    verts->grad[vi * 3 + d] += w * out->grad[s * 3 + d];
            }
    });
}

Tensor chamfer_points(Tape& t, const Tensor& p, const Tensor* p_weights, const Tensor& q) {
    require(p->shape.size() == 2 && p->shape[1] == 3, "chamfer_points",
            "expects (k,3) points, got " + shape_str(p->shape));
    require(q->shape.size() == 2 && q->shape[1] == 3, "chamfer_points",
            "expects (m,3) points, got " + shape_str(q->shape));
    const int64_t k = p->shape[0], m = q->shape[0];
    require(k > 0 && m > 0, "chamfer_points", "empty point set");
    Tensor w;  // may stay null
    if (p_weights) {
        w = *p_weights;
        require(w->size() == k, "chamfer_points",
                "weights " + shape_str(w->shape) + " do not match points " + shape_str(p->shape));
    }

    auto pt = [](const Tensor& ten, int64_t i) {
        return Vec3{ten->values[i * 3], ten->values[i * 3 + 1], ten->values[i * 3 + 2]};
    };
    std::vector<Vec3> pv(k), qv(m);
    for (int64_t i = 0; i < k; ++i) pv[i] = pt(p, i);
    for (int64_t j = 0; j < m; ++j) qv[j] = pt(q, j);
    PointGrid pg(pv), qg(qv);

    std::vector<int> nn_pq(k), nn_qp(m);
    std::vector<double> d_pq(k), d_qp(m);
    for (int64_t i = 0; i < k; ++i) {
        nn_pq[i] = qg.nearest(pv[i]);
        d_pq[i] = (pv[i] - qv[nn_pq[i]]).norm2();
    }
    for (int64_t j = 0; j < m; ++j) {
        nn_qp[j] = pg.nearest(qv[j]);
        d_qp[j] = (qv[j] - pv[nn_qp[j]]).norm2();
    }

    double sum_w = static_cast<double>(k);
    double a_term = 0.0;
    if (w) {
        sum_w = 0.0;
        for (int64_t i = 0; i < k; ++i) sum_w += w->values[i];
        require(sum_w > 0.0, "chamfer_points", "weights sum to zero");
        for (int64_t i = 0; i < k; ++i) a_term += w->values[i] * d_pq[i];
    } else {
        for (int64_t i = 0; i < k; ++i) a_term += d_pq[i];
    }
    a_term /= sum_w;
    double b_term = 0.0;
    for (int64_t j = 0; j < m; ++j) b_term += d_qp[j];
    b_term /= static_cast<double>(m);

    Tensor out = make_tensor({1}, {a_term + b_term});
    std::vector<Tensor> inputs{p, q};
    if (w) inputs.push_back(w);
    return t.track(out, inputs,
                   [p, q, w, out, k, m, sum_w, a_term, nn_pq = std::move(nn_pq),
                    nn_qp = std::move(nn_qp), d_pq = std::move(d_pq)] {
        const double g = out->grad[0];
        if (p->requires_grad) {
            p->ensure_grad();
            for (int64_t i = 0; i < k; ++i) {
                const double wi = w ? w->values[i] : 1.0;
                const double f = g * 2.0 * wi / sum_w;
                for (int d = 0; d < 3; ++d)
                    p->grad[i * 3 + d] +=
                        f * (p->values[i * 3 + d] - q->values[nn_pq[i] * 3 + d]);
            }
            for (int64_t j = 0; j < m; ++j) {
                const int i = nn_qp[j];
                const double f = g * 2.0 / static_cast<double>(m);
                for (int d = 0; d < 3; ++d)
                    p->grad[i * 3 + d] += f * (p->values[i * 3 + d] - q->values[j * 3 + d]);
            }
        }
        if (q->requires_grad) {
            q->ensure_grad();
            for (int64_t i = 0; i < k; ++i) {
                const double wi = w ? w->values[i] : 1.0;
                const double f = g * 2.0 * wi / sum_w;
                const int j = nn_pq[i];
                for (int d = 0; d < 3; ++d)
                    q->grad[j * 3 + d] -= f * (p->values[i * 3 + d] - q->values[j * 3 + d]);
            }
            for (int64_t j = 0; j < m; ++j) {
                const int i = nn_qp[j];
                const double f = g * 2.0 / static_cast<double>(m);
                for (int d = 0; d < 3; ++d)
                    q->grad[j * 3 + d] -= f * (p->values[i * 3 + d] - q->values[j * 3 + d]);
            }
        }
        if (w && w->requires_grad) {
            w->ensure_grad();
            for (int64_t i = 0; i < k; ++i) w->grad[i] += g * (d_pq[i] - a_term) / sum_w;
        }
    });
}

// ---- optimizer ---------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->values.size(), 0.0);
        v_[i].assign(params_[i]->values.size(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        TensorData& p = *params_[pi];
        if (p.grad.empty())
            throw std::runtime_error("adam_step: parameter '" + p.name + "' has no grad");
        for (size_t i = 0; i < p.values.size(); ++i) {
            const double g = p.grad[i];
            m_[pi][i] = beta1_ * m_[pi][i] + (1.0 - beta1_) * g;
            v_[pi][i] = beta2_ * v_[pi][i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[pi][i] / bc1;
            const double vhat = v_[pi][i] / bc2;
            p.values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p->zero_grad();
}

}  // namespace t2m::ad
