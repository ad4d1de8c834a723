#include <doctest.h>

#include <cmath>
#include <random>

#include "t2m/checkpoint.hpp"
#include "t2m/nn.hpp"
#include "t2m/tensor.hpp"
#include "fd_check.hpp"

using namespace t2m;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                     double keep_away_from = 0.0, double margin = 0.0) {
    std::uniform_real_distribution<double> uni(lo, hi);
    std::vector<double> v(static_cast<size_t>(ad::numel(shape)));
    for (double& x : v) {
        do {
            x = uni(rng);
        } while (margin > 0.0 && std::abs(x - keep_away_from) < margin);
    }
    return ad::make_tensor(std::move(shape), std::move(v), true);
}

// Independent conv oracle: for every output element, enumerate the input
// indices it reads and accumulate explicitly.
std::vector<double> conv3d_oracle(const std::vector<double>& x, int C, int D, int H, int W,
                                  const std::vector<double>& w, const std::vector<double>& b,
                                  int OC, int K, int stride, int pad, int OD, int OH, int OW) {
    std::vector<double> out(static_cast<size_t>(OC) * OD * OH * OW, 0.0);
    for (int oc = 0; oc < OC; ++oc)
        for (int oz = 0; oz < OD; ++oz)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = b[oc];
                    for (int ic = 0; ic < C; ++ic)
                        for (int kz = 0; kz < K; ++kz)
                            for (int ky = 0; ky < K; ++ky)
                                for (int kx = 0; kx < K; ++kx) {
                                    const int z = oz * stride + kz - pad;
                                    const int y = oy * stride + ky - pad;
                                    const int xx = ox * stride + kx - pad;
                                    if (z < 0 || z >= D || y < 0 || y >= H || xx < 0 || xx >= W)
                                        continue;
                                    acc += x[((ic * D + z) * H + y) * W + xx] *
                                           w[(((oc * C + ic) * K + kz) * K + ky) * K + kx];
                                }
                    out[((oc * OD + oz) * OH + oy) * OW + ox] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("relu and elu definitions") {
    Tape t;
    Tensor x = ad::make_tensor({2}, {-1.0, 2.0});
    Tensor r = ad::relu(t, x);
    CHECK(r->values[0] == 0.0);
    CHECK(r->values[1] == 2.0);

    Tensor z = ad::make_tensor({3}, {0.0, -30.0, 1.5});
    Tensor e = ad::elu(t, z);
    CHECK(e->values[0] == 0.0);
    CHECK(e->values[1] == doctest::Approx(-1.0).epsilon(1e-9));  // asymptote
    CHECK(e->values[2] == 1.5);
}

TEST_CASE("conv3d output size follows the conv arithmetic") {
    Tape t;
    std::mt19937_64 rng(7);
    Tensor x = random_tensor({2, 32, 32, 32}, rng);
    Tensor w = random_tensor({3, 2, 4, 4, 4}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = ad::conv3d(t, x, w, b, 4, 2, 1);
    // (32 + 2*1 - 4)/2 + 1 = 16
    CHECK(y->shape == ad::Shape{3, 16, 16, 16});
}

TEST_CASE("conv3d values match the index-enumeration oracle") {
    std::mt19937_64 rng(11);
    for (const auto& [K, stride, pad] : {std::tuple{4, 2, 1}, {3, 2, 1}, {3, 1, 0}, {1, 1, 0}}) {
        const int C = 2, D = 7, H = 6, W = 5, OC = 3;
        Tensor x = random_tensor({C, D, H, W}, rng);
        Tensor w = random_tensor({OC, C, K, K, K}, rng);
        Tensor b = random_tensor({OC}, rng);
        Tape t;
        Tensor y = ad::conv3d(t, x, w, b, K, stride, pad);
        const int OD = static_cast<int>(y->shape[1]);
        const int OH = static_cast<int>(y->shape[2]);
        const int OW = static_cast<int>(y->shape[3]);
        const std::vector<double> oracle = conv3d_oracle(x->values, C, D, H, W, w->values,
                                                         b->values, OC, K, stride, pad, OD, OH, OW);
        REQUIRE(oracle.size() == y->values.size());
        for (size_t i = 0; i < oracle.size(); ++i)
            CHECK(y->values[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward: analytic derivative of sum(w*w)") {
    Tape t;
    Tensor w = ad::make_tensor({2}, {1.0, 2.0}, true);
    Tensor loss = ad::sum_all(t, ad::mul(t, w, w));
    t.backward(loss);
    CHECK(w->grad[0] == doctest::Approx(2.0));
    CHECK(w->grad[1] == doctest::Approx(4.0));
}

TEST_CASE("l1 subgradient at zero is zero") {
    Tape t;
    Tensor x = ad::make_tensor({3}, {1.0, -2.0, 0.5}, true);
    Tensor y = ad::make_tensor({3}, {1.0, -2.0, 0.5});
    Tensor loss = ad::l1(t, x, y);
    t.backward(loss);
    CHECK(loss->scalar() == 0.0);
    for (double g : x->grad) CHECK(g == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
    Tape t;
    Tensor x = ad::make_tensor({2}, {1.0, 2.0}, true);
    Tensor y = ad::add(t, x, x);
    CHECK_THROWS_WITH_AS(t.backward(y), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("shape mismatch errors name the op and shapes") {
    Tape t;
    Tensor a = ad::make_tensor({2}, {1.0, 2.0});
    Tensor b = ad::make_tensor({3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_WITH_AS(ad::add(t, a, b), doctest::Contains("add"), std::runtime_error);
    Tensor m = ad::make_tensor({2, 2}, {1, 2, 3, 4});
    Tensor n = ad::make_tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_WITH_AS(ad::matmul(t, m, n), doctest::Contains("matmul"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ad::matmul(t, m, n), doctest::Contains("(2,2)"), std::runtime_error);
}

TEST_CASE("repeated backward calls accumulate leaf grads") {
    Tape t;
    Tensor w = ad::make_tensor({1}, {3.0}, true);
    Tensor loss = ad::sum_all(t, ad::mul(t, w, w));
    t.backward(loss);
    CHECK(w->grad[0] == doctest::Approx(6.0));
    t.backward(loss);
    CHECK(w->grad[0] == doctest::Approx(12.0));
}

TEST_CASE("finite differences: every primitive") {
    std::mt19937_64 rng(42);

    SUBCASE("matmul") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        auto loss = [&](Tape& t) { return ad::sum_all(t, ad::matmul(t, a, b)); };
        CHECK(fd_max_rel_error(loss, {a, b}) < 1e-4);
    }
    SUBCASE("linear") {
        Tensor x = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({4, 2}, rng);
        Tensor b = random_tensor({2}, rng);
        auto loss = [&](Tape& t) {
            Tensor y = ad::linear(t, x, w, b);
            return ad::sum_all(t, ad::mul(t, y, y));
        };
        CHECK(fd_max_rel_error(loss, {x, w, b}) < 1e-4);
    }
    SUBCASE("add sub mul scale reshape") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 3}, rng);
        auto loss = [&](Tape& t) {
            Tensor s = ad::add(t, ad::mul(t, a, b), ad::scale(t, ad::sub(t, a, b), 0.7));
            return ad::sum_all(t, ad::mul(t, ad::reshape(t, s, {6, 1}), ad::reshape(t, s, {6, 1})));
        };
        CHECK(fd_max_rel_error(loss, {a, b}) < 1e-4);
    }
    SUBCASE("relu away from the kink") {
        Tensor a = random_tensor({3, 3}, rng, -1.0, 1.0, 0.0, 0.05);
        auto loss = [&](Tape& t) {
            Tensor y = ad::relu(t, a);
            return ad::sum_all(t, ad::mul(t, y, y));
        };
        CHECK(fd_max_rel_error(loss, {a}) < 1e-4);
    }
    SUBCASE("elu") {
        Tensor a = random_tensor({3, 3}, rng);
        auto loss = [&](Tape& t) {
            Tensor y = ad::elu(t, a);
            return ad::sum_all(t, ad::mul(t, y, y));
        };
        CHECK(fd_max_rel_error(loss, {a}) < 1e-4);
    }
    SUBCASE("concat gather segment_sum scatter") {
        Tensor a = random_tensor({4, 2}, rng);
        Tensor b = random_tensor({4, 3}, rng);
        const std::vector<int> idx{3, 0, 2, 2, 1};
        const std::vector<int> seg{0, 1, 0, 2, 1};
        const std::vector<int> sc_idx{1, 3};
        auto loss = [&](Tape& t) {
            Tensor c = ad::concat_cols(t, {a, b});
            Tensor g = ad::gather_rows(t, c, idx);
            Tensor s = ad::segment_sum(t, g, seg, 3);
            Tensor base = ad::scale(t, ad::concat_cols(t, {a, b}), 0.5);
            Tensor sc = ad::scatter_rows(t, base, sc_idx, ad::gather_rows(t, s, {0, 2}));
            return ad::sum_all(t, ad::mul(t, sc, sc));
        };
        CHECK(fd_max_rel_error(loss, {a, b}) < 1e-4);
    }
    SUBCASE("conv3d") {
        Tensor x = random_tensor({2, 5, 5, 5}, rng);
        Tensor w = random_tensor({2, 2, 3, 3, 3}, rng);
        Tensor b = random_tensor({2}, rng);
        auto loss = [&](Tape& t) {
            Tensor y = ad::conv3d(t, x, w, b, 3, 2, 1);
            return ad::sum_all(t, ad::mul(t, y, y));
        };
        CHECK(fd_max_rel_error(loss, {x, w, b}) < 1e-4);
    }
    SUBCASE("channels_to_rows") {
        Tensor x = random_tensor({3, 2, 2, 2}, rng);
        auto loss = [&](Tape& t) {
            Tensor y = ad::channels_to_rows(t, x);
            return ad::sum_all(t, ad::mul(t, y, y));
        };
        CHECK(fd_max_rel_error(loss, {x}) < 1e-4);
    }
    SUBCASE("batch_norm train and eval") {
        for (const bool train : {true, false}) {
            Tensor x = random_tensor({6, 3}, rng);
            Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
            Tensor beta = random_tensor({3}, rng);
            Tensor rm = ad::make_tensor({3}, {0.1, -0.2, 0.05});
            Tensor rv = ad::make_tensor({3}, {1.1, 0.9, 1.0});
            auto loss = [&](Tape& t) {
                // Keep running buffers fixed so repeated evals are identical.
                Tensor rm_copy = ad::make_tensor({3}, rm->values);
                Tensor rv_copy = ad::make_tensor({3}, rv->values);
                Tensor y = ad::batch_norm(t, x, gamma, beta, rm_copy, rv_copy, 0.1, 1e-5, train);
                return ad::sum_all(t, ad::mul(t, y, y));
            };
            CHECK(fd_max_rel_error(loss, {x, gamma, beta}) < 1e-4);
        }
    }
    SUBCASE("dropout with a fixed mask") {
        Tensor x = random_tensor({4, 3}, rng);
        auto loss = [&](Tape& t) {
            std::mt19937_64 mask_rng(123);
            Tensor y = ad::dropout(t, x, 0.5, true, mask_rng);
            return ad::sum_all(t, ad::mul(t, y, y));
        };
        CHECK(fd_max_rel_error(loss, {x}) < 1e-4);
    }
    SUBCASE("softmax cross entropy and prob") {
        Tensor logits = random_tensor({5, 2}, rng);
        const std::vector<int> labels{0, 1, 1, 0, 1};
        auto loss = [&](Tape& t) { return ad::softmax_ce2(t, logits, labels, 1.0, 2.5); };
        CHECK(fd_max_rel_error(loss, {logits}) < 1e-4);
        auto loss2 = [&](Tape& t) {
            Tensor p = ad::softmax2_prob(t, logits);
            return ad::sum_all(t, ad::mul(t, p, p));
        };
        CHECK(fd_max_rel_error(loss2, {logits}) < 1e-4);
    }
    SUBCASE("l1 away from ties") {
        Tensor a = random_tensor({4, 3}, rng, -1.0, 1.0);
        Tensor b = random_tensor({4, 3}, rng, 1.5, 3.0);  // disjoint ranges: no ties
        auto loss = [&](Tape& t) { return ad::l1(t, a, b); };
        CHECK(fd_max_rel_error(loss, {a, b}) < 1e-4);
    }
    SUBCASE("bary_points") {
        Tensor v = random_tensor({5, 3}, rng);
        const std::vector<std::array<int, 3>> faces{{0, 1, 2}, {2, 3, 4}, {1, 3, 0}};
        const std::vector<std::array<double, 3>> bary{
            {0.2, 0.3, 0.5}, {0.6, 0.3, 0.1}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
        auto loss = [&](Tape& t) {
            Tensor p = ad::bary_points(t, v, faces, bary);
            return ad::sum_all(t, ad::mul(t, p, p));
        };
        CHECK(fd_max_rel_error(loss, {v}) < 1e-4);
    }
    SUBCASE("chamfer_points with weights") {
        Tensor p = random_tensor({6, 3}, rng);
        Tensor q = random_tensor({5, 3}, rng, 2.0, 4.0);  // offset: stable correspondences
        Tensor w = random_tensor({6, 1}, rng, 0.5, 1.5);
        auto loss = [&](Tape& t) { return ad::chamfer_points(t, p, &w, q); };
        CHECK(fd_max_rel_error(loss, {p, q, w}) < 1e-3);
        auto loss_uw = [&](Tape& t) { return ad::chamfer_points(t, p, nullptr, q); };
        CHECK(fd_max_rel_error(loss_uw, {p, q}) < 1e-3);
    }
}

TEST_CASE("cross entropy limit values") {
    Tape t;
    Tensor uniform = ad::make_tensor({2, 2}, {0.3, 0.3, -1.2, -1.2});
    CHECK(ad::softmax_ce2(t, uniform, {0, 1})->scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor confident = ad::make_tensor({1, 2}, {40.0, -40.0});
    CHECK(ad::softmax_ce2(t, confident, {0})->scalar() < 1e-12);

    // Re-weighting changes the value but not the minimizing labels.
    Tensor logits = ad::make_tensor({2, 2}, {2.0, -2.0, -2.0, 2.0});
    const double plain = ad::softmax_ce2(t, logits, {0, 1})->scalar();
    const double weighted = ad::softmax_ce2(t, logits, {0, 1}, 1.0, 3.0)->scalar();
    CHECK(plain < 0.1);
    CHECK(weighted < 0.1);
}

TEST_CASE("dropout train mode preserves expectation") {
    std::mt19937_64 rng(99);
    double acc = 0.0;
    const int trials = 20000;
    for (int i = 0; i < trials; ++i) {
        Tape t;
        Tensor x = ad::make_tensor({1}, {1.0});
        acc += ad::dropout(t, x, 0.5, true, rng)->scalar();
    }
    CHECK(acc / trials == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("eval-mode dropout is the identity") {
    std::mt19937_64 rng(1);
    Tape t;
    Tensor x = ad::make_tensor({3}, {1.0, -2.0, 0.25});
    Tensor y = ad::dropout(t, x, 0.5, false, rng);
    CHECK(y->values == x->values);
}

TEST_CASE("adam: first step magnitude equals lr on f(w)=w^2") {
    Tensor w = ad::make_tensor({1}, {1.0}, true);
    ad::Adam adam({w}, 0.1);
    Tape t;
    Tensor loss = ad::sum_all(t, ad::mul(t, w, w));
    t.backward(loss);
    adam.step();
    CHECK(w->values[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor w = ad::make_tensor({2}, {1.0, -2.0}, true);
    w->ensure_grad();
    ad::Adam adam({w});
    adam.step();
    CHECK(w->values[0] == 1.0);
    CHECK(w->values[1] == -2.0);
}

TEST_CASE("adam: missing grad is an error; default lr is 0.0005") {
    Tensor w = ad::make_tensor({1}, {1.0}, true);
    ad::Adam adam({w});
    CHECK(adam.lr() == 0.0005);
    CHECK_THROWS_AS(adam.step(), std::runtime_error);
}

TEST_CASE("deterministic forward: identical seeds give bit-identical values") {
    auto build_forward = [](uint64_t seed) {
        std::mt19937_64 rng(seed);
        nn::ParamStore store;
        nn::MlpPair mlp = nn::MlpPair::create(store, "m", 4, 8, 3, rng);
        Tape tape;
        std::mt19937_64 drop_rng(seed + 1);
        nn::ForwardCtx ctx{tape, false, drop_rng};
        Tensor x = ad::make_tensor({5, 4}, nn::uniform_init(-1, 1, 20, rng));
        return mlp.forward(ctx, x)->values;
    };
    CHECK(build_forward(7) == build_forward(7));
}

TEST_CASE("checkpoint round-trip restores values exactly") {
    std::mt19937_64 rng(5);
    nn::ParamStore store;
    nn::MlpPair mlp = nn::MlpPair::create(store, "m", 3, 6, 2, rng);
    const Checkpoint saved = Checkpoint::from_store(store, "{\"k\":1}");
    const std::string path = "/tmp/t2m_test_ckpt.bin";
    write_checkpoint_file(path, saved);

    for (const Tensor& p : store.params())
        for (double& v : p->values) v += 1.0;

    const Checkpoint loaded = read_checkpoint_file(path);
    CHECK(loaded.meta_json == "{\"k\":1}");
    loaded.load_into(store);
    for (const Tensor& p : store.params()) {
        const auto& orig = saved.entries.at(p->name).second;
        CHECK(p->values == orig);
    }
}

TEST_CASE("segment_sum is invariant to row permutation (value-ordered)") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({6, 4}, rng);
    const std::vector<int> seg{0, 1, 0, 1, 0, 1};
    Tape t;
    Tensor s1 = ad::segment_sum(t, x, seg, 2);

    // Reverse the rows within each segment.
    std::vector<double> rv(x->values.size());
    const int perm[6] = {4, 3, 2, 1, 0, 5};
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 4; ++c) rv[r * 4 + c] = x->values[perm[r] * 4 + c];
    std::vector<int> seg2(6);
    for (int r = 0; r < 6; ++r) seg2[r] = seg[perm[r]];
    Tensor s2 = ad::segment_sum(t, ad::make_tensor({6, 4}, rv), seg2, 2);
    CHECK(s1->values == s2->values);
}
