#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "t2m/dataset.hpp"
#include "t2m/losses.hpp"
#include "t2m/metrics.hpp"
#include "fd_check.hpp"

using namespace t2m;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor positions_tensor(const std::vector<Vec3>& pts, bool rg = true) {
    std::vector<double> v;
    v.reserve(pts.size() * 3);
    for (const Vec3& p : pts) {
        v.push_back(p.x);
        v.push_back(p.y);
        v.push_back(p.z);
    }
    return ad::make_tensor({static_cast<int64_t>(pts.size()), 3}, std::move(v), rg);
}

}  // namespace

TEST_CASE("matched loss vanishes when prediction is a permuted target") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::vector<Vec3> target(7);
    for (Vec3& p : target) p = {uni(rng), uni(rng), uni(rng)};
    std::vector<Vec3> pred = target;
    std::shuffle(pred.begin(), pred.end(), rng);

    Tape tape;
    Tensor pt = positions_tensor(pred);
    const Assignment asg = hungarian(vertex_cost_matrix(pred, target));
    const MatchedLossOut out = matched_vertex_loss(tape, pt, target, asg);
    CHECK(out.loss->scalar() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.matched == 7);
}

TEST_CASE("single pair (0,0,0)->(1,1,1) has L1 loss 3") {
    Tape tape;
    Tensor pt = positions_tensor({{0, 0, 0}});
    Assignment asg;
    asg.mapping = {0};
    const MatchedLossOut out = matched_vertex_loss(tape, pt, {{1, 1, 1}}, asg);
    CHECK(out.loss->scalar() == doctest::Approx(3.0));
}

TEST_CASE("matched loss gradient is sign(pred - target)/n, FD verified") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::vector<Vec3> target(5), pred(5);
    for (Vec3& p : target) p = {uni(rng), uni(rng), uni(rng)};
    for (Vec3& p : pred) p = {uni(rng), uni(rng), uni(rng)};
    const Assignment asg = hungarian(vertex_cost_matrix(pred, target));

    Tensor pt = positions_tensor(pred);
    {
        Tape tape;
        const MatchedLossOut out = matched_vertex_loss(tape, pt, target, asg);
        tape.backward(out.loss);
        for (size_t i = 0; i < pred.size(); ++i) {
            const Vec3& t = target[asg.mapping[i]];
            for (int c = 0; c < 3; ++c) {
                const double d = pred[i][c] - t[c];
                const double expected = (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / 5.0;
                CHECK(pt->grad[i * 3 + c] == doctest::Approx(expected));
            }
        }
    }
    auto loss_fn = [&](Tape& t) { return matched_vertex_loss(t, pt, target, asg).loss; };
    CHECK(fd_max_rel_error(loss_fn, {pt}) < 1e-3);
}

TEST_CASE("matched loss rejects an empty target") {
    Tape tape;
    Tensor pt = positions_tensor({{0, 0, 0}});
    Assignment asg;
    asg.mapping = {-1};
    CHECK_THROWS_AS(matched_vertex_loss(tape, pt, {}, asg), std::runtime_error);
}

TEST_CASE("edge labels map ground-truth edges through the assignment") {
    // Target: triangle 0-1-2. Predictions: 4 vertices; mapping 0->1, 1->0, 2->2, 3 unmatched.
    IndexedFaceSet target;
    target.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    target.faces = {{0, 1, 2}};
    Assignment asg;
    asg.mapping = {1, 0, 2, -1};
    const std::vector<std::pair<int, int>> pairs{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    const std::vector<int> labels = edge_labels_from_assignment(pairs, asg, target);
    CHECK(labels == std::vector<int>{1, 1, 0, 1, 0, 0});
}

TEST_CASE("balanced positive weight is #neg/#pos, capped") {
    CHECK(balanced_pos_weight({1, 0, 0, 0}) == doctest::Approx(3.0));
    CHECK(balanced_pos_weight({1, 1, 1}) == 1.0);   // no negatives
    CHECK(balanced_pos_weight({0, 0}) == 1.0);      // no positives
    std::vector<int> rare(200, 0);
    rare[0] = 1;
    CHECK(balanced_pos_weight(rare) == 50.0);  // capped
}

TEST_CASE("dual face labels: exactly the source faces among the cycle candidates") {
    const IndexedFaceSet box = make_box({0, 0, 0}, {1, 1, 1});
    const DualGraph dual = build_dual_graph(VertexEdgeGraph::from_mesh(box));
    const std::vector<int> labels = dual_face_labels(dual, box);
    int pos = 0;
    for (int l : labels) pos += l;
    CHECK(pos == box.face_count());
    CHECK(dual.node_count() >= box.face_count());
}

TEST_CASE("chamfer mesh loss: identical meshes with a shared seed give zero") {
    const IndexedFaceSet box = make_box({0, 0, 0}, {1, 1, 1});
    Tape tape;
    Tensor pt = positions_tensor(box.vertices);
    const ChamferMeshOut out = chamfer_mesh_loss(tape, pt, box.faces, nullptr, box, 512, 99);
    CHECK_FALSE(out.vertex_fallback);
    CHECK(out.loss->scalar() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("chamfer mesh loss: two parallel unit squares converge to 2 d^2") {
    const double d = 0.3;
    IndexedFaceSet a, b;
    a.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    a.faces = {{0, 1, 2}, {0, 2, 3}};
    b = a;
    for (Vec3& v : b.vertices) v.z += d;

    Tape tape;
    Tensor pt = positions_tensor(a.vertices);
    const ChamferMeshOut out = chamfer_mesh_loss(tape, pt, a.faces, nullptr, b, 20000, 5);
    // Every point on one plane is exactly d away from the other.
    CHECK(out.loss->scalar() == doctest::Approx(2.0 * d * d).epsilon(0.02));
}

TEST_CASE("chamfer mesh loss gradients pass finite differences") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    IndexedFaceSet target = make_box({0, 0, 0}, {1, 1, 1});
    std::vector<Vec3> pred(6);
    for (Vec3& p : pred) p = {uni(rng), uni(rng), uni(rng)};
    const std::vector<std::array<int, 3>> faces{{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
    Tensor pt = positions_tensor(pred);
    Tensor probs = ad::make_tensor({3, 1}, {0.9, 0.6, 0.8}, true);

    auto loss_fn = [&](Tape& t) {
        return chamfer_mesh_loss(t, pt, faces, &probs, target, 128, 31).loss;
    };
    CHECK(fd_max_rel_error(loss_fn, {pt, probs}) < 1e-3);
}

TEST_CASE("chamfer mesh loss falls back to vertices when the face set is empty") {
    const IndexedFaceSet box = make_box({0, 0, 0}, {1, 1, 1});
    Tape tape;
    Tensor pt = positions_tensor(box.vertices);
    const ChamferMeshOut out = chamfer_mesh_loss(tape, pt, {}, nullptr, box, 256, 3);
    CHECK(out.vertex_fallback);
    CHECK(out.loss->scalar() >= 0.0);
}

TEST_CASE("probability-weighted sampling reduces to area sampling for equal probs") {
    // Right triangles with power-of-two areas keep prob*area exact.
    IndexedFaceSet m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {2, 0, 0}, {0, 2, 0}};
    m.faces = {{0, 1, 2}, {0, 3, 4}};
    double total = 0.0;
    std::vector<double> areas;
    for (const auto& f : m.faces) {
        const Vec3 cr = (m.vertices[f[1]] - m.vertices[f[0]])
                            .cross(m.vertices[f[2]] - m.vertices[f[0]]);
        areas.push_back(0.5 * cr.norm());
        total += areas.back();
    }
    std::vector<double> half = areas;
    for (double& w : half) w *= 0.5;

    const auto a = sample_faces_weighted(m, areas, 2000, 77);
    const auto b = sample_faces_weighted(m, half, 2000, 77);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].face == b[i].face);
        CHECK(a[i].bary == b[i].bary);
    }
}

TEST_CASE("eval_mesh_distance: self distance is sampling noise only") {
    const IndexedFaceSet sphere = normalize_unit_cube(make_icosphere(2));
    CHECK(eval_mesh_distance(sphere, sphere, 10000, 42) < 1e-3);
}

TEST_CASE("eval_mesh_distance grows with translation") {
    const IndexedFaceSet box = normalize_unit_cube(make_box({0, 0, 0}, {1, 1, 1}));
    IndexedFaceSet moved = box;
    for (Vec3& v : moved.vertices) v.x += 0.1;
    IndexedFaceSet far = box;
    for (Vec3& v : far.vertices) v.x += 5.0;
    const double d0 = eval_mesh_distance(box, box, 4000, 1);
    const double d1 = eval_mesh_distance(box, moved, 4000, 1);
    const double d2 = eval_mesh_distance(box, far, 4000, 1);
    CHECK(d0 < d1);
    CHECK(d1 < d2);
    CHECK(d2 == doctest::Approx(5.0).epsilon(0.1));  // |t|-dominated
}

TEST_CASE("normal similarity: identical meshes score 1") {
    const IndexedFaceSet box = normalize_unit_cube(make_box({0, 0, 0}, {1, 1, 1}));
    CHECK(eval_normal_similarity(box, box, 4000, 9) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("normal similarity: overlaid orthogonal planes score 0") {
    IndexedFaceSet xy, xz;
    xy.vertices = {{0, 0, 0.5}, {1, 0, 0.5}, {1, 1, 0.5}, {0, 1, 0.5}};
    xy.faces = {{0, 1, 2}, {0, 2, 3}};
    xz.vertices = {{0, 0.5, 0}, {1, 0.5, 0}, {1, 0.5, 1}, {0, 0.5, 1}};
    xz.faces = {{0, 1, 2}, {0, 2, 3}};
    CHECK(eval_normal_similarity(xy, xz, 4000, 11) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("normal similarity is orientation-agnostic") {
    const IndexedFaceSet box = normalize_unit_cube(make_box({0, 0, 0}, {1, 1, 1}));
    IndexedFaceSet flipped = box;
    for (auto& f : flipped.faces) std::swap(f[1], f[2]);
    // Dense enough that the 0.03 window always contains a same-face sample;
    // residual deficit comes from samples whose window straddles a box edge.
    CHECK(eval_normal_similarity(box, flipped, 20000, 13) > 0.995);
}

TEST_CASE("eval report aggregates per class and overall") {
    EvalReport rep;
    rep.rows = {{"box0", "box", 0.1, 0.9},
                {"box1", "box", 0.3, 0.7},
                {"cyl0", "cylinder", 0.2, 0.6}};
    const auto per = rep.per_class();
    REQUIRE(per.size() == 2);
    CHECK(per[0].cls == "box");
    CHECK(per[0].dist == doctest::Approx(0.2));
    CHECK(per[0].nsim == doctest::Approx(0.8));
    const auto avg = rep.average();
    CHECK(avg.dist == doctest::Approx(0.2));
    std::ostringstream csv;
    rep.write_csv(csv);
    CHECK(csv.str().find("name,class,dist,nsim") == 0);
    CHECK(csv.str().find("average,all,") != std::string::npos);
}
