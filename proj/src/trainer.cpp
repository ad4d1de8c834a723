#include "t2m/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "t2m/losses.hpp"
#include "t2m/metrics.hpp"
#include "t2m/point_grid.hpp"

namespace t2m {

using ad::Tensor;
using nlohmann::json;

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::vertex_edge: return "vertex_edge";
        case Stage::face_ce: return "face_ce";
        case Stage::face_chamfer: return "face_chamfer";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "vertex_edge") return Stage::vertex_edge;
    if (s == "face_ce") return Stage::face_ce;
    if (s == "face_chamfer") return Stage::face_chamfer;
    throw std::runtime_error("unknown stage: " + s +
                             " (expected vertex_edge, face_ce or face_chamfer)");
}

int stage_rank(Stage s) { return static_cast<int>(s) + 1; }

std::string TrainConfig::to_json() const {
    json j;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["dataset_dir"] = dataset_dir;
    j["model"] = json::parse(model.to_json());
    j["epochs_vertex_edge"] = epochs_vertex_edge;
    j["epochs_face_ce"] = epochs_face_ce;
    j["epochs_face_chamfer"] = epochs_face_chamfer;
    j["max_steps_vertex_edge"] = max_steps_vertex_edge;
    j["max_steps_face_ce"] = max_steps_face_ce;
    j["max_steps_face_chamfer"] = max_steps_face_chamfer;
    j["lambda_edge"] = lambda_edge;
    j["edge_pos_weight_cap"] = edge_pos_weight_cap;
    j["match"] = match;
    j["face_targets"] = face_targets;
    j["direct_surf_voxels"] = direct_surf_voxels;
    j["unfreeze_backbone"] = unfreeze_backbone;
    j["chamfer_samples"] = chamfer_samples;
    j["val_every"] = val_every;
    j["edge_threshold"] = edge_threshold;
    j["face_threshold"] = face_threshold;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
    c.epochs_vertex_edge = j.value("epochs_vertex_edge", c.epochs_vertex_edge);
    c.epochs_face_ce = j.value("epochs_face_ce", c.epochs_face_ce);
    c.epochs_face_chamfer = j.value("epochs_face_chamfer", c.epochs_face_chamfer);
    c.max_steps_vertex_edge = j.value("max_steps_vertex_edge", c.max_steps_vertex_edge);
    c.max_steps_face_ce = j.value("max_steps_face_ce", c.max_steps_face_ce);
    c.max_steps_face_chamfer = j.value("max_steps_face_chamfer", c.max_steps_face_chamfer);
    c.lambda_edge = j.value("lambda_edge", c.lambda_edge);
    c.edge_pos_weight_cap = j.value("edge_pos_weight_cap", c.edge_pos_weight_cap);
    c.match = j.value("match", c.match);
    c.face_targets = j.value("face_targets", c.face_targets);
    c.direct_surf_voxels = j.value("direct_surf_voxels", c.direct_surf_voxels);
    c.unfreeze_backbone = j.value("unfreeze_backbone", c.unfreeze_backbone);
    c.chamfer_samples = j.value("chamfer_samples", c.chamfer_samples);
    c.val_every = j.value("val_every", c.val_every);
    c.edge_threshold = j.value("edge_threshold", c.edge_threshold);
    c.face_threshold = j.value("face_threshold", c.face_threshold);
    return c;
}

std::vector<std::string> TrainConfig::diff_keys(const TrainConfig& a, const TrainConfig& b) {
    const json ja = json::parse(a.to_json());
    const json jb = json::parse(b.to_json());
    std::vector<std::string> out;
    for (auto it = ja.begin(); it != ja.end(); ++it) {
        if (it.key() == "model") {
            for (const std::string& k :
                 ModelConfig::diff_keys(a.model, b.model))
                out.push_back("model." + k);
        } else if (jb.at(it.key()) != it.value()) {
            out.push_back(it.key());
        }
    }
    return out;
}

namespace {

double plain_point_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
    PointGrid ga(a), gb(b);
    double s = 0.0;
    for (const Vec3& p : a) s += (p - b[gb.nearest(p)]).norm();
    double t = 0.0;
    for (const Vec3& p : b) t += (p - a[ga.nearest(p)]).norm();
    return 0.5 * (s / a.size() + t / b.size());
}

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      shuffle_rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL),
      dropout_rng_(cfg_.seed ^ 0x6a09e667f3bcc908ULL) {
    ModelConfig mc = cfg_.model;
    if (cfg_.face_targets != "dual") mc.direct_faces = true;
    mc.init_seed = cfg_.seed;
    model_ = std::make_unique<Model>(mc);
    cfg_.model = mc;
}

void Trainer::load_data() {
    if (cfg_.dataset_dir.empty()) throw std::runtime_error("trainer: no dataset directory");
    const DatasetIndex index = DatasetIndex::load(cfg_.dataset_dir + "/index.json");
    train_ = load_split(index, cfg_.dataset_dir, "train");
    val_ = load_split(index, cfg_.dataset_dir, "val");
    if (train_.empty()) throw std::runtime_error("trainer: empty train split");
}

void Trainer::set_data(std::vector<LoadedSample> train, std::vector<LoadedSample> val) {
    train_ = std::move(train);
    val_ = std::move(val);
}

void Trainer::set_trainable(Stage stage) {
    std::vector<std::string> active;
    switch (stage) {
        case Stage::vertex_edge: active = {"enc.", "ve."}; break;
        case Stage::face_ce:
            active = cfg_.face_targets == "dual" ? std::vector<std::string>{"face."}
                                                 : std::vector<std::string>{"direct."};
            break;
        case Stage::face_chamfer:
            active = {"face."};
            if (cfg_.unfreeze_backbone) {
                active.push_back("enc.");
                active.push_back("ve.");
            }
            break;
    }
    for (const Tensor& p : model_->store().params()) {
        bool on = false;
        for (const std::string& pre : active) on = on || p->name.rfind(pre, 0) == 0;
        p->requires_grad = on;
    }
}

void Trainer::scale_grads(const std::vector<Tensor>& params, double s) {
    for (const Tensor& p : params) {
        p->ensure_grad();
        for (double& g : p->grad) g *= s;
    }
}

StageResult Trainer::run_stage(Stage stage, std::ostream* log) {
    if (train_.empty()) throw std::runtime_error("trainer: no data loaded");
    const int prev_rank = loaded_stage_ ? stage_rank(*loaded_stage_) : 0;
    if (stage_rank(stage) > prev_rank + 1)
        throw std::runtime_error("stage " + stage_name(stage) +
                                 " requires a checkpoint from the previous stage (have rank " +
                                 std::to_string(prev_rank) + ")");
    if (stage == Stage::face_chamfer && cfg_.face_targets != "dual")
        throw std::runtime_error("face_chamfer stage applies to the dual pipeline only");

    set_trainable(stage);
    std::vector<std::string> prefixes;
    switch (stage) {
        case Stage::vertex_edge: prefixes = {"enc.", "ve."}; break;
        case Stage::face_ce:
            prefixes = cfg_.face_targets == "dual" ? std::vector<std::string>{"face."}
                                                   : std::vector<std::string>{"direct."};
            break;
        case Stage::face_chamfer:
            prefixes = {"face."};
            if (cfg_.unfreeze_backbone) {
                prefixes.push_back("enc.");
                prefixes.push_back("ve.");
            }
            break;
    }
    std::vector<Tensor> active_params = model_->params_with_prefix(prefixes);
    ad::Adam adam(active_params, cfg_.lr);

    const int epochs = stage == Stage::vertex_edge ? cfg_.epochs_vertex_edge
                       : stage == Stage::face_ce   ? cfg_.epochs_face_ce
                                                   : cfg_.epochs_face_chamfer;
    const int max_steps = stage == Stage::vertex_edge ? cfg_.max_steps_vertex_edge
                          : stage == Stage::face_ce   ? cfg_.max_steps_face_ce
                                                      : cfg_.max_steps_face_chamfer;

    StageResult result;
    double best_val = std::numeric_limits<double>::max();
    std::vector<std::vector<double>> best_snapshot;
    int step = 0;
    bool done = false;

    for (int epoch = 0; epoch < epochs && !done; ++epoch) {
        std::vector<int> order(train_.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng_);

        for (size_t start = 0; start < order.size() && !done;
             start += static_cast<size_t>(cfg_.batch_size)) {
            std::vector<int> batch(order.begin() + start,
                                   order.begin() + std::min(order.size(),
                                                            start + cfg_.batch_size));
            adam.zero_grad();
            const StepLosses losses = run_batch(stage, batch, step);
            result.skipped_samples += losses.skipped;
            const int contributed = static_cast<int>(batch.size()) - losses.skipped;
            if (contributed > 0) {
                scale_grads(active_params, 1.0 / contributed);
                adam.step();
            }

            if (!std::isfinite(losses.total)) {
                std::ostringstream diag;
                diag << "non-finite loss at stage " << stage_name(stage) << " step " << step
                     << "; batch:";
                for (int idx : batch) diag << ' ' << train_[idx].name;
                diag << "; grad norms:";
                for (const Tensor& p : active_params) {
                    double n2 = 0.0;
                    for (double g : p->grad) n2 += g * g;
                    diag << ' ' << p->name << '=' << std::sqrt(n2);
                }
                throw NumericError(diag.str());
            }

            result.step_losses.push_back(losses.total);
            if (step == 0) result.first_loss = losses.total;
            result.last_loss = losses.total;

            if (log) {
                json rec{{"event", "step"},
                         {"stage", stage_name(stage)},
                         {"step", step},
                         {"epoch", epoch},
                         {"loss", losses.total},
                         {"vertex_loss", losses.vertex},
                         {"edge_loss", losses.edge},
                         {"face_loss", losses.face},
                         {"chamfer_loss", losses.chamfer},
                         {"skipped", losses.skipped}};
                *log << rec.dump() << "\n";
            }

            ++step;
            if (!val_.empty() && cfg_.val_every > 0 && step % cfg_.val_every == 0) {
                const double v = validation_metric(stage);
                if (log)
                    *log << json{{"event", "val"},
                                 {"stage", stage_name(stage)},
                                 {"step", step},
                                 {"metric", v}}
                                .dump()
                         << "\n";
                if (v < best_val) {
                    best_val = v;
                    best_snapshot.clear();
                    for (const Tensor& p : active_params) best_snapshot.push_back(p->values);
                }
            }
            if (max_steps > 0 && step >= max_steps) done = true;
        }
    }

    // Final validation decides between last and best-seen weights.
    if (!val_.empty()) {
        const double v = validation_metric(stage);
        if (v < best_val) {
            best_val = v;
            best_snapshot.clear();
        }
        if (!best_snapshot.empty())
            for (size_t i = 0; i < active_params.size(); ++i)
                active_params[i]->values = best_snapshot[i];
        result.best_val = best_val;
    }
    result.steps = step;
    loaded_stage_ = stage;
    return result;
}

Trainer::StepLosses Trainer::run_batch(Stage stage, const std::vector<int>& batch, int step) {
    StepLosses out;
    const int n = cfg_.model.n_vertices;

    // Per-batch positive weight for the edge CE, from target edge counts.
    double pos_weight = 1.0;
    if (stage == Stage::vertex_edge) {
        const double pairs_per_sample = 0.5 * n * (n - 1);
        double pos = 0.0;
        for (int idx : batch)
            pos += std::min<double>(static_cast<double>(train_[idx].target.edge_set().size()),
                                    pairs_per_sample);
        const double neg = pairs_per_sample * batch.size() - pos;
        pos_weight = pos > 0.0 ? std::min(neg / pos, cfg_.edge_pos_weight_cap) : 1.0;
    }

    for (size_t bi = 0; bi < batch.size(); ++bi) {
        const LoadedSample& sample = train_[batch[bi]];
        ad::Tape tape;
        const bool backbone_train = stage == Stage::vertex_edge ||
                                    (stage == Stage::face_chamfer && cfg_.unfreeze_backbone);
        nn::ForwardCtx backbone_ctx{tape, backbone_train, dropout_rng_};
        nn::ForwardCtx head_ctx{tape, true, dropout_rng_};

        const Tensor vol = Model::tsdf_to_tensor(sample.tsdf);
        const EncoderFeatures enc = model_->encode(backbone_ctx, vol);
        const GridTransform& tf = sample.tsdf.world_to_grid;
        Tensor loss;

        if (stage == Stage::vertex_edge) {
            const VertexEdgeOut veo = model_->forward_vertex_edge(backbone_ctx, enc, tf);
            for (const Vec3& p : veo.position_values)
                if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
                    throw NumericError("non-finite vertex prediction for sample " + sample.name +
                                       " at step " + std::to_string(step));
            const CostMatrix cost = vertex_cost_matrix(veo.position_values,
                                                       sample.target.vertices);
            const Assignment asg =
                cfg_.match == "greedy" ? greedy_match(cost) : hungarian(cost);
            const MatchedLossOut ml =
                matched_vertex_loss(tape, veo.positions, sample.target.vertices, asg);
            const std::vector<int> labels =
                edge_labels_from_assignment(veo.unordered_pairs, asg, sample.target);
            const Tensor ce = edge_ce_loss(tape, veo.unordered_logits, labels, pos_weight);
            loss = ad::add(tape, ml.loss, ad::scale(tape, ce, cfg_.lambda_edge));
            out.vertex += ml.loss->scalar();
            out.edge += ce->scalar();
        } else if (stage == Stage::face_ce && cfg_.face_targets == "dual") {
            // Ground-truth duals (stage 2 of the schedule).
            const DualGraph dual = build_dual_graph(VertexEdgeGraph::from_mesh(sample.target));
            if (dual.empty()) {
                ++out.skipped;
                continue;
            }
            const std::vector<int> labels = dual_face_labels(dual, sample.target);
            const FaceOut fo = model_->forward_faces(head_ctx, dual, enc, tf);
            loss = face_ce_loss(tape, fo.logits, labels, balanced_pos_weight(labels, 10.0));
            out.face += loss->scalar();
        } else if (stage == Stage::face_ce) {
            // Direct face ablation, Direct(GT) or Direct(Surf) targets.
            const VertexEdgeOut veo = model_->forward_vertex_edge(backbone_ctx, enc, tf);
            const DirectFaceOut dfo =
                model_->forward_direct_faces(head_ctx, veo.positions, enc, tf);
            if (dfo.triples.empty()) {
                ++out.skipped;
                continue;
            }
            std::vector<int> labels(dfo.triples.size(), 0);
            if (cfg_.face_targets == "direct_gt") {
                const CostMatrix cost =
                    vertex_cost_matrix(veo.position_values, sample.target.vertices);
                const Assignment asg =
                    cfg_.match == "greedy" ? greedy_match(cost) : hungarian(cost);
                std::set<std::array<int, 3>> gt;
                for (auto f : sample.target.faces) {
                    std::sort(f.begin(), f.end());
                    gt.insert(f);
                }
                for (size_t s = 0; s < dfo.triples.size(); ++s) {
                    std::array<int, 3> mapped{asg.mapping[dfo.triples[s][0]],
                                              asg.mapping[dfo.triples[s][1]],
                                              asg.mapping[dfo.triples[s][2]]};
                    if (mapped[0] < 0 || mapped[1] < 0 || mapped[2] < 0) continue;
                    std::sort(mapped.begin(), mapped.end());
                    labels[s] = gt.count(mapped) ? 1 : 0;
                }
            } else {  // direct_surf: all vertices close to the target surface
                const double thresh = cfg_.direct_surf_voxels / tf.scale;
                std::vector<char> close(veo.position_values.size(), 0);
                for (size_t i = 0; i < veo.position_values.size(); ++i)
                    close[i] =
                        point_mesh_distance(veo.position_values[i], sample.target) <= thresh;
                for (size_t s = 0; s < dfo.triples.size(); ++s)
                    labels[s] = close[dfo.triples[s][0]] && close[dfo.triples[s][1]] &&
                                close[dfo.triples[s][2]];
            }
            loss = face_ce_loss(tape, dfo.logits, labels,
                                balanced_pos_weight(labels, cfg_.edge_pos_weight_cap));
            out.face += loss->scalar();
        } else {
            // Stage 3: chamfer through duals built from predictions.
            const VertexEdgeOut veo = model_->forward_vertex_edge(backbone_ctx, enc, tf);
            const DualGraph dual = build_dual_graph(veo.to_graph(cfg_.edge_threshold));
            if (dual.empty()) {
                ++out.skipped;
                continue;
            }
            const FaceOut fo = model_->forward_faces(head_ctx, dual, enc, tf);
            const ChamferMeshOut ch = chamfer_mesh_loss(
                tape, veo.positions, dual.nodes, &fo.probs, sample.target, cfg_.chamfer_samples,
                cfg_.seed * 7919ULL + static_cast<uint64_t>(step) * 131ULL + bi);
            loss = ch.loss;
            out.chamfer += loss->scalar();
        }

        out.total += loss->scalar();
        tape.backward(loss);
    }

    const int contributed = static_cast<int>(batch.size()) - out.skipped;
    if (contributed > 0) {
        out.total /= contributed;
        out.vertex /= contributed;
        out.edge /= contributed;
        out.face /= contributed;
        out.chamfer /= contributed;
    }
    return out;
}

double Trainer::validation_metric(Stage stage) {
    double acc = 0.0;
    int count = 0;
    for (const LoadedSample& sample : val_) {
        ad::Tape tape;
        nn::ForwardCtx ctx{tape, false, dropout_rng_};
        const Tensor vol = Model::tsdf_to_tensor(sample.tsdf);
        const EncoderFeatures enc = model_->encode(ctx, vol);
        const GridTransform& tf = sample.tsdf.world_to_grid;

        if (stage == Stage::vertex_edge) {
            const VertexEdgeOut veo = model_->forward_vertex_edge(ctx, enc, tf);
            acc += plain_point_chamfer(veo.position_values, sample.target.vertices);
        } else if (stage == Stage::face_ce && cfg_.face_targets == "dual") {
            const DualGraph dual = build_dual_graph(VertexEdgeGraph::from_mesh(sample.target));
            if (dual.empty()) continue;
            const std::vector<int> labels = dual_face_labels(dual, sample.target);
            const FaceOut fo = model_->forward_faces(ctx, dual, enc, tf);
            acc += face_ce_loss(tape, fo.logits, labels)->scalar();
        } else {
            const InferenceResult inf =
                infer(sample.tsdf, cfg_.edge_threshold, cfg_.face_threshold, true);
            if (inf.mesh.faces.empty()) {
                acc += plain_point_chamfer(inf.mesh.vertices, sample.target.vertices);
            } else {
                acc += eval_mesh_distance(inf.mesh, sample.target, 2000, cfg_.seed + count);
            }
        }
        ++count;
    }
    return count > 0 ? acc / count : std::numeric_limits<double>::max();
}

void Trainer::save_checkpoint(const std::string& path, Stage completed) const {
    json meta;
    meta["format"] = "t2m-checkpoint";
    meta["stage"] = stage_name(completed);
    meta["train_config"] = json::parse(cfg_.to_json());
    write_checkpoint_file(path, Checkpoint::from_store(model_->store(), meta.dump()));
}

Stage Trainer::load_checkpoint(const std::string& path) {
    const Checkpoint ckpt = read_checkpoint_file(path);
    const json meta = json::parse(ckpt.meta_json);
    const TrainConfig stored = TrainConfig::from_json(meta.at("train_config").dump());
    const std::vector<std::string> diffs = ModelConfig::diff_keys(stored.model, cfg_.model);
    if (!diffs.empty()) {
        std::string msg = "checkpoint model config mismatch; differing keys:";
        for (const std::string& k : diffs) msg += " " + k;
        throw std::runtime_error(msg);
    }
    ckpt.load_into(model_->store());
    const Stage s = stage_from_string(meta.at("stage"));
    loaded_stage_ = s;
    return s;
}

InferenceResult Trainer::infer(const TsdfVolume& vol, double edge_threshold,
                               double face_threshold, bool allow_ce_faces) const {
    (void)allow_ce_faces;  // stage gating happens at the CLI layer
    ad::Tape tape;
    std::mt19937_64 rng(0);  // eval mode draws nothing
    nn::ForwardCtx ctx{tape, false, rng};

    const Tensor volt = Model::tsdf_to_tensor(vol);
    const EncoderFeatures enc = model_->encode(ctx, volt);
    const VertexEdgeOut veo = model_->forward_vertex_edge(ctx, enc, vol.world_to_grid);

    InferenceResult out;
    out.mesh.vertices = veo.position_values;

    if (cfg_.face_targets == "dual") {
        const DualGraph dual = build_dual_graph(veo.to_graph(edge_threshold));
        out.dual_candidates = dual.node_count();
        if (!dual.empty()) {
            const FaceOut fo = model_->forward_faces(ctx, dual, enc, vol.world_to_grid);
            for (int i = 0; i < dual.node_count(); ++i)
                if (fo.probs->values[i] > face_threshold) out.mesh.faces.push_back(dual.nodes[i]);
        }
    } else {
        const DirectFaceOut dfo =
            model_->forward_direct_faces(ctx, veo.positions, enc, vol.world_to_grid);
        out.dual_candidates = static_cast<int>(dfo.triples.size());
        for (size_t i = 0; i < dfo.triples.size(); ++i)
            if (dfo.probs->values[i] > face_threshold) out.mesh.faces.push_back(dfo.triples[i]);
    }
    out.empty_faces = out.mesh.faces.empty();
    return out;
}

std::vector<BenchRow> Trainer::bench_scaling(const std::vector<int>& n_list,
                                             const ModelConfig& base, uint64_t seed) {
    std::vector<BenchRow> rows;
    const IndexedFaceSet sphere = normalize_unit_cube(make_icosphere(3));

    for (int n : n_list) {
        BenchRow row;
        row.n = n;
        try {
            ModelConfig cfg = base;
            cfg.n_vertices = n;
            cfg.init_seed = seed;
            Model model(cfg);

            const IndexedFaceSet target = decimate(sphere, n);
            auto [grid_mesh, tf] = normalize_to_grid(sphere);
            (void)grid_mesh;
            const CameraIntrinsics intr =
                CameraIntrinsics::from_fov(128, 128, 60.0 * M_PI / 180.0);
            const std::vector<RigidPose> poses = synthesize_cameras(sphere, 1, seed);
            const TsdfVolume vol = fuse_tsdf({render_depth(sphere, intr, poses[0])}, tf);

            std::mt19937_64 rng(seed);
            // The table covers the joint vertex-edge predictor.
            ad::Adam adam(model.params_with_prefix({"enc.", "ve."}), 0.0005);

            // One full training step: forward, matching, losses, backward, update.
            ad::MemStats::reset_peak();
            const int64_t mem_before = ad::MemStats::live_bytes();
            const auto t0 = std::chrono::steady_clock::now();
            {
                ad::Tape tape;
                nn::ForwardCtx ctx{tape, true, rng};
                const Tensor volt = Model::tsdf_to_tensor(vol);
                const EncoderFeatures enc = model.encode(ctx, volt);
                const VertexEdgeOut veo =
                    model.forward_vertex_edge(ctx, enc, vol.world_to_grid);
                const CostMatrix cost =
                    vertex_cost_matrix(veo.position_values, target.vertices);
                const Assignment asg = hungarian(cost);
                const MatchedLossOut ml =
                    matched_vertex_loss(tape, veo.positions, target.vertices, asg);
                const std::vector<int> labels =
                    edge_labels_from_assignment(veo.unordered_pairs, asg, target);
                const Tensor ce = edge_ce_loss(tape, veo.unordered_logits, labels, 1.0);
                const Tensor loss = ad::add(tape, ml.loss, ce);
                tape.backward(loss);
                adam.step();
                adam.zero_grad();
            }
            const auto t1 = std::chrono::steady_clock::now();
            row.train_time_s = std::chrono::duration<double>(t1 - t0).count();
            row.train_memory_gb =
                static_cast<double>(ad::MemStats::peak_bytes() - mem_before) / 1e9;

            // Inference half of the table covers the joint vertex-edge
            // prediction, matching the train half.
            ad::MemStats::reset_peak();
            const int64_t mem_before_inf = ad::MemStats::live_bytes();
            const auto t2 = std::chrono::steady_clock::now();
            {
                ad::Tape tape;
                std::mt19937_64 eval_rng(0);
                nn::ForwardCtx ctx{tape, false, eval_rng};
                const Tensor volt = Model::tsdf_to_tensor(vol);
                const EncoderFeatures enc = model.encode(ctx, volt);
                const VertexEdgeOut veo =
                    model.forward_vertex_edge(ctx, enc, vol.world_to_grid);
                veo.to_graph(0.5);
            }
            const auto t3 = std::chrono::steady_clock::now();
            row.infer_time_s = std::chrono::duration<double>(t3 - t2).count();
            row.infer_memory_gb =
                static_cast<double>(ad::MemStats::peak_bytes() - mem_before_inf) / 1e9;
        } catch (const std::bad_alloc&) {
            row.oom = true;
        }
        rows.push_back(row);
    }
    return rows;
}

void Trainer::write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
    out << "n_verts,train_time_s,train_memory_gb,inference_time_s,inference_memory_gb\n";
    for (const BenchRow& r : rows) {
        if (r.oom) {
            out << r.n << ",OOM,OOM,OOM,OOM\n";
            continue;
        }
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%d,%.4f,%.4f,%.4f,%.4f\n", r.n, r.train_time_s,
                      r.train_memory_gb, r.infer_time_s, r.infer_memory_gb);
        out << buf;
    }
}

}  // namespace t2m
