#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "t2m/checkpoint.hpp"
#include "t2m/dataset.hpp"
#include "t2m/model.hpp"

namespace t2m {

// Loss went non-finite; carries diagnostics (batch ids, grad norms).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

enum class Stage { vertex_edge, face_ce, face_chamfer };
std::string stage_name(Stage s);
Stage stage_from_string(const std::string& s);
int stage_rank(Stage s);

struct TrainConfig {
    double lr = 0.0005;
    int batch_size = 8;
    uint64_t seed = 1;
    std::string dataset_dir;
    ModelConfig model;

    int epochs_vertex_edge = 5;
    int epochs_face_ce = 1;
    int epochs_face_chamfer = 1;
    // Optional hard step caps per stage (0 = epochs decide).
    int max_steps_vertex_edge = 0;
    int max_steps_face_ce = 0;
    int max_steps_face_chamfer = 0;

    double lambda_edge = 1.0;        // stage-1 loss = l1 + lambda * edge CE
    double edge_pos_weight_cap = 50.0;
    std::string match = "hungarian";  // hungarian | greedy (ablation)
    std::string face_targets = "dual";  // dual | direct_gt | direct_surf
    double direct_surf_voxels = 1.5;  // Direct(Surf) vertex-to-surface threshold
    bool unfreeze_backbone = false;   // stage 3 fine-tunes encoder + vertex-edge
    int chamfer_samples = 2048;
    int val_every = 50;
    double edge_threshold = 0.5;
    double face_threshold = 0.5;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    static std::vector<std::string> diff_keys(const TrainConfig& a, const TrainConfig& b);
};

struct StageResult {
    std::vector<double> step_losses;
    double first_loss = 0.0;
    double last_loss = 0.0;
    double best_val = 0.0;
    int steps = 0;
    int skipped_samples = 0;
};

struct InferenceResult {
    IndexedFaceSet mesh;
    bool empty_faces = false;
    int dual_candidates = 0;
};

struct BenchRow {
    int n = 0;
    double train_time_s = 0.0;
    double train_memory_gb = 0.0;
    double infer_time_s = 0.0;
    double infer_memory_gb = 0.0;
    bool oom = false;
};

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    // Loads train/val splits from cfg.dataset_dir (index.json).
    void load_data();
    void set_data(std::vector<LoadedSample> train, std::vector<LoadedSample> val);

    Model& model() { return *model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<LoadedSample>& train_samples() const { return train_; }

    // Runs one stage; enforces stage ordering against the loaded checkpoint.
    // `log` receives line-delimited JSON records when non-null.
    StageResult run_stage(Stage stage, std::ostream* log = nullptr);

    // Checkpoint plumbing. Loading validates the stored model config and
    // returns the stage recorded in the checkpoint.
    void save_checkpoint(const std::string& path, Stage completed) const;
    Stage load_checkpoint(const std::string& path);
    std::optional<Stage> loaded_stage() const { return loaded_stage_; }

    // Full pipeline inference on one volume (eval mode).
    InferenceResult infer(const TsdfVolume& vol, double edge_threshold, double face_threshold,
                          bool allow_ce_faces = false) const;

    static std::vector<BenchRow> bench_scaling(const std::vector<int>& n_list,
                                               const ModelConfig& base, uint64_t seed);
    static void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

private:
    struct StepLosses {
        double total = 0.0, vertex = 0.0, edge = 0.0, face = 0.0, chamfer = 0.0;
        int skipped = 0;
    };
    StepLosses run_batch(Stage stage, const std::vector<int>& batch, int step);
    double validation_metric(Stage stage);
    void scale_grads(const std::vector<ad::Tensor>& params, double s);
    void set_trainable(Stage stage);

    TrainConfig cfg_;
    std::unique_ptr<Model> model_;
    std::vector<LoadedSample> train_, val_;
    std::mt19937_64 shuffle_rng_, dropout_rng_;
    std::optional<Stage> loaded_stage_;
};

}  // namespace t2m
