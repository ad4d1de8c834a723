// tsdf2mesh - scan-completion pipeline CLI: data generation, staged training,
// inference, evaluation and the scaling bench.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "t2m/dataset.hpp"
#include "t2m/manifest.hpp"
#include "t2m/metrics.hpp"
#include "t2m/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cmd_gen_data(const t2m::GenDataOptions& opt) {
    const t2m::GenDataResult res = t2m::generate_dataset(opt);
    t2m::RunManifest manifest;
    manifest.command = "gen-data";
    manifest.seed = opt.seed;
    json cfg{{"shapes", opt.shapes_dir.empty() ? "builtin" : opt.shapes_dir},
             {"builtin_count", opt.builtin_count},
             {"views", opt.views},
             {"trajectories", opt.trajectories},
             {"target_vertices", opt.target_vertices},
             {"train_frac", opt.train_frac},
             {"val_frac", opt.val_frac}};
    manifest.config_json = cfg.dump();
    std::vector<std::string> files;
    for (const t2m::DatasetEntry& e : res.index.entries) {
        files.push_back((fs::path(opt.out_dir) / e.tsdf).string());
        manifest.outputs.push_back(e.tsdf);
    }
    manifest.input_hash = t2m::hash_files(files);
    if (res.skipped > 0)
        manifest.warnings.push_back(std::to_string(res.skipped) + " shape files skipped");
    manifest.save((fs::path(opt.out_dir) / "manifest.json").string());
    std::cout << "wrote " << res.index.entries.size() << " samples (" << res.shapes_written
              << " shapes, " << res.skipped << " skipped) to " << opt.out_dir << "\n";
    return kExitOk;
}

int cmd_train(t2m::TrainConfig cfg, const std::string& stage_str, const std::string& resume,
              const std::string& out_dir) {
    const t2m::Stage stage = t2m::stage_from_string(stage_str);
    fs::create_directories(out_dir);

    t2m::Trainer trainer(std::move(cfg));
    if (!resume.empty()) {
        const t2m::Stage prev = trainer.load_checkpoint(resume);
        std::cout << "resumed from " << resume << " (stage " << t2m::stage_name(prev) << ")\n";
    }
    trainer.load_data();

    std::ofstream log((fs::path(out_dir) / "train_log.jsonl").string(), std::ios::app);
    const t2m::StageResult result = trainer.run_stage(stage, &log);

    const std::string ckpt_path =
        (fs::path(out_dir) / ("checkpoint_" + stage_str + ".t2m")).string();
    trainer.save_checkpoint(ckpt_path, stage);

    t2m::RunManifest manifest;
    manifest.command = "train --stage " + stage_str;
    manifest.seed = trainer.config().seed;
    manifest.config_json = trainer.config().to_json();
    manifest.input_hash = t2m::hash_files(
        {trainer.config().dataset_dir + "/index.json", resume.empty() ? "" : resume});
    manifest.outputs = {ckpt_path};
    if (result.skipped_samples > 0)
        manifest.warnings.push_back(std::to_string(result.skipped_samples) +
                                    " samples skipped (empty duals)");
    manifest.save((fs::path(out_dir) / ("manifest_" + stage_str + ".json")).string());

    std::cout << "stage " << stage_str << ": " << result.steps << " steps, first loss "
              << result.first_loss << ", last loss " << result.last_loss << "\n"
              << "checkpoint: " << ckpt_path << "\n";
    return kExitOk;
}

int cmd_infer(const std::string& ckpt_path, const std::string& tsdf_path,
              const std::string& out_path, double edge_thresh, double face_thresh,
              bool allow_ce_faces) {
    const t2m::Checkpoint ckpt = t2m::read_checkpoint_file(ckpt_path);
    const json meta = json::parse(ckpt.meta_json);
    t2m::TrainConfig cfg = t2m::TrainConfig::from_json(meta.at("train_config").dump());
    const t2m::Stage stage = t2m::stage_from_string(meta.at("stage"));
    if (t2m::stage_rank(stage) < 3 && !(allow_ce_faces && t2m::stage_rank(stage) >= 2))
        throw std::runtime_error(
            "checkpoint completed stage '" + t2m::stage_name(stage) +
            "'; inference needs face_chamfer (or face_ce with --allow-ce-faces)");

    t2m::Trainer trainer(cfg);
    trainer.load_checkpoint(ckpt_path);
    const t2m::TsdfVolume vol = t2m::read_tsdf_file(tsdf_path);
    const t2m::InferenceResult res = trainer.infer(vol, edge_thresh, face_thresh, allow_ce_faces);
    t2m::write_obj_file(out_path, res.mesh);

    t2m::RunManifest manifest;
    manifest.command = "infer";
    manifest.seed = cfg.seed;
    json mcfg{{"edge_threshold", edge_thresh},
              {"face_threshold", face_thresh},
              {"checkpoint", ckpt_path}};
    manifest.config_json = mcfg.dump();
    manifest.input_hash = t2m::hash_files({ckpt_path, tsdf_path});
    manifest.outputs = {out_path};
    if (res.empty_faces) manifest.warnings.push_back("empty kept-face set; vertices only");
    manifest.save(out_path + ".manifest.json");

    if (res.empty_faces) {
        std::cerr << "warning: empty kept-face set (" << res.dual_candidates
                  << " candidates); wrote vertices only\n";
        return kExitData;
    }
    std::cout << "wrote " << out_path << " (" << res.mesh.vertex_count() << " vertices, "
              << res.mesh.face_count() << " faces)\n";
    return kExitOk;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_csv,
             int k, uint64_t seed) {
    if (!fs::is_directory(pred_dir)) throw std::runtime_error("missing pred dir: " + pred_dir);
    if (!fs::is_directory(gt_dir)) throw std::runtime_error("missing gt dir: " + gt_dir);

    std::vector<std::string> unpaired;
    t2m::EvalReport report;
    std::vector<fs::path> preds;
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (e.path().extension() == ".obj") preds.push_back(e.path());
    std::sort(preds.begin(), preds.end());

    for (const fs::path& p : preds) {
        const fs::path gt = fs::path(gt_dir) / p.filename();
        if (!fs::exists(gt)) {
            unpaired.push_back(p.filename().string());
            continue;
        }
        const t2m::IndexedFaceSet pm = t2m::read_obj_file(p.string());
        const t2m::IndexedFaceSet gm = t2m::read_obj_file(gt.string());
        t2m::EvalRow row;
        row.name = p.stem().string();
        // Class prefix convention: letters before the trailing digits.
        size_t cut = row.name.size();
        while (cut > 0 && std::isdigit(static_cast<unsigned char>(row.name[cut - 1]))) --cut;
        row.cls = cut > 0 ? row.name.substr(0, cut) : "object";
        row.dist = t2m::eval_mesh_distance(pm, gm, k, seed);
        row.nsim = t2m::eval_normal_similarity(pm, gm, k, seed);
        report.rows.push_back(row);
    }
    for (const std::string& u : unpaired) std::cerr << "unpaired (excluded): " << u << "\n";

    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("cannot write CSV: " + out_csv);
    report.write_csv(out);

    t2m::RunManifest manifest;
    manifest.command = "eval";
    manifest.seed = seed;
    manifest.input_hash = t2m::hash_files({pred_dir, gt_dir});
    manifest.outputs = {out_csv};
    for (const std::string& u : unpaired) manifest.warnings.push_back("unpaired: " + u);
    manifest.save(out_csv + ".manifest.json");

    const auto avg = report.average();
    std::cout << "evaluated " << report.rows.size() << " pairs; avg dist " << avg.dist
              << ", avg nsim " << avg.nsim << "\n";
    return kExitOk;
}

int cmd_bench(const std::string& n_csv, const std::string& out_csv,
              const std::string& model_cfg_path, uint64_t seed) {
    std::vector<int> ns;
    std::stringstream ss(n_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) ns.push_back(std::stoi(tok));
    if (ns.empty()) throw std::runtime_error("bench: empty n list");

    t2m::ModelConfig cfg;
    if (!model_cfg_path.empty()) cfg = t2m::ModelConfig::from_json(read_text_file(model_cfg_path));
    const std::vector<t2m::BenchRow> rows = t2m::Trainer::bench_scaling(ns, cfg, seed);

    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("cannot write CSV: " + out_csv);
    t2m::Trainer::write_bench_csv(out, rows);
    t2m::Trainer::write_bench_csv(std::cout, rows);

    t2m::RunManifest manifest;
    manifest.command = "bench";
    manifest.seed = seed;
    manifest.config_json = cfg.to_json();
    manifest.input_hash = t2m::hash_files({model_cfg_path});
    manifest.outputs = {out_csv};
    manifest.save(out_csv + ".manifest.json");
    return kExitOk;
}

}  // namespace

int t2m_cli_main(int argc, const char* const* argv) {
    CLI::App app{"tsdf2mesh: partial-scan to mesh pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate TSDF + target mesh training pairs");
    t2m::GenDataOptions gopt;
    std::string shapes = "builtin";
    gen->add_option("--shapes", shapes, "OBJ directory or 'builtin'");
    gen->add_option("--count", gopt.builtin_count, "builtin corpus size");
    gen->add_option("--out", gopt.out_dir, "output dataset directory")->required();
    gen->add_option("--views", gopt.views, "depth views per trajectory");
    gen->add_option("--trajectories", gopt.trajectories, "scan trajectories per shape");
    gen->add_option("--target-vertices", gopt.target_vertices, "decimation target");
    gen->add_option("--seed", gopt.seed, "rng seed");
    gen->add_option("--train-frac", gopt.train_frac, "train split fraction");
    gen->add_option("--val-frac", gopt.val_frac, "val split fraction");

    // train
    auto* train = app.add_subcommand("train", "run one training stage");
    std::string stage_str, config_path, resume, train_out = "runs";
    std::string data_dir;
    double lr_override = -1.0;
    int epochs_override = -1, max_steps_override = -1;
    uint64_t seed_override = 0;
    bool seed_set = false;
    train->add_option("--stage", stage_str, "vertex_edge | face_ce | face_chamfer")->required();
    train->add_option("--config", config_path, "train config JSON");
    train->add_option("--data", data_dir, "dataset directory (overrides config)");
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--lr", lr_override, "learning rate override");
    train->add_option("--epochs", epochs_override, "epoch override for this stage");
    train->add_option("--max-steps", max_steps_override, "step cap override for this stage");
    train->add_option_function<uint64_t>(
        "--seed", [&](uint64_t s) { seed_override = s; seed_set = true; }, "seed override");

    // infer
    auto* infer = app.add_subcommand("infer", "predict a mesh from a TSDF volume");
    std::string ckpt_path, tsdf_path, mesh_out;
    double edge_thresh = 0.5, face_thresh = 0.5;
    bool allow_ce_faces = false;
    infer->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    infer->add_option("--tsdf", tsdf_path, "input TSDF container")->required();
    infer->add_option("--out", mesh_out, "output OBJ")->required();
    infer->add_option("--edge-thresh", edge_thresh, "edge keep probability threshold");
    infer->add_option("--face-thresh", face_thresh, "face keep probability threshold");
    infer->add_flag("--allow-ce-faces", allow_ce_faces,
                    "accept a stage-2 (face_ce) checkpoint");

    // eval
    auto* eval = app.add_subcommand("eval", "mesh distance / normal similarity report");
    std::string pred_dir, gt_dir, eval_csv = "eval.csv";
    int eval_k = 10000;
    uint64_t eval_seed = 1;
    eval->add_option("--pred", pred_dir, "predicted mesh directory")->required();
    eval->add_option("--gt", gt_dir, "ground truth mesh directory")->required();
    eval->add_option("--out", eval_csv, "output CSV");
    eval->add_option("--samples", eval_k, "surface samples per mesh");
    eval->add_option("--seed", eval_seed, "rng seed");

    // bench
    auto* bench = app.add_subcommand("bench", "timing/memory scaling table");
    std::string bench_n = "100,200,300,400", bench_csv = "bench.csv", bench_model_cfg;
    uint64_t bench_seed = 1;
    bench->add_option("--n", bench_n, "comma-separated vertex counts");
    bench->add_option("--out", bench_csv, "output CSV");
    bench->add_option("--model-config", bench_model_cfg, "model config JSON");
    bench->add_option("--seed", bench_seed, "rng seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            gopt.shapes_dir = shapes == "builtin" ? "" : shapes;
            return cmd_gen_data(gopt);
        }
        if (train->parsed()) {
            t2m::TrainConfig cfg;
            if (!config_path.empty()) cfg = t2m::TrainConfig::from_json(read_text_file(config_path));
            if (!data_dir.empty()) cfg.dataset_dir = data_dir;
            if (lr_override > 0.0) cfg.lr = lr_override;
            if (seed_set) cfg.seed = seed_override;
            if (epochs_override >= 0) {
                if (stage_str == "vertex_edge") cfg.epochs_vertex_edge = epochs_override;
                else if (stage_str == "face_ce") cfg.epochs_face_ce = epochs_override;
                else cfg.epochs_face_chamfer = epochs_override;
            }
            if (max_steps_override >= 0) {
                if (stage_str == "vertex_edge") cfg.max_steps_vertex_edge = max_steps_override;
                else if (stage_str == "face_ce") cfg.max_steps_face_ce = max_steps_override;
                else cfg.max_steps_face_chamfer = max_steps_override;
            }
            return cmd_train(std::move(cfg), stage_str, resume, train_out);
        }
        if (infer->parsed())
            return cmd_infer(ckpt_path, tsdf_path, mesh_out, edge_thresh, face_thresh,
                             allow_ce_faces);
        if (eval->parsed()) return cmd_eval(pred_dir, gt_dir, eval_csv, eval_k, eval_seed);
        if (bench->parsed()) return cmd_bench(bench_n, bench_csv, bench_model_cfg, bench_seed);
    } catch (const t2m::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const t2m::ObjParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        const std::string what = e.what();
        std::cerr << "error: " << what << "\n";
        // Config/stage misuse reads as usage; everything else as data.
        if (what.find("config") != std::string::npos ||
            what.find("stage") != std::string::npos ||
            what.find("unknown") != std::string::npos)
            return kExitUsage;
        return kExitData;
    }
    return kExitUsage;
}

#ifndef T2M_CLI_NO_MAIN
int main(int argc, char** argv) { return t2m_cli_main(argc, argv); }
#endif
