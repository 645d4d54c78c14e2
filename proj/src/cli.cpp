#include "phonssm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "phonssm/analysis.hpp"
#include "phonssm/config_file.hpp"
#include "phonssm/data.hpp"
#include "phonssm/errors.hpp"
#include "phonssm/model.hpp"
#include "phonssm/train.hpp"

namespace phonssm {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::array<int, 4> parse_int4(const std::string& csv, const char* what) {
    std::array<int, 4> out{};
    std::stringstream ss(csv);
    std::string tok;
    for (int i = 0; i < 4; ++i) {
        if (!std::getline(ss, tok, ','))
            throw std::invalid_argument(std::string(what) + ": need 4 comma-separated values");
        out[static_cast<std::size_t>(i)] = std::stoi(tok);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << text;
}

void echo_resolved(const FullConfig& cfg, const std::string& out_dir) {
    const std::string text = render_config(cfg);
    std::cout << "# resolved config\n" << text;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/resolved_config.txt", text);
    }
}

std::vector<std::array<int, 4>> dataset_class_tuples(const DatasetFile& ds) {
    std::vector<std::array<int, 4>> tuples;
    for (int c = 0; c < ds.k; ++c) tuples.push_back(tuple_of_class(c, ds.inventory));
    return tuples;
}

int cmd_gen_data(const std::string& inventory_csv, double train_frac, int samples, double sigma,
                 int frames, std::uint64_t seed, const std::string& out_dir) {
    SyntheticSpec spec;
    spec.inventory = parse_int4(inventory_csv, "--inventory");
    spec.train_fraction = train_frac;
    spec.samples_per_class = samples;
    spec.noise_sigma = sigma;
    spec.frames = frames;
    spec.seed = seed;
    fs::create_directories(out_dir);
    const SyntheticDataset ds = generate_synthetic(spec);
    write_dataset(ds.train, out_dir + "/train.bin");
    write_dataset(ds.test_seen, out_dir + "/test_seen.bin");
    write_dataset(ds.test_unseen, out_dir + "/test_unseen.bin");
    write_label_map(ds.label_names, out_dir + "/labels.tsv");
    json report;
    report["classes"] = ds.label_names.size();
    report["seen_classes"] = ds.seen_classes.size();
    report["unseen_classes"] = ds.unseen_classes.size();
    report["train_records"] = ds.train.records.size();
    report["test_seen_records"] = ds.test_seen.records.size();
    report["test_unseen_records"] = ds.test_unseen.records.size();
    report["seed"] = seed;
    std::cout << report.dump(2) << '\n';
    return 0;
}

int cmd_train(FullConfig cfg, const std::string& data_path, const std::string& out_dir) {
    const DatasetFile ds = read_dataset(data_path);
    cfg.model.k = ds.k;
    cfg.model.t = ds.t;
    cfg.model.layout = ds.layout;
    echo_resolved(cfg, out_dir);
    const TrainResult r = train_model(cfg.model, cfg.train, ds, out_dir);
    std::cout << "checkpoint: " << r.checkpoint_path << '\n';
    std::cout << "metrics: " << r.metrics_path << '\n';
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path,
             const std::string& train_path, bool compose_unseen, int topk, int threads,
             const std::string& out_dir) {
    auto [params, cfg] = load_checkpoint(ckpt);
    const DatasetFile ds = read_dataset(data_path);
    json report;
    if (compose_unseen) {
        if (train_path.empty())
            throw std::invalid_argument("eval: --compose-unseen requires --train-data");
        const DatasetFile train_ds = read_dataset(train_path);
        std::set<int> seen;
        for (const auto& r : train_ds.records) seen.insert(r.label);
        std::vector<char> is_seen(static_cast<std::size_t>(ds.k), 0);
        for (int c : seen) is_seen[static_cast<std::size_t>(c)] = 1;
        const ComponentStats stats = component_stats(params, cfg, train_ds, threads);
        const Tensor bank =
            composed_sign_bank(params, cfg, stats, dataset_class_tuples(ds), is_seen);
        const EvalReport rep = evaluate_with_bank(params, cfg, bank, ds, threads, topk);
        report["top1"] = rep.top1;
        report["topk"] = rep.topk;
        report["k_of_topk"] = topk;
        report["n"] = rep.n;
        report["protocol"] = "composed-prototypes";
    } else {
        const EvalReport rep = evaluate_dataset(params, cfg, ds, threads, topk);
        report["top1"] = rep.top1;
        report["topk"] = rep.topk;
        report["k_of_topk"] = topk;
        report["n"] = rep.n;
        report["mean_loss"] = rep.mean_loss;
        report["protocol"] = "trained-prototypes";
    }
    std::cout << report.dump(2) << '\n';
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/eval.json", report.dump(2) + "\n");
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int max_coords) {
    const GradCheckReport rep = micro_gradcheck(seed, max_coords);
    std::cout << std::left << std::setw(28) << "tensor" << "max rel err\n";
    for (const auto& [name, err] : rep.per_tensor)
        std::cout << std::left << std::setw(28) << name << std::scientific
                  << std::setprecision(3) << err << '\n';
    std::cout << "overall max rel err: " << std::scientific << std::setprecision(6)
              << rep.max_rel_err << '\n';
    const bool ok = rep.max_rel_err < 1e-4;
    std::cout << (ok ? "PASS" : "FAIL") << " (threshold 1e-4)\n";
    return ok ? 0 : 1;
}

int cmd_probe(const std::string& ckpt, const std::string& data_path, int threads,
              const std::string& out_dir) {
    auto [params, cfg] = load_checkpoint(ckpt);
    if (cfg.without_pdm) throw std::invalid_argument("probe: checkpoint has no PDM branches");
    const DatasetFile ds = read_dataset(data_path);
    if (!ds.has_phon) throw std::invalid_argument("probe: dataset has no phonological labels");
    json report;
    Tensor acc({kNumComponents, kNumComponents});
    for (int branch = 0; branch < kNumComponents; ++branch) {
        const Tensor emb = branch_embeddings(params, cfg, ds, branch, threads);
        for (int target = 0; target < kNumComponents; ++target) {
            std::vector<int> labels;
            for (const auto& r : ds.records) labels.push_back(r.phon[static_cast<std::size_t>(target)]);
            acc.at(branch, target) = linear_probe(emb, labels);
        }
    }
    std::cout << std::left << std::setw(12) << "branch";
    for (int t = 0; t < kNumComponents; ++t)
        std::cout << std::setw(10) << kComponentNames[t];
    std::cout << '\n';
    for (int b = 0; b < kNumComponents; ++b) {
        std::cout << std::left << std::setw(12) << kComponentNames[b];
        for (int t = 0; t < kNumComponents; ++t)
            std::cout << std::setw(10) << std::fixed << std::setprecision(4) << acc.at(b, t);
        std::cout << '\n';
        for (int t = 0; t < kNumComponents; ++t)
            report[kComponentNames[b]][kComponentNames[t]] = acc.at(b, t);
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/probe.json", report.dump(2) + "\n");
    }
    return 0;
}

int cmd_intervene(const std::string& ckpt, const std::string& data_path, int min_n, int swap,
                  std::uint64_t seed, int threads, const std::string& out_dir) {
    auto [params, cfg] = load_checkpoint(ckpt);
    const DatasetFile ds = read_dataset(data_path);
    const InterventionSummary s =
        run_interventions(params, cfg, ds, min_n, seed, threads, swap);
    json report;
    report["n_treatment"] = s.n_treatment;
    report["treatment_flips"] = s.treatment_flips;
    report["treatment_rate"] = s.treatment_rate;
    report["n_control"] = s.n_control;
    report["control_flips"] = s.control_flips;
    report["control_rate"] = s.control_rate;
    report["p_value"] = s.p_value;
    report["swap_components"] = swap;
    std::cout << report.dump(2) << '\n';
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/interventions.json", report.dump(2) + "\n");
    }
    return 0;
}

int cmd_bench(const std::string& sizes_csv, int d, int ds, bool with_model,
              const std::string& out_dir) {
    const std::vector<int> sizes = parse_int_list(sizes_csv);
    const std::vector<BenchRow> rows = bench_scaling(sizes, d, ds);
    json report;
    std::cout << std::left << std::setw(8) << "T" << std::setw(14) << "ssm_ms"
              << std::setw(14) << "attention_ms" << '\n';
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(8) << r.t << std::setw(14) << std::fixed
                  << std::setprecision(4) << r.ssm_ms << std::setw(14) << r.attn_ms << '\n';
        report["rows"].push_back({{"t", r.t}, {"ssm_ms", r.ssm_ms}, {"attn_ms", r.attn_ms}});
    }
    if (with_model) {
        ModelConfig cfg;
        const ModelParams params = model_init(cfg, 0);
        const double sps = model_samples_per_sec(params, cfg, 32);
        std::cout << "full model: " << std::fixed << std::setprecision(1) << sps
                  << " samples/sec (informational)\n";
        report["model_samples_per_sec"] = sps;
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/bench.json", report.dump(2) + "\n");
    }
    return 0;
}

int cmd_analyze(const std::string& ckpt, const std::string& data_path,
                const std::string& train_path, int threads, const std::string& out_dir) {
    auto [params, cfg] = load_checkpoint(ckpt);
    const DatasetFile ds = read_dataset(data_path);
    json report;
    if (!cfg.without_pdm) {
        const Tensor m = component_cosine_matrix(params, cfg, ds, threads);
        std::cout << "component |cos| matrix:\n";
        for (int i = 0; i < kNumComponents; ++i) {
            std::cout << "  ";
            for (int j = 0; j < kNumComponents; ++j) {
                std::cout << std::fixed << std::setprecision(4) << m.at(i, j) << ' ';
                report["cosine_matrix"][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m.at(i, j);
            }
            std::cout << '\n';
        }
        report["offdiag_mean"] = offdiag_mean(m);
        std::cout << "off-diagonal mean |cos|: " << offdiag_mean(m) << '\n';
    }
    const EvalReport rep = evaluate_dataset(params, cfg, ds, threads);
    report["top1"] = rep.top1;
    std::cout << "top-1: " << rep.top1 << '\n';
    if (ds.has_phon) {
        const auto tuples = dataset_class_tuples(ds);
        std::vector<int> labels;
        for (const auto& r : ds.records) labels.push_back(r.label);
        const ErrorHistogram h = error_stratification(rep.predictions, labels, tuples);
        std::cout << "errors by phonological distance (0..4):";
        for (int dd = 0; dd < 5; ++dd) {
            std::cout << ' ' << h.counts[static_cast<std::size_t>(dd)];
            report["error_histogram"].push_back(h.counts[static_cast<std::size_t>(dd)]);
            report["error_fractions"].push_back(h.fractions[static_cast<std::size_t>(dd)]);
        }
        std::cout << '\n';
        std::set<int> present;
        for (const auto& r : ds.records) present.insert(r.label);
        std::vector<std::array<int, 4>> present_tuples;
        for (int c : present) present_tuples.push_back(tuples[static_cast<std::size_t>(c)]);
        report["minimal_pair_density"] = minimal_pair_density(present_tuples);
        std::cout << "minimal-pair density: " << minimal_pair_density(present_tuples) << '\n';
    }
    if (!train_path.empty()) {
        const DatasetFile train_ds = read_dataset(train_path);
        std::set<int> seen;
        for (const auto& r : train_ds.records) seen.insert(r.label);
        std::vector<char> is_seen(static_cast<std::size_t>(ds.k), 0);
        for (int c : seen) is_seen[static_cast<std::size_t>(c)] = 1;
        const ComponentStats stats = component_stats(params, cfg, train_ds, threads);
        const Tensor bank =
            composed_sign_bank(params, cfg, stats, dataset_class_tuples(ds), is_seen);
        const EvalReport zs = evaluate_with_bank(params, cfg, bank, ds, threads);
        report["composed_top1"] = zs.top1;
        std::cout << "composed-prototype top-1: " << zs.top1 << '\n';
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/analyze.json", report.dump(2) + "\n");
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt, const std::string& data_path,
                const std::string& graph_name, const std::string& out_file) {
    if (!graph_name.empty()) {
        AnatomicalGraph g;
        if (graph_name == "hand21")
            g = build_hand_graph(LandmarkLayout::dominant_hand21());
        else if (graph_name == "holistic75")
            g = build_holistic_graph(LandmarkLayout::pose_hands75());
        else
            throw std::invalid_argument("inspect: unknown graph '" + graph_name + "'");
        const std::string text = edge_list_text(g);
        std::cout << "# " << graph_name << ": " << g.node_count << " nodes, "
                  << g.edges.size() << " edges\n" << text;
        if (!out_file.empty()) write_text(out_file, text);
        return 0;
    }
    if (!ckpt.empty()) {
        auto [params, cfg] = load_checkpoint(ckpt);
        json j;
        j["config"] = json::parse(config_to_json(cfg));
        j["param_count"] = param_count(params, cfg);
        json tensors = json::array();
        for_each_param(params, cfg, [&](const std::string& name, Tensor& t) {
            tensors.push_back({{"name", name}, {"shape", t.shape()}});
        });
        j["tensors"] = tensors;
        std::cout << j.dump(2) << '\n';
        return 0;
    }
    if (!data_path.empty()) {
        const DatasetFile ds = read_dataset(data_path);
        json j;
        j["layout"] = ds.layout.kind == LayoutKind::DominantHand21 ? "DominantHand21"
                                                                   : "PoseHands75";
        j["t"] = ds.t;
        j["k"] = ds.k;
        j["records"] = ds.records.size();
        j["has_phon"] = ds.has_phon;
        j["inventory"] = ds.inventory;
        std::cout << j.dump(2) << '\n';
        return 0;
    }
    throw std::invalid_argument("inspect: pass --checkpoint, --data or --graph");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"PhonSSM: compositional sign classification on skeletal landmarks"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_path, train_data_path, ckpt_path;
    std::uint64_t seed = 0;
    int threads = 0;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic compositional benchmark");
    std::string inventory = "6,5,4,3";
    double train_frac = 0.6, sigma = 0.02;
    int samples = 20, frames = 30;
    gen->add_option("--inventory", inventory, "component inventory sizes, e.g. 6,5,4,3");
    gen->add_option("--train-frac", train_frac, "fraction of tuples seen in training");
    gen->add_option("--samples", samples, "training samples per class");
    gen->add_option("--sigma", sigma, "coordinate noise sigma");
    gen->add_option("--frames", frames, "frames per sequence");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out_dir, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a model on a dataset file");
    int epochs_override = -1, batch_override = -1;
    bool without_pdm = false, no_augment = false;
    tr->add_option("--data", data_path, "training dataset (.bin)")->required();
    tr->add_option("--config", config_path, "config file");
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--seed", seed, "seed override");
    tr->add_option("--threads", threads, "worker threads (0 = auto)");
    tr->add_option("--epochs", epochs_override, "epoch override");
    tr->add_option("--batch", batch_override, "batch size override");
    tr->add_flag("--without-pdm", without_pdm, "flat ablation: skip factorization");
    tr->add_flag("--no-augment", no_augment, "disable train-time augmentation");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    bool compose_unseen = false;
    int topk = 5;
    ev->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    ev->add_option("--data", data_path, "dataset to evaluate")->required();
    ev->add_option("--train-data", train_data_path, "training dataset (component statistics)");
    ev->add_flag("--compose-unseen", compose_unseen,
                 "score against compositionally imputed prototypes for unseen classes");
    ev->add_option("--topk", topk, "k for top-k accuracy");
    ev->add_option("--threads", threads, "worker threads");
    ev->add_option("--out", out_dir, "report directory");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gate on the micro config");
    int max_coords = 0;
    gc->add_option("--seed", seed, "draw seed");
    gc->add_option("--max-coords", max_coords, "subsample coordinates per tensor (0 = all)");

    // probe
    auto* pr = app.add_subcommand("probe", "linear probes of the component branches");
    pr->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    pr->add_option("--data", data_path, "labeled dataset")->required();
    pr->add_option("--threads", threads, "worker threads");
    pr->add_option("--out", out_dir, "report directory");

    // intervene
    auto* iv = app.add_subcommand("intervene", "causal component-swap interventions");
    int min_n = 200, swap = 1;
    iv->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    iv->add_option("--data", data_path, "labeled dataset")->required();
    iv->add_option("--min-n", min_n, "minimum number of interventions");
    iv->add_option("--swap", swap, "number of components to swap (pair distance)");
    iv->add_option("--seed", seed, "pair sampling seed");
    iv->add_option("--threads", threads, "worker threads");
    iv->add_option("--out", out_dir, "report directory");

    // bench
    auto* be = app.add_subcommand("bench", "scan-vs-attention scaling benchmark");
    std::string sizes = "64,128,256,512";
    int bench_d = 128, bench_ds = 16;
    bool with_model = false;
    be->add_option("--sizes", sizes, "sequence lengths");
    be->add_option("--d", bench_d, "feature width");
    be->add_option("--ds", bench_ds, "state dimension");
    be->add_flag("--model-throughput", with_model, "also time the full default model");
    be->add_option("--out", out_dir, "report directory");

    // analyze
    auto* an = app.add_subcommand("analyze", "cosine matrix, error stratification, density");
    an->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    an->add_option("--data", data_path, "dataset to analyze")->required();
    an->add_option("--train-data", train_data_path, "training dataset for composed prototypes");
    an->add_option("--threads", threads, "worker threads");
    an->add_option("--out", out_dir, "report directory");

    // inspect
    auto* in = app.add_subcommand("inspect", "dump checkpoint/dataset headers or graphs");
    std::string graph_name, out_file;
    in->add_option("--checkpoint", ckpt_path, "checkpoint to inspect");
    in->add_option("--data", data_path, "dataset to inspect");
    in->add_option("--graph", graph_name, "hand21 or holistic75");
    in->add_option("--out", out_file, "write edge list to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(inventory, train_frac, samples, sigma, frames, seed, out_dir);
        if (tr->parsed()) {
            FullConfig cfg;
            if (!config_path.empty()) cfg = parse_config_file(config_path);
            if (tr->count("--seed")) cfg.train.seed = seed;
            if (threads > 0) cfg.train.threads = threads;
            if (epochs_override > 0) cfg.train.epochs = epochs_override;
            if (batch_override > 0) cfg.train.batch = batch_override;
            if (without_pdm) cfg.model.without_pdm = true;
            if (no_augment) cfg.train.augment = false;
            return cmd_train(cfg, data_path, out_dir);
        }
        if (ev->parsed())
            return cmd_eval(ckpt_path, data_path, train_data_path, compose_unseen, topk,
                            threads, out_dir);
        if (gc->parsed()) return cmd_gradcheck(seed, max_coords);
        if (pr->parsed()) return cmd_probe(ckpt_path, data_path, threads, out_dir);
        if (iv->parsed())
            return cmd_intervene(ckpt_path, data_path, min_n, swap, seed, threads, out_dir);
        if (be->parsed()) return cmd_bench(sizes, bench_d, bench_ds, with_model, out_dir);
        if (an->parsed())
            return cmd_analyze(ckpt_path, data_path, train_data_path, threads, out_dir);
        if (in->parsed()) return cmd_inspect(ckpt_path, data_path, graph_name, out_file);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace phonssm
